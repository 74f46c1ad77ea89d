//! Multiagent type dynamics with internal switching and multinomial
//! sampling in time-varying and random environments.
//!
//! The finite-population chains live in [`chain`], their scaling limits in
//! [`limit`] (ODE and Wright–Fisher type diffusion), the closed moment system
//! of the diffusion in [`moments`] and [`volterra`], exact small-N oracles in
//! [`exact`], and Monte Carlo checks tying them together in [`lab`].

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod cli;
pub mod environment;
pub mod error;
pub mod exact;
pub mod lab;
pub mod limit;
pub mod moments;
pub mod polynomial;
pub mod rng;
pub mod simplex;
pub mod volterra;

pub use chain::{simulate, ChainConfig, InitialLaw, Model};
pub use environment::{discretize, evaluate, sample_env, EnvPath, RandomEnvSpec, StepEnvPath};
pub use error::{Error, Result};
pub use limit::{simulate_diffusion, solve_limit_ode, DiffusionConfig};
pub use moments::{solve_moment_hierarchy, MomentBlock, MultiIndexSet};
pub use polynomial::PolynomialTestFn;
pub use simplex::{RateMatrix, SimplexPath, SimplexPoint, StochasticMatrix, TypeCounts};
