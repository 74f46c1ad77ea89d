//! Finite-N Markov chain for the type counts: internal switching through the
//! per-step stochastic matrices `P_{N,k} = I + A_N(k/N)/N`, optionally followed
//! by Wright–Fisher multinomial resampling.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::environment::{step_index, StepEnvPath};
use crate::error::{Error, Result};
use crate::simplex::{
    counts_to_point, internal_transition_matrix, Interpolation, SimplexPath, SimplexPoint, StochasticMatrix, TypeCounts,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Internal dynamics only.
    Mamwid,
    /// Internal dynamics, then multinomial sampling.
    Mamwidams,
}

/// Law of the initial configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Counts(TypeCounts),
    /// Nearest lattice point to `x0`.
    Point(SimplexPoint),
    /// `x ~ Dirichlet(alpha)`, then `counts ~ multinomial(N, x)`.
    Dirichlet(Vec<f64>),
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Counts(c) => c.dim(),
            InitialLaw::Point(p) => p.dim(),
            InitialLaw::Dirichlet(a) => a.len(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> Result<TypeCounts> {
        match self {
            InitialLaw::Counts(c) => {
                if c.population() != n {
                    return Err(Error::InvalidCounts(format!(
                        "initial counts sum to {}, population is {n}",
                        c.population()
                    )));
                }
                Ok(c.clone())
            }
            InitialLaw::Point(p) => TypeCounts::from_point(p, n),
            InitialLaw::Dirichlet(alpha) => {
                let x = sample_dirichlet(alpha, rng)?;
                let mut out = vec![0; alpha.len()];
                sample_multinomial(n, &x, rng, &mut out);
                TypeCounts::new(out)
            }
        }
    }
}

pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.len() < 2 || alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidArgument(
            "Dirichlet parameters must be positive and finite".into(),
        ));
    }
    let mut x: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= s);
    Ok(x)
}

/// Adds a `multinomial(n, probs)` draw into `out` by sequential conditional
/// binomials. Conditional probabilities use suffix sums so that a category
/// carrying all remaining mass receives every remaining trial.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R, out: &mut [u64]) {
    let r = probs.len();
    let mut remaining = n;
    let mut suffix = vec![0.0; r + 1];
    for j in (0..r).rev() {
        suffix[j] = suffix[j + 1] + probs[j].max(0.0);
    }
    for j in 0..r - 1 {
        if remaining == 0 {
            return;
        }
        let mass = suffix[j];
        let p = if mass > 0.0 {
            (probs[j].max(0.0) / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let x = if p >= 1.0 {
            remaining
        } else if p <= 0.0 {
            0
        } else {
            Binomial::new(remaining, p).expect("valid binomial").sample(rng)
        };
        out[j] += x;
        remaining -= x;
    }
    out[r - 1] += remaining;
}

/// One round of internal dynamics: every type-`i` agent independently moves
/// to type `j` with probability `P[i][j]`.
pub fn internal_step<R: Rng + ?Sized>(counts: &TypeCounts, p: &StochasticMatrix, rng: &mut R) -> Result<TypeCounts> {
    if counts.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: counts.dim(),
        });
    }
    let r = counts.dim();
    let mut out = vec![0; r];
    let mut row = vec![0.0; r];
    for (i, &n_i) in counts.counts().iter().enumerate() {
        if n_i == 0 {
            continue;
        }
        if p.get(i, i) == 1.0 {
            out[i] += n_i;
            continue;
        }
        for (j, v) in row.iter_mut().enumerate() {
            *v = p.get(i, j);
        }
        sample_multinomial(n_i, &row, rng, &mut out);
    }
    TypeCounts::new(out)
}

/// Wright–Fisher resampling: `multinomial(N, counts/N)`.
pub fn multinomial_resample<R: Rng + ?Sized>(counts: &TypeCounts, rng: &mut R) -> TypeCounts {
    let n = counts.population();
    let probs: Vec<f64> = counts.counts().iter().map(|&c| c as f64 / n as f64).collect();
    let mut out = vec![0; counts.dim()];
    sample_multinomial(n, &probs, rng, &mut out);
    TypeCounts::new(out).expect("population is conserved")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainState {
    pub k: usize,
    pub counts: TypeCounts,
}

/// A fully specified chain: model, population, step environment, horizon and
/// initial law. The per-step transition matrices are built once here.
#[derive(Debug, Clone)]
pub struct ChainConfig {
    model: Model,
    n: u64,
    env: StepEnvPath,
    horizon: f64,
    initial: InitialLaw,
    transitions: Vec<StochasticMatrix>,
}

impl ChainConfig {
    pub fn new(model: Model, n: u64, env: StepEnvPath, horizon: f64, initial: InitialLaw) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid horizon {horizon}")));
        }
        if env.density() as u64 != n {
            return Err(Error::InvalidArgument(format!(
                "environment discretized at density {} but population is {n}",
                env.density()
            )));
        }
        if env.horizon() < horizon {
            return Err(Error::OutOfHorizon {
                t: horizon,
                horizon: env.horizon(),
            });
        }
        if initial.dim() != env.dim() {
            return Err(Error::DimensionMismatch {
                expected: env.dim(),
                found: initial.dim(),
            });
        }
        let steps = step_index(horizon, n as usize) + 1;
        let transitions = env.values()[..steps]
            .iter()
            .map(|a| internal_transition_matrix(a, n as usize))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            n,
            env,
            horizon,
            initial,
            transitions,
        })
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn population(&self) -> u64 {
        self.n
    }

    pub fn env(&self) -> &StepEnvPath {
        &self.env
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn initial(&self) -> &InitialLaw {
        &self.initial
    }

    /// `P_{N,k}`.
    pub fn transition(&self, k: usize) -> Result<&StochasticMatrix> {
        self.transitions.get(k).ok_or(Error::HorizonExceeded {
            k,
            n: self.n as usize,
            horizon: self.horizon,
        })
    }

    /// Number of steps `⌈N T⌉` taken by [`simulate`].
    pub fn steps(&self) -> usize {
        (self.n as f64 * self.horizon - 1e-9).ceil().max(0.0) as usize
    }
}

/// Advances the chain from `k` to `k + 1`.
pub fn step<R: Rng + ?Sized>(state: &ChainState, cfg: &ChainConfig, rng: &mut R) -> Result<ChainState> {
    if state.counts.population() != cfg.n {
        return Err(Error::InvalidCounts(format!(
            "state has {} agents, config has {}",
            state.counts.population(),
            cfg.n
        )));
    }
    let p = cfg.transition(state.k)?;
    let half = internal_step(&state.counts, p, rng)?;
    let counts = match cfg.model {
        Model::Mamwid => half,
        Model::Mamwidams => multinomial_resample(&half, rng),
    };
    Ok(ChainState { k: state.k + 1, counts })
}

/// Runs `⌈N T⌉` steps and returns `X^N(t) = n(⌊N t⌋)/N` on the grid `{k/N}`.
pub fn simulate<R: Rng + ?Sized>(cfg: &ChainConfig, rng: &mut R) -> Result<SimplexPath> {
    let mut state = ChainState {
        k: 0,
        counts: cfg.initial.sample(cfg.n, rng)?,
    };
    let steps = cfg.steps();
    let mut grid = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    grid.push(0.0);
    points.push(counts_to_point(&state.counts));
    for _ in 0..steps {
        state = step(&state, cfg, rng)?;
        grid.push(state.k as f64 / cfg.n as f64);
        points.push(counts_to_point(&state.counts));
    }
    SimplexPath::new(grid, points, Interpolation::PiecewiseConstant)
}

/// Like [`simulate`] but keeps only `X^N(t)` at the requested times, which
/// must be sorted and lie in `[0, T]`.
pub fn simulate_checkpoints<R: Rng + ?Sized>(cfg: &ChainConfig, times: &[f64], rng: &mut R) -> Result<Vec<TypeCounts>> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("checkpoint times must be sorted".into()));
    }
    let mut state = ChainState {
        k: 0,
        counts: cfg.initial.sample(cfg.n, rng)?,
    };
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if !(0.0..=cfg.horizon).contains(&t) {
            return Err(Error::OutOfHorizon {
                t,
                horizon: cfg.horizon,
            });
        }
        let target = step_index(t, cfg.n as usize);
        while state.k < target {
            state = step(&state, cfg, rng)?;
        }
        out.push(state.counts.clone());
    }
    Ok(out)
}
