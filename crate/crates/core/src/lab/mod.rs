//! Statistical checks of the finite-N chains against their limits.

pub mod annealed;
pub mod convergence;
pub mod generator;
pub mod stats;

pub use annealed::{annealed_marginal_samples, quenched_annealed_test, AnnealedReport, MarginalTest, KS_LEVEL};
pub use convergence::{
    chain_ensemble, mamwid_convergence, mamwidams_moment_test, sup_error, ConvergenceReport, Ensemble, MomentCheck,
    MomentTestReport, SCHEMA_VERSION, SLOPE_BAND, Z_GATE,
};
pub use generator::{generator_gap_scan, GapScan};
pub use stats::{
    clustered_effective_size, dkw_radius, ks_pvalue, ks_statistic, ks_test, levy_band_statistic, mean_std, rate_fit,
    KsResult, RateFit,
};
