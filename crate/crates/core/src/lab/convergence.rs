//! Ensembles of chain runs compared against the scaling limits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{simulate, simulate_checkpoints, ChainConfig, InitialLaw, Model};
use crate::environment::{discretize, EnvPath};
use crate::error::{Error, Result};
use crate::lab::stats::{mean_std, rate_fit, RateFit};
use crate::limit::{solve_limit_ode, DEFAULT_ODE_STEP};
use crate::moments::{point_mass_moments, solve_moment_hierarchy};
use crate::polynomial::monomial;
use crate::rng::{replicate_rng, stream_id};
use crate::simplex::{counts_to_point, SimplexPath, SimplexPoint, TypeCounts};

/// Version of every JSON report emitted by the lab.
pub const SCHEMA_VERSION: u32 = 1;
/// Accepted band for the fitted log-log slope of the sup-error.
pub const SLOPE_BAND: (f64, f64) = (-0.65, -0.35);
/// Gate on moment z-scores.
pub const Z_GATE: f64 = 4.0;

/// `max_t max_i |x_i(t) − y_i(t)|` over the union of both grids in `[0, T]`.
pub fn sup_error(path: &SimplexPath, reference: &SimplexPath, t_end: f64) -> Result<f64> {
    for p in [path, reference] {
        if p.end_time() < t_end - 1e-12 {
            return Err(Error::GridMismatch(format!(
                "path ends at {} before T = {t_end}",
                p.end_time()
            )));
        }
    }
    if path.dim() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            found: path.dim(),
        });
    }
    let mut times: Vec<f64> = path
        .grid()
        .iter()
        .chain(reference.grid())
        .copied()
        .filter(|&t| t <= t_end)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut worst = 0.0f64;
    for t in times {
        let (a, b) = (path.eval(t)?, reference.eval(t)?);
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

/// Replicate paths of one scenario arm with the seeds that produced them.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub scenario: String,
    pub paths: Vec<SimplexPath>,
    pub master_seed: u64,
    pub streams: Vec<u64>,
    pub env_draws: Option<Vec<u64>>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// `m` independent chain paths; replicate `i` uses stream `stream_id(arm, i)`.
pub fn chain_ensemble(scenario: &str, cfg: &ChainConfig, m: usize, seed: u64, arm: u64) -> Result<Ensemble> {
    let streams: Vec<u64> = (0..m as u64).map(|i| stream_id(arm, i)).collect();
    let paths = streams
        .par_iter()
        .map(|&s| simulate(cfg, &mut replicate_rng(seed, s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        scenario: scenario.to_string(),
        paths,
        master_seed: seed,
        streams,
        env_draws: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub n_values: Vec<u64>,
    pub replicates: usize,
    pub horizon: f64,
    pub mean_error: Vec<f64>,
    pub std_error: Vec<f64>,
    /// `None` when some mean error is zero and no slope exists.
    pub fit: Option<RateFit>,
    pub strictly_decreasing: bool,
    pub slope_in_band: bool,
    pub pass: bool,
}

/// Sup-errors of `m` MAMWID runs per population size against the limit ODE.
pub fn mamwid_convergence(
    env: &EnvPath,
    x0: &SimplexPoint,
    t_end: f64,
    n_list: &[u64],
    m: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("N values must be strictly increasing".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let limit = solve_limit_ode(env, x0, t_end, DEFAULT_ODE_STEP)?;
    let mut mean_error = Vec::with_capacity(n_list.len());
    let mut std_error = Vec::with_capacity(n_list.len());
    for (arm, &n) in n_list.iter().enumerate() {
        let steps = discretize(env, n as usize, t_end)?;
        let cfg = ChainConfig::new(Model::Mamwid, n, steps, t_end, InitialLaw::Point(x0.clone()))?;
        let errors = (0..m as u64)
            .into_par_iter()
            .map(|i| {
                let path = simulate(&cfg, &mut replicate_rng(seed, stream_id(arm as u64, i)))?;
                sup_error(&path, &limit, t_end)
            })
            .collect::<Result<Vec<_>>>()?;
        let (mu, sd) = mean_std(&errors);
        mean_error.push(mu);
        std_error.push(sd);
    }
    let strictly_decreasing = mean_error.windows(2).all(|w| w[1] < w[0]);
    let ns: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    let fit = if n_list.len() >= 3 && mean_error.iter().all(|&e| e > 0.0) {
        Some(rate_fit(&ns, &mean_error)?)
    } else {
        None
    };
    let slope_in_band = fit.is_some_and(|f| (SLOPE_BAND.0..=SLOPE_BAND.1).contains(&f.slope));
    Ok(ConvergenceReport {
        schema_version: SCHEMA_VERSION,
        n_values: n_list.to_vec(),
        replicates: m,
        horizon: t_end,
        mean_error,
        std_error,
        fit,
        strictly_decreasing,
        slope_in_band,
        pass: strictly_decreasing && slope_in_band,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub t: f64,
    pub alpha: Vec<u32>,
    pub empirical: f64,
    pub std_err: f64,
    pub predicted: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTestReport {
    pub schema_version: u32,
    pub population: u64,
    pub replicates: usize,
    pub n_max: usize,
    pub checks: Vec<MomentCheck>,
    pub max_abs_z: f64,
    pub pass: bool,
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff.abs() < 1e-12 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// Empirical monomial moments of `m` MAMWIDAMS runs at `{T/2, T}` against
/// the moment hierarchy started from the chain's initial lattice point.
pub fn mamwidams_moment_test(
    env: &EnvPath,
    x0: &SimplexPoint,
    t_end: f64,
    n: u64,
    m: usize,
    n_max: usize,
    seed: u64,
) -> Result<MomentTestReport> {
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two replicates".into()));
    }
    let start = counts_to_point(&TypeCounts::from_point(x0, n)?);
    let times = [t_end / 2.0, t_end];
    let steps = discretize(env, n as usize, t_end)?;
    let cfg = ChainConfig::new(Model::Mamwidams, n, steps, t_end, InitialLaw::Point(x0.clone()))?;
    let samples = (0..m as u64)
        .into_par_iter()
        .map(|i| simulate_checkpoints(&cfg, &times, &mut replicate_rng(seed, stream_id(0, i))))
        .collect::<Result<Vec<_>>>()?;

    let y0 = point_mass_moments(&start, n_max)?;
    let mut checks = Vec::new();
    for (ti, &t) in times.iter().enumerate() {
        // the chain sits at k/N with k = ⌊N t⌋
        let t_chain = crate::environment::step_index(t, n as usize) as f64 / n as f64;
        let blocks = solve_moment_hierarchy(env, &y0, t_chain, DEFAULT_ODE_STEP)?;
        for block in &blocks {
            let k = block.grid.len() - 1;
            for (alpha, &predicted) in block.indices.indices().iter().zip(block.values[k].iter()) {
                let vals: Vec<f64> = samples
                    .iter()
                    .map(|s| monomial(counts_to_point(&s[ti]).coords(), alpha))
                    .collect();
                let (mean, sd) = mean_std(&vals);
                let std_err = sd / (m as f64).sqrt();
                checks.push(MomentCheck {
                    t: t_chain,
                    alpha: alpha.clone(),
                    empirical: mean,
                    std_err,
                    predicted,
                    z: z_score(mean - predicted, std_err),
                });
            }
        }
    }
    let max_abs_z = checks.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    Ok(MomentTestReport {
        schema_version: SCHEMA_VERSION,
        population: n,
        replicates: m,
        n_max,
        checks,
        max_abs_z,
        pass: max_abs_z <= Z_GATE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::SinusoidRates;
    use crate::simplex::{Interpolation, RateMatrix};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn constant_path(x: &[f64], t_end: f64) -> SimplexPath {
        let p = SimplexPoint::new(x.to_vec()).unwrap();
        SimplexPath::new(vec![0.0, t_end], vec![p.clone(), p], Interpolation::PiecewiseConstant).unwrap()
    }

    #[test]
    fn sup_error_examples() {
        let a = constant_path(&[0.5, 0.5], 1.0);
        assert_eq!(sup_error(&a, &a, 1.0).unwrap(), 0.0);
        let b = constant_path(&[0.6, 0.4], 1.0);
        assert_abs_diff_eq!(sup_error(&a, &b, 1.0).unwrap(), 0.1, epsilon = 1e-15);
        assert!(matches!(sup_error(&a, &b, 2.0), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn sup_error_dominates_pointwise() {
        let env = EnvPath::constant(RateMatrix::from_rows(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap());
        let x0 = SimplexPoint::new(vec![0.9, 0.1]).unwrap();
        let ode = solve_limit_ode(&env, &x0, 1.0, 1e-2).unwrap();
        let cfg = ChainConfig::new(
            Model::Mamwid,
            50,
            discretize(&env, 50, 1.0).unwrap(),
            1.0,
            InitialLaw::Point(x0),
        )
        .unwrap();
        let path = simulate(&cfg, &mut replicate_rng(3, 0)).unwrap();
        let sup = sup_error(&path, &ode, 1.0).unwrap();
        for t in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let (a, b) = (path.eval(t).unwrap(), ode.eval(t).unwrap());
            assert!((a[0] - b[0]).abs() <= sup + 1e-15);
        }
    }

    #[test]
    fn zero_environment_has_zero_error() {
        let env = EnvPath::constant(RateMatrix::zeros(2).unwrap());
        let x0 = SimplexPoint::new(vec![0.3, 0.7]).unwrap();
        let report = mamwid_convergence(&env, &x0, 1.0, &[10, 20, 40], 5, 1).unwrap();
        assert!(report.mean_error.iter().all(|&e| e == 0.0));
        assert!(report.fit.is_none());
        assert!(!report.pass);
    }

    #[test]
    fn convergence_is_deterministic() {
        let base = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        let amp = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 1.0, 0.0]);
        let env = EnvPath::sinusoid(SinusoidRates::new(base, amp, 2.0, 0.0).unwrap());
        let x0 = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        let a = mamwid_convergence(&env, &x0, 1.0, &[20, 40, 80], 10, 9).unwrap();
        let b = mamwid_convergence(&env, &x0, 1.0, &[20, 40, 80], 10, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_moments_are_martingale_without_rates() {
        let env = EnvPath::constant(RateMatrix::zeros(2).unwrap());
        let x0 = SimplexPoint::new(vec![0.3, 0.7]).unwrap();
        let report = mamwidams_moment_test(&env, &x0, 1.0, 100, 400, 1, 5).unwrap();
        assert_eq!(report.checks.len(), 4);
        assert!(report.pass, "{report:?}");
        for c in &report.checks {
            assert_eq!(c.predicted, if c.alpha[0] == 1 { 0.3 } else { 0.7 });
        }
    }
}
