//! Random environments: the annealed law of the chain against the mixture of
//! quenched laws over environment draws.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{simulate_checkpoints, ChainConfig, InitialLaw, Model};
use crate::environment::{discretize, sample_env, RandomEnvSpec};
use crate::error::{Error, Result};
use crate::lab::convergence::SCHEMA_VERSION;
use crate::lab::stats::{clustered_effective_size, ks_test, mean_std, KsResult};
use crate::limit::{solve_limit_ode, DEFAULT_ODE_STEP};
use crate::rng::{replicate_rng, stream_id};
use crate::simplex::{counts_to_point, SimplexPoint};

/// Family-wise KS level before the Bonferroni split.
pub const KS_LEVEL: f64 = 0.01;

const ARM_ANNEALED_ENV: u64 = 0;
const ARM_ANNEALED_CHAIN: u64 = 1;
const ARM_MIXTURE_ENV: u64 = 2;
const ARM_MIXTURE_CHAIN: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTest {
    pub t: f64,
    pub coordinate: usize,
    pub ks: KsResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealedReport {
    pub schema_version: u32,
    pub model: Model,
    pub population: u64,
    pub env_draws: usize,
    pub chains_per_env: usize,
    pub checkpoints: Vec<f64>,
    pub tests: Vec<MarginalTest>,
    /// `KS_LEVEL` divided by the number of tests.
    pub level: f64,
    pub min_p_value: f64,
    /// MAMWID only: mean over annealed replicates of `max_i |X_i^N(T) − x_i(T)|`,
    /// where `x` is the limit ODE in that replicate's environment.
    pub limit_gap: Option<f64>,
    pub pass: bool,
}

/// `[chain][checkpoint][coordinate]`.
type Samples = Vec<Vec<Vec<f64>>>;

/// Coordinates of `X^N` at the checkpoints for one environment draw and
/// one or more chains.
#[allow(clippy::too_many_arguments)]
fn run_in_env(
    spec: &RandomEnvSpec,
    model: Model,
    x0: &SimplexPoint,
    t_end: f64,
    n: u64,
    seed: u64,
    env_stream: u64,
    chain_streams: &[u64],
    times: &[f64],
    with_limit: bool,
) -> Result<(Samples, Option<f64>)> {
    let env = sample_env(spec, t_end, &mut replicate_rng(seed, env_stream));
    let cfg = ChainConfig::new(
        model,
        n,
        discretize(&env, n as usize, t_end)?,
        t_end,
        InitialLaw::Point(x0.clone()),
    )?;
    let mut out = Vec::with_capacity(chain_streams.len());
    for &s in chain_streams {
        let states = simulate_checkpoints(&cfg, times, &mut replicate_rng(seed, s))?;
        out.push(states.iter().map(|c| counts_to_point(c).into_vec()).collect::<Vec<_>>());
    }
    let gap = if with_limit {
        let ode = solve_limit_ode(&env, x0, t_end, DEFAULT_ODE_STEP)?;
        let end = ode.last().coords();
        let last = out[0].last().expect("at least one checkpoint");
        Some(last.iter().zip(end).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    } else {
        None
    };
    Ok((out, gap))
}

/// Annealed sample (fresh environment per chain, `m_env` runs) against the
/// pooled mixture sample (`m_env` environments × `m_chain` chains), compared
/// coordinate-wise at `{T/2, T}` by two-sample KS. The mixture sample is
/// clustered by environment, so its KS size is the ANOVA design-effect
/// corrected effective size.
#[allow(clippy::too_many_arguments)]
pub fn quenched_annealed_test(
    spec: &RandomEnvSpec,
    model: Model,
    x0: &SimplexPoint,
    t_end: f64,
    n: u64,
    m_env: usize,
    m_chain: usize,
    seed: u64,
) -> Result<AnnealedReport> {
    if spec.dim() != x0.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: x0.dim(),
        });
    }
    if m_env < 2 || m_chain < 1 {
        return Err(Error::InvalidArgument(
            "need at least two environment draws and one chain per draw".into(),
        ));
    }
    let times = vec![t_end / 2.0, t_end];
    let with_limit = model == Model::Mamwid;
    let annealed = (0..m_env as u64)
        .into_par_iter()
        .map(|i| {
            run_in_env(
                spec,
                model,
                x0,
                t_end,
                n,
                seed,
                stream_id(ARM_ANNEALED_ENV, i),
                &[stream_id(ARM_ANNEALED_CHAIN, i)],
                &times,
                with_limit,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mixture = (0..m_env as u64)
        .into_par_iter()
        .map(|j| {
            let chains: Vec<u64> = (0..m_chain as u64)
                .map(|c| stream_id(ARM_MIXTURE_CHAIN, j * m_chain as u64 + c))
                .collect();
            run_in_env(
                spec,
                model,
                x0,
                t_end,
                n,
                seed,
                stream_id(ARM_MIXTURE_ENV, j),
                &chains,
                &times,
                false,
            )
            .map(|(runs, _)| runs)
        })
        .collect::<Result<Vec<_>>>()?;

    let r = x0.dim();
    let n_tests = times.len() * r;
    let level = KS_LEVEL / n_tests as f64;
    let mut tests = Vec::with_capacity(n_tests);
    for (ti, &t) in times.iter().enumerate() {
        for i in 0..r {
            let a: Vec<f64> = annealed.iter().map(|(runs, _)| runs[0][ti][i]).collect();
            let groups: Vec<Vec<f64>> = mixture
                .iter()
                .map(|runs| runs.iter().map(|run| run[ti][i]).collect())
                .collect();
            let b: Vec<f64> = groups.iter().flatten().copied().collect();
            let eb = clustered_effective_size(&groups);
            tests.push(MarginalTest {
                t,
                coordinate: i,
                ks: ks_test(&a, &b, a.len() as f64, eb),
            });
        }
    }
    let min_p_value = tests.iter().map(|t| t.ks.p_value).fold(1.0, f64::min);
    let limit_gap = with_limit.then(|| {
        let gaps: Vec<f64> = annealed.iter().filter_map(|(_, g)| *g).collect();
        mean_std(&gaps).0
    });
    Ok(AnnealedReport {
        schema_version: SCHEMA_VERSION,
        model,
        population: n,
        env_draws: m_env,
        chains_per_env: m_chain,
        checkpoints: times,
        tests,
        level,
        min_p_value,
        limit_gap,
        pass: min_p_value > level,
    })
}

/// Coordinates of annealed MAMWID samples at `t`: one fresh environment and
/// one chain per replicate, together with the limit ODE value in that
/// environment.
pub fn annealed_marginal_samples(
    spec: &RandomEnvSpec,
    x0: &SimplexPoint,
    t: f64,
    n: u64,
    m: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let env = sample_env(spec, t, &mut replicate_rng(seed, stream_id(ARM_ANNEALED_ENV, i)));
            let cfg = ChainConfig::new(
                Model::Mamwid,
                n,
                discretize(&env, n as usize, t)?,
                t,
                InitialLaw::Point(x0.clone()),
            )?;
            let state = simulate_checkpoints(&cfg, &[t], &mut replicate_rng(seed, stream_id(ARM_ANNEALED_CHAIN, i)))?;
            let ode = solve_limit_ode(&env, x0, t, DEFAULT_ODE_STEP)?;
            Ok((counts_to_point(&state[0]).into_vec(), ode.last().coords().to_vec()))
        })
        .collect()
}
