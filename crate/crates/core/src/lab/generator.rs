//! Gap between the one-step discrete generator `N[S_{N,k} − I]` and the
//! limiting generator, scanned over a lattice of `K_N` and a time grid.

use serde::{Deserialize, Serialize};

use crate::chain::Model;
use crate::environment::{evaluate, step_index, EnvPath};
use crate::error::{Error, Result};
use crate::exact::{compositions, discrete_generator_apply, StepKernel};
use crate::lab::convergence::SCHEMA_VERSION;
use crate::limit::{apply_ga, apply_gab};
use crate::polynomial::PolynomialTestFn;
use crate::simplex::{counts_to_point, internal_transition_matrix, TypeCounts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScan {
    pub schema_version: u32,
    pub model: Model,
    pub n_values: Vec<u64>,
    pub gaps: Vec<f64>,
    /// `gap · N` per population size.
    pub scaled: Vec<f64>,
    /// `gap(N_i) / gap(N_{i+1})`.
    pub ratios: Vec<f64>,
}

/// Lattice points `c / N` of `K_N` whose coordinates are multiples of
/// `N / density` (all of `K_N` when `density >= N`).
fn lattice(n: u64, r: usize, density: u64) -> Vec<TypeCounts> {
    let stride = (n / density.max(1)).max(1);
    compositions(n / stride, r)
        .into_iter()
        .map(|c| {
            let mut counts: Vec<u64> = c.iter().map(|&v| v * stride).collect();
            counts[r - 1] += n - counts.iter().sum::<u64>();
            TypeCounts::new(counts).expect("lattice point of K_N")
        })
        .collect()
}

/// For each `N`: the sup over `t ∈ {j / density} ∩ [0, T]` (taken at the
/// step `k = ⌊N t⌋`) and lattice `p` of the generator gap.
pub fn generator_gap_scan(
    model: Model,
    env: &EnvPath,
    f: &PolynomialTestFn,
    n_list: &[u64],
    t_end: f64,
    density: u64,
) -> Result<GapScan> {
    if f.dim() != env.dim() {
        return Err(Error::DimensionMismatch {
            expected: env.dim(),
            found: f.dim(),
        });
    }
    if density == 0 {
        return Err(Error::InvalidArgument("grid density must be positive".into()));
    }
    if t_end > env.horizon() {
        return Err(Error::OutOfHorizon {
            t: t_end,
            horizon: env.horizon(),
        });
    }
    let kernel = match model {
        Model::Mamwid => StepKernel::Internal,
        Model::Mamwidams => StepKernel::InternalThenResample,
    };
    let samples = (t_end * density as f64 + 1e-9).floor() as u64;
    let mut gaps = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let points = lattice(n, env.dim(), density);
        let mut worst = 0.0f64;
        for j in 0..=samples {
            let k = step_index(j as f64 / density as f64, n as usize);
            let t = k as f64 / n as f64;
            let a = evaluate(env, t)?;
            let p = internal_transition_matrix(&a, n as usize)?;
            for counts in &points {
                let discrete = discrete_generator_apply(f, counts, &p, kernel)?;
                let x = counts_to_point(counts);
                let limit = match model {
                    Model::Mamwid => apply_ga(f, &x, &a)?,
                    Model::Mamwidams => apply_gab(f, &x, &a)?,
                };
                worst = worst.max((discrete - limit).abs());
            }
        }
        gaps.push(worst);
    }
    let scaled = gaps.iter().zip(n_list).map(|(g, &n)| g * n as f64).collect();
    let ratios = gaps.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(GapScan {
        schema_version: SCHEMA_VERSION,
        model,
        n_values: n_list.to_vec(),
        gaps,
        scaled,
        ratios,
    })
}
