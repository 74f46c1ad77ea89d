//! Browser demo: two-type chains, their limit ODE and the moment curves of
//! the limit diffusion, for rates `a12(t) = a12 (1 + amp sin ωt)`,
//! `a21(t) = a21 (1 + amp sin ωt)`.
//!
//! Every exported function returns a flat `Float64Array`; the plain-Rust
//! versions (suffix `_impl`) carry the logic and are what the tests call.

use mamlab::chain::{simulate, ChainConfig, InitialLaw, Model};
use mamlab::environment::{discretize, EnvPath, SinusoidRates};
use mamlab::limit::solve_limit_ode;
use mamlab::moments::{point_mass_moments, solve_moment_hierarchy};
use mamlab::rng::replicate_rng;
use mamlab::simplex::SimplexPoint;
use nalgebra::DMatrix;
use wasm_bindgen::prelude::*;

const ODE_STEP: f64 = 1e-3;
const MAX_POPULATION: u32 = 100_000;

fn env(a12: f64, a21: f64, amp: f64, omega: f64) -> Result<EnvPath, String> {
    if !(0.0..=1.0).contains(&amp) {
        return Err("amplitude must be in [0, 1]".into());
    }
    let base = DMatrix::from_row_slice(2, 2, &[0.0, a12, a21, 0.0]);
    let amplitude = base.clone() * amp;
    SinusoidRates::new(base, amplitude, omega, 0.0)
        .map(EnvPath::sinusoid)
        .map_err(|e| e.to_string())
}

fn start(x0: f64) -> Result<SimplexPoint, String> {
    SimplexPoint::new(vec![x0, 1.0 - x0]).map_err(|e| e.to_string())
}

/// `[t_0, x_1(t_0), t_1, x_1(t_1), …]` of one chain run.
#[allow(clippy::too_many_arguments)]
pub fn chain_path_impl(
    resample: bool,
    n: u32,
    a12: f64,
    a21: f64,
    amp: f64,
    omega: f64,
    x0: f64,
    t_end: f64,
    seed: u32,
) -> Result<Vec<f64>, String> {
    if n > MAX_POPULATION {
        return Err(format!("N is capped at {MAX_POPULATION} in the demo"));
    }
    let e = env(a12, a21, amp, omega)?;
    let steps = discretize(&e, n as usize, t_end).map_err(|e| e.to_string())?;
    let model = if resample { Model::Mamwidams } else { Model::Mamwid };
    let cfg =
        ChainConfig::new(model, n as u64, steps, t_end, InitialLaw::Point(start(x0)?)).map_err(|e| e.to_string())?;
    let path = simulate(&cfg, &mut replicate_rng(seed as u64, 0)).map_err(|e| e.to_string())?;
    Ok(path
        .grid()
        .iter()
        .zip(path.points())
        .flat_map(|(&t, p)| [t, p.coords()[0]])
        .collect())
}

/// `[t_0, x_1(t_0), …]` of the limit ODE.
pub fn limit_path_impl(a12: f64, a21: f64, amp: f64, omega: f64, x0: f64, t_end: f64) -> Result<Vec<f64>, String> {
    let path = solve_limit_ode(&env(a12, a21, amp, omega)?, &start(x0)?, t_end, ODE_STEP).map_err(|e| e.to_string())?;
    Ok(path
        .grid()
        .iter()
        .zip(path.points())
        .flat_map(|(&t, p)| [t, p.coords()[0]])
        .collect())
}

/// Rows `[t, E x_1, E x_1², …, E x_1^{n_max}]` of the diffusion started at `x0`.
pub fn moment_curves_impl(
    a12: f64,
    a21: f64,
    amp: f64,
    omega: f64,
    x0: f64,
    t_end: f64,
    n_max: u32,
) -> Result<Vec<f64>, String> {
    let e = env(a12, a21, amp, omega)?;
    let y0 = point_mass_moments(&start(x0)?, n_max as usize).map_err(|e| e.to_string())?;
    let blocks = solve_moment_hierarchy(&e, &y0, t_end, ODE_STEP).map_err(|e| e.to_string())?;
    let grid = &blocks[0].grid;
    let mut out = Vec::with_capacity(grid.len() * (blocks.len() + 1));
    for (k, &t) in grid.iter().enumerate() {
        out.push(t);
        for b in &blocks {
            // index (n, 0) comes first in the descending order
            out.push(b.values[k][0]);
        }
    }
    Ok(out)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn chain_path(
    resample: bool,
    n: u32,
    a12: f64,
    a21: f64,
    amp: f64,
    omega: f64,
    x0: f64,
    t_end: f64,
    seed: u32,
) -> Result<Vec<f64>, JsValue> {
    chain_path_impl(resample, n, a12, a21, amp, omega, x0, t_end, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn limit_path(a12: f64, a21: f64, amp: f64, omega: f64, x0: f64, t_end: f64) -> Result<Vec<f64>, JsValue> {
    limit_path_impl(a12, a21, amp, omega, x0, t_end).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn moment_curves(
    a12: f64,
    a21: f64,
    amp: f64,
    omega: f64,
    x0: f64,
    t_end: f64,
    n_max: u32,
) -> Result<Vec<f64>, JsValue> {
    moment_curves_impl(a12, a21, amp, omega, x0, t_end, n_max).map_err(|e| JsValue::from_str(&e))
}
