//! Linear Volterra equations of the second kind,
//! `x(s) = f(s) + ∫₀^s V(s,t) x(t) dt`, by trapezoidal product integration.
//!
//! The moment hierarchy can be written in this form with kernels that only
//! depend on `t`; [`volterra_moment_hierarchy`] solves it that way as an
//! independent check of the ODE route in [`crate::moments`].

use nalgebra::{DMatrix, DVector};

use crate::environment::{evaluate, EnvPath};
use crate::error::{Error, Result};
use crate::limit::time_grid;
use crate::moments::{build_an, build_bn, build_dn, check_initial, MomentBlock};

/// Pivot threshold below which `I − w V(s,s)` counts as singular.
const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct VolterraSolution {
    pub grid: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

/// Trapezoid weights of `∫₀^{grid[i]}` at nodes `0..=i`.
fn weights(grid: &[f64], i: usize, j: usize) -> f64 {
    let left = if j > 0 { grid[j] - grid[j - 1] } else { 0.0 };
    let right = if j < i { grid[j + 1] - grid[j] } else { 0.0 };
    0.5 * (left + right)
}

/// Marches the scheme on `grid`; `kernel(i, j)` is `V(grid[i], grid[j])`.
fn march<K>(grid: &[f64], forcing: &[DVector<f64>], mut kernel: K) -> Result<Vec<DVector<f64>>>
where
    K: FnMut(usize, usize) -> DMatrix<f64>,
{
    let d = forcing[0].len();
    let mut x: Vec<DVector<f64>> = Vec::with_capacity(grid.len());
    x.push(forcing[0].clone());
    for i in 1..grid.len() {
        let mut rhs = forcing[i].clone();
        for (j, xj) in x.iter().enumerate() {
            rhs += kernel(i, j) * xj * weights(grid, i, j);
        }
        let lhs = DMatrix::identity(d, d) - kernel(i, i) * weights(grid, i, i);
        let lu = lhs.lu();
        let u = lu.u();
        let scale = lhs_scale(&u);
        if (0..d).any(|k| u[(k, k)].abs() <= SINGULAR_TOL * scale) {
            return Err(Error::SingularStep { s: grid[i] });
        }
        x.push(lu.solve(&rhs).ok_or(Error::SingularStep { s: grid[i] })?);
    }
    Ok(x)
}

fn lhs_scale(u: &DMatrix<f64>) -> f64 {
    u.amax().max(1.0)
}

/// Solves `x(s) = f(s) + ∫₀^s V(s,t) x(t) dt` on `[0, t_end]` with step `h`.
pub fn volterra_solve<V, F>(kernel: V, forcing: F, t_end: f64, h: f64) -> Result<VolterraSolution>
where
    V: Fn(f64, f64) -> DMatrix<f64>,
    F: Fn(f64) -> DVector<f64>,
{
    let grid = time_grid(t_end, h)?;
    let f: Vec<DVector<f64>> = grid.iter().map(|&s| forcing(s)).collect();
    let d = f[0].len();
    for (s, v) in grid.iter().zip(&f) {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("forcing not finite at s = {s}")));
        }
    }
    let values = march(&grid, &f, |i, j| kernel(grid[i], grid[j]))?;
    Ok(VolterraSolution { grid, values })
}

/// Moment hierarchy through the Volterra form: block `n` solves
/// `x_n(s) = y_n(0) + ∫₀^s D⁽ⁿ⁾x_{n−1} dt + ∫₀^s (A⁽ⁿ⁾(t) + B⁽ⁿ⁾) x_n(t) dt`.
pub fn volterra_moment_hierarchy(
    env: &EnvPath,
    y_init: &[DVector<f64>],
    t_end: f64,
    h: f64,
) -> Result<Vec<MomentBlock>> {
    let sets = check_initial(y_init, env.dim())?;
    if t_end > env.horizon() {
        return Err(Error::OutOfHorizon {
            t: t_end,
            horizon: env.horizon(),
        });
    }
    let grid = time_grid(t_end, h)?;
    let rates = grid.iter().map(|&t| evaluate(env, t)).collect::<Result<Vec<_>>>()?;
    let mut blocks: Vec<MomentBlock> = Vec::with_capacity(sets.len());
    for (idx, set) in sets.into_iter().enumerate() {
        let n = set.degree();
        let b = build_bn(n, set.dim())?;
        let kernels = rates
            .iter()
            .map(|a| Ok(build_an(a, &set)? + &b))
            .collect::<Result<Vec<_>>>()?;
        let mut forcing = vec![y_init[idx].clone(); grid.len()];
        if n >= 2 {
            let d = build_dn(n, set.dim())?;
            let lower = &blocks[idx - 1].values;
            let mut acc = DVector::zeros(set.len());
            for i in 1..grid.len() {
                acc += &d * (&lower[i - 1] + &lower[i]) * (0.5 * (grid[i] - grid[i - 1]));
                forcing[i] += &acc;
            }
        }
        let values = march(&grid, &forcing, |_, j| kernels[j].clone())?;
        blocks.push(MomentBlock {
            order: n,
            indices: set,
            grid: grid.clone(),
            values,
        });
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{point_mass_moments, solve_moment_hierarchy};
    use crate::simplex::{RateMatrix, SimplexPoint};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_kernel_returns_forcing() {
        let sol = volterra_solve(
            |_, _| DMatrix::zeros(2, 2),
            |s| DVector::from_vec(vec![s.sin(), 1.0 + s]),
            1.0,
            0.01,
        )
        .unwrap();
        for (s, x) in sol.grid.iter().zip(&sol.values) {
            assert_eq!(x[0], s.sin());
            assert_eq!(x[1], 1.0 + s);
        }
    }

    #[test]
    fn unit_kernel_gives_exponential() {
        let sol = volterra_solve(
            |_, _| DMatrix::from_element(1, 1, 1.0),
            |_| DVector::from_element(1, 1.0),
            1.0,
            1e-3,
        )
        .unwrap();
        let x1 = sol.values.last().unwrap()[0];
        assert_abs_diff_eq!(x1, std::f64::consts::E, epsilon = 1e-4);
    }

    #[test]
    fn second_order_in_h() {
        let err = |h: f64| {
            let sol = volterra_solve(
                |s, t| DMatrix::from_element(1, 1, (s - t).cos()),
                |_| DVector::from_element(1, 1.0),
                1.0,
                h,
            )
            .unwrap();
            // x' = x + ∫₀^s -sin(s-t) x dt ⇒ closed form via Laplace:
            // X(p) = (p²+1) / (p(p²-p+1)) ⇒ x = 1 + (2/√3) e^{s/2} sin(√3 s/2)
            let s: f64 = 1.0;
            let exact = 1.0 + 2.0 / 3f64.sqrt() * (s / 2.0).exp() * (3f64.sqrt() * s / 2.0).sin();
            (sol.values.last().unwrap()[0] - exact).abs()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn singular_step_detected() {
        // 1 − (h/2)·V = 0 with V = 2/h
        let h = 0.1;
        let res = volterra_solve(
            move |_, _| DMatrix::from_element(1, 1, 2.0 / h),
            |_| DVector::from_element(1, 1.0),
            1.0,
            h,
        );
        assert!(matches!(res, Err(Error::SingularStep { .. })));
    }

    #[test]
    fn hierarchy_agrees_with_ode_route() {
        let a = RateMatrix::from_rows(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap();
        let env = EnvPath::constant(a);
        let y0 = point_mass_moments(&SimplexPoint::new(vec![0.3, 0.7]).unwrap(), 3).unwrap();
        let ode = solve_moment_hierarchy(&env, &y0, 1.0, 1e-3).unwrap();
        let vol = volterra_moment_hierarchy(&env, &y0, 1.0, 1e-3).unwrap();
        for (bo, bv) in ode.iter().zip(&vol) {
            for (yo, yv) in bo.values.iter().zip(&bv.values) {
                assert!((yo - yv).amax() < 1e-6);
            }
        }
    }
}
