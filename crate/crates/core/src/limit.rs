//! Scaling limits: the drift generator `G_A(t)`, the Wright–Fisher operator
//! `G_B`, the linear limit ODE of the internal dynamics, and an
//! Euler–Maruyama sampler for the limiting simplex diffusion.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::environment::{evaluate, EnvPath};
use crate::error::{Error, Result};
use crate::polynomial::PolynomialTestFn;
use crate::simplex::{Interpolation, RateMatrix, SimplexPath, SimplexPoint};

/// Default RK4 step for the limit ODE.
pub const DEFAULT_ODE_STEP: f64 = 1e-3;
/// Default Euler–Maruyama step for the diffusion.
pub const DEFAULT_DIFFUSION_STEP: f64 = 1e-3;

fn check_dims(f: &PolynomialTestFn, p: &SimplexPoint) -> Result<()> {
    if f.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: f.dim(),
        });
    }
    Ok(())
}

/// `G_A f(p) = p A ∇f(p)'`.
pub fn apply_ga(f: &PolynomialTestFn, p: &SimplexPoint, a: &RateMatrix) -> Result<f64> {
    check_dims(f, p)?;
    if a.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: a.dim(),
        });
    }
    let x = p.coords();
    let g = f.gradient(x);
    let mut s = 0.0;
    for (i, xi) in x.iter().enumerate() {
        for (j, gj) in g.iter().enumerate() {
            s += xi * a.get(i, j) * gj;
        }
    }
    Ok(s)
}

/// `G_B f(p) = ½ Σ_ij p_i (δ_ij − p_j) ∂²f/∂x_i∂x_j`.
pub fn apply_gb(f: &PolynomialTestFn, p: &SimplexPoint) -> Result<f64> {
    check_dims(f, p)?;
    let x = p.coords();
    let h = f.hessian(x);
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            let delta = if i == j { 1.0 } else { 0.0 };
            s += x[i] * (delta - x[j]) * h[i][j];
        }
    }
    Ok(0.5 * s)
}

/// `G_AB = G_A + G_B`.
pub fn apply_gab(f: &PolynomialTestFn, p: &SimplexPoint, a: &RateMatrix) -> Result<f64> {
    Ok(apply_ga(f, p, a)? + apply_gb(f, p)?)
}

/// Uniform grid `0, h, 2h, …` ending exactly at `t_end` (short last step).
pub(crate) fn time_grid(t_end: f64, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid horizon {t_end}")));
    }
    let full = (t_end / h * (1.0 + 1e-12)).floor() as usize;
    let mut grid: Vec<f64> = (0..=full).map(|k| k as f64 * h).collect();
    let last = *grid.last().unwrap();
    if t_end - last > 1e-9 * h {
        grid.push(t_end);
    } else if let Some(l) = grid.last_mut() {
        *l = l.min(t_end);
    }
    if grid.len() == 1 && t_end > 0.0 {
        grid.push(t_end);
    }
    Ok(grid)
}

fn drift(env: &EnvPath, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(evaluate(env, t)?.matrix().transpose() * x)
}

/// Classical RK4 on the column form `x' = A(t)ᵀ x` with fixed step `h`;
/// returns the piecewise-linear solution on the step grid.
pub fn solve_limit_ode(env: &EnvPath, x0: &SimplexPoint, t_end: f64, h: f64) -> Result<SimplexPath> {
    if env.dim() != x0.dim() {
        return Err(Error::DimensionMismatch {
            expected: env.dim(),
            found: x0.dim(),
        });
    }
    if t_end > env.horizon() {
        return Err(Error::OutOfHorizon {
            t: t_end,
            horizon: env.horizon(),
        });
    }
    let grid = time_grid(t_end, h)?;
    let mut x = DVector::from_column_slice(x0.coords());
    let mut points = Vec::with_capacity(grid.len());
    points.push(x0.clone());
    for w in grid.windows(2) {
        let (t, dt) = (w[0], w[1] - w[0]);
        let k1 = drift(env, t, &x)?;
        let k2 = drift(env, t + dt / 2.0, &(&x + &k1 * (dt / 2.0)))?;
        let k3 = drift(env, t + dt / 2.0, &(&x + &k2 * (dt / 2.0)))?;
        let k4 = drift(env, t + dt, &(&x + &k3 * dt))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        points.push(SimplexPoint::new(x.iter().copied().collect())?);
    }
    SimplexPath::new(grid, points, Interpolation::PiecewiseLinear)
}

/// A square root `σ` of `b(p) = diag(p) − p pᵀ`, via symmetric
/// eigendecomposition with roundoff-negative eigenvalues clamped to zero.
pub fn diffusion_matrix_sqrt(p: &SimplexPoint) -> DMatrix<f64> {
    let x = DVector::from_column_slice(p.coords());
    let b = DMatrix::from_diagonal(&x) - &x * x.transpose();
    let eig = SymmetricEigen::new(b);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

#[derive(Debug, Clone)]
pub struct DiffusionConfig {
    pub env: EnvPath,
    pub x0: SimplexPoint,
    pub horizon: f64,
    pub dt: f64,
}

/// Euler–Maruyama for `dY = A(t)ᵀ Y dt + σ(Y) dW`, `σσᵀ = b(Y)`. After every
/// step negatives are clamped to zero and the point is rescaled to unit mass.
pub fn simulate_diffusion<R: Rng + ?Sized>(cfg: &DiffusionConfig, rng: &mut R) -> Result<SimplexPath> {
    let r = cfg.x0.dim();
    if cfg.env.dim() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            found: cfg.env.dim(),
        });
    }
    if cfg.horizon > cfg.env.horizon() {
        return Err(Error::OutOfHorizon {
            t: cfg.horizon,
            horizon: cfg.env.horizon(),
        });
    }
    let grid = time_grid(cfg.horizon, cfg.dt)?;
    let mut points = Vec::with_capacity(grid.len());
    let mut y = cfg.x0.clone();
    points.push(y.clone());
    let mut xi = DVector::zeros(r);
    for w in grid.windows(2) {
        let (t, dt) = (w[0], w[1] - w[0]);
        let x = DVector::from_column_slice(y.coords());
        let sigma = diffusion_matrix_sqrt(&y);
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let next = &x + drift(&cfg.env, t, &x)? * dt + sigma * &xi * dt.sqrt();
        y = SimplexPoint::project(next.iter().copied().collect())?;
        points.push(y.clone());
    }
    SimplexPath::new(grid, points, Interpolation::PiecewiseLinear)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::SinusoidRates;
    use crate::rng::replicate_rng;
    use crate::simplex::validate_rate_matrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn a_example() -> RateMatrix {
        validate_rate_matrix(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap()
    }

    fn pt(v: &[f64]) -> SimplexPoint {
        SimplexPoint::new(v.to_vec()).unwrap()
    }

    fn sinusoid_env() -> EnvPath {
        let base = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.5, 2.0, 0.0, 1.0, 0.7, 0.3, 0.0]);
        let amp = DMatrix::from_row_slice(3, 3, &[0.0, 0.8, 0.2, 1.0, 0.0, -0.5, 0.4, 0.1, 0.0]);
        EnvPath::sinusoid(SinusoidRates::new(base, amp, 3.0, 0.0).unwrap())
    }

    #[test]
    fn generator_examples() {
        let c = PolynomialTestFn::constant(2, 4.0).unwrap();
        let x1 = PolynomialTestFn::coordinate(2, 0).unwrap();
        let half = pt(&[0.5, 0.5]);
        assert_eq!(apply_ga(&c, &half, &a_example()).unwrap(), 0.0);
        assert_abs_diff_eq!(apply_ga(&x1, &half, &a_example()).unwrap(), 0.5, epsilon = 1e-15);
        let x2 = PolynomialTestFn::coordinate(2, 1).unwrap();
        let p = pt(&[0.3, 0.7]);
        assert_abs_diff_eq!(
            apply_ga(&x1, &p, &a_example()).unwrap() + apply_ga(&x2, &p, &a_example()).unwrap(),
            0.0,
            epsilon = 1e-15
        );

        assert_eq!(apply_gb(&x1, &half).unwrap(), 0.0);
        let sq = PolynomialTestFn::monomial(vec![2, 0]).unwrap();
        assert_abs_diff_eq!(apply_gb(&sq, &half).unwrap(), 0.25, epsilon = 1e-15);
        let cross = PolynomialTestFn::monomial(vec![1, 1]).unwrap();
        assert_abs_diff_eq!(apply_gb(&cross, &half).unwrap(), -0.25, epsilon = 1e-15);

        let zero = RateMatrix::zeros(2).unwrap();
        assert_eq!(apply_gab(&sq, &p, &zero).unwrap(), apply_gb(&sq, &p).unwrap());
        assert_eq!(
            apply_gab(&x1, &p, &a_example()).unwrap(),
            apply_ga(&x1, &p, &a_example()).unwrap()
        );
    }

    #[test]
    fn ode_zero_env_is_constant() {
        let env = EnvPath::constant(RateMatrix::zeros(3).unwrap());
        let x0 = pt(&[0.2, 0.3, 0.5]);
        let path = solve_limit_ode(&env, &x0, 2.0, 1e-2).unwrap();
        assert!(path.points().iter().all(|p| *p == x0));
    }

    #[test]
    fn ode_two_state_closed_form() {
        let a = validate_rate_matrix(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let path = solve_limit_ode(&EnvPath::constant(a), &pt(&[1.0, 0.0]), 1.0, 1e-3).unwrap();
        let want = 0.5 * (1.0 + (-2.0f64).exp());
        assert_abs_diff_eq!(path.last().coords()[0], want, epsilon = 1e-10);
        assert_abs_diff_eq!(want, 0.567667, epsilon = 1e-6);

        let a = validate_rate_matrix(&[vec![-1.0, 1.0], vec![3.0, -3.0]]).unwrap();
        let path = solve_limit_ode(&EnvPath::constant(a), &pt(&[1.0, 0.0]), 20.0, 1e-2).unwrap();
        assert_abs_diff_eq!(path.last().coords()[0], 0.75, epsilon = 1e-8);
    }

    #[test]
    fn ode_rk4_order() {
        let env = sinusoid_env();
        let x0 = pt(&[1.0, 0.0, 0.0]);
        let at = |h: f64| solve_limit_ode(&env, &x0, 1.0, h).unwrap().last().coords().to_vec();
        let (a, b, c) = (at(0.1), at(0.05), at(0.025));
        let e1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let e2: f64 = b.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let order = (e1 / e2).log2();
        assert!(order >= 3.8, "observed order {order}");
    }

    #[test]
    fn ode_conserves_mass() {
        let path = solve_limit_ode(&sinusoid_env(), &pt(&[0.1, 0.2, 0.7]), 10.0, 1e-3).unwrap();
        for p in path.points() {
            let s: f64 = p.coords().iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
            assert!(p.coords().iter().all(|&c| c >= 0.0));
        }
    }

    #[test]
    fn ode_grid_includes_horizon() {
        let env = EnvPath::constant(a_example());
        let path = solve_limit_ode(&env, &pt(&[0.5, 0.5]), 0.25, 0.1).unwrap();
        assert_eq!(path.grid().len(), 4);
        assert_abs_diff_eq!(path.end_time(), 0.25, epsilon = 0.0);
    }

    #[test]
    fn sqrt_examples() {
        let s = diffusion_matrix_sqrt(&pt(&[0.0, 1.0, 0.0]));
        assert!(s.iter().all(|v| v.abs() < 1e-15));
        let s = diffusion_matrix_sqrt(&pt(&[0.5, 0.5]));
        let b = &s * s.transpose();
        let want = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((b - want).norm() < 1e-12);
    }

    #[test]
    fn diffusion_vertex_is_absorbing() {
        let cfg = DiffusionConfig {
            env: EnvPath::constant(RateMatrix::zeros(3).unwrap()),
            x0: pt(&[0.0, 0.0, 1.0]),
            horizon: 1.0,
            dt: 1e-2,
        };
        let path = simulate_diffusion(&cfg, &mut replicate_rng(0, 0)).unwrap();
        assert!(path.points().iter().all(|p| p.coords() == [0.0, 0.0, 1.0]));
    }

    #[test]
    fn diffusion_stays_on_simplex() {
        let cfg = DiffusionConfig {
            env: sinusoid_env(),
            x0: pt(&[0.05, 0.05, 0.9]),
            horizon: 2.0,
            dt: 1e-2,
        };
        for rep in 0..20 {
            let path = simulate_diffusion(&cfg, &mut replicate_rng(3, rep)).unwrap();
            for p in path.points() {
                let s: f64 = p.coords().iter().sum();
                assert!((s - 1.0).abs() < 1e-12 && p.coords().iter().all(|&c| c >= 0.0));
            }
        }
    }

    #[test]
    fn pure_wright_fisher_mean_and_variance() {
        let m = 10_000usize;
        let x0 = 0.3;
        let cfg = DiffusionConfig {
            env: EnvPath::constant(RateMatrix::zeros(2).unwrap()),
            x0: pt(&[x0, 1.0 - x0]),
            horizon: 1.0,
            dt: 1e-3,
        };
        let samples: Vec<f64> = (0..m)
            .map(|i| {
                simulate_diffusion(&cfg, &mut replicate_rng(21, i as u64))
                    .unwrap()
                    .last()
                    .coords()[0]
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / m as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let sd = var.sqrt();
        assert!((mean - x0).abs() < 4.0 * sd / (m as f64).sqrt(), "mean {mean}");
        // variance of x1(1) is x0(1-x0)(1-e^{-1}); sd of the sample variance from the
        // sample fourth central moment
        let want = x0 * (1.0 - x0) * (1.0 - (-1.0f64).exp());
        let m4 = samples.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / m as f64;
        let se_var = ((m4 - var * var) / m as f64).sqrt();
        assert!((var - want).abs() < 4.0 * se_var, "var {var} want {want}");
    }

    proptest! {
        #[test]
        fn sqrt_reconstructs(w in prop::collection::vec(0.0f64..1.0, 4)) {
            let s: f64 = w.iter().sum();
            prop_assume!(s > 1e-6);
            let p = SimplexPoint::project(w).unwrap();
            let sigma = diffusion_matrix_sqrt(&p);
            let x = DVector::from_column_slice(p.coords());
            let b = DMatrix::from_diagonal(&x) - &x * x.transpose();
            prop_assert!((&sigma * sigma.transpose() - b).norm() < 1e-10);
        }

        #[test]
        fn generators_match_finite_differences(
            w in prop::collection::vec(0.05f64..1.0, 3),
            rates in prop::collection::vec(0.0f64..3.0, 6),
            c in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let p = SimplexPoint::project(w).unwrap();
            let off = DMatrix::from_row_slice(3, 3, &[0.0, rates[0], rates[1], rates[2], 0.0, rates[3], rates[4], rates[5], 0.0]);
            let a = RateMatrix::from_off_diagonal(&off).unwrap();
            let f = PolynomialTestFn::new(3, vec![
                (vec![2, 1, 0], c[0]), (vec![0, 1, 2], c[1]), (vec![1, 0, 0], c[2]),
            ]).unwrap();
            let x = p.coords();
            let eps = 1e-5;
            // wider step for the mixed second differences keeps roundoff below 1e-8
            let eps2 = 1e-4;
            let shifted = |i: usize, d: f64, j: usize, e: f64| {
                let mut y = x.to_vec();
                y[i] += d;
                y[j] += e;
                f.eval(&y)
            };
            let mut ga = 0.0;
            let mut gb = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let dj = (shifted(j, eps, j, 0.0) - shifted(j, -eps, j, 0.0)) / (2.0 * eps);
                    ga += x[i] * a.get(i, j) * dj;
                    let dij = (shifted(i, eps2, j, eps2) - shifted(i, eps2, j, -eps2)
                        - shifted(i, -eps2, j, eps2) + shifted(i, -eps2, j, -eps2)) / (4.0 * eps2 * eps2);
                    let delta = if i == j { 1.0 } else { 0.0 };
                    gb += 0.5 * x[i] * (delta - x[j]) * dij;
                }
            }
            let exact_a = apply_ga(&f, &p, &a).unwrap();
            let exact_b = apply_gb(&f, &p).unwrap();
            prop_assert!((ga - exact_a).abs() <= 1e-6 * (1.0 + exact_a.abs()));
            prop_assert!((gb - exact_b).abs() <= 1e-6 * (1.0 + exact_b.abs()));
            prop_assert!((apply_gab(&f, &p, &a).unwrap() - exact_a - exact_b).abs() < 1e-14);
        }
    }
}
