//! Moment hierarchy of the limiting simplex diffusion.
//!
//! For every degree `n` the monomial moments `y_n^α(t) = E[Y(t)^α]`,
//! `α ∈ ℕ_n`, satisfy
//!
//! ```text
//! y_1' = A⁽¹⁾(t) y_1
//! y_n' = D⁽ⁿ⁾ y_{n-1} + (A⁽ⁿ⁾(t) + B⁽ⁿ⁾) y_n,   n >= 2
//! ```
//!
//! so the system is block lower-triangular and closes degree by degree.
//! Every vector and matrix here is indexed by [`MultiIndexSet`] in
//! descending lexicographic order.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::environment::{evaluate, EnvPath};
use crate::error::{Error, Result};
use crate::limit::time_grid;
use crate::simplex::{RateMatrix, SimplexPoint};

/// Largest supported moment degree.
pub const MAX_ORDER: usize = 6;
/// Default moment degree.
pub const DEFAULT_ORDER: usize = 4;
/// Tolerance of the normalization identity `Σ multinomial(n; α) y_n^α = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-8;

/// `ℕ_n`: exponent vectors of length `r` summing to `n`, sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiIndexSet {
    n: usize,
    r: usize,
    indices: Vec<Vec<u32>>,
    position: HashMap<Vec<u32>, usize>,
}

impl MultiIndexSet {
    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.r
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    pub fn position(&self, alpha: &[u32]) -> Option<usize> {
        self.position.get(alpha).copied()
    }

    /// `n! / Π α_i!` for each index, in set order.
    pub fn multinomial_weights(&self) -> Vec<f64> {
        self.indices.iter().map(|a| multinomial_coefficient(a)).collect()
    }
}

fn multinomial_coefficient(alpha: &[u32]) -> f64 {
    let mut out = 1.0;
    let mut total = 0u32;
    for &a in alpha {
        for k in 1..=a {
            total += 1;
            out *= total as f64 / k as f64;
        }
    }
    out
}

fn descending(n: u32, r: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if r == 1 {
        prefix.push(n);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for k in (0..=n).rev() {
        prefix.push(k);
        descending(n - k, r - 1, prefix, out);
        prefix.pop();
    }
}

pub fn enum_multi_indices(n: usize, r: usize) -> Result<MultiIndexSet> {
    if n < 1 {
        return Err(Error::DegreeTooLow { degree: n, min: 1 });
    }
    if r < 2 {
        return Err(Error::TooFewTypes { got: r, min: 2 });
    }
    let mut indices = Vec::new();
    descending(n as u32, r, &mut Vec::with_capacity(r), &mut indices);
    let position = indices.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
    Ok(MultiIndexSet {
        n,
        r,
        indices,
        position,
    })
}

/// `c_n = binomial(n + r − 1, n)`.
pub fn index_count(n: usize, r: usize) -> usize {
    let mut c = 1usize;
    for i in 1..=n {
        c = c * (r - 1 + i) / i;
    }
    c
}

/// `A⁽ⁿ⁾`: diagonal `Σ_j α_j a_jj`; entry `(α, α − e_j + e_k) = α_j a_kj`.
pub fn build_an(a: &RateMatrix, set: &MultiIndexSet) -> Result<DMatrix<f64>> {
    let r = set.dim();
    if a.dim() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            found: a.dim(),
        });
    }
    let c = set.len();
    let mut m = DMatrix::zeros(c, c);
    for (row, alpha) in set.indices().iter().enumerate() {
        m[(row, row)] = (0..r).map(|j| alpha[j] as f64 * a.get(j, j)).sum();
        for j in 0..r {
            if alpha[j] == 0 {
                continue;
            }
            for k in 0..r {
                if k == j {
                    continue;
                }
                let mut target = alpha.clone();
                target[j] -= 1;
                target[k] += 1;
                let col = set.position(&target).expect("index stays in ℕ_n");
                m[(row, col)] += alpha[j] as f64 * a.get(k, j);
            }
        }
    }
    Ok(m)
}

/// `B⁽ⁿ⁾ = ½(n − n²) I`.
pub fn build_bn(n: usize, r: usize) -> Result<DMatrix<f64>> {
    let set = enum_multi_indices(n, r)?;
    let nf = n as f64;
    Ok(DMatrix::identity(set.len(), set.len()) * (0.5 * (nf - nf * nf)))
}

/// `D⁽ⁿ⁾`: entry `(α, α − e_i) = ½ α_i (α_i − 1)`.
pub fn build_dn(n: usize, r: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::DegreeTooLow { degree: n, min: 2 });
    }
    let upper = enum_multi_indices(n, r)?;
    let lower = enum_multi_indices(n - 1, r)?;
    let mut m = DMatrix::zeros(upper.len(), lower.len());
    for (row, alpha) in upper.indices().iter().enumerate() {
        for i in 0..r {
            if alpha[i] == 0 {
                continue;
            }
            let mut target = alpha.clone();
            target[i] -= 1;
            let col = lower.position(&target).expect("index in ℕ_{n-1}");
            m[(row, col)] = 0.5 * alpha[i] as f64 * (alpha[i] as f64 - 1.0);
        }
    }
    Ok(m)
}

/// Moment vectors of one degree on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentBlock {
    pub order: usize,
    pub indices: MultiIndexSet,
    pub grid: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl MomentBlock {
    /// Value of `y_n^α` at grid index `k`.
    pub fn value(&self, k: usize, alpha: &[u32]) -> Option<f64> {
        Some(self.values.get(k)?[self.indices.position(alpha)?])
    }

    /// Grid index closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let k = self.grid.partition_point(|&g| g < t);
        if k == 0 {
            0
        } else if k == self.grid.len() || (t - self.grid[k - 1]) <= (self.grid[k] - t) {
            k - 1
        } else {
            k
        }
    }

    /// `Σ_α multinomial(n; α) y_n^α` at grid index `k`.
    pub fn normalization(&self, k: usize) -> f64 {
        self.indices
            .multinomial_weights()
            .iter()
            .zip(self.values[k].iter())
            .map(|(w, y)| w * y)
            .sum()
    }
}

/// Monomial moments `x0^α` of a point mass, degrees `1..=n_max`.
pub fn point_mass_moments(x0: &SimplexPoint, n_max: usize) -> Result<Vec<DVector<f64>>> {
    (1..=n_max)
        .map(|n| {
            let set = enum_multi_indices(n, x0.dim())?;
            Ok(DVector::from_iterator(
                set.len(),
                set.indices()
                    .iter()
                    .map(|a| crate::polynomial::monomial(x0.coords(), a)),
            ))
        })
        .collect()
}

/// Dirichlet(α) moments `Π_i α_i^(k_i) / |α|^(n)` (rising factorials).
pub fn dirichlet_moments(alpha: &[f64], n_max: usize) -> Result<Vec<DVector<f64>>> {
    if alpha.len() < 2 || alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidArgument(
            "Dirichlet parameters must be positive and finite".into(),
        ));
    }
    let rising = |x: f64, k: u32| (0..k).map(|i| x + i as f64).product::<f64>();
    let total: f64 = alpha.iter().sum();
    (1..=n_max)
        .map(|n| {
            let set = enum_multi_indices(n, alpha.len())?;
            let denom = rising(total, n as u32);
            Ok(DVector::from_iterator(
                set.len(),
                set.indices()
                    .iter()
                    .map(|k| alpha.iter().zip(k).map(|(&a, &e)| rising(a, e)).product::<f64>() / denom),
            ))
        })
        .collect()
}

/// Checks sizes and the normalization identity of initial moments.
pub(crate) fn check_initial(y_init: &[DVector<f64>], r: usize) -> Result<Vec<MultiIndexSet>> {
    if y_init.is_empty() || y_init.len() > MAX_ORDER {
        return Err(Error::InvalidArgument(format!(
            "moment order must be in 1..={MAX_ORDER}, got {}",
            y_init.len()
        )));
    }
    let sets = (1..=y_init.len())
        .map(|n| enum_multi_indices(n, r))
        .collect::<Result<Vec<_>>>()?;
    for (set, y) in sets.iter().zip(y_init) {
        if y.len() != set.len() {
            return Err(Error::DimensionMismatch {
                expected: set.len(),
                found: y.len(),
            });
        }
        let s: f64 = set.multinomial_weights().iter().zip(y.iter()).map(|(w, v)| w * v).sum();
        if (s - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InconsistentInitialMoments {
                order: set.degree(),
                residual: s - 1.0,
            });
        }
    }
    Ok(sets)
}

struct Hierarchy {
    sets: Vec<MultiIndexSet>,
    b: Vec<DMatrix<f64>>,
    d: Vec<Option<DMatrix<f64>>>,
}

impl Hierarchy {
    fn new(sets: Vec<MultiIndexSet>) -> Result<Self> {
        let r = sets[0].dim();
        let b = (1..=sets.len()).map(|n| build_bn(n, r)).collect::<Result<_>>()?;
        let d = (1..=sets.len())
            .map(|n| if n >= 2 { build_dn(n, r).map(Some) } else { Ok(None) })
            .collect::<Result<_>>()?;
        Ok(Self { sets, b, d })
    }

    fn rhs(&self, a: &RateMatrix, y: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let mut out = Vec::with_capacity(y.len());
        for (idx, set) in self.sets.iter().enumerate() {
            let mut v = (build_an(a, set)? + &self.b[idx]) * &y[idx];
            if let Some(d) = &self.d[idx] {
                v += d * &y[idx - 1];
            }
            out.push(v);
        }
        Ok(out)
    }
}

fn axpy(y: &[DVector<f64>], k: &[DVector<f64>], s: f64) -> Vec<DVector<f64>> {
    y.iter().zip(k).map(|(a, b)| a + b * s).collect()
}

/// Integrates degrees `1..=y_init.len()` of the moment system with RK4 step
/// `h` on `[0, t_end]`.
pub fn solve_moment_hierarchy(env: &EnvPath, y_init: &[DVector<f64>], t_end: f64, h: f64) -> Result<Vec<MomentBlock>> {
    let sets = check_initial(y_init, env.dim())?;
    if t_end > env.horizon() {
        return Err(Error::OutOfHorizon {
            t: t_end,
            horizon: env.horizon(),
        });
    }
    let grid = time_grid(t_end, h)?;
    let sys = Hierarchy::new(sets)?;
    let mut y: Vec<DVector<f64>> = y_init.to_vec();
    let mut history: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(grid.len()); y.len()];
    for (n, v) in y.iter().enumerate() {
        history[n].push(v.clone());
    }
    for w in grid.windows(2) {
        let (t, dt) = (w[0], w[1] - w[0]);
        let a0 = evaluate(env, t)?;
        let am = evaluate(env, t + dt / 2.0)?;
        let a1 = evaluate(env, t + dt)?;
        let k1 = sys.rhs(&a0, &y)?;
        let k2 = sys.rhs(&am, &axpy(&y, &k1, dt / 2.0))?;
        let k3 = sys.rhs(&am, &axpy(&y, &k2, dt / 2.0))?;
        let k4 = sys.rhs(&a1, &axpy(&y, &k3, dt))?;
        for n in 0..y.len() {
            y[n] += (&k1[n] + &k2[n] * 2.0 + &k3[n] * 2.0 + &k4[n]) * (dt / 6.0);
            history[n].push(y[n].clone());
        }
    }
    Ok(sys
        .sets
        .into_iter()
        .zip(history)
        .map(|(set, values)| MomentBlock {
            order: set.degree(),
            indices: set,
            grid: grid.clone(),
            values,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::SinusoidRates;
    use crate::simplex::validate_rate_matrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_q(r: usize, rates: &[f64]) -> RateMatrix {
        let mut off = DMatrix::zeros(r, r);
        let mut it = rates.iter();
        for i in 0..r {
            for j in 0..r {
                if i != j {
                    off[(i, j)] = *it.next().unwrap();
                }
            }
        }
        RateMatrix::from_off_diagonal(&off).unwrap()
    }

    #[test]
    fn index_sets() {
        let s = enum_multi_indices(2, 2).unwrap();
        assert_eq!(s.indices(), &[vec![2, 0], vec![1, 1], vec![0, 2]]);
        let s = enum_multi_indices(1, 3).unwrap();
        assert_eq!(s.indices(), &[vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let s = enum_multi_indices(2, 3).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.indices()[0], vec![2, 0, 0]);
        assert_eq!(s.indices()[5], vec![0, 0, 2]);
        for (n, r) in [(1, 2), (3, 3), (4, 3), (6, 4)] {
            assert_eq!(enum_multi_indices(n, r).unwrap().len(), index_count(n, r));
        }
        assert_eq!(index_count(4, 3), 15);
    }

    #[test]
    fn index_order_is_strictly_descending() {
        let s = enum_multi_indices(4, 3).unwrap();
        for w in s.indices().windows(2) {
            assert!(w[0] > w[1], "{:?} should precede {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn an_degree_one_is_transpose() {
        let a = validate_rate_matrix(&[vec![-3.0, 1.0, 2.0], vec![0.5, -1.5, 1.0], vec![2.0, 2.0, -4.0]]).unwrap();
        let a1 = build_an(&a, &enum_multi_indices(1, 3).unwrap()).unwrap();
        assert_eq!(a1, a.matrix().transpose());
        let zero = build_an(&RateMatrix::zeros(3).unwrap(), &enum_multi_indices(3, 3).unwrap()).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bn_and_dn_entries() {
        assert!(build_bn(1, 3).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(build_bn(2, 2).unwrap(), DMatrix::identity(3, 3) * -1.0);
        assert_eq!(build_bn(3, 2).unwrap(), DMatrix::identity(4, 4) * -3.0);

        let d = build_dn(2, 2).unwrap();
        // rows (2,0),(1,1),(0,2); cols (1,0),(0,1)
        assert_eq!(d[(0, 0)], 1.0);
        assert!(d.row(1).iter().all(|&v| v == 0.0));
        assert_eq!(d[(2, 1)], 1.0);
        assert!(matches!(build_dn(1, 2), Err(Error::DegreeTooLow { .. })));

        for n in 2..=5 {
            let set = enum_multi_indices(n, 3).unwrap();
            let d = build_dn(n, 3).unwrap();
            let b = build_bn(n, 3).unwrap();
            for i in 0..3 {
                let mut vertex = vec![0u32; 3];
                vertex[i] = n as u32;
                let row = set.position(&vertex).unwrap();
                let s: f64 = d.row(row).iter().sum();
                assert_eq!(s, 0.5 * (n * (n - 1)) as f64);
                assert_eq!(s, -b[(row, row)]);
            }
        }
    }

    #[test]
    fn an_row_sums_are_weighted_column_sums() {
        let a = random_q(3, &[1.0, 0.3, 2.0, 0.7, 0.1, 1.4]);
        for n in 1..=4 {
            let set = enum_multi_indices(n, 3).unwrap();
            let an = build_an(&a, &set).unwrap();
            for (row, alpha) in set.indices().iter().enumerate() {
                let s: f64 = an.row(row).iter().sum();
                let col_sums: f64 = (0..3)
                    .map(|j| alpha[j] as f64 * (0..3).map(|k| a.get(k, j)).sum::<f64>())
                    .sum();
                assert_abs_diff_eq!(s, col_sums, epsilon = 1e-12);
            }
        }
        // rows do sum to zero when A also has zero column sums
        let doubly = validate_rate_matrix(&[vec![-2.0, 1.0, 1.0], vec![1.0, -2.0, 1.0], vec![1.0, 1.0, -2.0]]).unwrap();
        let an = build_an(&doubly, &enum_multi_indices(3, 3).unwrap()).unwrap();
        for row in an.row_iter() {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn an_annihilates_multinomial_weights(rates in prop::collection::vec(0.0f64..5.0, 6), n in 1usize..=4) {
            let a = random_q(3, &rates);
            let set = enum_multi_indices(n, 3).unwrap();
            let w = DVector::from_vec(set.multinomial_weights());
            let lhs = build_an(&a, &set).unwrap().transpose() * w;
            prop_assert!(lhs.amax() < 1e-10);
        }
    }

    #[test]
    fn vertex_start_is_absorbing() {
        let env = EnvPath::constant(RateMatrix::zeros(2).unwrap());
        let y0 = point_mass_moments(&SimplexPoint::vertex(2, 0).unwrap(), 4).unwrap();
        let blocks = solve_moment_hierarchy(&env, &y0, 2.0, 1e-2).unwrap();
        for b in &blocks {
            let last = b.values.last().unwrap();
            for (alpha, v) in b.indices.indices().iter().zip(last.iter()) {
                let want = if alpha[0] as usize == b.order { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(*v, want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn pure_wright_fisher_second_moment() {
        let env = EnvPath::constant(RateMatrix::zeros(2).unwrap());
        let x0 = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        let blocks = solve_moment_hierarchy(&env, &point_mass_moments(&x0, 2).unwrap(), 1.0, 1e-3).unwrap();
        let v = blocks[1].values.last().unwrap()[0];
        let want = 0.25 + 0.25 * (1.0 - (-1.0f64).exp());
        assert_abs_diff_eq!(v, want, epsilon = 1e-12);
        assert_abs_diff_eq!(want, 0.408030, epsilon = 1e-6);
    }

    #[test]
    fn inconsistent_initial_moments_rejected() {
        let env = EnvPath::constant(RateMatrix::zeros(2).unwrap());
        let bad = vec![DVector::from_vec(vec![0.5, 0.6])];
        assert!(matches!(
            solve_moment_hierarchy(&env, &bad, 1.0, 1e-2),
            Err(Error::InconsistentInitialMoments { order: 1, .. })
        ));
    }

    #[test]
    fn dirichlet_moments_are_normalized() {
        let y = dirichlet_moments(&[0.5, 1.5, 2.0], 5).unwrap();
        assert!(check_initial(&y, 3).is_ok());
        // E[x1] = 0.5 / 4
        assert_abs_diff_eq!(y[0][0], 0.125, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_env_gives_symmetric_moments() {
        let a = validate_rate_matrix(&[vec![-2.0, 1.0, 1.0], vec![1.0, -2.0, 1.0], vec![1.0, 1.0, -2.0]]).unwrap();
        let env = EnvPath::constant(a);
        let y0 = dirichlet_moments(&[0.7, 0.7, 0.7], 4).unwrap();
        let blocks = solve_moment_hierarchy(&env, &y0, 1.0, 1e-2).unwrap();
        for b in &blocks {
            for k in [0, b.grid.len() / 2, b.grid.len() - 1] {
                for alpha in b.indices.indices() {
                    let rotated = vec![alpha[2], alpha[0], alpha[1]];
                    let swapped = vec![alpha[1], alpha[0], alpha[2]];
                    let v = b.value(k, alpha).unwrap();
                    assert_abs_diff_eq!(v, b.value(k, &rotated).unwrap(), epsilon = 1e-13);
                    assert_abs_diff_eq!(v, b.value(k, &swapped).unwrap(), epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn normalization_and_bounds_hold() {
        let base = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.5, 2.0, 0.0, 1.0, 0.7, 0.3, 0.0]);
        let amp = DMatrix::from_row_slice(3, 3, &[0.0, 0.8, 0.2, 1.0, 0.0, -0.5, 0.4, 0.1, 0.0]);
        let env = EnvPath::sinusoid(SinusoidRates::new(base, amp, 3.0, 0.0).unwrap());
        let y0 = point_mass_moments(&SimplexPoint::new(vec![0.2, 0.3, 0.5]).unwrap(), 4).unwrap();
        let blocks = solve_moment_hierarchy(&env, &y0, 2.0, 1e-3).unwrap();
        for b in &blocks {
            for k in 0..b.grid.len() {
                assert!((b.normalization(k) - 1.0).abs() < NORMALIZATION_TOL);
                assert!(b.values[k].iter().all(|&v| (-1e-10..=1.0 + 1e-10).contains(&v)));
            }
        }
    }
}
