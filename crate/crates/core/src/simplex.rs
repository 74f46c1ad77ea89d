//! Validated building blocks: Q-matrices, stochastic matrices, type counts,
//! points and paths on the probability simplex, and the exponentially
//! weighted uniform metric `d_U` on matrix-valued paths.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for Q-matrices and stochastic matrices.
pub const TOL_ROW: f64 = 1e-12;
/// Coordinate-sum tolerance for simplex points.
pub const TOL_SIMPLEX: f64 = 1e-10;
/// Coordinates in `[-TOL_NEG, 0)` are treated as roundoff and clamped to zero.
const TOL_NEG: f64 = 1e-12;

fn check_square(m: &DMatrix<f64>, min_dim: usize) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() < min_dim {
        return Err(Error::TooFewTypes {
            got: m.nrows(),
            min: min_dim,
        });
    }
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { i, j });
            }
        }
    }
    Ok(m.nrows())
}

/// Checks the Q-matrix conditions (nonnegative off-diagonals, zero row sums)
/// on a square matrix of dimension at least `min_dim`.
pub(crate) fn check_generator(m: &DMatrix<f64>, min_dim: usize) -> Result<()> {
    let r = check_square(m, min_dim)?;
    for i in 0..r {
        for j in 0..r {
            if i != j && m[(i, j)] < 0.0 {
                return Err(Error::NegativeOffDiagonal { i, j, value: m[(i, j)] });
            }
        }
    }
    for i in 0..r {
        let residual: f64 = m.row(i).iter().sum();
        if residual.abs() > TOL_ROW {
            return Err(Error::RowSumNonzero { i, residual });
        }
    }
    Ok(())
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    for row in rows {
        if row.len() != r {
            return Err(Error::NotSquare {
                rows: r,
                cols: row.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(r, r, |i, j| rows[i][j]))
}

/// An instantaneous rate matrix `A`: off-diagonal entries are nonnegative and
/// every row sums to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    m: DMatrix<f64>,
}

impl RateMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_generator(&m, 2)?;
        Ok(Self { m })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    /// Builds a Q-matrix from its off-diagonal rates; the diagonal is set to
    /// the negative row sum. Diagonal entries of `off` are ignored.
    pub fn from_off_diagonal(off: &DMatrix<f64>) -> Result<Self> {
        let r = off.nrows();
        let mut m = off.clone();
        for i in 0..r {
            m[(i, i)] = 0.0;
            let s: f64 = m.row(i).iter().sum();
            m[(i, i)] = -s;
        }
        Self::new(m)
    }

    pub fn zeros(r: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(r, r))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.m.row(i).iter().copied().collect())
            .collect()
    }

    /// Smallest population for which `I + A/N` is a stochastic matrix.
    pub fn n_min(&self) -> usize {
        let max_diag = (0..self.dim()).map(|i| self.m[(i, i)].abs()).fold(0.0_f64, f64::max);
        (max_diag.ceil() as usize).max(1)
    }
}

/// Validates a raw square matrix as a Q-matrix.
pub fn validate_rate_matrix(rows: &[Vec<f64>]) -> Result<RateMatrix> {
    RateMatrix::from_rows(rows)
}

/// A row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    m: DMatrix<f64>,
}

impl StochasticMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let r = check_square(&m, 2)?;
        for i in 0..r {
            for j in 0..r {
                let v = m[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::NotAProbability { i, j, value: v });
                }
            }
            let sum: f64 = m.row(i).iter().sum();
            if (sum - 1.0).abs() > TOL_ROW {
                return Err(Error::RowSumNotOne { i, sum });
            }
        }
        Ok(Self { m })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn identity(r: usize) -> Result<Self> {
        Self::new(DMatrix::identity(r, r))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.m.row(i).iter().copied().collect()
    }
}

/// The one-step internal transition matrix `P = I + A/N`.
pub fn internal_transition_matrix(a: &RateMatrix, n: usize) -> Result<StochasticMatrix> {
    let n_min = a.n_min();
    if n < n_min || n == 0 {
        return Err(Error::PopulationTooSmall { n, n_min });
    }
    let r = a.dim();
    let p = DMatrix::identity(r, r) + a.matrix() / n as f64;
    StochasticMatrix::new(p)
}

/// Occupancy vector of a population of `N` agents over `r` types.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypeCounts {
    counts: Vec<u64>,
}

impl TypeCounts {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::TooFewTypes {
                got: counts.len(),
                min: 2,
            });
        }
        let n: u64 = counts.iter().sum();
        if n < 2 {
            return Err(Error::InvalidCounts(format!("population must be at least 2, got {n}")));
        }
        Ok(Self { counts })
    }

    /// Nearest lattice point of `K_N` to `x` (largest-remainder rounding).
    pub fn from_point(x: &SimplexPoint, n: u64) -> Result<Self> {
        let scaled: Vec<f64> = x.coords().iter().map(|v| v * n as f64).collect();
        let mut counts: Vec<u64> = scaled.iter().map(|v| v.floor() as u64).collect();
        let assigned: u64 = counts.iter().sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - scaled[a].floor();
            let rb = scaled[b] - scaled[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned) as usize) {
            counts[i] += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn population(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Empirical type distribution `counts / N`.
pub fn counts_to_point(c: &TypeCounts) -> SimplexPoint {
    let n = c.population() as f64;
    SimplexPoint {
        coords: c.counts.iter().map(|&k| k as f64 / n).collect(),
    }
}

/// A point of the simplex `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint {
    coords: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(mut coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::TooFewTypes {
                got: coords.len(),
                min: 2,
            });
        }
        for (i, c) in coords.iter_mut().enumerate() {
            if !c.is_finite() || *c < -TOL_NEG {
                return Err(Error::InvalidSimplexPoint(format!(
                    "coordinate {i} = {c} is negative or not finite"
                )));
            }
            if *c < 0.0 {
                *c = 0.0;
            }
        }
        let sum: f64 = coords.iter().sum();
        if (sum - 1.0).abs() > TOL_SIMPLEX {
            return Err(Error::InvalidSimplexPoint(format!("coordinates sum to {sum}")));
        }
        Ok(Self { coords })
    }

    /// Clamps negatives to zero and rescales to unit mass.
    pub fn project(mut coords: Vec<f64>) -> Result<Self> {
        for c in coords.iter_mut() {
            if !c.is_finite() {
                return Err(Error::InvalidSimplexPoint("non-finite coordinate".into()));
            }
            if *c < 0.0 {
                *c = 0.0;
            }
        }
        let sum: f64 = coords.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidSimplexPoint("zero mass after clamping".into()));
        }
        coords.iter_mut().for_each(|c| *c /= sum);
        Self::new(coords)
    }

    pub fn vertex(r: usize, i: usize) -> Result<Self> {
        let mut coords = vec![0.0; r];
        if i >= r {
            return Err(Error::DimensionMismatch { expected: r, found: i });
        }
        coords[i] = 1.0;
        Self::new(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Right-continuous step path (chains).
    PiecewiseConstant,
    /// Linear between grid points (limit solutions).
    PiecewiseLinear,
}

/// A time-gridded path on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPath {
    grid: Vec<f64>,
    points: Vec<SimplexPoint>,
    interpolation: Interpolation,
}

impl SimplexPath {
    pub fn new(grid: Vec<f64>, points: Vec<SimplexPoint>, interpolation: Interpolation) -> Result<Self> {
        if grid.is_empty() || grid.len() != points.len() {
            return Err(Error::InvalidPath(format!(
                "{} grid stamps for {} points",
                grid.len(),
                points.len()
            )));
        }
        if grid[0] != 0.0 {
            return Err(Error::InvalidPath("grid must start at 0".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPath("grid must be strictly increasing".into()));
        }
        let r = points[0].dim();
        if let Some(p) = points.iter().find(|p| p.dim() != r) {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: p.dim(),
            });
        }
        Ok(Self {
            grid,
            points,
            interpolation,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn points(&self) -> &[SimplexPoint] {
        &self.points
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Last time stamp. A piecewise-constant path is evaluable on `[0, end]`.
    pub fn end_time(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn last(&self) -> &SimplexPoint {
        self.points.last().unwrap()
    }

    /// Value at `t` under the path's interpolation rule.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        if !(0.0..=self.end_time()).contains(&t) {
            return Err(Error::OutOfHorizon {
                t,
                horizon: self.end_time(),
            });
        }
        // index of the last stamp <= t
        let k = self.grid.partition_point(|&g| g <= t) - 1;
        match self.interpolation {
            Interpolation::PiecewiseConstant => Ok(self.points[k].coords().to_vec()),
            Interpolation::PiecewiseLinear => {
                if k + 1 == self.grid.len() {
                    return Ok(self.points[k].coords().to_vec());
                }
                let (t0, t1) = (self.grid[k], self.grid[k + 1]);
                let w = (t - t0) / (t1 - t0);
                let (a, b) = (self.points[k].coords(), self.points[k + 1].coords());
                Ok(a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect())
            }
        }
    }
}

/// A matrix-valued path on `[0, horizon]`, right-continuous with left limits.
pub trait MatrixPath {
    fn dim(&self) -> usize;
    fn horizon(&self) -> f64;
    /// Right-continuous value at `t`.
    fn value_at(&self, t: f64) -> Result<DMatrix<f64>>;
    /// Left limit at `t`; equals `value_at` away from jumps.
    fn left_limit(&self, t: f64) -> Result<DMatrix<f64>> {
        self.value_at(t)
    }
    /// Jump locations in `(0, upto]`.
    fn breakpoints(&self, upto: f64) -> Vec<f64>;
}

/// Default truncation horizon for [`path_distance_du`].
pub const DU_HORIZON: f64 = 40.0;
/// Spacing of the uniform `u`-grid used by [`path_distance_du`].
pub const DU_GRID_STEP: f64 = 0.01;

/// `d_U(x, y) = ∫_0^∞ e^{-u} sup_{t ≤ u} (‖x(t) − y(t)‖_F ∧ 1) du`, truncated
/// at `u_max`.
///
/// The inner sup is tracked on the union of both paths' breakpoints and a
/// uniform grid of spacing [`DU_GRID_STEP`]. Between consecutive nodes the
/// running sup is held at the larger of the value at the left node and the
/// left limit at the right node, and the exponential weight is integrated in
/// closed form, so the result is exact for step paths.
pub fn path_distance_du<X, Y>(x: &X, y: &Y, u_max: f64) -> Result<f64>
where
    X: MatrixPath + ?Sized,
    Y: MatrixPath + ?Sized,
{
    if !(u_max > 0.0) {
        return Err(Error::InvalidArgument(format!("u_max must be > 0, got {u_max}")));
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    let available = x.horizon().min(y.horizon());
    if available < u_max {
        return Err(Error::DomainTooShort {
            needed: u_max,
            available,
        });
    }

    let steps = (u_max / DU_GRID_STEP).round() as usize;
    let mut nodes: Vec<f64> = (0..=steps).map(|k| (k as f64 * DU_GRID_STEP).min(u_max)).collect();
    nodes.extend(x.breakpoints(u_max));
    nodes.extend(y.breakpoints(u_max));
    nodes.push(u_max);
    nodes.retain(|&u| (0.0..=u_max).contains(&u));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();

    let gap = |a: DMatrix<f64>, b: DMatrix<f64>| (a - b).norm().min(1.0);

    let mut total = 0.0;
    let mut running = 0.0_f64;
    for w in nodes.windows(2) {
        let (u0, u1) = (w[0], w[1]);
        running = running
            .max(gap(x.value_at(u0)?, y.value_at(u0)?))
            .max(gap(x.left_limit(u1)?, y.left_limit(u1)?));
        total += running * ((-u0).exp() - (-u1).exp());
    }
    Ok(total)
}
