//! Environment paths `A(t)`, their step discretizations `A_N`, and random
//! environment laws (Markov-modulated switching, fundamentals-driven rates).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::simplex::{check_generator, MatrixPath, RateMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Constant,
    PiecewiseConstant,
    ParametricSmooth,
    Fundamentals,
}

/// Off-diagonal rates `a_ij(t) = base_ij + amplitude_ij · sin(ω t + φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidRates {
    base: DMatrix<f64>,
    amplitude: DMatrix<f64>,
    omega: f64,
    phase: f64,
}

impl SinusoidRates {
    /// Requires `base_ij >= |amplitude_ij|` off the diagonal so that every
    /// rate stays nonnegative. Diagonals of both inputs are ignored.
    pub fn new(base: DMatrix<f64>, amplitude: DMatrix<f64>, omega: f64, phase: f64) -> Result<Self> {
        let r = base.nrows();
        if base.ncols() != r || amplitude.nrows() != r || amplitude.ncols() != r {
            return Err(Error::NotSquare {
                rows: amplitude.nrows(),
                cols: amplitude.ncols(),
            });
        }
        if r < 2 {
            return Err(Error::TooFewTypes { got: r, min: 2 });
        }
        if !omega.is_finite() || !phase.is_finite() {
            return Err(Error::InvalidArgument("omega and phase must be finite".into()));
        }
        for i in 0..r {
            for j in 0..r {
                if i != j && !(base[(i, j)] >= amplitude[(i, j)].abs()) {
                    return Err(Error::NegativeOffDiagonal {
                        i,
                        j,
                        value: base[(i, j)] - amplitude[(i, j)].abs(),
                    });
                }
            }
        }
        Ok(Self {
            base,
            amplitude,
            omega,
            phase,
        })
    }

    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    pub fn eval(&self, t: f64) -> Result<RateMatrix> {
        let s = (self.omega * t + self.phase).sin();
        let off = &self.base + &self.amplitude * s;
        RateMatrix::from_off_diagonal(&off)
    }

    /// Upper bound on `max_i |a_ii(t)|` over all `t`.
    pub fn diag_bound(&self) -> f64 {
        (0..self.dim())
            .map(|i| {
                (0..self.dim())
                    .filter(|&j| j != i)
                    .map(|j| self.base[(i, j)] + self.amplitude[(i, j)].abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Per-rate affine-then-softplus map `F` from a scalar fundamentals state to
/// a Q-matrix: `a_ij = softplus(offset_ij + weight_ij · h)` for `i != j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalsMap {
    offset: DMatrix<f64>,
    weight: DMatrix<f64>,
}

impl FundamentalsMap {
    pub fn new(offset: DMatrix<f64>, weight: DMatrix<f64>) -> Result<Self> {
        let r = offset.nrows();
        if offset.ncols() != r || weight.nrows() != r || weight.ncols() != r {
            return Err(Error::NotSquare {
                rows: weight.nrows(),
                cols: weight.ncols(),
            });
        }
        if r < 2 {
            return Err(Error::TooFewTypes { got: r, min: 2 });
        }
        if offset.iter().chain(weight.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "fundamentals map has non-finite parameters".into(),
            ));
        }
        Ok(Self { offset, weight })
    }

    pub fn dim(&self) -> usize {
        self.offset.nrows()
    }
}

pub fn fundamentals_map(h: f64, params: &FundamentalsMap) -> RateMatrix {
    let r = params.dim();
    let off = DMatrix::from_fn(r, r, |i, j| {
        if i == j {
            0.0
        } else {
            softplus(params.offset[(i, j)] + params.weight[(i, j)] * h)
        }
    });
    RateMatrix::from_off_diagonal(&off).expect("softplus rates form a Q-matrix")
}

/// Discrete-time AR(1) fundamentals `h_{k+1} = φ h_k + σ ε_k`, held constant
/// on `[k/s, (k+1)/s)` where `s` is `steps_per_unit`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Process {
    pub phi: f64,
    pub sigma: f64,
    pub h0: f64,
    pub steps_per_unit: usize,
}

impl Ar1Process {
    pub fn sample<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> Vec<f64> {
        let steps = (horizon * self.steps_per_unit as f64).floor() as usize + 1;
        let mut out = Vec::with_capacity(steps);
        let mut h = self.h0;
        for _ in 0..steps {
            out.push(h);
            let eps: f64 = StandardNormal.sample(rng);
            h = self.phi * h + self.sigma * eps;
        }
        out
    }
}

/// A deterministic environment path `A(t)` on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvPath {
    Constant {
        matrix: RateMatrix,
        horizon: f64,
    },
    /// `values[k]` holds on `[breaks[k], breaks[k+1])`; `breaks[0] = 0`.
    PiecewiseConstant {
        breaks: Vec<f64>,
        values: Vec<RateMatrix>,
        horizon: f64,
    },
    Sinusoid {
        rates: SinusoidRates,
        horizon: f64,
    },
    /// `F(h_k)` on `[k/s, (k+1)/s)` for a sampled fundamentals path `h`.
    Fundamentals {
        map: FundamentalsMap,
        states: Vec<f64>,
        steps_per_unit: usize,
        horizon: f64,
    },
}

impl EnvPath {
    pub fn constant(matrix: RateMatrix) -> Self {
        EnvPath::Constant {
            matrix,
            horizon: f64::INFINITY,
        }
    }

    pub fn piecewise(breaks: Vec<f64>, values: Vec<RateMatrix>, horizon: f64) -> Result<Self> {
        if breaks.is_empty() || breaks.len() != values.len() {
            return Err(Error::InvalidPath(format!(
                "{} breakpoints for {} plateaus",
                breaks.len(),
                values.len()
            )));
        }
        if breaks[0] != 0.0 || breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPath(
                "breakpoints must start at 0 and increase strictly".into(),
            ));
        }
        let r = values[0].dim();
        if let Some(v) = values.iter().find(|v| v.dim() != r) {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: v.dim(),
            });
        }
        Ok(EnvPath::PiecewiseConstant {
            breaks,
            values,
            horizon,
        })
    }

    pub fn sinusoid(rates: SinusoidRates) -> Self {
        EnvPath::Sinusoid {
            rates,
            horizon: f64::INFINITY,
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            EnvPath::Constant { .. } => EnvKind::Constant,
            EnvPath::PiecewiseConstant { .. } => EnvKind::PiecewiseConstant,
            EnvPath::Sinusoid { .. } => EnvKind::ParametricSmooth,
            EnvPath::Fundamentals { .. } => EnvKind::Fundamentals,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EnvPath::Constant { matrix, .. } => matrix.dim(),
            EnvPath::PiecewiseConstant { values, .. } => values[0].dim(),
            EnvPath::Sinusoid { rates, .. } => rates.dim(),
            EnvPath::Fundamentals { map, .. } => map.dim(),
        }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            EnvPath::Constant { horizon, .. }
            | EnvPath::PiecewiseConstant { horizon, .. }
            | EnvPath::Sinusoid { horizon, .. }
            | EnvPath::Fundamentals { horizon, .. } => *horizon,
        }
    }

    /// Restricts the evaluable range to `[0, horizon]`.
    pub fn with_horizon(mut self, new_horizon: f64) -> Self {
        match &mut self {
            EnvPath::Constant { horizon, .. }
            | EnvPath::PiecewiseConstant { horizon, .. }
            | EnvPath::Sinusoid { horizon, .. }
            | EnvPath::Fundamentals { horizon, .. } => *horizon = new_horizon,
        }
        self
    }

    /// Largest `|a_ii(t)|` the path can reach, used to size populations.
    pub fn diag_bound(&self) -> f64 {
        let diag = |m: &RateMatrix| (0..m.dim()).map(|i| m.get(i, i).abs()).fold(0.0, f64::max);
        match self {
            EnvPath::Constant { matrix, .. } => diag(matrix),
            EnvPath::PiecewiseConstant { values, .. } => values.iter().map(diag).fold(0.0, f64::max),
            EnvPath::Sinusoid { rates, .. } => rates.diag_bound(),
            EnvPath::Fundamentals { map, states, .. } => states
                .iter()
                .map(|&h| diag(&fundamentals_map(h, map)))
                .fold(0.0, f64::max),
        }
    }

    /// Smallest population `N` for which every `I + A(t)/N` is stochastic.
    pub fn n_min(&self) -> usize {
        (self.diag_bound().ceil() as usize).max(1)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon()) {
            return Err(Error::OutOfHorizon {
                t,
                horizon: self.horizon(),
            });
        }
        Ok(())
    }
}

/// Index of the plateau containing `t` for plateaus starting at `breaks`.
fn plateau_index(breaks: &[f64], t: f64) -> usize {
    breaks.partition_point(|&b| b <= t).saturating_sub(1)
}

/// Right-continuous lookup `A(t)`.
pub fn evaluate(env: &EnvPath, t: f64) -> Result<RateMatrix> {
    env.check_time(t)?;
    match env {
        EnvPath::Constant { matrix, .. } => Ok(matrix.clone()),
        EnvPath::PiecewiseConstant { breaks, values, .. } => Ok(values[plateau_index(breaks, t)].clone()),
        EnvPath::Sinusoid { rates, .. } => rates.eval(t),
        EnvPath::Fundamentals {
            map,
            states,
            steps_per_unit,
            ..
        } => {
            let k = step_index(t, *steps_per_unit).min(states.len() - 1);
            Ok(fundamentals_map(states[k], map))
        }
    }
}

/// `floor(n t)`, consistent with breakpoints computed as `k as f64 / n as f64`.
pub(crate) fn step_index(t: f64, n: usize) -> usize {
    let nf = n as f64;
    let mut k = (t * nf).floor().max(0.0) as usize;
    while (k + 1) as f64 / nf <= t {
        k += 1;
    }
    while k > 0 && k as f64 / nf > t {
        k -= 1;
    }
    k
}

impl MatrixPath for EnvPath {
    fn dim(&self) -> usize {
        EnvPath::dim(self)
    }

    fn horizon(&self) -> f64 {
        EnvPath::horizon(self)
    }

    fn value_at(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(evaluate(self, t)?.matrix().clone())
    }

    fn left_limit(&self, t: f64) -> Result<DMatrix<f64>> {
        self.check_time(t)?;
        match self {
            EnvPath::PiecewiseConstant { breaks, values, .. } => {
                let k = breaks.partition_point(|&b| b < t).saturating_sub(1);
                Ok(values[k].matrix().clone())
            }
            EnvPath::Fundamentals {
                map,
                states,
                steps_per_unit,
                ..
            } => {
                let k = step_index(t, *steps_per_unit);
                let k = if k > 0 && k as f64 / *steps_per_unit as f64 == t {
                    k - 1
                } else {
                    k
                };
                Ok(fundamentals_map(states[k.min(states.len() - 1)], map).matrix().clone())
            }
            _ => self.value_at(t),
        }
    }

    fn breakpoints(&self, upto: f64) -> Vec<f64> {
        match self {
            EnvPath::PiecewiseConstant { breaks, .. } => {
                breaks.iter().copied().filter(|&b| b > 0.0 && b <= upto).collect()
            }
            EnvPath::Fundamentals { steps_per_unit, .. } => {
                let last = (upto * *steps_per_unit as f64).floor() as usize;
                (1..=last)
                    .map(|k| k as f64 / *steps_per_unit as f64)
                    .filter(|&b| b <= upto)
                    .collect()
            }
            _ => Vec::new(),
        }
    }
}

/// A step environment `A_N`, constant on `[k/N, (k+1)/N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEnvPath {
    n: usize,
    values: Vec<RateMatrix>,
    horizon: f64,
}

impl StepEnvPath {
    pub fn new(n: usize, values: Vec<RateMatrix>, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("discretization density must be >= 1".into()));
        }
        if values.is_empty() {
            return Err(Error::InvalidPath("step path needs at least one value".into()));
        }
        let needed = step_index(horizon, n) + 1;
        if values.len() < needed {
            return Err(Error::InvalidPath(format!(
                "{} steps cannot cover horizon {horizon} at N = {n}",
                values.len()
            )));
        }
        Ok(Self { n, values, horizon })
    }

    pub fn density(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[RateMatrix] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.values[0].dim()
    }

    /// `A_N(k/N)`.
    pub fn step_value(&self, k: usize) -> Result<&RateMatrix> {
        self.values.get(k).ok_or(Error::OutOfHorizon {
            t: k as f64 / self.n as f64,
            horizon: self.horizon,
        })
    }

    pub fn n_min(&self) -> usize {
        self.values.iter().map(RateMatrix::n_min).max().unwrap_or(1)
    }

    /// The same path viewed as a piecewise-constant environment.
    pub fn to_env_path(&self) -> EnvPath {
        EnvPath::PiecewiseConstant {
            breaks: (0..self.values.len()).map(|k| k as f64 / self.n as f64).collect(),
            values: self.values.clone(),
            horizon: self.horizon,
        }
    }
}

impl MatrixPath for StepEnvPath {
    fn dim(&self) -> usize {
        StepEnvPath::dim(self)
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn value_at(&self, t: f64) -> Result<DMatrix<f64>> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::OutOfHorizon {
                t,
                horizon: self.horizon,
            });
        }
        Ok(self.step_value(step_index(t, self.n))?.matrix().clone())
    }

    fn left_limit(&self, t: f64) -> Result<DMatrix<f64>> {
        let k = step_index(t, self.n);
        if k > 0 && k as f64 / self.n as f64 == t {
            Ok(self.step_value(k - 1)?.matrix().clone())
        } else {
            self.value_at(t)
        }
    }

    fn breakpoints(&self, upto: f64) -> Vec<f64> {
        let last = step_index(upto.min(self.horizon), self.n);
        (1..=last).map(|k| k as f64 / self.n as f64).collect()
    }
}

/// Samples `A` at `k/N` for every `k/N <= horizon`.
pub fn discretize(env: &EnvPath, n: usize, horizon: f64) -> Result<StepEnvPath> {
    if n == 0 {
        return Err(Error::InvalidArgument("discretization density must be >= 1".into()));
    }
    if !(horizon >= 0.0) || horizon > env.horizon() {
        return Err(Error::OutOfHorizon {
            t: horizon,
            horizon: env.horizon(),
        });
    }
    let steps = step_index(horizon, n) + 1;
    let values = (0..steps)
        .map(|k| evaluate(env, k as f64 / n as f64))
        .collect::<Result<Vec<_>>>()?;
    StepEnvPath::new(n, values, horizon)
}

/// Intensities of the environment's own state switching (a Q-matrix over
/// environment states; a single state is allowed).
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingIntensities {
    m: DMatrix<f64>,
}

impl SwitchingIntensities {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_generator(&m, 1)?;
        Ok(Self { m })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }
}

/// Law of a random environment.
#[derive(Debug, Clone, PartialEq)]
pub enum RandomEnvSpec {
    MarkovSwitch {
        states: Vec<RateMatrix>,
        switching: SwitchingIntensities,
        initial_law: Vec<f64>,
    },
    Fundamentals {
        process: Ar1Process,
        map: FundamentalsMap,
    },
}

impl RandomEnvSpec {
    pub fn markov_switch(
        states: Vec<RateMatrix>,
        switching: SwitchingIntensities,
        initial_law: Vec<f64>,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidArgument("markov switch needs at least one state".into()));
        }
        let r = states[0].dim();
        if let Some(s) = states.iter().find(|s| s.dim() != r) {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: s.dim(),
            });
        }
        if switching.dim() != states.len() || initial_law.len() != states.len() {
            return Err(Error::DimensionMismatch {
                expected: states.len(),
                found: if switching.dim() != states.len() {
                    switching.dim()
                } else {
                    initial_law.len()
                },
            });
        }
        let total: f64 = initial_law.iter().sum();
        if initial_law.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(
                "initial law must be a probability vector".into(),
            ));
        }
        Ok(RandomEnvSpec::MarkovSwitch {
            states,
            switching,
            initial_law,
        })
    }

    pub fn fundamentals(process: Ar1Process, map: FundamentalsMap) -> Result<Self> {
        if process.steps_per_unit == 0 {
            return Err(Error::InvalidArgument("steps_per_unit must be >= 1".into()));
        }
        if !(process.phi.is_finite() && process.sigma >= 0.0 && process.h0.is_finite()) {
            return Err(Error::InvalidArgument("invalid AR(1) parameters".into()));
        }
        Ok(RandomEnvSpec::Fundamentals { process, map })
    }

    pub fn dim(&self) -> usize {
        match self {
            RandomEnvSpec::MarkovSwitch { states, .. } => states[0].dim(),
            RandomEnvSpec::Fundamentals { map, .. } => map.dim(),
        }
    }
}

fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draws one environment path on `[0, horizon]`.
pub fn sample_env<R: Rng + ?Sized>(spec: &RandomEnvSpec, horizon: f64, rng: &mut R) -> EnvPath {
    match spec {
        RandomEnvSpec::MarkovSwitch {
            states,
            switching,
            initial_law,
        } => {
            let q = switching.matrix();
            let mut s = categorical(initial_law, rng);
            let mut t = 0.0;
            let mut breaks = vec![0.0];
            let mut values = vec![states[s].clone()];
            loop {
                let rate = -q[(s, s)];
                if rate <= 0.0 {
                    break;
                }
                t += Exp::new(rate).expect("positive rate").sample(rng);
                if t >= horizon {
                    break;
                }
                let weights: Vec<f64> = (0..states.len())
                    .map(|j| if j == s { 0.0 } else { q[(s, j)] })
                    .collect();
                s = categorical(&weights, rng);
                breaks.push(t);
                values.push(states[s].clone());
            }
            if values.len() == 1 {
                EnvPath::Constant {
                    matrix: values.pop().unwrap(),
                    horizon,
                }
            } else {
                EnvPath::PiecewiseConstant {
                    breaks,
                    values,
                    horizon,
                }
            }
        }
        RandomEnvSpec::Fundamentals { process, map } => EnvPath::Fundamentals {
            map: map.clone(),
            states: process.sample(horizon, rng),
            steps_per_unit: process.steps_per_unit,
            horizon,
        },
    }
}

/// Number of plateau changes in a sampled path.
pub fn switch_count(env: &EnvPath) -> usize {
    match env {
        EnvPath::PiecewiseConstant { breaks, .. } => breaks.len() - 1,
        _ => 0,
    }
}
