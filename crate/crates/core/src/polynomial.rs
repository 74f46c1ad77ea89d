//! Polynomial test functions on the simplex, `f(x) = Σ c_β x^β`, with exact
//! gradients and Hessians.

use crate::error::{Error, Result};

/// Highest total degree accepted for a test function.
pub const MAX_DEGREE: u32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialTestFn {
    r: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl PolynomialTestFn {
    pub fn new(r: usize, terms: Vec<(Vec<u32>, f64)>) -> Result<Self> {
        if r < 2 {
            return Err(Error::TooFewTypes { got: r, min: 2 });
        }
        for (exps, c) in &terms {
            if exps.len() != r {
                return Err(Error::DimensionMismatch {
                    expected: r,
                    found: exps.len(),
                });
            }
            if !c.is_finite() {
                return Err(Error::InvalidArgument("non-finite coefficient".into()));
            }
            let degree: u32 = exps.iter().sum();
            if degree > MAX_DEGREE {
                return Err(Error::DegreeTooHigh {
                    degree,
                    max: MAX_DEGREE,
                });
            }
        }
        Ok(Self { r, terms })
    }

    pub fn constant(r: usize, c: f64) -> Result<Self> {
        Self::new(r, vec![(vec![0; r], c)])
    }

    /// `f(x) = x_i` (zero-based `i`).
    pub fn coordinate(r: usize, i: usize) -> Result<Self> {
        let mut e = vec![0; r];
        *e.get_mut(i).ok_or(Error::DimensionMismatch { expected: r, found: i })? = 1;
        Self::new(r, vec![(e, 1.0)])
    }

    pub fn monomial(exps: Vec<u32>) -> Result<Self> {
        Self::new(exps.len(), vec![(exps, 1.0)])
    }

    pub fn dim(&self) -> usize {
        self.r
    }

    pub fn terms(&self) -> &[(Vec<u32>, f64)] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(e, _)| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(e, c)| c * monomial(x, e)).sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.r];
        for (e, c) in &self.terms {
            for (i, gi) in g.iter_mut().enumerate() {
                if e[i] == 0 {
                    continue;
                }
                let mut d = e.clone();
                d[i] -= 1;
                *gi += c * e[i] as f64 * monomial(x, &d);
            }
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let r = self.r;
        let mut h = vec![vec![0.0; r]; r];
        for (e, c) in &self.terms {
            for i in 0..r {
                if e[i] == 0 {
                    continue;
                }
                for j in 0..r {
                    let mut d = e.clone();
                    d[i] -= 1;
                    if d[j] == 0 {
                        continue;
                    }
                    let coef = e[i] as f64 * d[j] as f64;
                    d[j] -= 1;
                    h[i][j] += c * coef * monomial(x, &d);
                }
            }
        }
        h
    }
}

/// `x^e = Π x_i^{e_i}`.
pub fn monomial(x: &[f64], e: &[u32]) -> f64 {
    x.iter().zip(e).map(|(xi, &k)| xi.powi(k as i32)).product()
}
