//! Exact conditional quantities of the finite-N chain: the probability
//! generating function, first and second conditional moments, full-law
//! enumeration for small populations, and the one-step generator
//! `N (E[f(next)] - f(p))` applied to polynomial test functions.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::polynomial::{PolynomialTestFn, MAX_DEGREE};
use crate::simplex::{counts_to_point, StochasticMatrix, TypeCounts};

/// Which one-step kernel to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKernel {
    /// `S_{N,k}`: internal dynamics only.
    Internal,
    /// `T_N`: multinomial sampling only.
    Resample,
    /// `U_{N,k} = S_{N,k} T_N`: internal dynamics, then sampling.
    InternalThenResample,
}

/// Population cap for enumeration.
pub const ENUM_MAX_N: u64 = 12;
/// Type-count cap for enumeration.
pub const ENUM_MAX_R: usize = 3;

fn check_seq(counts: &TypeCounts, p_seq: &[StochasticMatrix]) -> Result<usize> {
    if p_seq.is_empty() {
        return Err(Error::InvalidArgument("need at least one transition matrix".into()));
    }
    let r = counts.dim();
    if let Some(p) = p_seq.iter().find(|p| p.dim() != r) {
        return Err(Error::DimensionMismatch {
            expected: r,
            found: p.dim(),
        });
    }
    Ok(r)
}

/// Left-to-right product `P_a P_{a+1} ... P_{b-1}`; identity when empty.
fn product(p_seq: &[StochasticMatrix], r: usize) -> DMatrix<f64> {
    p_seq.iter().fold(DMatrix::identity(r, r), |acc, p| acc * p.matrix())
}

fn counts_row(counts: &TypeCounts) -> RowDVector<f64> {
    RowDVector::from_iterator(counts.dim(), counts.counts().iter().map(|&c| c as f64))
}

/// `E[Π v_i^{n_i(m+k)} | n(m)] = Π_i (P_{m,i·} P_{m+1} ... P_{m+k-1} v)^{n_i(m)}`.
pub fn pgf_eval(v: &[f64], counts: &TypeCounts, p_seq: &[StochasticMatrix]) -> Result<f64> {
    let r = check_seq(counts, p_seq)?;
    if v.len() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            found: v.len(),
        });
    }
    if v.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument("pgf argument must be positive".into()));
    }
    let w = product(&p_seq[1..], r) * DVector::from_column_slice(v);
    let inner = p_seq[0].matrix() * w;
    Ok(counts
        .counts()
        .iter()
        .enumerate()
        .map(|(i, &n)| inner[i].powi(n as i32))
        .product())
}

/// `E[n(m+k) | n(m)] = n(m) P_m ... P_{m+k-1}`.
pub fn exact_conditional_mean(counts: &TypeCounts, p_seq: &[StochasticMatrix]) -> Result<Vec<f64>> {
    let r = check_seq(counts, p_seq)?;
    let mean = counts_row(counts) * product(p_seq, r);
    Ok(mean.iter().copied().collect())
}

/// `E[(n_j(m+k) - n_j(m))^2 | n(m)]` for zero-based type `j`.
///
/// With `μ_j = n(m) P_m ... P_{m+k-1} e_j` and `q_ij` the `(i, j)` entry of
/// the full product, the second factorial moment is `μ_j^2 - Σ_i n_i q_ij^2`.
pub fn exact_conditional_sqdiff(counts: &TypeCounts, p_seq: &[StochasticMatrix], j: usize) -> Result<f64> {
    let r = check_seq(counts, p_seq)?;
    if j >= r {
        return Err(Error::DimensionMismatch { expected: r, found: j });
    }
    let k = p_seq.len();
    let head = product(&p_seq[..k - 1], r);
    let last_col = p_seq[k - 1].matrix().column(j).clone_owned();
    let mu = (counts_row(counts) * &head * &last_col)[0];
    let full_col = &head * &last_col;
    let dispersion: f64 = counts
        .counts()
        .iter()
        .enumerate()
        .map(|(i, &n)| full_col[i].powi(2) * n as f64)
        .sum();
    let nj = counts.counts()[j] as f64;
    Ok(mu * mu + mu - dispersion - 2.0 * mu * nj + nj * nj)
}

/// An exact law over type counts.
pub type CountsLaw = BTreeMap<Vec<u64>, f64>;

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// All vectors of `r` nonnegative integers summing to `n`.
pub fn compositions(n: u64, r: usize) -> Vec<Vec<u64>> {
    fn go(n: u64, r: usize, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if r == 1 {
            prefix.push(n);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=n).rev() {
            prefix.push(k);
            go(n - k, r - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(n, r, &mut Vec::with_capacity(r), &mut out);
    out
}

fn multinomial_pmf(x: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = x.iter().sum();
    let mut log_coef = ln_factorial(n);
    let mut prod = 1.0;
    for (&k, &p) in x.iter().zip(probs) {
        log_coef -= ln_factorial(k);
        if k > 0 {
            if p <= 0.0 {
                return 0.0;
            }
            prod *= p.powi(k as i32);
        }
    }
    log_coef.exp() * prod
}

fn check_enumerable(n: u64, r: usize) -> Result<()> {
    if n > ENUM_MAX_N || r > ENUM_MAX_R {
        return Err(Error::EnumerationTooLarge {
            reason: format!("N = {n}, r = {r} exceeds caps N <= {ENUM_MAX_N}, r <= {ENUM_MAX_R}"),
        });
    }
    Ok(())
}

/// Exact law of `multinomial(n, probs)` over all outcomes.
pub fn enumerate_multinomial(n: u64, probs: &[f64]) -> Result<CountsLaw> {
    check_enumerable(n, probs.len())?;
    Ok(compositions(n, probs.len())
        .into_iter()
        .map(|x| {
            let p = multinomial_pmf(&x, probs);
            (x, p)
        })
        .filter(|(_, p)| *p > 0.0)
        .collect())
}

fn convolve(a: &CountsLaw, b: &CountsLaw) -> CountsLaw {
    let mut out = CountsLaw::new();
    for (xa, pa) in a {
        for (xb, pb) in b {
            let key: Vec<u64> = xa.iter().zip(xb).map(|(u, v)| u + v).collect();
            *out.entry(key).or_default() += pa * pb;
        }
    }
    out
}

/// Exact one-step law from a fixed configuration.
pub fn enumerate_step(counts: &TypeCounts, p: &StochasticMatrix, kernel: StepKernel) -> Result<CountsLaw> {
    let r = counts.dim();
    check_enumerable(counts.population(), r)?;
    if p.dim() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            found: p.dim(),
        });
    }
    let internal = || -> Result<CountsLaw> {
        let mut law = CountsLaw::from([(vec![0; r], 1.0)]);
        for (i, &n_i) in counts.counts().iter().enumerate() {
            law = convolve(&law, &enumerate_multinomial(n_i, &p.row(i))?);
        }
        Ok(law)
    };
    match kernel {
        StepKernel::Internal => internal(),
        StepKernel::Resample => resample_law(counts.counts()),
        StepKernel::InternalThenResample => {
            let mut out = CountsLaw::new();
            for (mid, pm) in internal()? {
                for (x, px) in resample_law(&mid)? {
                    *out.entry(x).or_default() += pm * px;
                }
            }
            Ok(out)
        }
    }
}

fn resample_law(counts: &[u64]) -> Result<CountsLaw> {
    let n: u64 = counts.iter().sum();
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    enumerate_multinomial(n, &probs)
}

/// Exact law after applying `p_seq.len()` steps of the given kernel.
pub fn enumerate_chain_law(initial: &TypeCounts, p_seq: &[StochasticMatrix], kernel: StepKernel) -> Result<CountsLaw> {
    let mut law = CountsLaw::from([(initial.counts().to_vec(), 1.0)]);
    for p in p_seq {
        let mut next = CountsLaw::new();
        for (x, px) in &law {
            let from = TypeCounts::new(x.clone())?;
            for (y, py) in enumerate_step(&from, p, kernel)? {
                *next.entry(y).or_default() += px * py;
            }
        }
        law = next;
    }
    Ok(law)
}

// ---------------------------------------------------------------------------
// Polynomial moments of sums of independent multinomials.

type Moments = HashMap<Vec<u32>, f64>;

fn stirling2(n: u32, k: u32) -> f64 {
    // small table suffices: n <= MAX_DEGREE
    let mut s = vec![vec![0.0; (n + 1) as usize]; (n + 1) as usize];
    s[0][0] = 1.0;
    for i in 1..=n as usize {
        for j in 1..=i {
            s[i][j] = j as f64 * s[i - 1][j] + s[i - 1][j - 1];
        }
    }
    if k > n {
        0.0
    } else {
        s[n as usize][k as usize]
    }
}

fn falling(n: f64, k: u32) -> f64 {
    (0..k).map(|i| n - i as f64).product()
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

/// Every exponent vector `γ <= β` componentwise.
fn sub_indices(beta: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::with_capacity(beta.len())];
    for &b in beta {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..=b).map(move |g| {
                    let mut v = prefix.clone();
                    v.push(g);
                    v
                })
            })
            .collect();
    }
    out
}

/// All exponent vectors of dimension `r` and total degree `<= d`.
fn indices_up_to(r: usize, d: u32) -> Vec<Vec<u32>> {
    sub_indices(&vec![d; r])
        .into_iter()
        .filter(|v| v.iter().sum::<u32>() <= d)
        .collect()
}

/// `(coefficient, k)` pairs with `E[X^β] = Σ coef · falling(n, |k|) · q^k` for
/// `X ~ multinomial(n, q)`, from `x^b = Σ_k S(b, k) (x)_k`.
fn factorial_expansion(beta: &[u32]) -> Vec<(f64, Vec<u32>)> {
    sub_indices(beta)
        .into_iter()
        .map(|k| {
            let c: f64 = beta.iter().zip(&k).map(|(&b, &kk)| stirling2(b, kk)).product();
            (c, k)
        })
        .filter(|(c, _)| *c != 0.0)
        .collect()
}

fn multinomial_moments(n: u64, q: &[f64], degree: u32) -> Moments {
    indices_up_to(q.len(), degree)
        .into_iter()
        .map(|beta| {
            let m: f64 = factorial_expansion(&beta)
                .into_iter()
                .map(|(c, k)| {
                    let total: u32 = k.iter().sum();
                    let qk: f64 = q.iter().zip(&k).map(|(qi, &ki)| qi.powi(ki as i32)).product();
                    c * falling(n as f64, total) * qk
                })
                .sum();
            (beta, m)
        })
        .collect()
}

fn sum_moments(a: &Moments, b: &Moments) -> Moments {
    a.keys()
        .map(|beta| {
            let m: f64 = sub_indices(beta)
                .into_iter()
                .map(|g| {
                    let rest: Vec<u32> = beta.iter().zip(&g).map(|(b, g)| b - g).collect();
                    let c: f64 = beta.iter().zip(&g).map(|(&b, &g)| binom(b, g)).product();
                    c * a[&g] * b[&rest]
                })
                .sum();
            (beta.clone(), m)
        })
        .collect()
}

/// Raw moments `E[n'^β]`, `|β| <= degree`, of the internal-step output.
fn internal_moments(counts: &TypeCounts, p: &StochasticMatrix, degree: u32) -> Moments {
    let r = counts.dim();
    let mut acc: Moments = indices_up_to(r, degree)
        .into_iter()
        .map(|b| {
            let v = if b.iter().all(|&x| x == 0) { 1.0 } else { 0.0 };
            (b, v)
        })
        .collect();
    for (i, &n_i) in counts.counts().iter().enumerate() {
        if n_i == 0 {
            continue;
        }
        acc = sum_moments(&acc, &multinomial_moments(n_i, &p.row(i), degree));
    }
    acc
}

fn point_moments(counts: &[u64], degree: u32) -> Moments {
    indices_up_to(counts.len(), degree)
        .into_iter()
        .map(|b| {
            let v: f64 = counts
                .iter()
                .zip(&b)
                .map(|(&c, &e)| (c as f64).powi(e as i32))
                .product();
            (b, v)
        })
        .collect()
}

/// `E[f(Y/N)]` for `Y ~ multinomial(N, m/N)` given the raw moments of `m`.
fn resampled_expectation(f: &PolynomialTestFn, n: u64, m_moments: &Moments) -> f64 {
    let nf = n as f64;
    f.terms()
        .iter()
        .map(|(beta, coef)| {
            let deg: u32 = beta.iter().sum();
            let e: f64 = factorial_expansion(beta)
                .into_iter()
                .map(|(c, k)| {
                    let total: u32 = k.iter().sum();
                    c * falling(nf, total) / nf.powi(total as i32) * m_moments[&k]
                })
                .sum();
            coef * e / nf.powi(deg as i32)
        })
        .sum()
}

fn plain_expectation(f: &PolynomialTestFn, n: u64, moments: &Moments) -> f64 {
    let nf = n as f64;
    f.terms()
        .iter()
        .map(|(beta, coef)| coef * moments[beta] / nf.powi(beta.iter().sum::<u32>() as i32))
        .sum()
}

/// `N (E[f(n(k+1)/N) | n(k)/N = p] - f(p))`, computed exactly through the
/// factorial-moment expansion of multinomial vectors.
pub fn discrete_generator_apply(
    f: &PolynomialTestFn,
    counts: &TypeCounts,
    p: &StochasticMatrix,
    kernel: StepKernel,
) -> Result<f64> {
    let r = counts.dim();
    if f.dim() != r || p.dim() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            found: if f.dim() != r { f.dim() } else { p.dim() },
        });
    }
    let degree = f.degree();
    if degree > MAX_DEGREE {
        return Err(Error::DegreeTooHigh {
            degree,
            max: MAX_DEGREE,
        });
    }
    let n = counts.population();
    let expected = match kernel {
        StepKernel::Internal => plain_expectation(f, n, &internal_moments(counts, p, degree)),
        StepKernel::Resample => resampled_expectation(f, n, &point_moments(counts.counts(), degree)),
        StepKernel::InternalThenResample => resampled_expectation(f, n, &internal_moments(counts, p, degree)),
    };
    let here = f.eval(counts_to_point(counts).coords());
    Ok(n as f64 * (expected - here))
}

/// Same quantity as [`discrete_generator_apply`], by summing over the
/// enumerated one-step law. Limited to `N <= 12`, `r <= 3`.
pub fn discrete_generator_enumerate(
    f: &PolynomialTestFn,
    counts: &TypeCounts,
    p: &StochasticMatrix,
    kernel: StepKernel,
) -> Result<f64> {
    let n = counts.population() as f64;
    let law = enumerate_step(counts, p, kernel)?;
    let expected: f64 = law
        .iter()
        .map(|(x, px)| {
            let pt: Vec<f64> = x.iter().map(|&c| c as f64 / n).collect();
            px * f.eval(&pt)
        })
        .sum();
    Ok(n * (expected - f.eval(counts_to_point(counts).coords())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p_example() -> StochasticMatrix {
        StochasticMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    fn c(v: &[u64]) -> TypeCounts {
        TypeCounts::new(v.to_vec()).unwrap()
    }

    #[test]
    fn compositions_count() {
        assert_eq!(compositions(3, 2), vec![vec![3, 0], vec![2, 1], vec![1, 2], vec![0, 3]]);
        assert_eq!(compositions(4, 3).len(), 15);
    }

    #[test]
    fn enumerated_law_sums_to_one() {
        let law = enumerate_step(&c(&[2, 1]), &p_example(), StepKernel::InternalThenResample).unwrap();
        assert_abs_diff_eq!(law.values().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert!(matches!(
            enumerate_step(&c(&[10, 3]), &p_example(), StepKernel::Internal),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn pgf_examples() {
        let p = p_example();
        assert_abs_diff_eq!(
            pgf_eval(&[1.0, 1.0], &c(&[2, 1]), std::slice::from_ref(&p)).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        let law = enumerate_step(&c(&[2, 1]), &p, StepKernel::Internal).unwrap();
        let brute: f64 = law
            .iter()
            .map(|(x, q)| q * 2f64.powi(x[0] as i32) * 3f64.powi(x[1] as i32))
            .sum();
        assert_abs_diff_eq!(
            pgf_eval(&[2.0, 3.0], &c(&[2, 1]), &[p]).unwrap(),
            brute,
            epsilon = 1e-12
        );
        let id = StochasticMatrix::identity(2).unwrap();
        assert_abs_diff_eq!(
            pgf_eval(&[2.0, 3.0], &c(&[2, 1]), &[id.clone(), id]).unwrap(),
            4.0 * 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mean_examples() {
        let id = StochasticMatrix::identity(2).unwrap();
        assert_eq!(exact_conditional_mean(&c(&[2, 1]), &[id]).unwrap(), vec![2.0, 1.0]);
        let m = exact_conditional_mean(&c(&[2, 1]), &[p_example()]).unwrap();
        assert_abs_diff_eq!(m[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sqdiff_examples() {
        let id = StochasticMatrix::identity(2).unwrap();
        assert_eq!(exact_conditional_sqdiff(&c(&[2, 1]), &[id], 0).unwrap(), 0.0);
        let law = enumerate_step(&c(&[2, 1]), &p_example(), StepKernel::Internal).unwrap();
        let brute: f64 = law.iter().map(|(x, q)| q * (x[0] as f64 - 2.0).powi(2)).sum();
        assert_abs_diff_eq!(
            exact_conditional_sqdiff(&c(&[2, 1]), &[p_example()], 0).unwrap(),
            brute,
            epsilon = 1e-12
        );
    }

    #[test]
    fn generator_constant_is_zero() {
        let one = PolynomialTestFn::constant(2, 1.0).unwrap();
        for kernel in [
            StepKernel::Internal,
            StepKernel::Resample,
            StepKernel::InternalThenResample,
        ] {
            assert_abs_diff_eq!(
                discrete_generator_apply(&one, &c(&[3, 5]), &p_example(), kernel).unwrap(),
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn generator_square_matches_enumeration_at_n8() {
        let f = PolynomialTestFn::monomial(vec![2, 0]).unwrap();
        let a = crate::simplex::validate_rate_matrix(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap();
        let p = crate::simplex::internal_transition_matrix(&a, 8).unwrap();
        for k in 0..=8u64 {
            let counts = c(&[k, 8 - k]);
            for kernel in [
                StepKernel::Internal,
                StepKernel::Resample,
                StepKernel::InternalThenResample,
            ] {
                let fast = discrete_generator_apply(&f, &counts, &p, kernel).unwrap();
                let slow = discrete_generator_enumerate(&f, &counts, &p, kernel).unwrap();
                assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
            }
        }
    }

    fn stochastic3() -> impl Strategy<Value = StochasticMatrix> {
        prop::collection::vec(0.01f64..1.0, 9).prop_map(|w| {
            let rows: Vec<Vec<f64>> = w
                .chunks(3)
                .map(|row| {
                    let s: f64 = row.iter().sum();
                    let mut v: Vec<f64> = row.iter().map(|x| x / s).collect();
                    let head: f64 = v[..2].iter().sum();
                    v[2] = 1.0 - head;
                    v
                })
                .collect();
            StochasticMatrix::from_rows(&rows).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn moment_route_matches_enumeration(
            p in stochastic3(),
            n0 in 0u64..4, n1 in 0u64..4, n2 in 1u64..4,
            e in prop::collection::vec(0u32..3, 3),
        ) {
            prop_assume!(e.iter().sum::<u32>() <= 4);
            let counts = c(&[n0, n1, n2 + 1]);
            let f = PolynomialTestFn::new(3, vec![(e, 1.0), (vec![1, 0, 1], -0.5)]).unwrap();
            for kernel in [StepKernel::Internal, StepKernel::Resample, StepKernel::InternalThenResample] {
                let fast = discrete_generator_apply(&f, &counts, &p, kernel).unwrap();
                let slow = discrete_generator_enumerate(&f, &counts, &p, kernel).unwrap();
                prop_assert!((fast - slow).abs() < 1e-11, "{kernel:?}: {fast} vs {slow}");
            }
        }

        #[test]
        fn pgf_at_ones_is_one(p in stochastic3(), q in stochastic3(), n0 in 0u64..20, n1 in 2u64..20) {
            let v = pgf_eval(&[1.0, 1.0, 1.0], &c(&[n0, n1, 3]), &[p, q]).unwrap();
            prop_assert!((v - 1.0).abs() < 1e-12);
        }

        #[test]
        fn sqdiff_nonnegative(p in stochastic3(), q in stochastic3(), n0 in 0u64..20, n1 in 2u64..20, j in 0usize..3) {
            let v = exact_conditional_sqdiff(&c(&[n0, n1, 1]), &[p, q], j).unwrap();
            prop_assert!(v >= -1e-9);
        }
    }
}
