//! Quantile-truncated Poisson distributions over depths.
//!
//! `q^δ(·; λ)` is Poisson(λ) restricted to `{0, …, Q}` where `Q` is the
//! δ-quantile, then renormalized. Every member has finite support, yet the
//! family can put its mode on any integer, and λ is continuous. Shifting by
//! one gives a distribution over depths `ℓ ≥ 1`.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ln_gamma, log_sum_exp, Graph, Tensor, Var};
use crate::error::{Result, UdnError};

pub const DEFAULT_DELTA: f64 = 0.95;

/// `log P(X = k)` for `X ~ Poisson(λ)`.
pub fn poisson_log_pmf(lambda: f64, k: usize) -> f64 {
    let k = k as f64;
    k * lambda.ln() - lambda - ln_gamma(k + 1.0)
}

/// Smallest `k` with `P(X ≤ k) ≥ δ` for `X ~ Poisson(λ)`.
///
/// The CDF is accumulated in log space. The loop is capped at `10λ + 50`,
/// far beyond where the Chernoff tail puts the quantile.
pub fn poisson_quantile(lambda: f64, delta: f64) -> usize {
    debug_assert!(lambda > 0.0);
    if delta <= 0.0 {
        return 0;
    }
    let log_delta = delta.ln();
    let log_lambda = lambda.ln();
    let guard = (10.0 * lambda + 50.0).floor() as usize;
    let mut log_p = -lambda;
    let mut log_cdf = log_p;
    let mut k = 0usize;
    while log_cdf < log_delta && k < guard {
        k += 1;
        log_p += log_lambda - (k as f64).ln();
        log_cdf = log_add_exp(log_cdf, log_p);
    }
    k
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// A member of the truncated-Poisson family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedPoissonDist {
    lambda: f64,
    delta: f64,
    shift: usize,
}

impl TruncatedPoissonDist {
    pub fn new(lambda: f64, delta: f64, shift: usize) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(UdnError::Domain(format!("lambda must be positive and finite, got {lambda}")));
        }
        if !(0.5..1.0).contains(&delta) {
            return Err(UdnError::Domain(format!("delta must lie in [0.5, 1), got {delta}")));
        }
        Ok(TruncatedPoissonDist { lambda, delta, shift })
    }

    /// The depth distribution `q(ℓ; λ)`, supported on `ℓ ≥ 1`.
    pub fn over_depths(lambda: f64, delta: f64) -> Result<Self> {
        Self::new(lambda, delta, 1)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    /// The δ-quantile `Q` of the untruncated Poisson.
    pub fn quantile(&self) -> usize {
        poisson_quantile(self.lambda, self.delta)
    }

    /// `m(q)`, the largest value with positive mass.
    pub fn support_max(&self) -> usize {
        self.shift + self.quantile()
    }

    pub fn support(&self) -> RangeInclusive<usize> {
        self.shift..=self.support_max()
    }

    /// Log-pmf with the truncation point `quantile` given explicitly rather
    /// than recomputed from λ.
    pub fn log_pmf_with_quantile(&self, ell: usize, quantile: usize) -> Result<f64> {
        if ell < self.shift || ell > self.shift + quantile {
            return Err(UdnError::Domain(format!(
                "{ell} is outside the support {}..={}",
                self.shift,
                self.shift + quantile
            )));
        }
        let terms: Vec<f64> = (0..=quantile).map(|j| poisson_log_pmf(self.lambda, j)).collect();
        Ok(terms[ell - self.shift] - log_sum_exp(&terms))
    }

    pub fn log_pmf(&self, ell: usize) -> Result<f64> {
        self.log_pmf_with_quantile(ell, self.quantile())
    }

    /// Probability of `ell`; zero outside the support.
    pub fn pmf(&self, ell: usize) -> f64 {
        self.log_pmf(ell).map_or(0.0, f64::exp)
    }

    /// Probabilities over `support()`, in order.
    pub fn pmf_vector(&self) -> Vec<f64> {
        let terms: Vec<f64> = (0..=self.quantile()).map(|j| poisson_log_pmf(self.lambda, j)).collect();
        let log_z = log_sum_exp(&terms);
        terms.iter().map(|t| (t - log_z).exp()).collect()
    }

    /// `Σ_{ℓ ∈ support} q(ℓ) g(ℓ)`.
    pub fn expectation(&self, g: impl Fn(usize) -> f64) -> f64 {
        self.support().zip(self.pmf_vector()).map(|(ell, p)| p * g(ell)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expectation(|ell| ell as f64)
    }

    /// Log-pmf over `shift..=shift + quantile` as graph nodes, differentiable
    /// in `log_lambda` (a `[1, 1]` node whose value must be `ln λ`).
    ///
    /// The truncation point is held fixed, so the normalizer is a plain
    /// finite log-sum-exp in `log_lambda`. The `-λ` factors cancel between
    /// numerator and normalizer and are omitted.
    pub fn log_pmf_nodes(&self, g: &mut Graph, log_lambda: Var, quantile: usize) -> Result<Vec<Var>> {
        let ks = Tensor::row((0..=quantile).map(|j| j as f64).collect());
        let offsets = Tensor::row((0..=quantile).map(|j| -ln_gamma(j as f64 + 1.0)).collect());
        let ks = g.constant(ks);
        let offsets = g.constant(offsets);
        let scaled = g.mul_scalar(ks, log_lambda)?;
        let logits = g.add(scaled, offsets)?;
        let log_z = g.log_sum_exp(logits);
        let mut out = Vec::with_capacity(quantile + 1);
        for j in 0..=quantile {
            let t = g.element(logits, j)?;
            let neg = g.neg(log_z);
            out.push(g.add(t, neg)?);
        }
        Ok(out)
    }
}

/// Shifted Poisson prior on the truncation: `ℓ - 1 ~ Poisson(α)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthPrior {
    alpha: f64,
}

impl DepthPrior {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(UdnError::Domain(format!("prior mean must be positive, got {alpha}")));
        }
        Ok(DepthPrior { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Exact (untruncated) log-probability; `-∞` at depth 0.
    pub fn log_pmf(&self, ell: usize) -> f64 {
        if ell == 0 {
            f64::NEG_INFINITY
        } else {
            poisson_log_pmf(self.alpha, ell - 1)
        }
    }

    pub fn pmf(&self, ell: usize) -> f64 {
        self.log_pmf(ell).exp()
    }
}

/// Linear envelope `slope·(k - 1) + intercept` checked against `m(q^{0.95}(k))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportBounds {
    pub slope: f64,
    pub intercept: f64,
}

impl Default for SupportBounds {
    fn default() -> Self {
        SupportBounds {
            slope: 1.3,
            intercept: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub k: usize,
    pub m: usize,
    pub upper_bound: f64,
    pub lower_bound: f64,
    /// `upper_bound - m`.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub rows: Vec<MarginRow>,
    /// Values of `k` whose support violates either bound.
    pub violations: Vec<usize>,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,m,upper_bound,lower_bound,margin\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.k, r.m, r.upper_bound, r.lower_bound, r.margin));
        }
        out
    }
}

/// Checks `k - ln 2 ≤ m(q^{0.95}(k)) ≤ 1.3(k - 1) + 5` for `k = 1..=k_max`
/// on the unshifted family and reports the upper margins.
pub fn verify_theorem1(k_max: usize) -> TheoremReport {
    verify_support_bounds(k_max, SupportBounds::default())
}

pub fn verify_support_bounds(k_max: usize, bounds: SupportBounds) -> TheoremReport {
    let mut rows = Vec::with_capacity(k_max);
    let mut violations = Vec::new();
    for k in 1..=k_max {
        let m = poisson_quantile(k as f64, DEFAULT_DELTA);
        let upper_bound = bounds.slope * (k as f64 - 1.0) + bounds.intercept;
        let lower_bound = k as f64 - std::f64::consts::LN_2;
        let margin = upper_bound - m as f64;
        if margin < 0.0 || (m as f64) < lower_bound {
            violations.push(k);
        }
        rows.push(MarginRow {
            k,
            m,
            upper_bound,
            lower_bound,
            margin,
        });
    }
    TheoremReport { rows, violations }
}

/// λ values in `grid` where `λ - ln 2 ≤ m(q^{0.95}(λ)) ≤ 1.3λ + 5` fails.
pub fn support_bound_violations(grid: impl IntoIterator<Item = f64>) -> Vec<f64> {
    grid.into_iter()
        .filter(|&lambda| {
            let m = poisson_quantile(lambda, DEFAULT_DELTA) as f64;
            m < lambda - std::f64::consts::LN_2 || m > 1.3 * lambda + 5.0
        })
        .collect()
}

/// Whether `n` is a mode of `q^{0.95}(n + 0.5)` (unshifted).
pub fn mode_at(n: usize) -> bool {
    let dist = TruncatedPoissonDist::new(n as f64 + 0.5, DEFAULT_DELTA, 0).expect("valid parameters");
    let pmf = dist.pmf_vector();
    n < pmf.len() && pmf.iter().all(|&p| p <= pmf[n])
}
