//! Log-likelihoods of the logistic model given precinct totals.
//!
//! The exact path evaluates the Poisson binomial probability of each
//! observed count; its gradient is the difference between the conditional
//! and unconditional expectations of `Σ_j x_j Y_j`. The approximate path
//! replaces each count's law by `Normal(μ_i, φ_i²)`.
//!
//! Per-precinct terms may be computed in parallel but are always summed in
//! precinct order, so results do not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{Dataset, PrecinctData};
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::poibin::{condition_on_total, ProbVector};

pub const DEFAULT_PHI2_FLOOR: f64 = 1e-8;
pub const DEFAULT_ENUMERATION_CAP: usize = 15;

/// Coefficients of `P(Y = 1 | x) = σ(xᵀβ)`; entry 0 multiplies the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitModel {
    beta: DVector<f64>,
}

impl LogitModel {
    pub fn new(beta: DVector<f64>) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("coefficients must be finite".into()));
        }
        Ok(Self { beta })
    }

    pub fn from_slice(beta: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(beta))
    }

    pub fn zeros(p: usize) -> Self {
        Self {
            beta: DVector::zeros(p),
        }
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }
}

fn check_dim(model: &LogitModel, precinct: &PrecinctData) -> Result<()> {
    if model.dim() != precinct.dim() {
        return Err(Error::Domain(format!(
            "model has {} coefficients but precinct {} has {} covariates",
            model.dim(),
            precinct.id(),
            precinct.dim()
        )));
    }
    Ok(())
}

/// `xᵀβ` for every voter of the precinct.
pub fn logits(model: &LogitModel, precinct: &PrecinctData) -> Result<DVector<f64>> {
    check_dim(model, precinct)?;
    Ok(precinct.x() * &model.beta)
}

pub fn probs(model: &LogitModel, precinct: &PrecinctData) -> Result<ProbVector> {
    let z = logits(model, precinct)?;
    Ok(ProbVector::new_unchecked(z.iter().map(|&v| sigmoid(v)).collect()))
}

/// `p(1 - p)` from the logit, accurate when `p` is close to 0 or 1.
pub(crate) fn bernoulli_var(z: f64) -> f64 {
    sigmoid(z) * sigmoid(-z)
}

/// Per-precinct results, in precinct order.
fn map_precincts<T, F>(data: &Dataset, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&PrecinctData) -> Result<T> + Sync + Send,
{
    data.precincts().par_iter().map(f).collect()
}

fn check_data_dim(model: &LogitModel, data: &Dataset) -> Result<()> {
    if !data.is_empty() && model.dim() != data.dim() {
        return Err(Error::Domain(format!(
            "model has {} coefficients but the dataset has {} covariates",
            model.dim(),
            data.dim()
        )));
    }
    Ok(())
}

fn exact_term(model: &LogitModel, pr: &PrecinctData) -> Result<f64> {
    let p = probs(model, pr)?;
    crate::poibin::log_pmf(&p, pr.count())
}

/// `(ln P(D_i), ∇)` for one precinct.
fn exact_term_grad(model: &LogitModel, pr: &PrecinctData) -> Result<(f64, DVector<f64>)> {
    let p = probs(model, pr)?;
    let cond = condition_on_total(&p, pr.count())?.ok_or_else(|| {
        Error::Evaluation(format!(
            "precinct {}: observed count {} has probability zero, the gradient is undefined",
            pr.id(),
            pr.count()
        ))
    })?;
    let resid = DVector::from_iterator(
        p.len(),
        cond.inclusion
            .iter()
            .zip(p.as_slice())
            .map(|(w, pj)| w - pj),
    );
    Ok((cond.log_prob, pr.x().tr_mul(&resid)))
}

/// `Σ_i ln P(Σ_j Y_ij = D_i)`. Equals `-inf` when some count is impossible.
pub fn exact_loglik(model: &LogitModel, data: &Dataset) -> Result<f64> {
    check_data_dim(model, data)?;
    let terms = map_precincts(data, |pr| exact_term(model, pr))?;
    Ok(terms.into_iter().sum())
}

/// Gradient of [`exact_loglik`].
pub fn exact_grad(model: &LogitModel, data: &Dataset) -> Result<DVector<f64>> {
    Ok(exact_value_and_grad(model, data)?.1)
}

pub fn exact_value_and_grad(model: &LogitModel, data: &Dataset) -> Result<(f64, DVector<f64>)> {
    check_data_dim(model, data)?;
    let terms = map_precincts(data, |pr| exact_term_grad(model, pr))?;
    let mut value = 0.0;
    let mut grad = DVector::zeros(model.dim());
    for (v, g) in terms {
        value += v;
        grad += g;
    }
    Ok((value, grad))
}

fn check_cap(pr: &PrecinctData, cap: usize) -> Result<()> {
    if pr.size() > cap || pr.size() > 62 {
        return Err(Error::Capability(format!(
            "precinct {} has {} voters, above the enumeration cap of {cap}; \
             enumeration is meant for diagnostics-scale precincts",
            pr.id(),
            pr.size()
        )));
    }
    Ok(())
}

/// Calls `f` with every `k`-subset of `0..n` as a bitmask, in increasing order.
pub(crate) fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(u64)) {
    if k > n {
        return;
    }
    if k == 0 {
        f(0);
        return;
    }
    let limit = 1u64 << n;
    let mut mask = (1u64 << k) - 1;
    while mask < limit {
        f(mask);
        // Gosper's hack: next integer with the same popcount
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        mask = (((r ^ mask) >> 2) / c) | r;
    }
}

fn subset_score(z: &DVector<f64>, mask: u64) -> f64 {
    (0..z.len()).filter(|j| mask >> j & 1 == 1).map(|j| z[j]).sum()
}

fn subset_sum(x: &DMatrix<f64>, mask: u64) -> DVector<f64> {
    let mut s = DVector::zeros(x.ncols());
    for j in (0..x.nrows()).filter(|j| mask >> j & 1 == 1) {
        s += x.row(j).transpose();
    }
    s
}

/// Normalized weights `exp(Σ_{j∈A} z_j) / Σ_{A'} exp(Σ_{j∈A'} z_j)` over `F_D`.
fn subset_weights(z: &DVector<f64>, d: usize) -> Vec<(u64, f64)> {
    let mut scored = Vec::new();
    for_each_subset(z.len(), d, |mask| scored.push((mask, subset_score(z, mask))));
    let top = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = scored.iter().map(|s| (s.1 - top).exp()).sum();
    scored
        .into_iter()
        .map(|(m, s)| (m, (s - top).exp() / total))
        .collect()
}

/// `Σ_i [Cov(Σ x Y | Σ Y = D_i) − Cov(Σ x Y)]`, by enumerating every subset of
/// size `D_i`. Precincts larger than `cap` are refused.
pub fn exact_hessian(model: &LogitModel, data: &Dataset, cap: usize) -> Result<DMatrix<f64>> {
    check_data_dim(model, data)?;
    for pr in data.precincts() {
        check_cap(pr, cap)?;
    }
    let p = model.dim();
    let terms = map_precincts(data, |pr| {
        let z = logits(model, pr)?;
        let x = pr.x();
        let mut h = DMatrix::zeros(p, p);
        let mut mean = DVector::zeros(p);
        for (mask, w) in subset_weights(&z, pr.count()) {
            let s = subset_sum(x, mask);
            h += w * &s * s.transpose();
            mean += w * s;
        }
        h -= &mean * mean.transpose();
        for j in 0..pr.size() {
            let xj = x.row(j).transpose();
            h -= bernoulli_var(z[j]) * &xj * xj.transpose();
        }
        Ok(h)
    })?;
    let mut out = DMatrix::zeros(p, p);
    for h in terms {
        out += h;
    }
    Ok(0.5 * (&out + out.transpose()))
}

/// Enumeration forms of the exact likelihood and gradient, written over the
/// subsets `F_D` of voters of size `D`. Exponential in precinct size; used to
/// cross-check the production paths.
pub mod combinatorial {
    use super::*;
    use crate::math::softplus;

    /// `Σ_i [ln Σ_{A∈F_{D_i}} exp(Σ_{j∈A} z_j) − Σ_j ln(1 + e^{z_j})]`.
    pub fn loglik(model: &LogitModel, data: &Dataset, cap: usize) -> Result<f64> {
        check_data_dim(model, data)?;
        let mut total = 0.0;
        for pr in data.precincts() {
            check_cap(pr, cap)?;
            let z = logits(model, pr)?;
            let mut scores = Vec::new();
            for_each_subset(z.len(), pr.count(), |mask| scores.push(subset_score(&z, mask)));
            let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = top + scores.iter().map(|s| (s - top).exp()).sum::<f64>().ln();
            total += lse - z.iter().map(|&v| softplus(v)).sum::<f64>();
        }
        Ok(total)
    }

    /// `Σ_i [Σ_{A∈F_{D_i}} w_A Σ_{j∈A} x_j − Σ_j σ(z_j) x_j]`.
    pub fn grad(model: &LogitModel, data: &Dataset, cap: usize) -> Result<DVector<f64>> {
        check_data_dim(model, data)?;
        let mut g = DVector::zeros(model.dim());
        for pr in data.precincts() {
            check_cap(pr, cap)?;
            let z = logits(model, pr)?;
            for (mask, w) in subset_weights(&z, pr.count()) {
                g += w * subset_sum(pr.x(), mask);
            }
            for j in 0..pr.size() {
                g -= sigmoid(z[j]) * pr.x().row(j).transpose();
            }
        }
        Ok(g)
    }
}

/// Mean and variance of one precinct's count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMoments {
    pub mu: f64,
    pub phi2: f64,
}

pub fn moments(model: &LogitModel, precinct: &PrecinctData) -> Result<GaussianMoments> {
    let z = logits(model, precinct)?;
    Ok(moments_from_logits(z.as_slice()))
}

pub(crate) fn moments_from_logits(z: &[f64]) -> GaussianMoments {
    let mut mu = 0.0;
    let mut phi2 = 0.0;
    for &v in z {
        mu += sigmoid(v);
        phi2 += bernoulli_var(v);
    }
    GaussianMoments { mu, phi2 }
}

/// Gaussian log-density of a count, constants dropped:
/// `ℓ_i = −½ ln φ² − (D − μ)² / (2φ²)`.
pub fn gaussian_term(d: f64, m: GaussianMoments) -> f64 {
    let r = d - m.mu;
    -0.5 * m.phi2.ln() - r * r / (2.0 * m.phi2)
}

/// The Gaussian approximation with a configurable variance floor. Precincts
/// whose `φ²` falls below the floor are rejected, not clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianApprox {
    pub phi2_floor: f64,
}

impl Default for GaussianApprox {
    fn default() -> Self {
        Self {
            phi2_floor: DEFAULT_PHI2_FLOOR,
        }
    }
}

impl GaussianApprox {
    pub fn new(phi2_floor: f64) -> Self {
        Self { phi2_floor }
    }

    pub(crate) fn check(&self, pr: &PrecinctData, m: GaussianMoments) -> Result<()> {
        // also catches NaN
        if !(m.phi2 > self.phi2_floor) || !m.phi2.is_finite() {
            return Err(Error::Evaluation(format!(
                "precinct {}: count variance {:e} is at or below the floor {:e}; \
                 the Gaussian approximation does not apply",
                pr.id(),
                m.phi2,
                self.phi2_floor
            )));
        }
        Ok(())
    }

    fn term(&self, model: &LogitModel, pr: &PrecinctData) -> Result<(f64, DVector<f64>)> {
        let z = logits(model, pr)?;
        let m = moments_from_logits(z.as_slice());
        self.check(pr, m)?;
        let d = pr.count() as f64;
        let r = d - m.mu;
        let phi2 = m.phi2;
        // term1 = (D−μ)/φ² Σ p(1−p) x
        // term2 = −½((D−μ)²/φ⁴ − 1/φ²) Σ (2p−1) p(1−p) x
        let c1 = r / phi2;
        let c2 = -0.5 * (r * r / (phi2 * phi2) - 1.0 / phi2);
        let weights = DVector::from_iterator(
            z.len(),
            z.iter().map(|&v| {
                let pq = bernoulli_var(v);
                let two_p_minus_1 = sigmoid(v) - sigmoid(-v);
                c1 * pq + c2 * two_p_minus_1 * pq
            }),
        );
        Ok((gaussian_term(d, m), pr.x().tr_mul(&weights)))
    }

    pub fn loglik(&self, model: &LogitModel, data: &Dataset) -> Result<f64> {
        check_data_dim(model, data)?;
        let terms = map_precincts(data, |pr| {
            let m = moments(model, pr)?;
            self.check(pr, m)?;
            Ok(gaussian_term(pr.count() as f64, m))
        })?;
        Ok(terms.into_iter().sum())
    }

    pub fn grad(&self, model: &LogitModel, data: &Dataset) -> Result<DVector<f64>> {
        Ok(self.value_and_grad(model, data)?.1)
    }

    pub fn value_and_grad(&self, model: &LogitModel, data: &Dataset) -> Result<(f64, DVector<f64>)> {
        check_data_dim(model, data)?;
        let terms = map_precincts(data, |pr| self.term(model, pr))?;
        let mut value = 0.0;
        let mut grad = DVector::zeros(model.dim());
        for (v, g) in terms {
            value += v;
            grad += g;
        }
        Ok((value, grad))
    }
}

/// [`GaussianApprox::loglik`] with the default floor.
pub fn approx_loglik(model: &LogitModel, data: &Dataset) -> Result<f64> {
    GaussianApprox::default().loglik(model, data)
}

/// [`GaussianApprox::grad`] with the default floor.
pub fn approx_grad(model: &LogitModel, data: &Dataset) -> Result<DVector<f64>> {
    GaussianApprox::default().grad(model, data)
}
