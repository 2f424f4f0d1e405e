//! Poisson binomial distribution: the law of a sum of independent Bernoulli
//! variables with unequal success probabilities.
//!
//! The kernel is the linear-space convolution recurrence, O(n·k) for the
//! first `k + 1` probabilities. Entries that are exactly 0 or 1 are split off
//! before any convolution and only shift the support.
//!
//! Single-point log-probabilities ([`log_pmf`]) and conditional inclusion
//! probabilities ([`condition_on_total`]) are evaluated after an exponential
//! tilt that moves the mean of the distribution onto the requested total.
//! Conditioning on the total is unchanged by the tilt, and the tilted
//! probability of a total sitting at the mean is at least about `1/(n+1)`, so
//! these never underflow however deep in the tail the total lies.

use crate::error::{Error, Result};
use crate::math::{logit, sigmoid, softplus};

/// Success probabilities of the independent Bernoulli summands.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some((j, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::Domain(format!(
                "probability {p} at index {j} is outside [0, 1]"
            )));
        }
        Ok(Self(probs))
    }

    pub(crate) fn new_unchecked(probs: Vec<f64>) -> Self {
        debug_assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        Self(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Entries fixed at 1 and the indices of the entries strictly inside (0, 1).
struct Partition {
    ones: usize,
    free: Vec<usize>,
}

fn partition(probs: &[f64]) -> Partition {
    let mut ones = 0;
    let mut free = Vec::with_capacity(probs.len());
    for (j, &p) in probs.iter().enumerate() {
        if p == 1.0 {
            ones += 1;
        } else if p > 0.0 {
            free.push(j);
        }
    }
    Partition { ones, free }
}

/// Adds one Bernoulli(p) summand to a distribution, keeping at most `width` entries.
fn push_bernoulli(dist: &[f64], p: f64, width: usize) -> Vec<f64> {
    let q = 1.0 - p;
    let len = (dist.len() + 1).min(width);
    let mut out = vec![0.0; len];
    for (k, slot) in out.iter_mut().enumerate() {
        let stay = dist.get(k).map_or(0.0, |&d| d * q);
        let rise = if k > 0 { dist[k - 1] * p } else { 0.0 };
        *slot = stay + rise;
    }
    out
}

/// Probabilities of the totals `0..=min(kmax, n)`.
fn convolve(probs: &[f64], kmax: usize) -> Vec<f64> {
    let width = kmax.min(probs.len()) + 1;
    let mut dist = vec![0.0; width];
    dist[0] = 1.0;
    for (m, &p) in probs.iter().enumerate() {
        let q = 1.0 - p;
        let top = (m + 1).min(width - 1);
        for k in (1..=top).rev() {
            dist[k] = dist[k] * q + dist[k - 1] * p;
        }
        dist[0] *= q;
    }
    dist
}

/// P(left + right = k) for independent left/right with the given (truncated) laws.
fn combine_at(left: &[f64], right: &[f64], k: usize) -> f64 {
    let lo = k.saturating_sub(right.len() - 1);
    let hi = k.min(left.len() - 1);
    (lo..=hi).map(|a| left[a] * right[k - a]).sum()
}

/// Mean-matching exponential tilt of a vector of probabilities in (0, 1).
struct Tilt {
    theta: f64,
    probs: Vec<f64>,
    /// `Σ ln(1 - p + p·e^θ)`.
    log_normalizer: f64,
}

impl Tilt {
    fn new(free: &[f64], total: usize) -> Self {
        let logits: Vec<f64> = free.iter().map(|&p| logit(p)).collect();
        let theta = solve_tilt(&logits, total as f64);
        let probs = logits.iter().map(|&l| sigmoid(l + theta)).collect();
        let log_normalizer = logits
            .iter()
            .map(|&l| softplus(l + theta) - softplus(l))
            .sum();
        Self {
            theta,
            probs,
            log_normalizer,
        }
    }
}

/// Finds θ with `Σ σ(l_j + θ) ≈ target`, for `0 < target < len(logits)`.
///
/// Any θ gives an exact identity; matching the mean only keeps the tilted
/// probability of the target away from underflow.
fn solve_tilt(logits: &[f64], target: f64) -> f64 {
    let m = logits.len() as f64;
    let base = (target / (m - target)).ln();
    let (lmin, lmax) = logits
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &l| {
            (a.min(l), b.max(l))
        });
    let (mut lo, mut hi) = (base - lmax, base - lmin);
    let mean = logits.iter().sum::<f64>() / m;
    let mut theta = (base - mean).clamp(lo, hi);
    for _ in 0..200 {
        let (f, df) = logits.iter().fold((-target, 0.0), |(f, df), &l| {
            let s = sigmoid(l + theta);
            (f + s, df + s * (1.0 - s))
        });
        if f.abs() < 1e-9 {
            break;
        }
        if f > 0.0 {
            hi = theta;
        } else {
            lo = theta;
        }
        let newton = theta - f / df;
        theta = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-12 * (1.0 + theta.abs()) {
            break;
        }
    }
    theta
}

/// `ln P(Σ_j Y_j = total)` for free probabilities strictly inside (0, 1).
fn free_log_pmf(free: &[f64], total: usize) -> f64 {
    let m = free.len();
    if total == 0 {
        return free.iter().map(|&p| (-p).ln_1p()).sum();
    }
    if total == m {
        return free.iter().map(|&p| p.ln()).sum();
    }
    let tilt = Tilt::new(free, total);
    let dist = convolve(&tilt.probs, total);
    dist[total].ln() + tilt.log_normalizer - tilt.theta * total as f64
}

/// `ln P(Σ Y = k)`. Returns `-inf` when the probability is exactly zero.
pub fn log_pmf(p: &ProbVector, k: usize) -> Result<f64> {
    let n = p.len();
    if k > n {
        return Err(Error::Domain(format!(
            "count {k} exceeds the number of summands {n}"
        )));
    }
    let part = partition(&p.0);
    let free: Vec<f64> = part.free.iter().map(|&j| p.0[j]).collect();
    match k.checked_sub(part.ones).filter(|&kk| kk <= free.len()) {
        Some(kk) => Ok(free_log_pmf(&free, kk)),
        None => Ok(f64::NEG_INFINITY),
    }
}

/// `P(Σ Y = k)` for every `k = 0..=n`.
pub fn pmf_vector(p: &ProbVector) -> Vec<f64> {
    let part = partition(&p.0);
    let free: Vec<f64> = part.free.iter().map(|&j| p.0[j]).collect();
    let dist = convolve(&free, free.len());
    let mut out = vec![0.0; p.len() + 1];
    out[part.ones..part.ones + dist.len()].copy_from_slice(&dist);
    out
}

/// Prefix and suffix convolutions of a probability vector, giving every
/// leave-one-out probability `P(Σ_{i≠j} Y_i = k)` in O(k) per query after an
/// O(n²) build.
///
/// The two-sided form involves no subtraction, so it needs no fallback for
/// entries near 0 or 1.
#[derive(Debug, Clone)]
pub struct LeaveOneOut {
    /// `prefix[j]` is the law of `Y_0 + … + Y_{j-1}`.
    prefix: Vec<Vec<f64>>,
    /// `suffix[j]` is the law of `Y_j + … + Y_{n-1}`.
    suffix: Vec<Vec<f64>>,
}

impl LeaveOneOut {
    pub fn new(p: &ProbVector) -> Self {
        let probs = &p.0;
        let n = probs.len();
        let width = n + 1;
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(vec![1.0]);
        for &pj in probs {
            let next = push_bernoulli(prefix.last().unwrap(), pj, width);
            prefix.push(next);
        }
        let mut suffix = vec![Vec::new(); n + 1];
        suffix[n] = vec![1.0];
        for j in (0..n).rev() {
            suffix[j] = push_bernoulli(&suffix[j + 1], probs[j], width);
        }
        Self { prefix, suffix }
    }

    pub fn len(&self) -> usize {
        self.suffix.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `P(Σ_{i≠j} Y_i = k)`. Panics if `j >= len()`.
    pub fn pmf(&self, j: usize, k: usize) -> f64 {
        combine_at(&self.prefix[j], &self.suffix[j + 1], k)
    }

    /// `P(Σ Y = k)`.
    pub fn full_pmf(&self, k: usize) -> f64 {
        self.suffix[0].get(k).copied().unwrap_or(0.0)
    }
}

/// `P(Σ_{i≠j} Y_i = k)`.
pub fn leave_one_out_pmf(p: &ProbVector, j: usize, k: usize) -> Result<f64> {
    let n = p.len();
    if j >= n {
        return Err(Error::Domain(format!(
            "index {j} out of range for {n} summands"
        )));
    }
    if k >= n {
        return Err(Error::Domain(format!(
            "count {k} exceeds the {} remaining summands",
            n - 1
        )));
    }
    Ok(LeaveOneOut::new(p).pmf(j, k))
}

/// `P(Σ_{i≠j} Y_i = k)` for every `j`, with tables truncated at `k`.
fn leave_one_out_row(probs: &[f64], k: usize) -> Vec<f64> {
    let n = probs.len();
    let width = k + 1;
    let mut suffix = vec![Vec::new(); n + 1];
    suffix[n] = vec![1.0];
    for j in (1..n).rev() {
        suffix[j] = push_bernoulli(&suffix[j + 1], probs[j], width);
    }
    let mut prefix = vec![1.0];
    let mut row = Vec::with_capacity(n);
    for j in 0..n {
        row.push(combine_at(&prefix, &suffix[j + 1], k));
        prefix = push_bernoulli(&prefix, probs[j], width);
    }
    row
}

/// The law of the summands given their total.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    /// `ln P(Σ Y = total)`.
    pub log_prob: f64,
    /// `P(Y_j = 1 | Σ Y = total)` for every `j`.
    pub inclusion: Vec<f64>,
}

/// Conditions on `Σ Y = total`.
///
/// Inclusion probabilities come from the leave-one-out identity
/// `P(Y_j = 1 | Σ Y = D) = p_j · P(Σ_{i≠j} Y_i = D - 1) / P(Σ Y = D)`,
/// which needs only `n + 1` Poisson binomial probabilities.
///
/// Returns `Ok(None)` when the total has probability zero.
pub fn condition_on_total(p: &ProbVector, total: usize) -> Result<Option<Conditional>> {
    let n = p.len();
    if total > n {
        return Err(Error::Domain(format!(
            "count {total} exceeds the number of summands {n}"
        )));
    }
    let part = partition(&p.0);
    let m = part.free.len();
    let Some(kk) = total.checked_sub(part.ones).filter(|&kk| kk <= m) else {
        return Ok(None);
    };
    let free: Vec<f64> = part.free.iter().map(|&j| p.0[j]).collect();
    let (log_prob, free_inclusion) = if kk == 0 {
        (free_log_pmf(&free, 0), vec![0.0; m])
    } else if kk == m {
        (free_log_pmf(&free, m), vec![1.0; m])
    } else {
        let tilt = Tilt::new(&free, kk);
        let at_total = convolve(&tilt.probs, kk)[kk];
        let loo = leave_one_out_row(&tilt.probs, kk - 1);
        let inclusion = tilt
            .probs
            .iter()
            .zip(&loo)
            .map(|(&pj, &l)| (pj * l / at_total).clamp(0.0, 1.0))
            .collect();
        let log_prob = at_total.ln() + tilt.log_normalizer - tilt.theta * kk as f64;
        (log_prob, inclusion)
    };
    let mut inclusion: Vec<f64> = p.0.iter().map(|&pj| if pj == 1.0 { 1.0 } else { 0.0 }).collect();
    for (&j, w) in part.free.iter().zip(free_inclusion) {
        inclusion[j] = w;
    }
    Ok(Some(Conditional {
        log_prob,
        inclusion,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// P(Σ Y = k) by summing over all 2^n outcomes.
    fn enumerate_pmf(p: &[f64]) -> Vec<f64> {
        let n = p.len();
        let mut out = vec![0.0; n + 1];
        for mask in 0u32..(1 << n) {
            let prob: f64 = (0..n)
                .map(|j| if mask >> j & 1 == 1 { p[j] } else { 1.0 - p[j] })
                .product();
            out[mask.count_ones() as usize] += prob;
        }
        out
    }

    fn pv(p: &[f64]) -> ProbVector {
        ProbVector::new(p.to_vec()).unwrap()
    }

    fn ln_binomial(n: u64, k: u64) -> f64 {
        (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
    }

    #[test]
    fn single_bernoulli() {
        assert!((log_pmf(&pv(&[0.5]), 1).unwrap() - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_vector_has_unit_mass_at_zero() {
        assert_eq!(log_pmf(&pv(&[]), 0).unwrap(), 0.0);
        assert_eq!(pmf_vector(&pv(&[])), vec![1.0]);
    }

    #[test]
    fn log_pmf_matches_enumeration() {
        let p = [0.2, 0.4, 0.7];
        // {0,1}, {0,2}, {1,2}
        let expected = 0.2 * 0.4 * 0.3 + 0.2 * 0.6 * 0.7 + 0.8 * 0.4 * 0.7;
        let got = log_pmf(&pv(&p), 2).unwrap();
        assert!((got - f64::ln(expected)).abs() < 1e-14, "{got}");
        assert!((enumerate_pmf(&p)[2] - expected).abs() < 1e-15);
    }

    #[test]
    fn pmf_vector_fixed_examples() {
        let fair = pmf_vector(&pv(&[0.5, 0.5]));
        assert_eq!(fair, vec![0.25, 0.5, 0.25]);
        assert_eq!(pmf_vector(&pv(&[1.0, 0.0])), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn pmf_vector_matches_enumeration_for_eight_uniforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
        let dp = pmf_vector(&pv(&p));
        for (a, b) in dp.iter().zip(enumerate_pmf(&p)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_pmf_errors() {
        assert!(matches!(log_pmf(&pv(&[0.3]), 2), Err(Error::Domain(_))));
        assert!(matches!(ProbVector::new(vec![0.2, 1.5]), Err(Error::Domain(_))));
        assert!(ProbVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn structural_zero_is_negative_infinity() {
        assert_eq!(log_pmf(&pv(&[0.3, 0.0]), 2).unwrap(), f64::NEG_INFINITY);
        assert_eq!(log_pmf(&pv(&[1.0, 0.6]), 0).unwrap(), f64::NEG_INFINITY);
        assert!((log_pmf(&pv(&[1.0, 0.6]), 1).unwrap() - 0.4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn deep_tail_does_not_underflow() {
        let p = pv(&vec![0.1; 1000]);
        let expected = ln_binomial(1000, 900) + 900.0 * 0.1f64.ln() + 100.0 * 0.9f64.ln();
        let got = log_pmf(&p, 900).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected.abs(), "{got} vs {expected}");
        let top = log_pmf(&p, 999).unwrap();
        let expected_top = 999.0 * 0.1f64.ln() + (1000.0f64 * 0.9).ln();
        assert!((top - expected_top).abs() < 1e-9 * expected_top.abs());
    }

    #[test]
    fn leave_one_out_examples() {
        assert!((leave_one_out_pmf(&pv(&[0.3, 0.6]), 0, 1).unwrap() - 0.6).abs() < 1e-15);
        let v = leave_one_out_pmf(&pv(&[0.2, 0.4, 0.7]), 1, 0).unwrap();
        assert!((v - 0.24).abs() < 1e-15);
        assert!(leave_one_out_pmf(&pv(&[0.2, 0.4]), 2, 0).is_err());
        assert!(leave_one_out_pmf(&pv(&[0.2, 0.4]), 0, 2).is_err());
    }

    #[test]
    fn leave_one_out_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
        let loo = LeaveOneOut::new(&pv(&p));
        for j in 0..p.len() {
            let mut rest = p.clone();
            rest.remove(j);
            let scratch = pmf_vector(&pv(&rest));
            for (k, expected) in scratch.iter().enumerate() {
                assert!((loo.pmf(j, k) - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn conditional_inclusion_matches_enumeration() {
        let p = [0.05, 0.3, 0.5, 0.92, 0.999, 0.6];
        for total in 0..=p.len() {
            let cond = condition_on_total(&pv(&p), total).unwrap().unwrap();
            let mut mass = 0.0;
            let mut incl = vec![0.0; p.len()];
            for mask in 0u32..(1 << p.len()) {
                if mask.count_ones() as usize != total {
                    continue;
                }
                let w: f64 = (0..p.len())
                    .map(|j| if mask >> j & 1 == 1 { p[j] } else { 1.0 - p[j] })
                    .product();
                mass += w;
                for (j, slot) in incl.iter_mut().enumerate() {
                    if mask >> j & 1 == 1 {
                        *slot += w;
                    }
                }
            }
            assert!((cond.log_prob - mass.ln()).abs() < 1e-12);
            for (a, b) in cond.inclusion.iter().zip(&incl) {
                assert!((a - b / mass).abs() < 1e-12, "total {total}");
            }
        }
    }

    #[test]
    fn conditional_handles_deterministic_entries() {
        let p = pv(&[1.0, 0.0, 0.5, 0.5]);
        assert!(condition_on_total(&p, 0).unwrap().is_none());
        assert!(condition_on_total(&p, 4).unwrap().is_none());
        let c = condition_on_total(&p, 2).unwrap().unwrap();
        assert_eq!(c.inclusion[0], 1.0);
        assert_eq!(c.inclusion[1], 0.0);
        assert!((c.inclusion[2] - 0.5).abs() < 1e-15);
        assert!((c.log_prob - 0.5f64.ln()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn normalization(p in prop::collection::vec(0.0f64..=1.0, 0..200)) {
            let total: f64 = pmf_vector(&pv(&p)).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariance(p in prop::collection::vec(0.0f64..=1.0, 1..40), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = p.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = pmf_vector(&pv(&p));
            let b = pmf_vector(&pv(&shuffled));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-13);
            }
        }

        #[test]
        fn binomial_reduction(n in 1usize..80, prob in 0.0f64..=1.0) {
            let dist = pmf_vector(&pv(&vec![prob; n]));
            for (k, &v) in dist.iter().enumerate() {
                let exact = if prob == 0.0 || prob == 1.0 {
                    let hit = if prob == 1.0 { n } else { 0 };
                    if k == hit { 1.0 } else { 0.0 }
                } else {
                    (ln_binomial(n as u64, k as u64) + k as f64 * prob.ln()
                        + (n - k) as f64 * (1.0 - prob).ln()).exp()
                };
                prop_assert!((v - exact).abs() < 1e-12, "k={} {} vs {}", k, v, exact);
            }
        }

        #[test]
        fn leave_one_out_consistency(p in prop::collection::vec(0.0f64..=1.0, 1..30)) {
            let pvec = pv(&p);
            let full = pmf_vector(&pvec);
            let loo = LeaveOneOut::new(&pvec);
            for (j, &pj) in p.iter().enumerate() {
                for (k, &fk) in full.iter().enumerate() {
                    let up = if k > 0 { loo.pmf(j, k - 1) } else { 0.0 };
                    let stay = if k < p.len() { loo.pmf(j, k) } else { 0.0 };
                    prop_assert!((fk - (pj * up + (1.0 - pj) * stay)).abs() < 1e-13);
                }
            }
        }

        #[test]
        fn log_pmf_agrees_with_vector(p in prop::collection::vec(0.0f64..=1.0, 0..60)) {
            let pvec = pv(&p);
            for (k, &v) in pmf_vector(&pvec).iter().enumerate() {
                let lp = log_pmf(&pvec, k).unwrap();
                if v < 1e-280 {
                    continue;
                }
                prop_assert!((lp.exp() - v).abs() <= 1e-12 * v.max(1e-300) + 1e-15, "k={} {} vs {}", k, lp.exp(), v);
            }
        }
    }
}
