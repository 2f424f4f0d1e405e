//! Individual-level and aggregate scoring of fitted models.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledDataset, PrecinctData};
use crate::error::{Error, Result};
use crate::likelihood::{self, LogitModel};
use crate::neuralnet::{self, NeuralModel};

pub const CALIBRATION_BINS: usize = 10;

/// Anything that assigns each voter of a precinct a probability.
pub trait ProbabilityModel {
    fn voter_probs(&self, precinct: &PrecinctData) -> Result<Vec<f64>>;
}

impl ProbabilityModel for LogitModel {
    fn voter_probs(&self, precinct: &PrecinctData) -> Result<Vec<f64>> {
        Ok(likelihood::probs(self, precinct)?.into_inner())
    }
}

impl ProbabilityModel for NeuralModel {
    fn voter_probs(&self, precinct: &PrecinctData) -> Result<Vec<f64>> {
        Ok(neuralnet::nn_forward(self, precinct)?.into_inner())
    }
}

/// Area under the ROC curve, `P(s₁ > s₀) + ½ P(s₁ = s₀)`, from midranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Domain(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("scores contain NaN".into()));
    }
    let n1 = labels.iter().filter(|&&y| y).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::Domain("AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let midrank = (i + 1 + j) as f64 / 2.0;
        let positives = order[i..j].iter().filter(|&&k| labels[k]).count();
        positive_rank_sum += midrank * positives as f64;
        i = j;
    }
    let (n1, n0) = (n1 as f64, n0 as f64);
    Ok((positive_rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// `Σ_i (D_i − μ_i)²`, with `μ_i` the model's expected count.
pub fn aggregate_sse<M: ProbabilityModel + ?Sized>(model: &M, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for pr in data.precincts() {
        let mu: f64 = model.voter_probs(pr)?.iter().sum();
        let r = pr.count() as f64 - mu;
        total += r * r;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean_predicted: Option<f64>,
    pub empirical_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub auc: f64,
    pub aggregate_sse: f64,
    pub n_voters: usize,
    pub n_precincts: usize,
    pub calibration: Vec<CalibrationBin>,
}

/// Ten equal-width bins on [0, 1]; a probability of exactly 1 joins the top bin.
pub fn calibration(scores: &[f64], labels: &[bool]) -> Vec<CalibrationBin> {
    let k = CALIBRATION_BINS;
    let mut sums = vec![(0usize, 0.0, 0usize); k];
    for (&s, &y) in scores.iter().zip(labels) {
        let b = ((s * k as f64) as usize).min(k - 1);
        sums[b].0 += 1;
        sums[b].1 += s;
        sums[b].2 += usize::from(y);
    }
    sums.iter()
        .enumerate()
        .map(|(b, &(n, s, pos))| CalibrationBin {
            lower: b as f64 / k as f64,
            upper: (b + 1) as f64 / k as f64,
            count: n,
            mean_predicted: (n > 0).then(|| s / n as f64),
            empirical_rate: (n > 0).then(|| pos as f64 / n as f64),
        })
        .collect()
}

/// Scores a model against held-out individual labels.
pub fn evaluate_run<M: ProbabilityModel + ?Sized>(model: &M, holdout: &LabeledDataset) -> Result<EvaluationReport> {
    let data = holdout.data();
    let mut scores = Vec::with_capacity(data.n_voters());
    for pr in data.precincts() {
        scores.extend(model.voter_probs(pr)?);
    }
    let labels: Vec<bool> = holdout.labels().iter().flatten().copied().collect();
    Ok(EvaluationReport {
        auc: roc_auc(&scores, &labels)?,
        aggregate_sse: aggregate_sse(model, data)?,
        n_voters: labels.len(),
        n_precincts: data.len(),
        calibration: calibration(&scores, &labels),
    })
}

/// `AUC: 87.3%`.
pub fn format_auc(auc: f64) -> String {
    format!("AUC: {:.1}%", 100.0 * auc)
}
