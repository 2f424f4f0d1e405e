//! Single-hidden-layer network trained on the Gaussian objective.
//!
//! `h = σ(W1 x + b1)`, `p = σ(W2 h + b2)`. Training runs several seeded
//! restarts of fixed-step ascent and keeps the (restart, checkpoint) whose
//! development-set aggregate squared error is smallest.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PrecinctData};
use crate::error::{Error, Result};
use crate::likelihood::{gaussian_term, GaussianApprox, GaussianMoments, DEFAULT_PHI2_FLOOR};
use crate::math::sigmoid;
use crate::optimize::{
    precinct_means, DevScores, FitReport, IterationRecord, ObjectiveKind, Phase, DIVERGENCE_RUN,
};
use crate::poibin::ProbVector;

/// Half-width of the uniform weight initialization.
pub const INIT_HALF_WIDTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    /// hidden × p
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

impl NeuralModel {
    pub fn new(w1: DMatrix<f64>, b1: DVector<f64>, w2: DVector<f64>, b2: f64) -> Result<Self> {
        let hidden = w1.nrows();
        if hidden == 0 {
            return Err(Error::Domain("the hidden layer needs at least one unit".into()));
        }
        if b1.len() != hidden || w2.len() != hidden {
            return Err(Error::Domain(format!(
                "hidden layer shapes disagree: W1 has {hidden} rows, b1 {} and W2 {} entries",
                b1.len(),
                w2.len()
            )));
        }
        let m = Self { w1, b1, w2, b2 };
        if !m.is_finite() {
            return Err(Error::Domain("network weights must be finite".into()));
        }
        Ok(m)
    }

    pub fn zeros(hidden: usize, p: usize) -> Self {
        Self {
            w1: DMatrix::zeros(hidden, p),
            b1: DVector::zeros(hidden),
            w2: DVector::zeros(hidden),
            b2: 0.0,
        }
    }

    /// Weights uniform on `±INIT_HALF_WIDTH`, biases zero.
    pub fn random(hidden: usize, p: usize, rng: &mut impl Rng) -> Self {
        let mut u = || rng.random_range(-INIT_HALF_WIDTH..INIT_HALF_WIDTH);
        let w1 = DMatrix::from_fn(hidden, p, |_, _| u());
        let w2 = DVector::from_fn(hidden, |_, _| u());
        Self {
            w1,
            b1: DVector::zeros(hidden),
            w2,
            b2: 0.0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w1.ncols()
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).all(|v| v.is_finite()) && self.b2.is_finite()
    }

    fn step(&mut self, lr: f64, g: &NeuralGrad) {
        self.w1 += lr * &g.w1;
        self.b1 += lr * &g.b1;
        self.w2 += lr * &g.w2;
        self.b2 += lr * g.b2;
    }
}

/// Gradient of the objective with the same shapes as [`NeuralModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralGrad {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

impl NeuralGrad {
    fn zeros(hidden: usize, p: usize) -> Self {
        Self {
            w1: DMatrix::zeros(hidden, p),
            b1: DVector::zeros(hidden),
            w2: DVector::zeros(hidden),
            b2: 0.0,
        }
    }

    fn add(&mut self, other: &NeuralGrad) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += other.b2;
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).all(|v| v.is_finite()) && self.b2.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.w1.norm_squared() + self.b1.norm_squared() + self.w2.norm_squared() + self.b2 * self.b2).sqrt()
    }
}

struct Forward {
    /// voters × hidden
    h: DMatrix<f64>,
    /// output logits
    z: DVector<f64>,
}

fn forward(model: &NeuralModel, precinct: &PrecinctData) -> Result<Forward> {
    if model.dim() != precinct.dim() {
        return Err(Error::Domain(format!(
            "network expects {} covariates but precinct {} has {}",
            model.dim(),
            precinct.id(),
            precinct.dim()
        )));
    }
    let mut h = precinct.x() * model.w1.transpose();
    for mut row in h.row_iter_mut() {
        for (v, b) in row.iter_mut().zip(model.b1.iter()) {
            *v = sigmoid(*v + b);
        }
    }
    let z = (&h * &model.w2).add_scalar(model.b2);
    Ok(Forward { h, z })
}

/// Voter probabilities of one precinct.
pub fn nn_forward(model: &NeuralModel, precinct: &PrecinctData) -> Result<ProbVector> {
    let f = forward(model, precinct)?;
    Ok(ProbVector::new_unchecked(f.z.iter().map(|&v| sigmoid(v)).collect()))
}

fn moments_of(z: &DVector<f64>) -> GaussianMoments {
    crate::likelihood::moments_from_logits(z.as_slice())
}

/// `∂ℓ_i/∂p_j` of the Gaussian objective.
pub fn dl_dp(p: f64, d: f64, m: GaussianMoments) -> f64 {
    let r = d - m.mu;
    let phi2 = m.phi2;
    (2.0 * p - 1.0) / (2.0 * phi2) + (1.0 - 2.0 * p) * r * r / (2.0 * phi2 * phi2) + r / phi2
}

fn precinct_term(model: &NeuralModel, pr: &PrecinctData, approx: &GaussianApprox) -> Result<(f64, NeuralGrad)> {
    let f = forward(model, pr)?;
    let m = moments_of(&f.z);
    approx.check(pr, m)?;
    let d = pr.count() as f64;
    // δ_j = ∂ℓ/∂p_j · p_j (1 − p_j)
    let delta = f.z.map(|z| {
        let p = sigmoid(z);
        dl_dp(p, d, m) * p * sigmoid(-z)
    });
    let b2 = delta.sum();
    let w2 = f.h.tr_mul(&delta);
    // hidden pre-activation gradient: (δ W2ᵀ) ∘ h(1 − h)
    let mut g = &delta * model.w2.transpose();
    g.component_mul_assign(&f.h.map(|h| h * (1.0 - h)));
    let b1 = DVector::from_fn(model.hidden(), |k, _| g.column(k).sum());
    let w1 = g.tr_mul(pr.x());
    Ok((gaussian_term(d, m), NeuralGrad { w1, b1, w2, b2 }))
}

/// Gaussian objective of the network and its gradient, summed in precinct order.
pub fn nn_value_and_grad(model: &NeuralModel, data: &Dataset, approx: &GaussianApprox) -> Result<(f64, NeuralGrad)> {
    let parts: Vec<(f64, NeuralGrad)> = data
        .precincts()
        .par_iter()
        .map(|pr| precinct_term(model, pr, approx))
        .collect::<Result<_>>()?;
    let mut value = 0.0;
    let mut grad = NeuralGrad::zeros(model.hidden(), model.dim());
    for (v, g) in &parts {
        value += v;
        grad.add(g);
    }
    Ok((value, grad))
}

pub fn nn_grad(model: &NeuralModel, data: &Dataset) -> Result<NeuralGrad> {
    Ok(nn_value_and_grad(model, data, &GaussianApprox::default())?.1)
}

pub fn nn_loglik(model: &NeuralModel, data: &Dataset) -> Result<f64> {
    let approx = GaussianApprox::default();
    let mut total = 0.0;
    for pr in data.precincts() {
        let f = forward(model, pr)?;
        let m = moments_of(&f.z);
        approx.check(pr, m)?;
        total += gaussian_term(pr.count() as f64, m);
    }
    Ok(total)
}

/// `Σ_i (D_i − μ_i)²` under the network.
pub fn dev_score(model: &NeuralModel, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for pr in data.precincts() {
        let f = forward(model, pr)?;
        let r = pr.count() as f64 - moments_of(&f.z).mu;
        total += r * r;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralFitConfig {
    pub hidden: usize,
    pub lr: f64,
    pub restarts: usize,
    /// Iteration counts at which the parameters are scored; 0 is the
    /// initialization.
    pub checkpoints: Vec<usize>,
    pub seed: u64,
    pub phi2_floor: f64,
}

impl Default for NeuralFitConfig {
    fn default() -> Self {
        Self {
            hidden: 10,
            lr: 2e-6,
            restarts: 10,
            checkpoints: vec![50, 100, 150, 200],
            seed: 0,
            phi2_floor: DEFAULT_PHI2_FLOOR,
        }
    }
}

impl NeuralFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Domain("hidden layer size must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Domain("at least one restart is required".into()));
        }
        if self.checkpoints.is_empty() || self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("checkpoints must be a non-empty ascending list".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Domain(format!("learning rate {} must be finite and nonnegative", self.lr)));
        }
        Ok(())
    }
}

struct RestartOutcome {
    records: Vec<IterationRecord>,
    scores: Vec<Option<f64>>,
    snapshots: Vec<Option<NeuralModel>>,
    failure: Option<String>,
}

fn run_restart(train: &Dataset, dev: &Dataset, cfg: &NeuralFitConfig, restart: usize) -> Result<RestartOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    let mut model = NeuralModel::random(cfg.hidden, train.dim(), &mut rng);
    let approx = GaussianApprox::new(cfg.phi2_floor);
    let last = *cfg.checkpoints.last().unwrap();
    let mut out = RestartOutcome {
        records: Vec::new(),
        scores: vec![None; cfg.checkpoints.len()],
        snapshots: vec![None; cfg.checkpoints.len()],
        failure: None,
    };
    let mut next_cp = 0;
    let mut prev: Option<f64> = None;
    let mut decreases = 0;
    for it in 0..=last {
        if cfg.checkpoints[next_cp] == it {
            out.scores[next_cp] = Some(dev_score(&model, dev)?);
            out.snapshots[next_cp] = Some(model.clone());
            next_cp += 1;
        }
        if it == last {
            break;
        }
        let (v, g) = match nn_value_and_grad(&model, train, &approx) {
            Ok(vg) => vg,
            Err(Error::Evaluation(msg)) => {
                out.failure = Some(format!("restart {restart} stopped at iteration {}: {msg}", it + 1));
                break;
            }
            Err(e) => return Err(e),
        };
        if let Some(last_rec) = out.records.last_mut() {
            last_rec.objective_after = Some(v);
        }
        if !v.is_finite() || !g.is_finite() {
            out.failure = Some(format!("restart {restart}: non-finite objective at iteration {}", it + 1));
            break;
        }
        if let Some(p) = prev {
            decreases = if v < p { decreases + 1 } else { 0 };
            if decreases >= DIVERGENCE_RUN {
                out.failure = Some(format!(
                    "restart {restart}: objective decreased {DIVERGENCE_RUN} iterations in a row"
                ));
                break;
            }
        }
        prev = Some(v);
        out.records.push(IterationRecord {
            iteration: it + 1,
            phase: Phase::FixedStep,
            objective_kind: ObjectiveKind::Approx,
            objective: v,
            objective_after: None,
            grad_norm: g.norm(),
            step: cfg.lr,
            halvings: 0,
            accepted: true,
            restart: Some(restart),
        });
        model.step(cfg.lr, &g);
        if !model.is_finite() {
            out.failure = Some(format!("restart {restart}: weights became non-finite"));
            break;
        }
    }
    Ok(out)
}

/// Trains `cfg.restarts` seeded networks on `train` and returns the stored
/// checkpoint with the smallest development-set squared error. A restart that
/// diverges is excluded from selection.
pub fn fit_neural(train: &Dataset, dev: &Dataset, cfg: &NeuralFitConfig) -> Result<(NeuralModel, FitReport)> {
    let start = std::time::Instant::now();
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Domain("cannot fit an empty training set".into()));
    }
    if dev.is_empty() {
        return Err(Error::Domain("the development set is empty".into()));
    }
    let outcomes: Vec<RestartOutcome> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| run_restart(train, dev, cfg, r))
        .collect::<Result<_>>()?;

    let mut report = FitReport::new("neural", ObjectiveKind::Approx);
    let mut best: Option<(f64, usize, usize)> = None;
    for (r, o) in outcomes.iter().enumerate() {
        report.records.extend(o.records.iter().cloned());
        if let Some(msg) = &o.failure {
            report.notes.push(format!("{msg}; restart excluded"));
            continue;
        }
        for (c, s) in o.scores.iter().enumerate() {
            if let Some(s) = *s {
                if best.is_none_or(|(b, _, _)| s < b) {
                    best = Some((s, r, c));
                }
            }
        }
    }
    let Some((_, r, c)) = best else {
        return Err(Error::Evaluation("every restart diverged".into()));
    };
    let model = outcomes[r].snapshots[c].clone().expect("scored checkpoints are stored");
    report.dev_scores = Some(DevScores {
        checkpoints: cfg.checkpoints.clone(),
        scores: outcomes.iter().map(|o| o.scores.clone()).collect(),
        selected_restart: r,
        selected_checkpoint: cfg.checkpoints[c],
    });
    report.diverged = outcomes.iter().any(|o| o.failure.is_some());
    report.final_objective = nn_value_and_grad(&model, train, &GaussianApprox::new(cfg.phi2_floor))
        .ok()
        .map(|vg| vg.0);
    report.precinct_means = precinct_means(train, |pr| Ok(moments_of(&forward(&model, pr)?.z).mu))?;
    report.wall_time = start.elapsed();
    Ok((model, report))
}
