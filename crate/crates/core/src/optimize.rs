//! Fitting schedules for the logistic model.
//!
//! - `gauss`: fixed-step ascent on the Gaussian objective.
//! - `gauss-bt`: a fixed-step warm-up, then the Gaussian gradient as the
//!   direction with a backtracking line search on the exact likelihood.
//! - `gauss-bt-exact`: as `gauss-bt`, but the last iterations follow the
//!   exact gradient.
//! - `aggregate-lr`: logistic regression with every voter's outcome replaced
//!   by the precinct rate.
//!
//! All schedules start from β = 0 unless a warm start is supplied.

use std::time::Duration;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledDataset, PrecinctData};
use crate::error::{Error, Result};
use crate::likelihood::{self, GaussianApprox, LogitModel, DEFAULT_PHI2_FLOOR};
use crate::math::{sigmoid, softplus};

/// Consecutive objective decreases that flag a fixed-step run as diverged.
pub const DIVERGENCE_RUN: usize = 10;

/// `‖β‖∞` beyond which the aggregate surrogate is treated as unbounded.
pub const SURROGATE_BETA_LIMIT: f64 = 1e3;

/// Gradient-norm stopping rule of the aggregate surrogate.
pub const SURROGATE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gauss,
    GaussBt,
    GaussBtExact,
    AggregateLr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gauss => "gauss",
            Method::GaussBt => "gauss-bt",
            Method::GaussBtExact => "gauss-bt-exact",
            Method::AggregateLr => "aggregate-lr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: Method,
    pub iters_total: usize,
    /// Fixed-step warm-up iterations of the backtracking schedules.
    pub iters_phase1: usize,
    /// Exact-gradient iterations closing `gauss-bt-exact`.
    pub iters_phase3: usize,
    pub lr: f64,
    /// The line search starts from `lr · bt_initial_scale`.
    pub bt_initial_scale: f64,
    pub bt_shrink: f64,
    pub bt_armijo: f64,
    pub bt_max_halvings: usize,
    pub phi2_floor: f64,
    pub seed: u64,
    /// Starting coefficients; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: Method::Gauss,
            iters_total: 120,
            iters_phase1: 10,
            iters_phase3: 10,
            lr: 2e-5,
            bt_initial_scale: 4.0,
            bt_shrink: 0.5,
            bt_armijo: 1e-4,
            bt_max_halvings: 30,
            phi2_floor: DEFAULT_PHI2_FLOOR,
            seed: 0,
            init: None,
        }
    }
}

impl FitConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        let phases = match self.method {
            Method::GaussBt => self.iters_phase1,
            Method::GaussBtExact => self.iters_phase1 + self.iters_phase3,
            Method::Gauss | Method::AggregateLr => 0,
        };
        if phases > self.iters_total {
            return bad(format!(
                "phase lengths {} + {} exceed the {} total iterations",
                self.iters_phase1, self.iters_phase3, self.iters_total
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be finite and nonnegative", self.lr));
        }
        if !(self.bt_shrink > 0.0 && self.bt_shrink < 1.0) {
            return bad(format!("shrink factor {} must lie in (0, 1)", self.bt_shrink));
        }
        if !(self.bt_armijo > 0.0 && self.bt_armijo < 1.0) {
            return bad(format!("Armijo constant {} must lie in (0, 1)", self.bt_armijo));
        }
        if !(self.bt_initial_scale > 0.0 && self.bt_initial_scale.is_finite()) {
            return bad(format!("initial step scale {} must be positive", self.bt_initial_scale));
        }
        if !(self.phi2_floor >= 0.0) {
            return bad(format!("variance floor {} must be nonnegative", self.phi2_floor));
        }
        Ok(())
    }

    fn start(&self, p: usize) -> Result<DVector<f64>> {
        match &self.init {
            None => Ok(DVector::zeros(p)),
            Some(b) if b.len() == p => Ok(LogitModel::from_slice(b)?.beta().clone()),
            Some(b) => Err(Error::Domain(format!(
                "initial coefficients have {} entries, expected {p}",
                b.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    FixedStep,
    Backtracking,
    ExactBacktracking,
    Surrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Approx,
    Exact,
    Surrogate,
}

/// One ascent iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based, counted within a restart.
    pub iteration: usize,
    pub phase: Phase,
    pub objective_kind: ObjectiveKind,
    /// Objective at the start of the iteration.
    pub objective: f64,
    /// Objective at the point the iteration moved to, when evaluated.
    pub objective_after: Option<f64>,
    /// Norm of the ascent direction.
    pub grad_norm: f64,
    pub step: f64,
    pub halvings: usize,
    /// False when a line search found no acceptable step and stayed put.
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart: Option<usize>,
}

/// Checkpoint scores of a neural fit on the development set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevScores {
    pub checkpoints: Vec<usize>,
    /// `scores[restart][checkpoint]`; `None` when the restart diverged first.
    pub scores: Vec<Vec<Option<f64>>>,
    pub selected_restart: usize,
    pub selected_checkpoint: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecinctMean {
    pub precinct_id: String,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    pub records: Vec<IterationRecord>,
    pub final_beta: Option<Vec<f64>>,
    pub final_objective_kind: ObjectiveKind,
    pub final_objective: Option<f64>,
    pub final_exact_loglik: Option<f64>,
    pub diverged: bool,
    /// Line-search iterations that accepted no step.
    pub zero_step_iterations: Vec<usize>,
    pub notes: Vec<String>,
    /// Expected counts of the training precincts under the returned model.
    pub precinct_means: Vec<PrecinctMean>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_scores: Option<DevScores>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl FitReport {
    pub(crate) fn new(method: &str, kind: ObjectiveKind) -> Self {
        Self {
            method: method.to_string(),
            records: Vec::new(),
            final_beta: None,
            final_objective_kind: kind,
            final_objective: None,
            final_exact_loglik: None,
            diverged: false,
            zero_step_iterations: Vec::new(),
            notes: Vec::new(),
            precinct_means: Vec::new(),
            dev_scores: None,
            wall_time: Duration::ZERO,
        }
    }
}

/// Armijo backtracking: accept the first `t = t0 · shrink^h` with
/// `f(x + t d) ≥ f(x) + armijo · t · slope`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backtracking {
    pub initial: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub max_halvings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearch {
    pub point: DVector<f64>,
    pub value: f64,
    pub step: f64,
    pub halvings: usize,
    pub accepted: bool,
}

impl Backtracking {
    /// `f` returns `None` for points where the objective cannot be
    /// evaluated; those trials are rejected. With no acceptable trial the
    /// search returns `x` itself with step 0.
    pub fn search<F>(&self, x: &DVector<f64>, fx: f64, dir: &DVector<f64>, slope: f64, mut f: F) -> LineSearch
    where
        F: FnMut(&DVector<f64>) -> Option<f64>,
    {
        let mut t = self.initial;
        for h in 0..=self.max_halvings {
            let trial = x + t * dir;
            if let Some(v) = f(&trial).filter(|v| v.is_finite()) {
                if v >= fx + self.armijo * t * slope {
                    return LineSearch {
                        point: trial,
                        value: v,
                        step: t,
                        halvings: h,
                        accepted: true,
                    };
                }
            }
            t *= self.shrink;
        }
        LineSearch {
            point: x.clone(),
            value: fx,
            step: 0.0,
            halvings: self.max_halvings,
            accepted: false,
        }
    }
}

fn model(beta: &DVector<f64>) -> Result<LogitModel> {
    LogitModel::new(beta.clone())
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Expected counts of each precinct under `probs_of`.
pub(crate) fn precinct_means<F>(data: &Dataset, mut mu: F) -> Result<Vec<PrecinctMean>>
where
    F: FnMut(&PrecinctData) -> Result<f64>,
{
    data.precincts()
        .iter()
        .map(|pr| {
            Ok(PrecinctMean {
                precinct_id: pr.id().to_string(),
                mu: mu(pr)?,
            })
        })
        .collect()
}

struct Run<'a> {
    data: &'a Dataset,
    cfg: &'a FitConfig,
    approx: GaussianApprox,
    beta: DVector<f64>,
    report: FitReport,
    stopped: bool,
}

impl<'a> Run<'a> {
    fn new(data: &'a Dataset, cfg: &'a FitConfig, kind: ObjectiveKind) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Domain("cannot fit an empty dataset".into()));
        }
        Ok(Self {
            data,
            cfg,
            approx: GaussianApprox::new(cfg.phi2_floor),
            beta: cfg.start(data.dim())?,
            report: FitReport::new(cfg.method.name(), kind),
            stopped: false,
        })
    }

    fn abort(&mut self, why: String) {
        self.report.diverged = true;
        self.report.notes.push(why);
        self.stopped = true;
    }

    /// Evaluation and domain failures end the run with a report; other errors
    /// propagate.
    fn recover<T>(&mut self, r: Result<T>) -> Result<Option<T>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::Evaluation(msg)) | Err(Error::Domain(msg)) => {
                let iteration = self.report.records.len() + 1;
                self.abort(format!("stopped at iteration {iteration}: {msg}"));
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    fn fill_after(&mut self, kind: ObjectiveKind, v: f64) {
        if let Some(last) = self.report.records.last_mut() {
            if last.objective_kind == kind && last.objective_after.is_none() {
                last.objective_after = Some(v);
            }
        }
    }

    fn approx_at(&mut self) -> Result<Option<(f64, DVector<f64>)>> {
        let m = match self.recover(model(&self.beta))? {
            Some(m) => m,
            None => return Ok(None),
        };
        let r = self.approx.value_and_grad(&m, self.data);
        let Some((v, g)) = self.recover(r)? else {
            return Ok(None);
        };
        if !v.is_finite() || !all_finite(&g) {
            let iteration = self.report.records.len() + 1;
            self.abort(format!("non-finite Gaussian objective or gradient at iteration {iteration}"));
            return Ok(None);
        }
        self.fill_after(ObjectiveKind::Approx, v);
        Ok(Some((v, g)))
    }

    fn fixed_phase(&mut self, iters: usize) -> Result<()> {
        let mut last: Option<f64> = None;
        let mut decreases = 0;
        for _ in 0..iters {
            if self.stopped {
                return Ok(());
            }
            let Some((v, g)) = self.approx_at()? else {
                return Ok(());
            };
            if let Some(prev) = last {
                decreases = if v < prev { decreases + 1 } else { 0 };
                if decreases >= DIVERGENCE_RUN {
                    self.abort(format!(
                        "Gaussian objective decreased {DIVERGENCE_RUN} iterations in a row"
                    ));
                    return Ok(());
                }
            }
            last = Some(v);
            let next = &self.beta + self.cfg.lr * &g;
            self.report.records.push(IterationRecord {
                iteration: self.report.records.len() + 1,
                phase: Phase::FixedStep,
                objective_kind: ObjectiveKind::Approx,
                objective: v,
                objective_after: None,
                grad_norm: g.norm(),
                step: self.cfg.lr,
                halvings: 0,
                accepted: true,
                restart: None,
            });
            if !all_finite(&next) {
                self.abort("coefficients became non-finite".into());
                return Ok(());
            }
            self.beta = next;
        }
        Ok(())
    }

    fn exact_value(&self, beta: &DVector<f64>) -> Option<f64> {
        let m = model(beta).ok()?;
        likelihood::exact_loglik(&m, self.data).ok()
    }

    fn backtracking_phase(&mut self, iters: usize, exact_direction: bool) -> Result<()> {
        if self.stopped || iters == 0 {
            return Ok(());
        }
        let m = model(&self.beta)?;
        let mut fx = likelihood::exact_loglik(&m, self.data)?;
        let bt = Backtracking {
            initial: self.cfg.lr * self.cfg.bt_initial_scale,
            shrink: self.cfg.bt_shrink,
            armijo: self.cfg.bt_armijo,
            max_halvings: self.cfg.bt_max_halvings,
        };
        let phase = if exact_direction {
            Phase::ExactBacktracking
        } else {
            Phase::Backtracking
        };
        for _ in 0..iters {
            let dir = if exact_direction {
                let m = model(&self.beta)?;
                let r = likelihood::exact_value_and_grad(&m, self.data);
                match self.recover(r)? {
                    Some((_, g)) => g,
                    None => return Ok(()),
                }
            } else {
                match self.approx_at()? {
                    Some((_, g)) => g,
                    None => return Ok(()),
                }
            };
            if !all_finite(&dir) {
                self.abort("non-finite ascent direction".into());
                return Ok(());
            }
            let slope = dir.norm_squared();
            let out = bt.search(&self.beta, fx, &dir, slope, |b| self.exact_value(b));
            let iteration = self.report.records.len() + 1;
            if !out.accepted {
                self.report.zero_step_iterations.push(iteration);
            }
            self.report.records.push(IterationRecord {
                iteration,
                phase,
                objective_kind: ObjectiveKind::Exact,
                objective: fx,
                objective_after: Some(out.value),
                grad_norm: slope.sqrt(),
                step: out.step,
                halvings: out.halvings,
                accepted: out.accepted,
                restart: None,
            });
            self.beta = out.point;
            fx = out.value;
        }
        Ok(())
    }

    fn finish(mut self, final_kind: ObjectiveKind) -> Result<(LogitModel, FitReport)> {
        let m = model(&self.beta)?;
        let exact = likelihood::exact_loglik(&m, self.data).ok();
        let final_value = match final_kind {
            ObjectiveKind::Approx => {
                let v = self.approx.loglik(&m, self.data).ok();
                if let Some(v) = v {
                    self.fill_after(ObjectiveKind::Approx, v);
                }
                v
            }
            ObjectiveKind::Exact => exact,
            ObjectiveKind::Surrogate => None,
        };
        self.report.final_objective_kind = final_kind;
        self.report.final_objective = final_value;
        self.report.final_exact_loglik = exact;
        self.report.final_beta = Some(self.beta.iter().copied().collect());
        self.report.precinct_means =
            precinct_means(self.data, |pr| Ok(likelihood::moments(&m, pr)?.mu))?;
        Ok((m, self.report))
    }
}

/// Fixed-step ascent on the Gaussian objective for `iters_total` iterations.
pub fn fit_gauss(data: &Dataset, cfg: &FitConfig) -> Result<(LogitModel, FitReport)> {
    let start = std::time::Instant::now();
    let mut run = Run::new(data, cfg, ObjectiveKind::Approx)?;
    run.report.method = Method::Gauss.name().into();
    run.fixed_phase(cfg.iters_total)?;
    let (m, mut report) = run.finish(ObjectiveKind::Approx)?;
    report.wall_time = start.elapsed();
    Ok((m, report))
}

/// `iters_phase1` fixed steps, then Gaussian-gradient directions with
/// backtracking on the exact likelihood.
pub fn fit_gauss_bt(data: &Dataset, cfg: &FitConfig) -> Result<(LogitModel, FitReport)> {
    let start = std::time::Instant::now();
    let mut run = Run::new(data, cfg, ObjectiveKind::Exact)?;
    run.report.method = Method::GaussBt.name().into();
    run.fixed_phase(cfg.iters_phase1)?;
    run.backtracking_phase(cfg.iters_total - cfg.iters_phase1, false)?;
    let (m, mut report) = run.finish(ObjectiveKind::Exact)?;
    report.wall_time = start.elapsed();
    Ok((m, report))
}

/// As [`fit_gauss_bt`], with the final `iters_phase3` iterations following
/// the exact gradient.
pub fn fit_gauss_bt_exact(data: &Dataset, cfg: &FitConfig) -> Result<(LogitModel, FitReport)> {
    let start = std::time::Instant::now();
    let mut run = Run::new(data, cfg, ObjectiveKind::Exact)?;
    run.report.method = Method::GaussBtExact.name().into();
    let middle = cfg.iters_total - cfg.iters_phase1 - cfg.iters_phase3;
    run.fixed_phase(cfg.iters_phase1)?;
    run.backtracking_phase(middle, false)?;
    run.backtracking_phase(cfg.iters_phase3, true)?;
    let (m, mut report) = run.finish(ObjectiveKind::Exact)?;
    report.wall_time = start.elapsed();
    Ok((m, report))
}

/// Logistic regression with every voter's outcome set to the precinct rate.
pub fn fit_aggregate_lr(data: &Dataset, cfg: &FitConfig) -> Result<(LogitModel, FitReport)> {
    let targets = data
        .precincts()
        .iter()
        .map(|pr| vec![pr.count() as f64 / pr.size() as f64; pr.size()])
        .collect();
    fit_surrogate(data, targets, cfg, Method::AggregateLr.name())
}

/// Logistic regression on the individual labels; the full-information
/// baseline.
pub fn fit_individual_lr(labeled: &LabeledDataset, cfg: &FitConfig) -> Result<(LogitModel, FitReport)> {
    let targets = labeled
        .labels()
        .iter()
        .map(|ls| ls.iter().map(|&y| f64::from(u8::from(y))).collect())
        .collect();
    fit_surrogate(labeled.data(), targets, cfg, "individual-lr")
}

/// `Σ [y z − ln(1 + e^z)]` and its gradient.
fn surrogate(data: &Dataset, targets: &[Vec<f64>], beta: &DVector<f64>) -> (f64, DVector<f64>) {
    let parts: Vec<(f64, DVector<f64>)> = data
        .precincts()
        .par_iter()
        .zip(targets.par_iter())
        .map(|(pr, y)| {
            let z = pr.x() * beta;
            let mut v = 0.0;
            let mut r = DVector::zeros(z.len());
            for j in 0..z.len() {
                v += y[j] * z[j] - softplus(z[j]);
                r[j] = y[j] - sigmoid(z[j]);
            }
            (v, pr.x().tr_mul(&r))
        })
        .collect();
    let mut value = 0.0;
    let mut grad = DVector::zeros(beta.len());
    for (v, g) in parts {
        value += v;
        grad += g;
    }
    (value, grad)
}

fn fit_surrogate(data: &Dataset, targets: Vec<Vec<f64>>, cfg: &FitConfig, name: &str) -> Result<(LogitModel, FitReport)> {
    let start = std::time::Instant::now();
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Domain("cannot fit an empty dataset".into()));
    }
    let mut report = FitReport::new(name, ObjectiveKind::Surrogate);
    let mut beta = cfg.start(data.dim())?;
    // 1/L for the curvature bound L = ¼ Σ‖x‖²
    let lipschitz: f64 = data.precincts().iter().map(|pr| pr.x().norm_squared()).sum::<f64>() / 4.0;
    let mut t = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };
    let (mut fx, mut g) = surrogate(data, &targets, &beta);
    let mut converged = false;
    for iteration in 1..=cfg.iters_total {
        let gnorm = g.norm();
        if gnorm < SURROGATE_TOLERANCE {
            converged = true;
            break;
        }
        let bt = Backtracking {
            initial: t,
            shrink: 0.5,
            armijo: cfg.bt_armijo,
            max_halvings: 60,
        };
        let out = bt.search(&beta, fx, &g, gnorm * gnorm, |b| Some(surrogate(data, &targets, b).0));
        report.records.push(IterationRecord {
            iteration,
            phase: Phase::Surrogate,
            objective_kind: ObjectiveKind::Surrogate,
            objective: fx,
            objective_after: Some(out.value),
            grad_norm: gnorm,
            step: out.step,
            halvings: out.halvings,
            accepted: out.accepted,
            restart: None,
        });
        if !out.accepted {
            report.zero_step_iterations.push(iteration);
            report.notes.push(format!("line search stalled at iteration {iteration}"));
            break;
        }
        beta = out.point;
        t = out.step * 2.0;
        if beta.amax() > SURROGATE_BETA_LIMIT {
            report.diverged = true;
            report.notes.push(format!(
                "coefficients exceeded {SURROGATE_BETA_LIMIT} in magnitude; the surrogate appears separable"
            ));
            break;
        }
        (fx, g) = surrogate(data, &targets, &beta);
    }
    if !converged && !report.diverged {
        let (_, g) = surrogate(data, &targets, &beta);
        if g.norm() < SURROGATE_TOLERANCE {
            converged = true;
        }
    }
    if converged && beta.amax() > 0.0 {
        // A small gradient is also what a separable surrogate shows far out
        // along its escape direction. Probe the ray past the limit.
        let far = &beta * (1.01 * SURROGATE_BETA_LIMIT / beta.amax());
        let (f_far, _) = surrogate(data, &targets, &far);
        if f_far > fx {
            report.diverged = true;
            report.notes.push(format!(
                "the surrogate keeps increasing along the fitted direction past ‖β‖∞ = {SURROGATE_BETA_LIMIT}; it appears separable"
            ));
            beta = far;
        }
    }
    if !converged && !report.diverged {
        report.notes.push(format!(
            "gradient norm above {SURROGATE_TOLERANCE} after {} iterations",
            report.records.len()
        ));
    }
    let m = model(&beta)?;
    report.final_objective = Some(surrogate(data, &targets, &beta).0);
    report.final_exact_loglik = likelihood::exact_loglik(&m, data).ok();
    report.final_beta = Some(beta.iter().copied().collect());
    report.precinct_means = precinct_means(data, |pr| Ok(likelihood::moments(&m, pr)?.mu))?;
    report.wall_time = start.elapsed();
    Ok((m, report))
}

/// Dispatches on `cfg.method`.
pub fn fit(data: &Dataset, cfg: &FitConfig) -> Result<(LogitModel, FitReport)> {
    match cfg.method {
        Method::Gauss => fit_gauss(data, cfg),
        Method::GaussBt => fit_gauss_bt(data, cfg),
        Method::GaussBtExact => fit_gauss_bt_exact(data, cfg),
        Method::AggregateLr => fit_aggregate_lr(data, cfg),
    }
}
