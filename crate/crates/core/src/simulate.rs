//! Synthetic elections drawn exactly from the logistic model, so that the
//! true coefficients are known.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, LabeledDataset, PrecinctData, Standardization, INTERCEPT};
use crate::error::{Error, Result};
use crate::math::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoterCount {
    Fixed(usize),
    /// Uniform on `min..=max`.
    Range { min: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaSpec {
    /// Each entry uniform on [-1, 1], intercept included.
    Random,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateScheme {
    /// Every voter's covariates ~ Normal(0, I).
    IidNormal,
    /// Precinct mean ~ Normal(0, diag(s²)), voters ~ Normal(mean, I).
    PrecinctShiftedNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_precincts: usize,
    pub voters_per_precinct: VoterCount,
    /// Number of covariates, intercept excluded.
    pub p: usize,
    pub beta_true: BetaSpec,
    pub covariate_scheme: CovariateScheme,
    /// Per-covariate shift scales; a single entry applies to every covariate.
    pub precinct_shift_scale: Vec<f64>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_precincts: 400,
            voters_per_precinct: VoterCount::Fixed(100),
            p: 5,
            beta_true: BetaSpec::Random,
            covariate_scheme: CovariateScheme::PrecinctShiftedNormal,
            precinct_shift_scale: vec![0.5],
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_precincts == 0 {
            return Err(Error::Domain("at least one precinct is required".into()));
        }
        if self.p == 0 {
            return Err(Error::Domain("at least one covariate is required".into()));
        }
        match self.voters_per_precinct {
            VoterCount::Fixed(0) => return Err(Error::Domain("precincts need at least one voter".into())),
            VoterCount::Range { min, max } if min == 0 || min > max => {
                return Err(Error::Domain(format!("invalid voter range {min}-{max}")))
            }
            _ => {}
        }
        if let BetaSpec::Given(b) = &self.beta_true {
            if b.len() != self.p + 1 {
                return Err(Error::Domain(format!(
                    "beta has {} entries, expected {} (intercept plus {} covariates)",
                    b.len(),
                    self.p + 1,
                    self.p
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("beta entries must be finite".into()));
            }
        }
        let s = &self.precinct_shift_scale;
        if !(s.len() == 1 || s.len() == self.p) || s.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!(
                "shift scale needs 1 or {} nonnegative entries",
                self.p
            )));
        }
        Ok(())
    }

    fn shift_scale(&self, k: usize) -> f64 {
        self.precinct_shift_scale[if self.precinct_shift_scale.len() == 1 { 0 } else { k }]
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub data: LabeledDataset,
    pub beta_true: Vec<f64>,
}

/// Draws a labeled dataset. Deterministic in `cfg.seed`.
pub fn simulate(cfg: &SimConfig) -> Result<Simulation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.p;
    let beta = match &cfg.beta_true {
        BetaSpec::Random => (0..=p).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        BetaSpec::Given(b) => b.clone(),
    };
    let mut precincts = Vec::with_capacity(cfg.n_precincts);
    let mut labels = Vec::with_capacity(cfg.n_precincts);
    let mut next_voter = 0usize;
    for i in 0..cfg.n_precincts {
        let n = match cfg.voters_per_precinct {
            VoterCount::Fixed(n) => n,
            VoterCount::Range { min, max } => rng.random_range(min..=max),
        };
        let shift: Vec<f64> = match cfg.covariate_scheme {
            CovariateScheme::IidNormal => vec![0.0; p],
            CovariateScheme::PrecinctShiftedNormal => (0..p)
                .map(|k| cfg.shift_scale(k) * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        let mut rows = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = Vec::with_capacity(p + 1);
            row.push(1.0);
            for s in &shift {
                row.push(s + rng.sample::<f64, _>(StandardNormal));
            }
            let z: f64 = row.iter().zip(&beta).map(|(x, b)| x * b).sum();
            ys.push(rng.random::<f64>() < sigmoid(z));
            rows.push(row);
        }
        let d = ys.iter().filter(|&&y| y).count();
        let x = DMatrix::from_fn(n, p + 1, |j, k| rows[j][k]);
        let voter_ids = (next_voter..next_voter + n).map(|v| format!("v{v}")).collect();
        next_voter += n;
        precincts.push(PrecinctData::new(format!("p{i}"), voter_ids, x, d)?);
        labels.push(ys);
    }
    let raw: Vec<String> = (1..=p).map(|k| format!("x{k}")).collect();
    let names = std::iter::once(INTERCEPT.to_string()).chain(raw.iter().cloned()).collect();
    let data = Dataset::new(precincts, names, Standardization::identity(&raw))?;
    Ok(Simulation {
        data: LabeledDataset::new(data, labels)?,
        beta_true: beta,
    })
}

#[derive(Serialize)]
struct Truth<'a> {
    beta_true: &'a [f64],
    config: &'a SimConfig,
}

/// Writes `voters.csv`, `counts.csv`, `labels.csv` and `truth.json` into `dir`.
pub fn write_simulation(sim: &Simulation, cfg: &SimConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    data::write_voters(&dir.join("voters.csv"), sim.data.data())?;
    data::write_counts(&dir.join("counts.csv"), sim.data.data())?;
    data::write_labels(&dir.join("labels.csv"), &sim.data)?;
    let truth = Truth {
        beta_true: &sim.beta_true,
        config: cfg,
    };
    let path = dir.join("truth.json");
    let mut json = serde_json::to_string_pretty(&truth)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}
