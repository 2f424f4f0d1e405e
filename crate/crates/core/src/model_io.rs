//! JSON model files, tagged by `"type"`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{PrecinctData, Standardization};
use crate::error::{Error, Result};
use crate::evaluate::ProbabilityModel;
use crate::likelihood::LogitModel;
use crate::neuralnet::NeuralModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFile {
    pub method: String,
    pub feature_names: Vec<String>,
    pub standardization: Standardization,
    pub beta: Vec<f64>,
    pub trained_at: Option<String>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralFile {
    pub method: String,
    pub feature_names: Vec<String>,
    pub standardization: Standardization,
    pub hidden: usize,
    /// Row-major, `hidden` rows of `feature_names.len()` entries.
    #[serde(rename = "W1")]
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    #[serde(rename = "W2")]
    pub w2: Vec<f64>,
    pub b2: f64,
    pub trained_at: Option<String>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ModelFile {
    Logit(LogitFile),
    Neural(NeuralFile),
}

/// A loaded model ready for scoring.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Logit(LogitModel),
    Neural(NeuralModel),
}

impl ProbabilityModel for Model {
    fn voter_probs(&self, precinct: &PrecinctData) -> Result<Vec<f64>> {
        match self {
            Model::Logit(m) => m.voter_probs(precinct),
            Model::Neural(m) => m.voter_probs(precinct),
        }
    }
}

fn check_names(names: &[String], std: &Standardization) -> Result<()> {
    // the intercept column is not standardized
    let transformed = std.names();
    if names.len() != transformed.len() + 1 || names[1..] != transformed[..] {
        return Err(Error::Validation(
            "model file feature names disagree with its standardization".into(),
        ));
    }
    Ok(())
}

impl ModelFile {
    pub fn logit(method: &str, model: &LogitModel, names: &[String], std: &Standardization, config: serde_json::Value) -> Self {
        ModelFile::Logit(LogitFile {
            method: method.to_string(),
            feature_names: names.to_vec(),
            standardization: std.clone(),
            beta: model.beta().iter().copied().collect(),
            trained_at: None,
            config,
        })
    }

    pub fn neural(model: &NeuralModel, names: &[String], std: &Standardization, config: serde_json::Value) -> Self {
        ModelFile::Neural(NeuralFile {
            method: "neural".into(),
            feature_names: names.to_vec(),
            standardization: std.clone(),
            hidden: model.hidden(),
            w1: model.w1.row_iter().map(|r| r.iter().copied().collect()).collect(),
            b1: model.b1.iter().copied().collect(),
            w2: model.w2.iter().copied().collect(),
            b2: model.b2,
            trained_at: None,
            config,
        })
    }

    pub fn method(&self) -> &str {
        match self {
            ModelFile::Logit(f) => &f.method,
            ModelFile::Neural(f) => &f.method,
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            ModelFile::Logit(f) => &f.feature_names,
            ModelFile::Neural(f) => &f.feature_names,
        }
    }

    pub fn standardization(&self) -> &Standardization {
        match self {
            ModelFile::Logit(f) => &f.standardization,
            ModelFile::Neural(f) => &f.standardization,
        }
    }

    pub fn set_trained_at(&mut self, stamp: Option<String>) {
        match self {
            ModelFile::Logit(f) => f.trained_at = stamp,
            ModelFile::Neural(f) => f.trained_at = stamp,
        }
    }

    /// Rebuilds the model, checking every shape against `feature_names`.
    pub fn model(&self) -> Result<Model> {
        check_names(self.feature_names(), self.standardization())?;
        let p = self.feature_names().len();
        let invalid = |e: Error| Error::Validation(format!("invalid model file: {e}"));
        match self {
            ModelFile::Logit(f) => {
                if f.beta.len() != p {
                    return Err(Error::Validation(format!(
                        "model file has {} coefficients for {p} features",
                        f.beta.len()
                    )));
                }
                Ok(Model::Logit(LogitModel::from_slice(&f.beta).map_err(invalid)?))
            }
            ModelFile::Neural(f) => {
                if f.w1.len() != f.hidden || f.w1.iter().any(|r| r.len() != p) {
                    return Err(Error::Validation(format!(
                        "model file W1 is not {} × {p}",
                        f.hidden
                    )));
                }
                let w1 = DMatrix::from_fn(f.hidden, p, |r, c| f.w1[r][c]);
                let m = NeuralModel::new(
                    w1,
                    DVector::from_column_slice(&f.b1),
                    DVector::from_column_slice(&f.w2),
                    f.b2,
                )
                .map_err(invalid)?;
                Ok(Model::Neural(m))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: not a model file: {e}", path.display())))
    }
}
