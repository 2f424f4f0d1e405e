//! Individual-level probability models fit from aggregate binary counts.
//!
//! Each group ("precinct") contributes a covariate matrix with one row per
//! member and a single observed total of positive outcomes. Individual
//! outcomes are never seen. The likelihood of a total is Poisson binomial in
//! the per-member probabilities, so a logistic (or small neural) model can be
//! fit by maximizing that likelihood directly or through its heteroscedastic
//! Gaussian approximation.
//!
//! Module map:
//!
//! - [`poibin`]: Poisson binomial probability kernel (PMF, leave-one-out,
//!   conditional inclusion probabilities).
//! - [`data`]: precinct datasets, CSV ingestion, standardization, splits.
//! - [`likelihood`]: exact and Gaussian-approximate log-likelihoods,
//!   gradients and Hessians for the logistic model.
//! - [`optimize`]: fixed-step and backtracking fitting schedules.
//! - [`neuralnet`]: single-hidden-layer network trained on the Gaussian
//!   objective with development-set checkpoint selection.
//! - [`simulate`]: synthetic elections with known truth.
//! - [`evaluate`]: ROC AUC, aggregate squared error, calibration.
//! - [`diagnostics`]: separation certificates and curvature probes.
//! - [`model_io`]: JSON model persistence.
//! - [`cli`]: the `ecoinf` command-line tool.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod evaluate;
pub mod likelihood;
pub mod math;
pub mod model_io;
pub mod neuralnet;
pub mod optimize;
pub mod poibin;
pub mod simulate;

pub use data::{Dataset, LabeledDataset, PrecinctData, Standardization};
pub use error::{Error, Result};
pub use likelihood::{GaussianApprox, GaussianMoments, LogitModel};
pub use neuralnet::{NeuralFitConfig, NeuralModel};
pub use optimize::{FitConfig, FitReport, Method};
pub use poibin::ProbVector;
pub use simulate::SimConfig;
