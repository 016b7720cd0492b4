//! Reconvolution fits of TCSPC histograms and the spectral lifetime model.

mod decay;
mod lm;
mod spectral;

pub use decay::{
    fit_biexponential, fit_decay, fit_monoexponential, select_model, select_model_with,
    HistogramData, ModelChoice, ModelSelection,
};
pub use spectral::{
    dip_fwhm, fit_spectral_model, simulate_scan, spectral_lifetime, SpectralPoint, SpectralScan,
    Tau0Reference,
};

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("histogram has no counts")]
    EmptyHistogram,
    #[error("histogram and grid disagree in length")]
    Shape,
    #[error("no convergence after {iterations} iterations; last iterate {last:?}")]
    NoConvergence {
        iterations: usize,
        last: Vec<(String, f64)>,
    },
    #[error("objective could not be evaluated at the starting point")]
    BadStart,
    #[error("invalid spectral scan: {0}")]
    InvalidScan(String),
    #[error("no cavity modes given")]
    NoModes,
    #[error("scan does not cover ±1.5 linewidths around the mode at {lambda_c} nm")]
    InsufficientCoverage { lambda_c: f64 },
}

/// Fit controls. Defaults: 200 iterations, relative step 1e−8, Newton
/// decrement 1e−10, deviance threshold 9 for preferring two components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
    pub selection_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tol: 1e-8,
            grad_tol: 1e-10,
            selection_threshold: 9.0,
        }
    }
}

impl FitOptions {
    pub(crate) fn lm(&self) -> lm::LmSettings {
        lm::LmSettings {
            max_iterations: self.max_iterations,
            rel_tol: self.rel_tol,
            grad_tol: self.grad_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    Monoexponential,
    Biexponential,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// `2Σ[y ln(y/μ) − (y − μ)]`
    PoissonDeviance,
    /// `Σ w (y − m)²`
    WeightedChiSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goodness<T> {
    pub statistic: Statistic,
    pub value: T,
    pub dof: usize,
    /// `value / dof`
    pub reduced: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FitWarning {
    LowStatistics { total_counts: u64 },
    /// Lifetimes too close or one component vanished.
    Unidentifiable,
    AtBound { parameter: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter<T> {
    pub name: String,
    pub value: T,
    /// `None` when the data carry no information on the parameter.
    pub std_error: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    pub model: FitModel,
    pub parameters: Vec<FitParameter<T>>,
    /// Quantities computed from the parameters (errors by linear propagation).
    pub derived: Vec<FitParameter<T>>,
    /// Row/column order follows `parameters`.
    pub covariance: Vec<Vec<T>>,
    pub goodness: Goodness<T>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: T,
    pub warnings: Vec<FitWarning>,
}

impl<T: Scalar> FitResult<T> {
    pub fn parameter(&self, name: &str) -> Option<&FitParameter<T>> {
        self.parameters
            .iter()
            .chain(&self.derived)
            .find(|p| p.name == name)
    }

    /// Value of a fitted or derived parameter. Panics on unknown names.
    pub fn value(&self, name: &str) -> T {
        self.parameter(name)
            .unwrap_or_else(|| panic!("no parameter {name}"))
            .value
    }

    pub fn std_error(&self, name: &str) -> Option<T> {
        self.parameter(name).and_then(|p| p.std_error)
    }

    pub fn is_unidentifiable(&self) -> bool {
        self.warnings.contains(&FitWarning::Unidentifiable)
    }
}

pub(crate) fn last_iterate<T: Scalar>(names: &[String], values: &[T]) -> Vec<(String, f64)> {
    names
        .iter()
        .zip(values)
        .map(|(n, v)| (n.clone(), v.as_f64()))
        .collect()
}
