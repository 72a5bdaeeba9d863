//! Notch-type resonator fitting with diameter correction.
//!
//! Stages: cable-delay removal, algebraic circle fit, phase fit about the
//! circle center, quality-factor extraction from the normalized circle, then a
//! joint least-squares refinement of all seven parameters.

mod circle;
mod delay;
mod model;
mod phase;
mod pipeline;
mod quality;

use thiserror::Error;

pub use circle::{fit_circle, Circle2D, CircleFit};
pub use delay::{apply_delay_correction, estimate_cable_delay, remove_cable_delay, DelayEstimate};
pub use model::{linewidth_grid, synthesize_notch, NotchModelParams};
pub use phase::{fit_phase, wrap_angle, PhaseFit};
pub use pipeline::{fit_resonator, fit_resonator_report, noise_floor, residual_rms, ResonatorFitReport};
pub use quality::{extract_quality_factors, off_resonant_point, propagate_staged_uncertainties};

use crate::lsq::LsqError;
use crate::types::ValidationError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("invalid trace: {0}")]
    Trace(#[from] ValidationError),
    #[error("non-physical parameters: {0}")]
    NonPhysical(String),
    #[error("degenerate circle: {0}")]
    DegenerateCircle(String),
    #[error("trace too narrow to estimate delay: {0}")]
    TooNarrow(String),
    #[error("no resonance found: {0}")]
    NoResonance(String),
    #[error("fitted fr = {fr} Hz outside the span [{lo}, {hi}]")]
    FrOutsideSpan { fr: f64, lo: f64, hi: f64 },
    #[error("internal quality factor is non-positive (Qi = {qi:e})")]
    NonPositiveQi { qi: f64 },
    #[error("inconsistent stage results: {0}")]
    Inconsistent(String),
    #[error("residual rms {residual_rms:e} exceeds threshold {threshold:e} (more than one resonance?)")]
    PoorFit { residual_rms: f64, threshold: f64 },
    #[error(transparent)]
    Solver(#[from] LsqError),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<FitError>,
    },
}

impl FitError {
    /// The innermost error, with stage wrappers removed.
    pub fn root(&self) -> &FitError {
        match self {
            FitError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
