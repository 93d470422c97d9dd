//! Evaluation metrics: derivative PDFs and KL divergence, return periods,
//! spectra, field correlation and loss-landscape scans.

mod events;
mod landscape;
mod pdf;
mod spectrum;

pub use events::{
    curve_distance, period_of_events, pooled_return_period, return_period, return_period_single, spatial_max,
    upward_crossings,
};
pub use landscape::{count_strict_minima, landscape_scan, GridSpec, Landscape};
pub use pdf::{
    derivative_samples, joint_pdf, kl_divergence, pdf_range, DerivativeScheme, JointPdf, PdfConfig, KL_FLOOR,
};
pub use spectrum::{field_correlation, mean_spectrum, pearson, spectrum_1d, spectrum_rmse, Spectrum};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("only {events} events above threshold {threshold}")]
    InsufficientEvents { threshold: f64, events: usize },
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("index {index} out of range for {len} parameters")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
