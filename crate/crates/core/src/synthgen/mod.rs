//! Synthetic data from the anti-causal latent model with known ground truth.

mod assumptions;
mod dataset;
mod evidence;
mod mixing;
pub mod presets;
pub mod quadrature;
mod render;
mod sample;
mod spec;

pub use assumptions::{
    pair_is_heterogeneous, validate_assumptions, AssumptionReport, HeterogeneityCheck,
    InjectivityCheck, RelaxedHeterogeneityCheck, RATIO_RTOL,
};
pub use dataset::{ArrayTypes, LabeledDataset, Manifest, MANIFEST_FILE};
pub use evidence::{
    exact_log_evidence, gaussian_log_pdf, linear_marginal, log_evidence_quadrature,
    QUADRATURE_ABS_TOL,
};
pub use mixing::{MixingFunction, MlpLayer};
pub use render::{hsv_to_rgb, render_toy_images, Rendered, ToyImageConfig, ToyImageRenderer};
pub use sample::sample_dataset;
pub use spec::{GenerativeSpec, LabelEntry};
