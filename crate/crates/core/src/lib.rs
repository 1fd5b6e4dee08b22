//! Class-conditional density models for vector representations.
//!
//! Representations (pooled activations, one row per input) are modelled per
//! class with a Dirichlet-process Gaussian mixture whose NIW base measure is
//! integrated out. A block collapsed Gibbs sampler produces assignment
//! snapshots; averaging the snapshot-conditional Student-t mixtures gives a
//! tractable posterior predictive, which supports log-density evaluation,
//! sampling and Monte-Carlo KL estimates. On top sit per-class analyses
//! (density statistics, two-group detection, binning, memorization scores,
//! generative classification) and randomized-smoothing certification.

pub mod analysis;
pub mod certify;
pub mod error;
pub mod linalg;
pub mod math;
pub mod niw;
pub mod predictive;
pub mod representation;
pub mod sampler;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use niw::{posterior_update, ComponentStats, NiwParams};
pub use predictive::{
    kl_between_predictives, kl_to_reference, max_entropy_reference, DiagonalGaussian, KlConfig, KlEstimate,
    LogDensity, PredictiveModel,
};
pub use representation::{
    derive_prior, load_representations, split_by_class, svd_reduce, write_representations, Precision,
    RepresentationDataset, SvdProjection, SvdTarget,
};
pub use sampler::{run, ChainState, SamplerConfig, Snapshot};

/// Fit one class: derive the prior from `rows`, run the sampler and wrap the
/// retained snapshots in a predictive model.
pub fn fit_predictive(rows: ndarray::ArrayView2<'_, f64>, config: &SamplerConfig) -> Result<PredictiveModel> {
    let prior = derive_prior(rows)?;
    let snapshots = run(rows, &prior, config)?;
    PredictiveModel::new(snapshots, rows.to_owned(), prior)
}
