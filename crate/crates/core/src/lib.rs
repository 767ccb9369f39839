//! Heart sound classification built on i-vectors.
//!
//! The pipeline runs MFCC extraction, a GMM universal background model,
//! Baum–Welch statistics, a total-variability (i-vector) extractor, optional
//! PCA or VAE reduction, and a GMM log-likelihood-ratio or RBF-SVM classifier.
//! Scores are evaluated with the quality-weighted sensitivity/specificity and
//! modified accuracy (MAcc) used by the PhysioNet/CinC 2016 challenge.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod ivector;
pub mod mfcc;
pub mod pipeline;
pub mod reduce;
pub mod svm;
pub mod synthetic;

pub use config::{ClassifierKind, PipelineConfig, Reduction};
pub use container::{load_model, save_model, ContainerModel, ModelKind};
pub use dataset::{load_reference, load_wav, split_train_eval, AudioRecord, Label, LabelTable, Quality, SplitSpec};
pub use error::{Error, Result};
pub use eval::{
    apply_threshold, compute_macc, compute_se_sp, sweep_curve, tally_confusion, ConfusionCounts, CurvePoint,
    EvalReport, EvalWeights,
};
pub use gmm::{em_fit, llr_score, train_class_gmms, EmConfig, EmFit, Gmm};
pub use ivector::{
    accumulate_stats, extract_ivector, posterior_wi, train_tv, update_t, BaumWelchStats, IVectorPosterior,
    TotalVariabilityModel, TvConfig, TvFit,
};
pub use mfcc::{extract_mfcc, FeatureMatrix, MelFilterbank, MfccConfig};
pub use reduce::pca::{pca_fit, pca_project, PcaModel};
pub use reduce::vae::{vae_elbo_and_grads, vae_encode, vae_fit, VaeConfig, VaeFit, VaeModel};
pub use svm::{rbf_kernel, svm_decision, svm_train, SvmFit, SvmModel, SvmParams};
