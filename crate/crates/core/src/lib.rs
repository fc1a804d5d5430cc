//! Out-of-distribution detection on network feature embeddings.
//!
//! Detectors score samples so that a larger confidence means "more
//! in-distribution":
//!
//! * [`lof`]: Local Outlier Factor, globally (`LOF`) or with one model per
//!   class under the cosine metric (`LOF_D`).
//! * [`mahalanobis`]: distance to the closest class-conditional Gaussian.
//!
//! Around them sit spatial [`pooling`], a per-layer [`ensemble`], the
//! [`metrics`] suite (TNR at 95% TPR, AUROC, detection accuracy, AUPR), the
//! synthetic dimensionality sweep in [`simulation`], and the end-to-end
//! [`pipeline`].

pub mod data;
pub mod detector;
pub mod ensemble;
pub mod error;
pub mod knn;
pub mod lof;
pub mod mahalanobis;
pub mod metrics;
pub mod oodf;
pub mod pipeline;
pub mod pooling;
pub mod scores;
pub mod simulation;

pub use data::{FeatureFile, FeatureMatrix, LabeledDataset, ScoreSet, SpatialDataset, SpatialFeatureMap};
pub use detector::{Detector, DetectorSpec, FittedDetector};
pub use ensemble::{combine, fit_weights, EnsembleWeights, LayerScores};
pub use error::{Error, ErrorKind, Result};
pub use knn::{knn, Metric, Neighbor};
pub use lof::{fit_lof, LofConfig, LofMode, LofModel};
pub use mahalanobis::{fit_mahalanobis, CovarianceMode, MahalanobisConfig, MahalanobisModel, Regularization};
pub use metrics::{evaluate, EvalReport};
pub use oodf::{read_feature_file, write_feature_file};
pub use pipeline::{run_pipeline, PipelineConfig};
pub use pooling::{pool, PoolingMethod, PoolingSpec};
pub use simulation::{run_sweep, SimConfig, SimDetector};
