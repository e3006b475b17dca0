//! Imbalanced regression toolkit for skewed labels such as reaction yields.
//!
//! The label space is cut into equal-width bins, bins are classed as
//! many/medium/few-shot by their training counts, and a small MLP is trained
//! on an L1 objective with optional per-sample re-weighting (Focal, LDS, or
//! both). Evaluation reports MAE, RMSE and G-Mean per region.
//!
//! Numeric code is generic over [`Scalar`] (`f32`, `f64`); the `*64` aliases
//! below fix it to `f64`.

pub mod binning;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod reweight;
pub mod scalar;

pub use binning::{count_bins, partition_regions, BinCounts, BinSpec, Region, RegionPartition, RegionThresholds};
pub use dataset::{
    features_for_labels, generate_synthetic, load_csv, read_csv, save_csv, split, write_csv, Dataset, Sample,
    SplitSpec, SynthConfig,
};
pub use error::{Error, Result};
pub use harness::{emit_report, run_experiment, ComparisonReport, DataSource, ExperimentConfig, ReportFormat};
pub use metrics::{gmean, mae, pearson, region_report, rmse, RegionReport, ReportRegion};
pub use model::{loss_gradient, train, train_observed, MlpConfig, Network, TrainedModel};
pub use reweight::{
    combine_weights, focal_weights, gaussian_kernel, lds_weights, smoothed_counts, weighted_l1_loss, EdgeMode,
    FocalConfig, KernelConfig, Reweighting, Scheme, WeightVector,
};
pub use scalar::Scalar;

pub type Sample64 = Sample<f64>;
pub type Dataset64 = Dataset<f64>;
pub type BinSpec64 = BinSpec<f64>;
pub type Network64 = Network<f64>;
pub type TrainedModel64 = TrainedModel<f64>;
pub type RegionReport64 = RegionReport<f64>;
pub type Reweighting64 = Reweighting<f64>;
pub type WeightVector64 = WeightVector<f64>;
pub type Dataset32 = Dataset<f32>;
pub type TrainedModel32 = TrainedModel<f32>;
