//! Windowed spatio-temporal transformer forecasting normalised risk-adjusted
//! returns.

pub mod dataset;
pub mod model;
pub mod target;
pub mod train;

pub use dataset::{build_windows, sample_weight, Dataset, TemporalSplit, WindowConfig, WindowSample};
pub use model::{parameter_count, ModelConfig, TensorInfo, Transformer};
pub use target::{risk_adjusted_target, RawTargets, TargetNormalizer, TARGET_HORIZON, VOLATILITY_FLOOR};
pub use train::{
    decile_report, r_squared, train, weighted_loss, ChunkResult, ChunkRunner, Decile, EpochRecord, FeatureScaler,
    Prediction, Sequential, TrainedModel, Trajectory,
};
