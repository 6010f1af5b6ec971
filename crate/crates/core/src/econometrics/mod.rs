//! PCA reduction, least squares with inference, and the time-dummy hedonic
//! index built on top of them.

pub mod hedonic;
pub mod ols;
pub mod pca;

pub use hedonic::{
    build_hedonic_index, indices_to_panel, HedonicConfig, HedonicDiagnostics, HedonicIndex, IndexPoint, PriceIndex,
};
pub use ols::{ols_fit, OlsFit};
pub use pca::{pca_reduce, PcaModel};
