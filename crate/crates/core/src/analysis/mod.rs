//! Parameter accounting and clustering of learned pooling maps.

pub mod gmm;
pub mod params;

pub use gmm::{cluster_pooling_maps, GmmFit, GmmModel, GmmOptions};
pub use params::{count_params, ArchConfig, ParamReport};
