pub mod cluster;
pub mod discretize;
pub mod localization;
pub mod model;
pub mod spacing_stats;
pub mod spectral;
