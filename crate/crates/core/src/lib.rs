pub mod align;
pub mod cli;
pub mod conditions;
pub mod error;
pub mod linalg;
pub mod map_constants;
pub mod model;
pub mod montecarlo;
pub mod sim;
pub mod spectral;
pub mod stats;
