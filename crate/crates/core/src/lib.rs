pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod model;
pub mod optimize;
pub mod predict;
pub mod simulate;
pub mod smoothing;
