//! Neural text classification of harassment stories with interpretability tooling.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod interpret;
pub mod models;
mod linalg;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use linalg::{logistic, softmax};
