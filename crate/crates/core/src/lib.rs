pub mod error;
pub mod experiments;
pub mod identification;
mod linalg;
pub mod operators;
pub mod rates;
pub mod regularizers;
pub mod solver;

pub use linalg::principal_cosines;
