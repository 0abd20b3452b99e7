//! Label-modular prompt tuning for text classification over label spaces
//! that change between training stages and at test time.

pub mod autodiff;
pub mod backbone;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod harness;
pub mod promptstore;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
