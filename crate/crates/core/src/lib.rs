pub mod corpus;
pub mod embed;
pub mod error;
pub mod evalharness;
pub mod mapper;
pub mod par;
pub mod pipeline;
pub mod retrieval;
pub mod simcluster;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
