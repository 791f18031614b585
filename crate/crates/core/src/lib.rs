//! Unified span extraction over structure tables.
//!
//! Every extraction task is phrased as a schema instance (task, category, text)
//! and answered by reading square score tables over its tokens.

pub mod codec;
pub mod schema;
pub mod tensor;
pub mod tokenizer;
pub mod model;
pub mod vocab;
pub mod data;
pub mod eval;
pub mod train;
pub mod gradcheck;
