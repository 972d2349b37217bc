//! Hierarchical multi-hop dense retrieval over structured long documents.
//!
//! A document is indexed as one flat list of paragraph and sentence vectors.
//! A query is answered in hops: each hop scores the index, retrieves the best
//! entry, mixes it with the current query vector, and adds the mixed vector to
//! the next hop's query. Mixing parameters are trained end-to-end from
//! distantly supervised per-hop labels.

pub mod doc;
pub mod embed;
pub mod error;
pub mod eval;
pub mod heads;
pub mod hop;
pub mod index;
pub mod linalg;
pub mod text;
pub mod train;

pub use error::{Error, Result};
