//! Domain-adaptive filter decomposition.
//!
//! Convolution filters are expressed as `K` domain-specific spatial atoms
//! mixed by coefficients shared across domains. The crate provides the
//! layer itself ([`layer`]), multi-domain networks built from it ([`net`]),
//! synthetic and IDX datasets ([`data`]), parameter and flop accounting
//! ([`cost`]), and a grid-based harness that checks the invariance bounds
//! behind atom-only adaptation ([`theory`]).

pub mod checkpoint;
pub mod cost;
pub mod data;
pub mod domain;
pub mod error;
pub mod layer;
pub mod net;
pub mod tensor;
pub mod theory;

pub use domain::DomainId;
pub use error::{Error, Result};
