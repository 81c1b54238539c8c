//! Diagnostic probing of transformer encoders.
//!
//! The crate covers the full offline side of two probing methodologies:
//! layerwise diagnostic classifiers trained under a poverty-of-the-stimulus
//! split, and attention-based confusion scores for subject-verb agreement
//! and reflexive anaphora. Activations are exchanged through a bit-exact
//! bundle format (`actstore`), and a deterministic toy encoder (`mockenc`)
//! produces valid bundles without any ML framework.

pub mod actstore;
pub mod confusion;
pub mod grammar;
pub mod mockenc;
pub mod probe;
pub mod span;
pub mod stats;
pub mod tasks;

pub use span::Span;
