//! Tokenization, vocabularies, entity-type substitution and dialogue data.

pub mod dataset;
pub mod synthetic;
pub mod tokenize;
pub mod typed;
pub mod vocab;

pub use dataset::{Dataset, DialoguePair};
pub use tokenize::{detokenize, tokenize};
pub use typed::{substitute_types, TypedSequence};
pub use vocab::{Item, Vocabulary};
