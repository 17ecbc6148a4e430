//! Knowledge-grounded dialogue generation.
//!
//! A message is matched against a knowledge base to retrieve candidate
//! facts, encoded with its entities replaced by their types, and decoded
//! word by word. At each step a knowledge gate mixes a common-word
//! generator with a dynamic knowledge enquirer that scores the candidate
//! entities from their type and predicate alone, so entities never seen
//! in training can still be produced.

pub mod corpus;
pub mod evaluation;
pub mod error;
pub mod features;
pub mod inference;
pub mod kb;
pub mod model;
pub mod service;
pub mod training;

pub use error::{Error, Result};
