//! Recipe generation from ingredient lists with small, from-scratch language
//! models.
//!
//! The pipeline is: [`corpus`] turns recipe exports into tagged training
//! text, [`tokenizer`] maps it to ids, [`nn`] holds the LSTM and decoder-only
//! transformer, [`trainer`] fits them, [`generator`] samples recipes from an
//! ingredient prompt and [`eval`] scores generations with BLEU.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod generator;
pub mod nn;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
