//! Synthetic CSTR "text to Modelica" corpus generation and an automated
//! error checker for Modelica answers.

pub mod checker;
pub mod codegen;
pub mod config;
pub mod corpus;
pub mod expr;
pub mod frontend;
pub mod physics;
pub mod scenario;
pub mod simulate;
pub mod units;
