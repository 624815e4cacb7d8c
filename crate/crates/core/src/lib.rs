//! Determinacy race detection for task-parallel traces with futures.
//!
//! Traces are replayed in depth-first eager order. Reachability between the
//! strands seen so far is maintained either by [`multibags`] (structured
//! futures) or [`multibags_plus`] (general futures), and every access is
//! checked against a [`shadow`] access history. [`oracle`] builds the
//! explicit dag for ground-truth comparison.

pub mod dsu;
pub mod reachdag;
pub mod trace;
pub mod multibags;
pub mod multibags_plus;
pub mod shadow;
pub mod oracle;
pub mod engine;
pub mod cli;
