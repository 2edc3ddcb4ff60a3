//! Decides satisfiability and finiteness of word equations with rational
//! constraints over trace monoids and right-angled Artin groups, and
//! represents the full solution set as a finite automaton whose edges are
//! labeled by free-monoid endomorphisms.

pub mod alphabet;
pub mod config;
pub mod error;
pub mod instance;
pub mod monoid;
pub mod oracle;
pub mod state;
pub mod transition;
pub mod theta;
pub mod trace;

pub use error::{Result, SolveError};
