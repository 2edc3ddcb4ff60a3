//! Centralized budgets.
//!
//! Space bounds that the underlying theory gives with unspecified constants
//! are realized here as knobs with explicit defaults; exceeding a budget is
//! a hard error, never silent truncation. Defaults scale with the size of
//! the starting equation.

/// Default multiplier applied to initial measures.
pub const BUDGET_SCALE: usize = 64;

/// The partition search is exhaustive up to this many letter pairs.
pub const PARTITION_EXHAUSTIVE_PAIRS: usize = 12;

/// Number of random restarts for the partition search past that.
pub const PARTITION_RESTARTS: usize = 64;

#[derive(Clone, Debug)]
pub struct Budgets {
    /// Distinct letters ever alive across a path.
    pub fresh_letters: usize,
    /// Distinct variables ever alive across a path.
    pub fresh_vars: usize,
    /// Equation length along any path.
    pub equation_len: usize,
    /// Variable occurrences in the equation along any path.
    pub var_occurrences: usize,
    /// Max-norm of state weight vectors.
    pub max_norm: usize,
    /// Endomorphism norm per transition (sum of image lengths).
    pub endo_norm: usize,
    /// Elements in any constraint monoid.
    pub monoid: usize,
    /// Nodes visited when enumerating a commutation class.
    pub class_nodes: usize,
    /// Transition steps along a single forward path.
    pub search_steps: usize,
    /// Branching width for constraint-target candidates.
    pub candidates: usize,
    /// States in exhaustive automaton construction.
    pub nfa_states: usize,
    /// Accepting paths replayed or enumerated per run.
    pub paths: usize,
}

impl Budgets {
    /// Defaults for a starting equation of length `n`.
    pub fn for_instance_size(n: usize) -> Budgets {
        let n = n.max(1);
        Budgets {
            fresh_letters: BUDGET_SCALE * n,
            fresh_vars: BUDGET_SCALE * n,
            equation_len: BUDGET_SCALE * n,
            var_occurrences: BUDGET_SCALE * n,
            max_norm: BUDGET_SCALE * n,
            endo_norm: BUDGET_SCALE * n,
            monoid: 4096,
            class_nodes: 1 << 16,
            search_steps: (BUDGET_SCALE * n).max(4096),
            candidates: 512,
            nfa_states: 4096,
            paths: 512,
        }
    }
}
