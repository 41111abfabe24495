use serde::{Deserialize, Serialize};

/// Every numeric tolerance used by the library, in one place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Probability identities: sums to one, marginals, quota identities.
    pub probability: f64,
    /// Objective slack that defines the second stage of lexicographic transport solves.
    pub optimality: f64,
    /// Bound checks on errors and best-response gains.
    pub bound: f64,
    /// Optimization comparisons (grid self-consistency and the like).
    pub comparison: f64,
    /// Slack a cycle must exceed to count as strict.
    pub strict_cm: f64,
    /// Minimum prior mass that still counts as full support.
    pub support: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        probability: 1e-9,
        optimality: 1e-7,
        bound: 1e-7,
        comparison: 1e-6,
        strict_cm: 1e-9,
        support: 1e-12,
    };

    /// Copy with the bound tolerance replaced (the CLI `--tol` flag).
    pub fn with_bound(self, bound: f64) -> Self {
        Tolerances { bound, ..self }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

pub const TOL: Tolerances = Tolerances::DEFAULT;

/// Entries at or below this magnitude are treated as exact zeros when reading LP solutions.
pub(crate) const ZERO: f64 = 1e-12;
