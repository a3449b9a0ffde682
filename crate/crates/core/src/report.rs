//! Verdicts of sufficient conditions and the constants they certify.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

/// Every sufficient condition the crate evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConditionId {
    /// Positive half-line bounded solutions, summed coupling norms.
    HalfLineSum,
    /// Positive half-line bounded solutions, largest coupling norm.
    HalfLineMax,
    /// Negative half-line bounded solutions, summed coupling norms.
    NegHalfLineSum,
    /// Negative half-line bounded solutions, largest coupling norm.
    NegHalfLineMax,
    /// Decay of the perturbed stable part, first estimate, sum form.
    DecaySum,
    /// Decay of the perturbed stable part, first estimate, max form.
    DecayMax,
    /// Decay of the perturbed stable part, refined estimate, sum form.
    DecayRefinedSum,
    /// Decay of the perturbed stable part, refined estimate, max form.
    DecayRefinedMax,
    WholeLineSum,
    WholeLineMax,
    /// `|Z + Z'| < 1` from the computed operators.
    WholeLineDirect,
    /// Disjunction of the whole-line checks.
    WholeLine,
    LyapunovSum,
    LyapunovMax,
    /// `|C| (|B| + |B^T|) < 1`.
    LyapunovCoupling,
    /// Definiteness of the derivative of the quadratic form.
    LyapunovExact,
    /// Bound on the nonlinearity keeps iterates in the ball, sum form.
    NonlinearBoundSum,
    NonlinearBoundMax,
    /// Lipschitz constants small enough for a contraction, sum form.
    NonlinearLipschitzSum,
    NonlinearLipschitzMax,
    /// Either bound condition on the nonlinearity.
    NonlinearBound,
    /// Either Lipschitz condition on the nonlinearity.
    NonlinearLipschitz,
    /// Existence of a bounded solution in the ball (bound and Lipschitz).
    NonlinearExistence,
    /// Trajectories starting near zero stay in the ball, sum form.
    ConfinementSum,
    ConfinementMax,
    Confinement,
    NonlinearDecaySum,
    NonlinearDecayMax,
    NonlinearDecayRefinedSum,
    NonlinearDecayRefinedMax,
    /// Linear part absorbed into the dichotomy, remainder bound, sum form.
    SplitBoundSum,
    SplitBoundMax,
    SplitBound,
    /// Linear part absorbed into the dichotomy, remainder Lipschitz constant.
    SplitLipschitzSum,
    SplitLipschitzMax,
    SplitLipschitz,
    /// Decay for the split system.
    SplitDecay,
}

impl ConditionId {
    pub fn as_str(self) -> &'static str {
        use ConditionId::*;
        match self {
            HalfLineSum => "halfline_sum",
            HalfLineMax => "halfline_max",
            NegHalfLineSum => "neg_halfline_sum",
            NegHalfLineMax => "neg_halfline_max",
            DecaySum => "decay_sum",
            DecayMax => "decay_max",
            DecayRefinedSum => "decay_refined_sum",
            DecayRefinedMax => "decay_refined_max",
            WholeLineSum => "wholeline_sum",
            WholeLineMax => "wholeline_max",
            WholeLineDirect => "wholeline_direct",
            WholeLine => "wholeline",
            LyapunovSum => "lyapunov_sum",
            LyapunovMax => "lyapunov_max",
            LyapunovCoupling => "lyapunov_coupling",
            LyapunovExact => "lyapunov_exact",
            NonlinearBoundSum => "nonlinear_bound_sum",
            NonlinearBoundMax => "nonlinear_bound_max",
            NonlinearLipschitzSum => "nonlinear_lipschitz_sum",
            NonlinearLipschitzMax => "nonlinear_lipschitz_max",
            NonlinearBound => "nonlinear_bound",
            NonlinearLipschitz => "nonlinear_lipschitz",
            NonlinearExistence => "nonlinear_existence",
            ConfinementSum => "confinement_sum",
            ConfinementMax => "confinement_max",
            Confinement => "confinement",
            NonlinearDecaySum => "nonlinear_decay_sum",
            NonlinearDecayMax => "nonlinear_decay_max",
            NonlinearDecayRefinedSum => "nonlinear_decay_refined_sum",
            NonlinearDecayRefinedMax => "nonlinear_decay_refined_max",
            SplitBoundSum => "split_bound_sum",
            SplitBoundMax => "split_bound_max",
            SplitBound => "split_bound",
            SplitLipschitzSum => "split_lipschitz_sum",
            SplitLipschitzMax => "split_lipschitz_max",
            SplitLipschitz => "split_lipschitz",
            SplitDecay => "split_decay",
        }
    }
}

impl core::fmt::Display for ConditionId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One evaluated condition `lhs < threshold` (or `<=` when not strict).
///
/// `derived` is empty unless the condition holds.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub id: ConditionId,
    pub lhs: f64,
    pub threshold: f64,
    pub strict: bool,
    pub satisfied: bool,
    pub derived: BTreeMap<&'static str, f64>,
    pub notes: Vec<String>,
    /// Component verdicts of a combined condition.
    pub parts: Vec<ConditionReport>,
}

impl ConditionReport {
    pub fn strict(id: ConditionId, lhs: f64, threshold: f64) -> Self {
        Self::build(id, lhs, threshold, true)
    }

    pub fn non_strict(id: ConditionId, lhs: f64, threshold: f64) -> Self {
        Self::build(id, lhs, threshold, false)
    }

    fn build(id: ConditionId, lhs: f64, threshold: f64, strict: bool) -> Self {
        let satisfied = if strict { lhs < threshold } else { lhs <= threshold };
        Self { id, lhs, threshold, strict, satisfied, derived: BTreeMap::new(), notes: Vec::new(), parts: Vec::new() }
    }

    /// Combined verdict: holds when any part holds.
    pub fn any_of(id: ConditionId, parts: Vec<ConditionReport>) -> Self {
        let satisfied = parts.iter().any(|p| p.satisfied);
        let margin = parts.iter().map(|p| p.lhs - p.threshold).fold(f64::INFINITY, f64::min);
        Self {
            id,
            lhs: margin,
            threshold: 0.0,
            strict: true,
            satisfied,
            derived: BTreeMap::new(),
            notes: Vec::new(),
            parts,
        }
    }

    /// Combined verdict: holds when every part holds.
    pub fn all_of(id: ConditionId, parts: Vec<ConditionReport>) -> Self {
        let satisfied = parts.iter().all(|p| p.satisfied);
        let margin = parts.iter().map(|p| p.lhs - p.threshold).fold(f64::NEG_INFINITY, f64::max);
        Self {
            id,
            lhs: margin,
            threshold: 0.0,
            strict: true,
            satisfied,
            derived: BTreeMap::new(),
            notes: Vec::new(),
            parts,
        }
    }

    /// Marks the condition as failed because a hypothesis outside `lhs` does
    /// not hold.
    pub fn reject(&mut self, reason: impl Into<String>) -> &mut Self {
        self.satisfied = false;
        self.derived.clear();
        self.note(reason)
    }

    /// The part with the given id, searching nested parts.
    pub fn part(&self, id: ConditionId) -> Option<&ConditionReport> {
        if self.id == id {
            return Some(self);
        }
        self.parts.iter().find_map(|p| p.part(id))
    }

    /// Records a derived constant; ignored when the condition fails.
    pub fn derive(&mut self, key: &'static str, value: f64) -> &mut Self {
        if self.satisfied {
            self.derived.insert(key, value);
        }
        self
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.derived.get(key).copied()
    }

    /// `(M~, rate)` when the report certifies a finite decay pair; the rate
    /// is `nu` when present and `mu` otherwise.
    pub fn decay_pair(&self) -> Option<(f64, f64)> {
        match (self.get("m_tilde"), self.get("nu").or_else(|| self.get("mu"))) {
            (Some(m), Some(mu)) if m.is_finite() && mu > 0.0 => Some((m, mu)),
            _ => None,
        }
    }
}
