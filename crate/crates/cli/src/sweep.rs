//! `sweep`: which conditions hold as the coupling is scaled, next to what
//! the spectrum of the coupled matrix says.

use std::fmt::Write as _;

use roughness_core::dichotomy::{extract_system, AggregateDichotomy};
use roughness_core::linalg::{assemble_full, BlockSystem};
use roughness_core::lyapunov::lyapunov_certificate;
use roughness_core::oracle::spectral_dichotomy;
use roughness_core::report::ConditionId;
use roughness_core::Error;

use crate::error::CliError;
use crate::format::SystemFile;
use crate::pipeline::{linear_reports, Settings};

/// Conditions tracked by the sweep, in column order.
pub const SWEPT: [ConditionId; 14] = [
    ConditionId::HalfLineSum,
    ConditionId::HalfLineMax,
    ConditionId::NegHalfLineSum,
    ConditionId::NegHalfLineMax,
    ConditionId::DecaySum,
    ConditionId::DecayMax,
    ConditionId::DecayRefinedSum,
    ConditionId::DecayRefinedMax,
    ConditionId::WholeLineSum,
    ConditionId::WholeLineMax,
    ConditionId::LyapunovSum,
    ConditionId::LyapunovMax,
    ConditionId::LyapunovCoupling,
    ConditionId::LyapunovExact,
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    /// Aligned with [`SWEPT`].
    pub holds: Vec<bool>,
    pub oracle_hyperbolic: bool,
    pub oracle_rank: Option<usize>,
    pub rank_match: bool,
    pub stable_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Stable dimension of the uncoupled system.
    pub uncoupled_rank: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    fn column(&self, id: ConditionId) -> usize {
        SWEPT.iter().position(|c| *c == id).expect("swept condition")
    }

    /// First scale at which the condition fails.
    pub fn first_failure(&self, id: ConditionId) -> Option<f64> {
        let k = self.column(id);
        self.rows.iter().find(|r| !r.holds[k]).map(|r| r.lambda)
    }

    /// Whether the condition holds on a prefix of the sweep and fails after.
    pub fn is_interval(&self, id: ConditionId) -> bool {
        let k = self.column(id);
        let mut failed = false;
        for r in &self.rows {
            failed |= !r.holds[k];
            if failed && r.holds[k] {
                return false;
            }
        }
        true
    }

    /// Last scale at which the oracle still finds a hyperbolic splitting of
    /// the uncoupled rank, counting from the start.
    pub fn hyperbolic_until(&self) -> Option<f64> {
        self.rows.iter().take_while(|r| r.oracle_hyperbolic && r.rank_match).last().map(|r| r.lambda)
    }

    /// Scales where the oracle rank or hyperbolicity differs from the
    /// previous row.
    pub fn rank_changes(&self) -> Vec<(f64, Option<usize>, Option<usize>)> {
        self.rows.windows(2).filter(|w| w[0].oracle_rank != w[1].oracle_rank).map(|w| (w[1].lambda, w[0].oracle_rank, w[1].oracle_rank)).collect()
    }

    pub fn table(&self) -> String {
        let mut out = String::from("lambda");
        for id in SWEPT {
            let _ = write!(out, "\t{id}");
        }
        out.push_str("\toracle_hyperbolic\toracle_rank\trank_match\tstable_rate\n");
        for r in &self.rows {
            let _ = write!(out, "{:.6}", r.lambda);
            for h in &r.holds {
                let _ = write!(out, "\t{}", u8::from(*h));
            }
            let rank = r.oracle_rank.map_or("-".to_string(), |k| k.to_string());
            let _ = writeln!(out, "\t{}\t{rank}\t{}\t{:.9e}", u8::from(r.oracle_hyperbolic), u8::from(r.rank_match), r.stable_rate);
        }
        out
    }
}

fn row(base: &BlockSystem, agg: &AggregateDichotomy, lambda: f64, margin: f64) -> Result<SweepRow, CliError> {
    let scaled = base.scaled(lambda);
    let norms = scaled.coupling_norms();
    let mut reports = linear_reports(agg, &norms, None);
    reports.extend(lyapunov_certificate(&scaled, agg)?.reports);
    let holds = SWEPT.iter().map(|id| reports.iter().any(|r| r.part(*id).is_some_and(|p| p.satisfied))).collect();
    let (hyp, rank, rate) = match spectral_dichotomy(&assemble_full(&scaled), margin) {
        Ok(e) => (true, Some(e.stable_rank), e.stable_rate),
        Err(Error::NotHyperbolic { .. }) => (false, None, f64::NAN),
        Err(e) => return Err(e.into()),
    };
    Ok(SweepRow { lambda, holds, oracle_hyperbolic: hyp, oracle_rank: rank, rank_match: rank == Some(agg.stable_rank()), stable_rate: rate })
}

/// Evaluates the conditions at `steps + 1` evenly spaced scales of the
/// couplings in `[from, to]`.
pub fn sweep(file: &SystemFile, settings: &Settings, from: f64, to: f64, steps: usize) -> Result<SweepResult, CliError> {
    if !(from.is_finite() && to.is_finite() && from >= 0.0 && to > from) {
        return Err(CliError::Validation(format!("sweep range [{from}, {to}] must satisfy 0 <= from < to")));
    }
    if steps == 0 {
        return Err(CliError::Validation("sweep needs at least one step".into()));
    }
    let sys = file.system()?;
    let agg = extract_system(&sys, &settings.extract_options())?;
    let rows = (0..=steps)
        .map(|k| row(&sys, &agg, from + k as f64 * (to - from) / steps as f64, settings.margin))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepResult { uncoupled_rank: agg.stable_rank(), rows })
}
