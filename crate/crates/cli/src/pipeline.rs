//! The analysis behind `analyze`: extraction, conditions, projectors,
//! quadratic forms, nonlinear certificates and the oracle comparison.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use roughness_core::dichotomy::{extract_system, AggregateDichotomy, ExtractOptions, DEFAULT_MARGIN};
use roughness_core::greens::GreensFunction;
use roughness_core::linalg::{assemble_full, is_normal, projector_range_basis, spectral_norm, BlockSystem, CouplingNorms, Mat, Vector};
use roughness_core::lyapunov::lyapunov_certificate;
use roughness_core::nonlinear::{
    certify_decay, certify_split, check_existence, nonlinear_contraction, solve_nonlinear_halfline, SamplingSummary, DEFAULT_SAMPLES,
};
use roughness_core::oracle::{measure_decay, ode_residual, spectral_dichotomy, stable_flow, EmpiricalDichotomy};
use roughness_core::quadrature::TimeGrid;
use roughness_core::report::{ConditionId, ConditionReport};
use roughness_core::roughness::{
    check_halfline, check_negative_halfline, check_wholeline, estimate_decay, estimate_decay_refined, perturb, LinearOptions,
    PerturbedConstants, PerturbedDichotomy,
};
use roughness_core::Error;

use crate::error::CliError;
use crate::format::SystemFile;

pub const TOL_ENV: &str = "ROUGHNESS_TOL";
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_SEED: u64 = 0;

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub margin: Option<f64>,
    pub tol: Option<f64>,
    pub t_infinity: Option<f64>,
    pub grid_step: Option<f64>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
}

/// Resolved numerical settings, recorded in every report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub margin: f64,
    pub tol: f64,
    pub t_infinity: Option<f64>,
    pub grid_step: Option<f64>,
    pub seed: u64,
    pub samples: usize,
}

impl Settings {
    /// Flag, then file, then `env_tol` (tolerance only), then the default.
    pub fn resolve(file: &SystemFile, o: &Overrides, env_tol: Option<&str>) -> Result<Self, CliError> {
        let a = &file.analysis;
        let env = match env_tol {
            Some(s) => Some(
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Validation(format!("{TOL_ENV}={s:?} is not a number")))?,
            ),
            None => None,
        };
        let s = Self {
            margin: o.margin.or(a.margin).unwrap_or(DEFAULT_MARGIN),
            tol: o.tol.or(a.tolerance).or(env).unwrap_or(DEFAULT_TOL),
            t_infinity: o.t_infinity.or(a.t_infinity),
            grid_step: o.grid_step.or(a.grid_step),
            seed: o.seed.or(a.seed).unwrap_or(DEFAULT_SEED),
            samples: o.samples.or(a.samples).unwrap_or(DEFAULT_SAMPLES),
        };
        if !(0.0..1.0).contains(&s.margin) {
            return Err(CliError::Validation(format!("margin must lie in [0, 1), got {}", s.margin)));
        }
        for (name, v) in [("tolerance", Some(s.tol)), ("T_infinity", s.t_infinity), ("grid step", s.grid_step)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::Validation(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if s.samples == 0 {
            return Err(CliError::Validation("samples must be positive".into()));
        }
        Ok(s)
    }

    pub fn extract_options(&self) -> ExtractOptions {
        ExtractOptions { margin: self.margin, ..ExtractOptions::default() }
    }

    pub fn linear_options(&self) -> LinearOptions {
        LinearOptions { tol: self.tol, t_infinity: self.t_infinity, step: self.grid_step, ..LinearOptions::default() }
    }
}

/// Hex sha256 of the normalised system file.
pub fn digest(file: &SystemFile) -> String {
    let bytes = serde_json::to_vec(file).expect("system files serialise");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Errors that mean "this certificate does not apply" rather than a
/// numerical breakdown.
fn expected(e: &Error) -> bool {
    matches!(
        e,
        Error::ContractionViolated { .. } | Error::SplittingNotCertified { .. } | Error::PrerequisiteMissing(_)
    )
}

/// Keeps an inapplicable stage in the report as a reason and propagates
/// anything else.
pub type Outcome<T> = Result<T, String>;

fn outcome<T>(r: roughness_core::Result<T>) -> Result<Outcome<T>, CliError> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(e) if expected(&e) => Ok(Err(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockRow {
    pub label: String,
    pub dim: usize,
    pub stable_dim: usize,
    pub m: f64,
    pub alpha: f64,
    pub n: f64,
    pub beta: f64,
    pub normal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedSummary {
    pub stable_rank: usize,
    pub unstable_rank: usize,
    pub z_norm: f64,
    pub z_prime_norm: f64,
    pub splitting_norm: f64,
    /// `|P~^2 - P~|`
    pub idempotence_defect: f64,
    pub constants: Option<PerturbedConstants>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSummary {
    pub residual: f64,
    pub block_residual: f64,
    pub cross_check: f64,
    /// Largest `|C_i| - bound_i`.
    pub bound_excess: f64,
    pub positivity_margin: f64,
    pub derivative_margin: f64,
    pub symmetric_projectors: bool,
    pub satisfied: bool,
    pub reports: Vec<ConditionReport>,
}

/// A certified decay pair next to the decay of one stable trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCheck {
    pub id: ConditionId,
    pub m_tilde: f64,
    pub rate: f64,
    pub measured_rate: f64,
    pub envelope_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    /// `None` when the coupled matrix has eigenvalues on the axis.
    pub spectral: Option<EmpiricalDichotomy>,
    pub diagnostic: Option<String>,
    pub projector_distance: Option<f64>,
    pub rank_match: Option<bool>,
    pub decay: Vec<DecayCheck>,
}

/// One half-line solution of the nonlinear system checked against the
/// equation.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearCheck {
    pub initial_norm: f64,
    pub sup_norm: f64,
    pub radius: f64,
    pub ode_residual: f64,
    pub iterations: usize,
    pub measured_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearSection {
    pub kind: String,
    pub radius: f64,
    pub bounds: Vec<f64>,
    pub lipschitz: Vec<f64>,
    pub sampling: Outcome<SamplingSummary>,
    pub contraction: Outcome<f64>,
    /// Existence, confinement and the decay estimates.
    pub reports: Vec<ConditionReport>,
    pub split: Option<Outcome<ConditionReport>>,
    pub solution: Option<Outcome<NonlinearCheck>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub digest: String,
    pub settings: Settings,
    pub blocks: Vec<BlockRow>,
    pub aggregate: AggregateDichotomy,
    pub norms: CouplingNorms,
    pub reports: Vec<ConditionReport>,
    pub perturbed: Option<Outcome<PerturbedSummary>>,
    pub lyapunov: Option<Outcome<LyapunovSummary>>,
    pub oracle: OracleComparison,
    pub nonlinear: Option<NonlinearSection>,
    pub verdicts: BTreeMap<&'static str, bool>,
}

fn any_holds(reports: &[ConditionReport], ids: &[ConditionId]) -> bool {
    reports.iter().any(|r| ids.contains(&r.id) && r.satisfied)
}

/// Every linear report for a system, with the whole-line check using the
/// splitting norm when available.
pub fn linear_reports(agg: &AggregateDichotomy, norms: &CouplingNorms, splitting: Option<f64>) -> Vec<ConditionReport> {
    let mut r = check_halfline(agg, norms);
    r.extend(check_negative_halfline(agg, norms));
    r.extend(estimate_decay(agg, norms));
    r.extend(estimate_decay_refined(agg, norms));
    r.push(check_wholeline(agg, norms, splitting));
    r
}

/// Stable trajectory of the coupled system from a fixed unit vector in the
/// range of `projector`.
fn stable_probe(projector: &Mat) -> Option<Vector> {
    let basis = projector_range_basis(projector);
    if basis.ncols() == 0 {
        return None;
    }
    let v = &basis * Vector::from_element(basis.ncols(), 1.0);
    let n = v.norm();
    (n > 0.0).then(|| v / n)
}

fn decay_checks(full: &Mat, projector: &Mat, reports: &[ConditionReport]) -> Result<Vec<DecayCheck>, CliError> {
    let Some(x0) = stable_probe(projector) else { return Ok(Vec::new()) };
    let mut out = Vec::new();
    for r in reports {
        let Some((m, rate)) = r.decay_pair() else { continue };
        let t = (20.0 / rate).min(200.0);
        let grid = TimeGrid::uniform(0.0, t, 1000)?;
        let traj = stable_flow(full, projector, &x0, &grid)?;
        let measured = measure_decay(&traj).map(|f| f.rate).unwrap_or(f64::INFINITY);
        let ratio = roughness_core::oracle::envelope_ratio(&traj, m, rate, 20);
        out.push(DecayCheck { id: r.id, m_tilde: m, rate, measured_rate: measured, envelope_ratio: ratio });
    }
    Ok(out)
}

fn lyapunov_summary(sys: &BlockSystem, agg: &AggregateDichotomy) -> Result<Outcome<LyapunovSummary>, CliError> {
    Ok(outcome(lyapunov_certificate(sys, agg))?.map(|c| LyapunovSummary {
        residual: c.assembled_residual(sys),
        block_residual: c.blocks.iter().map(|b| b.residual).fold(0.0, f64::max),
        cross_check: c.blocks.iter().map(|b| b.cross_check).fold(0.0, f64::max),
        bound_excess: c.blocks.iter().map(|b| spectral_norm(&b.c) - b.bound).fold(f64::NEG_INFINITY, f64::max),
        positivity_margin: c.positivity_margin,
        derivative_margin: c.derivative_margin,
        symmetric_projectors: c.symmetric_projectors,
        satisfied: c.satisfied,
        reports: c.reports,
    }))
}

/// Grid for nonlinear solutions: the settings when given, otherwise long
/// enough for the slowest rate to decay and fine enough for the residual.
pub fn nonlinear_grid(sys: &BlockSystem, agg: &AggregateDichotomy, settings: &Settings) -> Result<TimeGrid, CliError> {
    let t = settings.t_infinity.unwrap_or_else(|| (25.0 / agg.lambda).min(60.0));
    let full = spectral_norm(&assemble_full(sys)).max(1.0);
    let h = settings.grid_step.unwrap_or((0.005f64).min(0.05 / full));
    let steps = (t / h).ceil().max(2.0) as usize;
    Ok(TimeGrid::uniform(0.0, t, steps)?)
}

fn nonlinear_section(
    file: &SystemFile,
    sys: &BlockSystem,
    agg: &AggregateDichotomy,
    pd: Option<&PerturbedDichotomy>,
    settings: &Settings,
) -> Result<Option<NonlinearSection>, CliError> {
    let Some(split) = file.split(sys)? else { return Ok(None) };
    let nl = file.nonlinearity.as_ref().expect("split implies a nonlinearity");
    let spec = split.combined();
    let sampling = match spec.validate(settings.samples, settings.seed) {
        Ok(s) => Ok(s),
        Err(e @ Error::NonlinearityClass { .. }) => Err(e.to_string()),
        Err(e) => return Err(e.into()),
    };
    let mut reports = Vec::new();
    if file.runs("nonlinear") {
        reports.push(check_existence(agg, &spec));
        reports.extend(certify_decay(agg, &spec));
        if let Err(reason) = &sampling {
            for r in &mut reports {
                r.reject(format!("declared constants fail sampling: {reason}"));
            }
        }
    }
    let split_report = match (file.runs("split"), pd) {
        (false, _) => None,
        (true, None) => Some(Err("the linear part has no certified dichotomy".to_string())),
        (true, Some(pd)) => Some(outcome(certify_split(&split, pd))?.map(|mut r| {
            if let Err(reason) = &sampling {
                r.reject(format!("declared constants fail sampling: {reason}"));
            }
            r
        })),
    };
    let contraction = outcome(nonlinear_contraction(agg, &spec))?;

    let radius = reports
        .iter()
        .filter(|r| r.id != ConditionId::Confinement && r.satisfied)
        .find_map(|r| r.get("initial_radius"));
    let solution = match radius {
        Some(r) if r.is_finite() && r > 0.0 => {
            let g = GreensFunction::uncoupled(sys, agg)?;
            let grid = nonlinear_grid(sys, agg, settings)?;
            let basis = projector_range_basis(&agg.p_minus);
            if basis.ncols() == 0 {
                None
            } else {
                let c = basis.column(0) * (0.5 * r);
                let run = solve_nonlinear_halfline(agg, &g, &spec, &c.into_owned(), &grid, &settings.linear_options());
                let run = match run {
                    Err(e @ Error::ConfinementViolated { .. }) => Ok(Err(e.to_string())),
                    other => outcome(other),
                }?;
                Some(run.map(|sol| {
                    let a = sys.diagonal();
                    let f = |x: &Vector| &a * x + spec.apply(x);
                    NonlinearCheck {
                        initial_norm: 0.5 * r,
                        sup_norm: sol.trajectory.norm_sup(),
                        radius: spec.radius,
                        ode_residual: ode_residual(&sol.trajectory, &f),
                        iterations: sol.increments.len(),
                        measured_rate: measure_decay(&sol.trajectory).ok().map(|d| d.rate),
                    }
                }))
            }
        }
        _ => None,
    };
    Ok(Some(NonlinearSection {
        kind: nl.kind.clone(),
        radius: nl.rho,
        bounds: spec.bounds.clone(),
        lipschitz: spec.lipschitz.clone(),
        sampling,
        contraction,
        reports,
        split: split_report,
        solution,
    }))
}

/// Runs every requested stage on a validated file.
pub fn analyze(file: &SystemFile, settings: &Settings) -> Result<Analysis, CliError> {
    let sys = file.system()?;
    let agg = extract_system(&sys, &settings.extract_options())?;
    let norms = sys.coupling_norms();
    let blocks = sys
        .blocks()
        .iter()
        .zip(&agg.per_block)
        .enumerate()
        .map(|(i, (a, d))| BlockRow {
            label: file.blocks[i].label.clone().unwrap_or_else(|| format!("block {}", i + 1)),
            dim: d.dim(),
            stable_dim: d.stable_dim,
            m: d.m,
            alpha: d.alpha,
            n: d.n,
            beta: d.beta,
            normal: is_normal(a, 1e-12),
        })
        .collect();

    let needs_projectors = file.runs("wholeline") || file.runs("split") || file.runs("decay") || file.runs("decay_refined");
    let pd = if needs_projectors { Some(outcome(perturb(&sys, &agg, &settings.linear_options()))?) } else { None };
    let pd_ok = pd.as_ref().and_then(|p| p.as_ref().ok());
    let mut reports = linear_reports(&agg, &norms, pd_ok.map(|p| p.splitting_norm));
    reports.retain(|r| {
        let stage = match r.id {
            ConditionId::HalfLineSum | ConditionId::HalfLineMax => "halfline",
            ConditionId::NegHalfLineSum | ConditionId::NegHalfLineMax => "negative_halfline",
            ConditionId::DecaySum | ConditionId::DecayMax => "decay",
            ConditionId::DecayRefinedSum | ConditionId::DecayRefinedMax => "decay_refined",
            _ => "wholeline",
        };
        file.runs(stage)
    });

    let full = assemble_full(&sys);
    let (spectral, diagnostic) = match spectral_dichotomy(&full, settings.margin) {
        Ok(e) => (Some(e), None),
        Err(e @ Error::NotHyperbolic { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let projector_distance = match (pd_ok, &spectral) {
        (Some(p), Some(e)) => Some(spectral_norm(&(&p.p_tilde_minus - &e.stable_projector))),
        _ => None,
    };
    let rank_match = spectral.as_ref().map(|e| e.stable_rank == agg.stable_rank());
    let projector = pd_ok.map(|p| p.p_tilde_minus.clone()).or_else(|| spectral.as_ref().map(|e| e.stable_projector.clone()));
    let decay = match projector {
        Some(p) if spectral.is_some() => decay_checks(&full, &p, &reports)?,
        _ => Vec::new(),
    };

    let perturbed = pd.as_ref().map(|p| {
        p.as_ref()
            .map(|p| PerturbedSummary {
                stable_rank: agg.stable_rank(),
                unstable_rank: sys.total_dim() - agg.stable_rank(),
                z_norm: spectral_norm(&p.z),
                z_prime_norm: spectral_norm(&p.z_prime),
                splitting_norm: p.splitting_norm,
                idempotence_defect: spectral_norm(&(&p.p_tilde_minus * &p.p_tilde_minus - &p.p_tilde_minus)),
                constants: p.constants,
            })
            .map_err(Clone::clone)
    });
    let lyapunov = if file.runs("lyapunov") { Some(lyapunov_summary(&sys, &agg)?) } else { None };
    let nonlinear = if file.runs("nonlinear") || file.runs("split") { nonlinear_section(file, &sys, &agg, pd_ok, settings)? } else { None };

    use ConditionId::*;
    let mut verdicts = BTreeMap::new();
    if file.runs("halfline") {
        verdicts.insert("halfline", any_holds(&reports, &[HalfLineSum, HalfLineMax]));
    }
    if file.runs("negative_halfline") {
        verdicts.insert("negative_halfline", any_holds(&reports, &[NegHalfLineSum, NegHalfLineMax]));
    }
    if file.runs("decay") || file.runs("decay_refined") {
        verdicts.insert("decay", reports.iter().any(|r| r.decay_pair().is_some()));
    }
    if file.runs("wholeline") {
        verdicts.insert("wholeline", any_holds(&reports, &[WholeLine]));
    }
    if let Some(l) = &lyapunov {
        verdicts.insert("lyapunov", l.as_ref().is_ok_and(|l| l.satisfied));
    }
    verdicts.insert("oracle_hyperbolic", spectral.is_some());
    if let Some(nl) = &nonlinear {
        if file.runs("nonlinear") {
            verdicts.insert("nonlinear_existence", any_holds(&nl.reports, &[NonlinearExistence]));
            verdicts.insert("nonlinear_decay", nl.reports.iter().any(|r| r.decay_pair().is_some()));
        }
        if let Some(s) = &nl.split {
            verdicts.insert("split", s.as_ref().is_ok_and(|r| r.satisfied));
        }
    }

    Ok(Analysis {
        digest: digest(file),
        settings: *settings,
        blocks,
        aggregate: agg,
        norms,
        reports,
        perturbed,
        lyapunov,
        oracle: OracleComparison { spectral, diagnostic, projector_distance, rank_match, decay },
        nonlinear,
        verdicts,
    })
}
