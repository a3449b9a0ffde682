//! Human and machine renderings of reports. Machine output is JSON with
//! sorted keys; non-finite numbers become the strings `inf`, `-inf`, `nan`.

use std::fmt::Write as _;

use serde_json::{json, Map, Value};

use roughness_core::nonlinear::SamplingSummary;
use roughness_core::report::ConditionReport;

use crate::error::CliError;
use crate::pipeline::{Analysis, Outcome};
use crate::solve::Solution;
use crate::sweep::{SweepResult, SWEPT};

pub const FORMAT_VERSION: &str = "1";

pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|x| num(*x)).collect())
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

pub fn report_json(r: &ConditionReport) -> Value {
    let derived: Map<String, Value> = r.derived.iter().map(|(k, v)| (k.to_string(), num(*v))).collect();
    let mut o = json!({
        "id": r.id.as_str(),
        "lhs": num(r.lhs),
        "threshold": num(r.threshold),
        "strict": r.strict,
        "satisfied": r.satisfied,
        "derived": derived,
        "notes": r.notes,
    });
    if !r.parts.is_empty() {
        o["parts"] = Value::Array(r.parts.iter().map(report_json).collect());
    }
    o
}

fn outcome_json<T>(o: &Outcome<T>, f: impl Fn(&T) -> Value) -> Value {
    match o {
        Ok(v) => f(v),
        Err(reason) => json!({ "unavailable": reason }),
    }
}

fn sampling_json(s: &SamplingSummary) -> Value {
    json!({
        "samples": s.samples,
        "seed": s.seed,
        "bound_ratio": nums(&s.bound_ratio),
        "lipschitz_ratio": nums(&s.lipschitz_ratio),
    })
}

pub fn analysis_json(a: &Analysis) -> Value {
    let s = &a.settings;
    let agg = &a.aggregate;
    let blocks: Vec<Value> = a
        .blocks
        .iter()
        .map(|b| {
            json!({
                "label": b.label, "dim": b.dim, "stable_dim": b.stable_dim,
                "M": num(b.m), "alpha": num(b.alpha), "N": num(b.n), "beta": num(b.beta), "normal": b.normal,
            })
        })
        .collect();
    let o = &a.oracle;
    let spectral = o.spectral.as_ref().map_or(Value::Null, |e| {
        json!({
            "stable_rank": e.stable_rank,
            "stable_rate": num(e.stable_rate),
            "unstable_rate": num(e.unstable_rate),
            "fitted_M": num(e.fitted_m),
            "eigenvalues": e.eigenvalues.iter().map(|z| json!([num(z.re), num(z.im)])).collect::<Vec<_>>(),
        })
    });
    let decay: Vec<Value> = o
        .decay
        .iter()
        .map(|d| {
            json!({
                "condition": d.id.as_str(),
                "certified_M": num(d.m_tilde),
                "certified_rate": num(d.rate),
                "measured_rate": num(d.measured_rate),
                "envelope_ratio": num(d.envelope_ratio),
                "sound": d.envelope_ratio <= 1.0 + 1e-6 && d.rate <= d.measured_rate * (1.0 + 1e-6),
            })
        })
        .collect();
    let mut out = json!({
        "format_version": FORMAT_VERSION,
        "digest": a.digest,
        "settings": {
            "margin": num(s.margin), "tolerance": num(s.tol), "T_infinity": opt(s.t_infinity),
            "grid_step": opt(s.grid_step), "seed": s.seed, "samples": s.samples,
        },
        "blocks": blocks,
        "aggregate": {
            "K1": num(agg.k1), "K2": num(agg.k2), "Lambda": num(agg.lambda),
            "M_sum": num(agg.m_sum), "N_sum": num(agg.n_sum), "M_max": num(agg.m_max), "N_max": num(agg.n_max),
            "weight_sum": num(agg.weight_sum()), "stable_rank": agg.stable_rank(),
        },
        "coupling": { "sum": num(a.norms.sum), "max": num(a.norms.max), "full": num(a.norms.full) },
        "conditions": a.reports.iter().map(report_json).collect::<Vec<_>>(),
        "oracle": {
            "hyperbolic": o.spectral.is_some(),
            "diagnostic": o.diagnostic,
            "spectral": spectral,
            "projector_distance": opt(o.projector_distance),
            "rank_match": o.rank_match,
            "decay": decay,
        },
        "verdicts": a.verdicts,
    });
    if let Some(p) = &a.perturbed {
        out["perturbed"] = outcome_json(p, |p| {
            json!({
                "stable_rank": p.stable_rank, "unstable_rank": p.unstable_rank,
                "Z_norm": num(p.z_norm), "Z_prime_norm": num(p.z_prime_norm),
                "splitting_norm": num(p.splitting_norm), "idempotence_defect": num(p.idempotence_defect),
                "constants": p.constants.map_or(Value::Null, |c| json!({
                    "M1": num(c.m1), "M2": num(c.m2), "mu": num(c.mu), "source": c.source.as_str(),
                })),
            })
        });
    }
    if let Some(l) = &a.lyapunov {
        out["lyapunov"] = outcome_json(l, |l| {
            json!({
                "residual": num(l.residual), "block_residual": num(l.block_residual),
                "cross_check": num(l.cross_check), "bound_excess": num(l.bound_excess),
                "positivity_margin": num(l.positivity_margin), "derivative_margin": num(l.derivative_margin),
                "symmetric_projectors": l.symmetric_projectors, "satisfied": l.satisfied,
                "conditions": l.reports.iter().map(report_json).collect::<Vec<_>>(),
            })
        });
    }
    if let Some(nl) = &a.nonlinear {
        out["nonlinear"] = json!({
            "kind": nl.kind,
            "rho": num(nl.radius),
            "T": nums(&nl.bounds),
            "L": nums(&nl.lipschitz),
            "sampling": outcome_json(&nl.sampling, sampling_json),
            "contraction": outcome_json(&nl.contraction, |q| num(*q)),
            "conditions": nl.reports.iter().map(report_json).collect::<Vec<_>>(),
            "split": nl.split.as_ref().map_or(Value::Null, |s| outcome_json(s, report_json)),
            "solution": nl.solution.as_ref().map_or(Value::Null, |s| outcome_json(s, |c| json!({
                "initial_norm": num(c.initial_norm), "sup_norm": num(c.sup_norm), "rho": num(c.radius),
                "confined": c.sup_norm <= c.radius, "ode_residual": num(c.ode_residual),
                "iterations": c.iterations, "measured_rate": opt(c.measured_rate),
            }))),
        });
    }
    out
}

fn fmt(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6e}")
    } else {
        format!("{x}")
    }
}

fn report_lines(out: &mut String, r: &ConditionReport, depth: usize) {
    let pad = "  ".repeat(depth);
    let verdict = if r.satisfied { "holds" } else { "fails" };
    let op = if r.strict { "<" } else { "<=" };
    if r.parts.is_empty() {
        let _ = writeln!(out, "{pad}{:<28} {verdict:<6} {} {op} {}", r.id.as_str(), fmt(r.lhs), fmt(r.threshold));
    } else {
        let _ = writeln!(out, "{pad}{:<28} {verdict}", r.id.as_str());
    }
    for (k, v) in &r.derived {
        let _ = writeln!(out, "{pad}    {k} = {}", fmt(*v));
    }
    for n in &r.notes {
        let _ = writeln!(out, "{pad}    note: {n}");
    }
    for p in &r.parts {
        report_lines(out, p, depth + 1);
    }
}

pub fn analysis_human(a: &Analysis) -> String {
    let mut out = String::new();
    let s = &a.settings;
    let _ = writeln!(out, "system {}", a.digest);
    let _ = writeln!(out, "margin {}  tolerance {}  seed {}", s.margin, fmt(s.tol), s.seed);
    let _ = writeln!(out, "\nblocks");
    let _ = writeln!(out, "  {:<16} {:>4} {:>6} {:>13} {:>13} {:>13} {:>13}", "label", "dim", "stable", "M", "alpha", "N", "beta");
    for b in &a.blocks {
        let _ = writeln!(
            out,
            "  {:<16} {:>4} {:>6} {:>13} {:>13} {:>13} {:>13}",
            b.label,
            b.dim,
            b.stable_dim,
            fmt(b.m),
            fmt(b.alpha),
            fmt(b.n),
            fmt(b.beta)
        );
    }
    let _ = writeln!(out, "coupling norms: sum {}  max {}  full {}", fmt(a.norms.sum), fmt(a.norms.max), fmt(a.norms.full));
    let _ = writeln!(out, "\nconditions");
    for r in &a.reports {
        report_lines(&mut out, r, 1);
    }
    match &a.perturbed {
        Some(Ok(p)) => {
            let _ = writeln!(out, "\nperturbed projectors");
            let _ = writeln!(out, "  ranks {} stable / {} unstable", p.stable_rank, p.unstable_rank);
            let _ = writeln!(out, "  |Z| = {}  |Z'| = {}  |Z + Z'| = {}", fmt(p.z_norm), fmt(p.z_prime_norm), fmt(p.splitting_norm));
            if let Some(c) = p.constants {
                let _ = writeln!(out, "  decay M1 = {}  M2 = {}  mu = {} ({})", fmt(c.m1), fmt(c.m2), fmt(c.mu), c.source);
            }
        }
        Some(Err(reason)) => {
            let _ = writeln!(out, "\nperturbed projectors: not computed ({reason})");
        }
        None => {}
    }
    match &a.lyapunov {
        Some(Ok(l)) => {
            let _ = writeln!(out, "\nquadratic form");
            let _ = writeln!(
                out,
                "  residual {}  cross-check {}  bound excess {}",
                fmt(l.residual),
                fmt(l.cross_check),
                fmt(l.bound_excess)
            );
            for r in &l.reports {
                report_lines(&mut out, r, 1);
            }
        }
        Some(Err(reason)) => {
            let _ = writeln!(out, "\nquadratic form: not computed ({reason})");
        }
        None => {}
    }
    if let Some(nl) = &a.nonlinear {
        let _ = writeln!(out, "\nnonlinearity {} in the ball of radius {}", nl.kind, nl.radius);
        match &nl.sampling {
            Ok(s) => {
                let _ = writeln!(out, "  sampling ok ({} samples, seed {})", s.samples, s.seed);
            }
            Err(e) => {
                let _ = writeln!(out, "  sampling FAILED: {e}");
            }
        }
        for r in &nl.reports {
            report_lines(&mut out, r, 1);
        }
        match &nl.split {
            Some(Ok(r)) => report_lines(&mut out, r, 1),
            Some(Err(reason)) => {
                let _ = writeln!(out, "  split: not computed ({reason})");
            }
            None => {}
        }
        match &nl.solution {
            Some(Ok(c)) => {
                let _ = writeln!(
                    out,
                    "  solution from |c| = {}: sup |x| = {} (rho {}), ODE residual {}",
                    fmt(c.initial_norm),
                    fmt(c.sup_norm),
                    fmt(c.radius),
                    fmt(c.ode_residual)
                );
            }
            Some(Err(e)) => {
                let _ = writeln!(out, "  solution: {e}");
            }
            None => {}
        }
    }
    let o = &a.oracle;
    let _ = writeln!(out, "\noracle");
    match &o.spectral {
        Some(e) => {
            let _ = writeln!(
                out,
                "  hyperbolic, stable rank {}, rates {} / {}",
                e.stable_rank,
                fmt(e.stable_rate),
                fmt(e.unstable_rate)
            );
        }
        None => {
            let _ = writeln!(out, "  not hyperbolic: {}", o.diagnostic.as_deref().unwrap_or("?"));
        }
    }
    if let Some(d) = o.projector_distance {
        let _ = writeln!(out, "  |P~ - spectral| = {}", fmt(d));
    }
    for d in &o.decay {
        let _ = writeln!(
            out,
            "  {:<28} certified rate {}  measured {}  envelope ratio {}",
            d.id.as_str(),
            fmt(d.rate),
            fmt(d.measured_rate),
            fmt(d.envelope_ratio)
        );
    }
    let _ = writeln!(out, "\nverdicts");
    for (k, v) in &a.verdicts {
        let _ = writeln!(out, "  {k:<20} {}", if *v { "yes" } else { "no" });
    }
    out
}

pub fn solution_json(s: &Solution, files: Option<(&str, &str)>) -> Value {
    json!({
        "format_version": FORMAT_VERSION,
        "certificate": s.certificate.as_str(),
        "points": s.times.len(),
        "horizon": num(*s.times.last().unwrap_or(&0.0)),
        "sup_norm": num(s.sup_norm()),
        "envelope": s.envelope.map_or(Value::Null, |(m, r)| json!({ "M": num(m), "rate": num(r) })),
        "envelope_ratio": opt(s.envelope_ratio()),
        "q": num(s.q),
        "iterations": s.iterations,
        "residual": num(s.residual),
        "trajectory_file": files.map(|f| f.0),
        "plot_file": files.map(|f| f.1),
    })
}

pub fn solution_human(s: &Solution, files: Option<(&str, &str)>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "certified by {}", s.certificate);
    let _ = writeln!(out, "{} points on [0, {}]", s.times.len(), fmt(*s.times.last().unwrap_or(&0.0)));
    let _ = writeln!(out, "{} Picard iterations, q = {}, residual {}", s.iterations, fmt(s.q), fmt(s.residual));
    let _ = writeln!(out, "sup |x| = {}", fmt(s.sup_norm()));
    if let Some((m, r)) = s.envelope {
        let _ = writeln!(out, "envelope {} exp(-{} t) |x(0)|", fmt(m), fmt(r));
    }
    if let Some(r) = s.envelope_ratio() {
        let _ = writeln!(out, "largest |x(t)| / envelope = {}", fmt(r));
    }
    if let Some((t, p)) = files {
        let _ = writeln!(out, "wrote {t}\nwrote {p}");
    }
    out
}

pub fn sweep_json(s: &SweepResult) -> Value {
    let first: Map<String, Value> = SWEPT.iter().map(|id| (id.as_str().to_string(), opt(s.first_failure(*id)))).collect();
    json!({
        "format_version": FORMAT_VERSION,
        "uncoupled_rank": s.uncoupled_rank,
        "first_failure": first,
        "hyperbolic_until": opt(s.hyperbolic_until()),
        "rank_changes": s.rank_changes().iter().map(|(l, a, b)| json!({ "lambda": num(*l), "from": a, "to": b })).collect::<Vec<_>>(),
        "rows": s.rows.iter().map(|r| json!({
            "lambda": num(r.lambda),
            "holds": SWEPT.iter().zip(&r.holds).map(|(id, h)| (id.as_str().to_string(), Value::Bool(*h))).collect::<Map<_, _>>(),
            "oracle_hyperbolic": r.oracle_hyperbolic,
            "oracle_rank": r.oracle_rank,
            "rank_match": r.rank_match,
            "stable_rate": num(r.stable_rate),
        })).collect::<Vec<_>>(),
    })
}

pub fn sweep_human(s: &SweepResult) -> String {
    let mut out = s.table();
    let _ = writeln!(out);
    for id in SWEPT {
        match s.first_failure(id) {
            Some(l) => {
                let _ = writeln!(out, "{:<22} first fails at {l:.6}", id.as_str());
            }
            None => {
                let _ = writeln!(out, "{:<22} holds throughout", id.as_str());
            }
        }
    }
    match s.hyperbolic_until() {
        Some(l) => {
            let _ = writeln!(out, "oracle: hyperbolic with the uncoupled rank up to {l:.6}");
        }
        None => {
            let _ = writeln!(out, "oracle: not hyperbolic with the uncoupled rank at the start");
        }
    }
    for (l, a, b) in s.rank_changes() {
        let show = |r: Option<usize>| r.map_or("none (eigenvalues on the axis)".to_string(), |k| k.to_string());
        let _ = writeln!(out, "oracle: stable rank changes from {} to {} at {l:.6}", show(a), show(b));
    }
    out
}

pub fn error_json(e: &CliError) -> Value {
    json!({ "error": { "kind": e.kind(), "exit_code": e.exit_code(), "message": e.to_string() } })
}
