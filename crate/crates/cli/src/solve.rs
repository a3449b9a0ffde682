//! `solve`: bounded solutions on a grid, written as columnar text.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use roughness_core::dichotomy::{extract_system, AggregateDichotomy};
use roughness_core::greens::GreensFunction;
use roughness_core::linalg::{projector_range_basis, Vector};
use roughness_core::nonlinear::{certify_decay, check_existence, solve_bounded_nonlinear, solve_nonlinear_halfline};
use roughness_core::quadrature::TimeGrid;
use roughness_core::report::{ConditionId, ConditionReport};
use roughness_core::roughness::{check_halfline, estimate_decay, estimate_decay_refined, halfline_grid_size, solve_bounded_halfline};

use crate::error::CliError;
use crate::format::SystemFile;
use crate::pipeline::{nonlinear_grid, Settings};

/// Initial data in the stable subspace of the uncoupled system.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Zero,
    /// Column `k` (from 1) of an orthonormal basis of the stable subspace.
    Basis(usize),
    Vector(Vec<f64>),
}

impl FromStr for InitialData {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        if s == "zero" {
            return Ok(Self::Zero);
        }
        if let Some(k) = s.strip_prefix("basis:") {
            return match k.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(Self::Basis(k)),
                _ => Err(CliError::Validation(format!("basis index {k:?} must be a positive integer"))),
            };
        }
        s.split(',')
            .map(|v| v.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<_>>>()
            .map(Self::Vector)
            .ok_or_else(|| CliError::Validation(format!("initial data {s:?} is not zero, basis:K or a comma-separated vector")))
    }
}

impl InitialData {
    fn resolve(&self, agg: &AggregateDichotomy) -> Result<Vector, CliError> {
        let d = agg.p_minus.nrows();
        match self {
            Self::Zero => Ok(Vector::zeros(d)),
            Self::Basis(k) => {
                let basis = projector_range_basis(&agg.p_minus);
                if *k > basis.ncols() {
                    return Err(CliError::Validation(format!("basis:{k} requested but the stable subspace has dimension {}", basis.ncols())));
                }
                Ok(basis.column(k - 1).into_owned())
            }
            Self::Vector(v) if v.len() == d => Ok(Vector::from_column_slice(v)),
            Self::Vector(v) => Err(CliError::Validation(format!("initial vector has {} entries, the system has dimension {d}", v.len()))),
        }
    }
}

/// A solved trajectory and the certificate that admitted it.
#[derive(Debug, Clone)]
pub struct Solution {
    pub certificate: ConditionId,
    pub times: Vec<f64>,
    pub values: Vec<Vector>,
    /// `(M~, rate)`; the envelope is `M~ e^{-rate t} |x(0)|`.
    pub envelope: Option<(f64, f64)>,
    pub q: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl Solution {
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest `|x(t)| / (M~ e^{-rate t} |x(0)|)`; `None` without an envelope
    /// or for the zero solution.
    pub fn envelope_ratio(&self) -> Option<f64> {
        let (m, rate) = self.envelope?;
        let x0 = self.values.first()?.norm();
        (x0 > 0.0).then(|| {
            self.times
                .iter()
                .zip(&self.values)
                .map(|(t, v)| v.norm() / (m * (-rate * (t - self.times[0])).exp() * x0))
                .fold(0.0, f64::max)
        })
    }

    /// `t x_1 ... x_d`
    pub fn trajectory_table(&self) -> String {
        let mut out = String::from("t");
        for k in 0..self.values.first().map_or(0, |v| v.len()) {
            let _ = write!(out, "\tx{}", k + 1);
        }
        out.push('\n');
        for (t, v) in self.times.iter().zip(&self.values) {
            let _ = write!(out, "{t:.6e}");
            for x in v.iter() {
                let _ = write!(out, "\t{x:.12e}");
            }
            out.push('\n');
        }
        out
    }

    /// `t log10|x| log10(envelope)`, with `nan` where undefined.
    pub fn plot_table(&self) -> String {
        let x0 = self.values.first().map_or(0.0, |v| v.norm());
        let mut out = String::from("t\tlog10_norm\tlog10_envelope\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            let env = match self.envelope {
                Some((m, rate)) if x0 > 0.0 => (m * x0).log10() - rate * (t - self.times[0]) / std::f64::consts::LN_10,
                _ => f64::NAN,
            };
            let _ = writeln!(out, "{t:.6e}\t{:.9e}\t{env:.9e}", v.norm().log10());
        }
        out
    }

    /// Writes `PREFIX.traj.tsv` and `PREFIX.plot.tsv`.
    pub fn write(&self, prefix: &Path) -> Result<(PathBuf, PathBuf), CliError> {
        let with = |ext: &str| {
            let mut p = prefix.as_os_str().to_owned();
            p.push(ext);
            PathBuf::from(p)
        };
        let (traj, plot) = (with(".traj.tsv"), with(".plot.tsv"));
        for (path, body) in [(&traj, self.trajectory_table()), (&plot, self.plot_table())] {
            std::fs::write(path, body).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        }
        Ok((traj, plot))
    }
}

fn refuse(reports: &[ConditionReport], what: &str) -> CliError {
    let failing: Vec<String> = reports
        .iter()
        .map(|r| {
            let mut s = format!("{} ({:.6e} {} {:.6e})", r.id, r.lhs, if r.strict { "<" } else { "<=" }, r.threshold);
            if let Some(n) = r.notes.first() {
                let _ = write!(s, ": {n}");
            }
            s
        })
        .collect();
    CliError::Refused(format!("{what} is not certified; failing: {}", failing.join(", ")))
}

/// First report with a finite decay pair.
fn envelope_from(reports: &[ConditionReport]) -> Option<(ConditionId, (f64, f64))> {
    reports.iter().find_map(|r| r.decay_pair().map(|p| (r.id, p)))
}

/// Solves the file's system from `initial` over `[0, horizon]`. Refuses
/// unless the relevant condition holds.
pub fn solve(file: &SystemFile, settings: &Settings, initial: &InitialData, horizon: Option<f64>) -> Result<Solution, CliError> {
    if let Some(h) = horizon {
        if !(h > 0.0 && h.is_finite()) {
            return Err(CliError::Validation(format!("horizon must be positive, got {h}")));
        }
    }
    let sys = file.system()?;
    let agg = extract_system(&sys, &settings.extract_options())?;
    let c = initial.resolve(&agg)?;
    let g = GreensFunction::uncoupled(&sys, &agg)?;
    let opts = settings.linear_options();

    if let Some(split) = file.split(&sys)? {
        let spec = split.combined();
        spec.validate(settings.samples, settings.seed)?;
        let grid = match horizon {
            Some(t) => {
                let h = settings.grid_step.unwrap_or(0.005);
                TimeGrid::uniform(0.0, t, (t / h).ceil().max(2.0) as usize)?
            }
            None => nonlinear_grid(&sys, &agg, settings)?,
        };
        if c.norm() == 0.0 {
            let existence = check_existence(&agg, &spec);
            if !existence.satisfied {
                return Err(refuse(&existence.parts, "existence of a bounded solution"));
            }
            let sol = solve_bounded_nonlinear(&agg, &g, &spec, &grid, &opts)?;
            return Ok(Solution {
                certificate: ConditionId::NonlinearExistence,
                times: grid.points().to_vec(),
                values: sol.trajectory.values().to_vec(),
                envelope: None,
                q: sol.q,
                iterations: sol.increments.len(),
                residual: sol.residual,
            });
        }
        let decay = certify_decay(&agg, &spec);
        let Some((id, pair)) = envelope_from(&decay) else {
            return Err(refuse(&decay, "decay of the nonlinear system"));
        };
        let radius = decay.iter().find(|r| r.id == id).and_then(|r| r.get("initial_radius")).unwrap_or(0.0);
        if c.norm() > radius {
            return Err(CliError::Refused(format!(
                "|c| = {:.6e} exceeds the certified initial radius {radius:.6e} of {id}",
                c.norm()
            )));
        }
        let sol = solve_nonlinear_halfline(&agg, &g, &spec, &c, &grid, &opts)?;
        return Ok(Solution {
            certificate: id,
            times: grid.points().to_vec(),
            values: sol.trajectory.values().to_vec(),
            envelope: Some(pair),
            q: sol.q,
            iterations: sol.increments.len(),
            residual: sol.residual,
        });
    }

    let norms = sys.coupling_norms();
    let halfline = check_halfline(&agg, &norms);
    let Some(cert) = halfline.iter().find(|r| r.satisfied) else {
        return Err(refuse(&halfline, "existence of bounded solutions on the half-line"));
    };
    let mut decay = estimate_decay(&agg, &norms);
    decay.extend(estimate_decay_refined(&agg, &norms));
    let (t, steps) = halfline_grid_size(&sys, &agg, &opts)?;
    let grid = match horizon {
        Some(h) => TimeGrid::uniform(0.0, h, ((h / t) * steps as f64).ceil().max(2.0) as usize)?,
        None => TimeGrid::uniform(0.0, t, steps)?,
    };
    let sol = solve_bounded_halfline(&sys, &agg, &g, &c, &grid, &opts)?;
    Ok(Solution {
        certificate: cert.id,
        times: grid.points().to_vec(),
        values: sol.trajectory.values().to_vec(),
        envelope: envelope_from(&decay).map(|(_, p)| p),
        q: sol.q,
        iterations: sol.increments.len(),
        residual: sol.residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_initial_data() {
        assert_eq!("zero".parse::<InitialData>().unwrap(), InitialData::Zero);
        assert_eq!("basis:2".parse::<InitialData>().unwrap(), InitialData::Basis(2));
        assert_eq!("1, -0.5".parse::<InitialData>().unwrap(), InitialData::Vector(vec![1.0, -0.5]));
        assert!("basis:0".parse::<InitialData>().is_err());
        assert!("1,nan".parse::<InitialData>().is_err());
        assert!("first".parse::<InitialData>().is_err());
    }
}
