//! System files: JSON with a schema version, blocks as row lists and
//! couplings indexed from 1.

use std::path::Path;

use serde::{Deserialize, Serialize};

use roughness_core::linalg::{BlockSystem, Mat};
use roughness_core::nonlinear::{CouplingNonlinearity, NonlinearitySpec, Profile, SplitNonlinearity};

use crate::error::CliError;

type Couplings = Vec<((usize, usize), Mat)>;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub schema_version: String,
    pub blocks: Vec<BlockEntry>,
    #[serde(default)]
    pub couplings: Vec<CouplingEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<NonlinearityEntry>,
    #[serde(default)]
    pub analysis: AnalysisEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub matrix: Vec<Vec<f64>>,
}

/// `A_ij` with `to = i` and `from = j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingEntry {
    pub from: usize,
    pub to: usize,
    pub matrix: Vec<Vec<f64>>,
}

/// A built-in remainder `R~_i(x) = gain sum_j W_ij phi(x_j)` added to the
/// linear couplings. Weights default to the coupling matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityEntry {
    pub kind: String,
    #[serde(default)]
    pub params: NonlinearityParams,
    pub rho: f64,
    /// Claimed bounds `T_i`; computed from the profile when absent.
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<f64>>,
    /// Claimed Lipschitz constants `L_i`.
    #[serde(default, rename = "L", skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityParams {
    #[serde(default = "one")]
    pub gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<CouplingEntry>>,
}

impl Default for NonlinearityParams {
    fn default() -> Self {
        Self { gain: 1.0, weights: None }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, rename = "T_infinity", skip_serializing_if = "Option::is_none")]
    pub t_infinity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Sample count of the nonlinearity check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Stages to run; all when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub which_theorems: Vec<String>,
}

/// Stages that `which_theorems` can select.
pub const STAGES: [&str; 8] =
    ["halfline", "negative_halfline", "decay", "decay_refined", "wholeline", "lyapunov", "nonlinear", "split"];

pub fn read_system_file(path: &Path) -> Result<SystemFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    parse_system_file(&text)
}

pub fn parse_system_file(text: &str) -> Result<SystemFile, CliError> {
    let file: SystemFile = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("malformed system file: {e}")))?;
    file.validate()?;
    Ok(file)
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Mat, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 {
        return Err(CliError::Validation(format!("{what} is empty")));
    }
    if let Some(k) = rows.iter().position(|row| row.len() != c) {
        return Err(CliError::Validation(format!("{what}: row {} has {} entries, expected {c}", k + 1, rows[k].len())));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Validation(format!("{what} has non-finite entries")));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

fn positive(v: Option<f64>, what: &str) -> Result<(), CliError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(CliError::Validation(format!("{what} must be positive, got {x}"))),
        _ => Ok(()),
    }
}

impl SystemFile {
    /// Shape and parameter checks; nothing numerical happens before these pass.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "unsupported schema_version {:?}, expected {SCHEMA_VERSION:?}",
                self.schema_version
            )));
        }
        let sys = self.system()?;
        if let Some(nl) = &self.nonlinearity {
            if Profile::from_name(&nl.kind).is_none() {
                let known: Vec<&str> = Profile::ALL.iter().map(|p| p.name()).collect();
                return Err(CliError::Validation(format!("unknown nonlinearity {:?}; known: {}", nl.kind, known.join(", "))));
            }
            positive(Some(nl.rho), "rho")?;
            if !nl.params.gain.is_finite() {
                return Err(CliError::Validation("gain must be finite".into()));
            }
            for (name, v) in [("T", &nl.bounds), ("L", &nl.lipschitz)] {
                if let Some(v) = v {
                    if v.len() != sys.n() {
                        return Err(CliError::Validation(format!("{name} has {} entries for {} blocks", v.len(), sys.n())));
                    }
                    if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                        return Err(CliError::Validation(format!("{name} entries must be finite and nonnegative")));
                    }
                }
            }
        }
        let a = &self.analysis;
        if let Some(m) = a.margin {
            if !(0.0..1.0).contains(&m) {
                return Err(CliError::Validation(format!("margin must lie in [0, 1), got {m}")));
            }
        }
        positive(a.tolerance, "tolerance")?;
        positive(a.t_infinity, "T_infinity")?;
        positive(a.grid_step, "grid_step")?;
        if a.samples == Some(0) {
            return Err(CliError::Validation("samples must be positive".into()));
        }
        if let Some(s) = a.which_theorems.iter().find(|s| !STAGES.contains(&s.as_str())) {
            return Err(CliError::Validation(format!("unknown stage {s:?}; known: {}", STAGES.join(", "))));
        }
        Ok(())
    }

    pub fn runs(&self, stage: &str) -> bool {
        self.analysis.which_theorems.is_empty() || self.analysis.which_theorems.iter().any(|s| s == stage)
    }

    fn couplings(entries: &[CouplingEntry], n: usize, what: &str) -> Result<Couplings, CliError> {
        entries
            .iter()
            .map(|c| {
                if c.from == 0 || c.to == 0 || c.from > n || c.to > n || c.from == c.to {
                    return Err(CliError::Validation(format!(
                        "{what} from {} to {} is not a pair of distinct blocks in 1..={n}",
                        c.from, c.to
                    )));
                }
                Ok(((c.to - 1, c.from - 1), matrix(&c.matrix, &format!("{what} {} -> {}", c.from, c.to))?))
            })
            .collect()
    }

    pub fn system(&self) -> Result<BlockSystem, CliError> {
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let name = b.label.clone().unwrap_or_else(|| format!("block {}", i + 1));
                let m = matrix(&b.matrix, &name)?;
                if !m.is_square() {
                    return Err(CliError::Validation(format!("{name} is {}x{}, expected square", m.nrows(), m.ncols())));
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>, _>>()?;
        if blocks.is_empty() {
            return Err(CliError::Validation("the system has no blocks".into()));
        }
        let couplings = Self::couplings(&self.couplings, blocks.len(), "coupling")?;
        let mut seen = std::collections::BTreeSet::new();
        if let Some(k) = couplings.iter().find(|(k, _)| !seen.insert(*k)) {
            return Err(CliError::Validation(format!("coupling from {} to {} appears twice", k.0 .1 + 1, k.0 .0 + 1)));
        }
        BlockSystem::new(blocks, couplings).map_err(CliError::from)
    }

    /// The remainder and its split with the linear couplings.
    pub fn split(&self, sys: &BlockSystem) -> Result<Option<SplitNonlinearity>, CliError> {
        let Some(nl) = &self.nonlinearity else { return Ok(None) };
        let profile = Profile::from_name(&nl.kind).ok_or_else(|| CliError::Validation(format!("unknown nonlinearity {:?}", nl.kind)))?;
        let map = match &nl.params.weights {
            Some(w) => CouplingNonlinearity::new(profile, nl.params.gain, sys.dims(), Self::couplings(w, sys.n(), "weight")?)?,
            None => CouplingNonlinearity::on_couplings(profile, nl.params.gain, sys)?,
        };
        let (t, l) = map.bounds(nl.rho);
        let dims = sys.dims();
        let spec = NonlinearitySpec::new(
            std::sync::Arc::new(map),
            dims,
            nl.bounds.clone().unwrap_or(t),
            nl.lipschitz.clone().unwrap_or(l),
            nl.rho,
        )?;
        Ok(Some(SplitNonlinearity::new(sys.clone(), spec)?))
    }

    /// The file with couplings multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.couplings {
            for v in c.matrix.iter_mut().flatten() {
                *v *= scale;
            }
        }
        out
    }
}
