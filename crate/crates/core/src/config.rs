//! Run configuration: the single TOML document that names a map, a
//! potential, the truncation, the tolerances, and where output goes.
//!
//! The schema is strict — unknown keys are rejected everywhere — and
//! round-trips exactly: emitting a parsed configuration and parsing the
//! emission yields an identical value. [`RunConfig::content_hash`] is a
//! SHA-256 over the canonical serialization, so two configurations hash
//! equal iff every knob that can influence a result is equal; result caches
//! key on it together with the engine version.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::map::{farey_like, manneville_pomeau, Branch, BranchExpr, MapModel, Potential};
use crate::{Error, Result, Tolerances};

/// Complete description of one run. Every solver input lives here; command
/// lines only choose *what* to compute, never *on what*.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub map: MapSection,
    #[serde(default)]
    pub potential: Potential,
    #[serde(default)]
    pub truncation: Truncation,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub cache: CacheSection,
}

/// Either a builtin map (by name, with its parameters) or a custom map
/// given branch by branch. The two styles are mutually exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MapSection {
    /// `"manneville_pomeau"` (requires `beta`) or `"farey_like"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// Intermittency parameter of the builtin Manneville–Pomeau family.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Name of a custom map (required without `builtin`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Regularity exponent of a custom map (required without `builtin`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Branches of a custom map, in domain order.
    #[serde(rename = "branch", skip_serializing_if = "Vec::is_empty")]
    pub branches: Vec<BranchSection>,
}

/// One custom branch: a closed-form expression on an explicit domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSection {
    pub domain: (f64, f64),
    pub expr: BranchExpr,
    /// Present iff the branch has a neutral fixed point there.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_point: Option<f64>,
}

/// Truncation of the induced system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Truncation {
    /// Deepest enumerated parabolic-block level.
    pub n_max: u32,
    /// Bracket refinement: 0 = word-level brackets, 1 = edge-resolved.
    pub depth: u32,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation { n_max: 256, depth: 1 }
    }
}

/// Where and how results are emitted. Each command pins the shape of its
/// records (grids are CSV, single results one-line JSON); `format` records
/// the preferred encoding for downstream consumers of the emitted files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub format: OutputFormat,
    /// File to write; standard output when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// Result-cache location; caching is off unless a directory is given
/// (command-line and environment overrides are layered on top by the CLI).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CacheSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parse a TOML document. Parse failures carry the location reported by
    /// the parser.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical emission; parsing it back yields an identical value.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Structural checks beyond what the schema itself enforces.
    pub fn validate(&self) -> Result<()> {
        self.build_map()?;
        self.build_potential()?;
        if self.truncation.n_max < 8 {
            return Err(Error::Config(format!(
                "truncation.n_max = {} is below the minimum of 8 (the tail \
                 calibration needs levels n_max/2 < 3n_max/4 < n_max)",
                self.truncation.n_max
            )));
        }
        if self.truncation.depth > 1 {
            return Err(Error::Config(format!(
                "truncation.depth = {} is not supported; depths are 0 (word-level \
                 brackets) and 1 (edge-resolved)",
                self.truncation.depth
            )));
        }
        Ok(())
    }

    /// Construct the configured map.
    pub fn build_map(&self) -> Result<MapModel> {
        let m = &self.map;
        match m.builtin.as_deref() {
            Some(builtin) => {
                if m.name.is_some() || m.gamma.is_some() || !m.branches.is_empty() {
                    return Err(Error::Config(
                        "map: `builtin` excludes the custom-map keys `name`, `gamma`, \
                         and `branch`"
                            .into(),
                    ));
                }
                match builtin {
                    "manneville_pomeau" => {
                        let beta = m.beta.ok_or_else(|| {
                            Error::Config(
                                "map: builtin \"manneville_pomeau\" requires `beta`".into(),
                            )
                        })?;
                        manneville_pomeau(beta)
                    }
                    "farey_like" => {
                        if m.beta.is_some() {
                            return Err(Error::Config(
                                "map: builtin \"farey_like\" takes no `beta`".into(),
                            ));
                        }
                        Ok(farey_like())
                    }
                    other => Err(Error::Config(format!(
                        "map: unknown builtin \"{other}\"; available: \
                         \"manneville_pomeau\", \"farey_like\""
                    ))),
                }
            }
            None => {
                let name = m
                    .name
                    .as_deref()
                    .ok_or_else(|| Error::Config("map: a custom map requires `name`".into()))?;
                let gamma = m
                    .gamma
                    .ok_or_else(|| Error::Config("map: a custom map requires `gamma`".into()))?;
                if m.beta.is_some() {
                    return Err(Error::Config(
                        "map: `beta` only applies to builtin \"manneville_pomeau\"".into(),
                    ));
                }
                if m.branches.len() < 2 {
                    return Err(Error::Config(format!(
                        "map: a custom map needs at least two [[map.branch]] entries, got {}",
                        m.branches.len()
                    )));
                }
                let branches = m
                    .branches
                    .iter()
                    .map(|b| Branch::new(b.domain, b.expr.clone(), b.fixed_point))
                    .collect::<Result<Vec<_>>>()?;
                MapModel::new(name, branches, gamma)
            }
        }
    }

    /// Construct the configured potential (validates polynomial coefficients).
    pub fn build_potential(&self) -> Result<Potential> {
        if let Potential::Polynomial { coeffs } = &self.potential {
            if coeffs.is_empty() {
                return Err(Error::Config(
                    "potential: polynomial needs at least one coefficient".into(),
                ));
            }
            if coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config(
                    "potential: polynomial coefficients must be finite".into(),
                ));
            }
        }
        Ok(self.potential.clone())
    }

    /// SHA-256 over the canonical serialization: stable across runs and
    /// platforms, different whenever any result-relevant knob differs.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configuration serializes");
        let mut h = Sha256::new();
        h.update(&bytes);
        hex::encode(h.finalize())
    }
}
