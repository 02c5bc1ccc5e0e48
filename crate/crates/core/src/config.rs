//! JSON run configuration shared by the command-line tools.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{GradientMode, Tolerances};
use crate::error::{Error, Result};
use crate::solver::{ProblemSpec, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub h: f64,
    #[serde(default = "default_grading")]
    pub grading: bool,
}

fn default_grading() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub n_levels: usize,
    pub gradient: GradientMode,
    pub tolerances: Tolerances,
    /// Number of random star-shaped sets tested by `geom`.
    pub random_sets: usize,
    /// Largest relative boundary perturbation of the random sets.
    pub max_amplitude: f64,
    /// Boundary points of each random set.
    pub set_points: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            n_levels: 32,
            gradient: GradientMode::default(),
            tolerances: Tolerances::default(),
            random_sets: 50,
            max_amplitude: 0.4,
            set_points: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("wulff-lab-out"),
            formats: vec![Format::Csv, Format::Json, Format::Svg],
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub mesh: MeshConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.solver.validate()?;
        let h = self.mesh.h;
        if !(h > 0.0 && h <= self.problem.radius / 4.0) {
            return Err(Error::InvalidSpec(format!(
                "mesh size h = {h} must lie in (0, R/4] with R = {}",
                self.problem.radius
            )));
        }
        let d = &self.diagnostics;
        if d.n_levels < 10 {
            return Err(Error::InvalidSpec(format!("n_levels = {} must be at least 10", d.n_levels)));
        }
        if d.random_sets == 0 {
            return Err(Error::InvalidSpec("random_sets must be at least 1".into()));
        }
        if d.set_points < 16 {
            return Err(Error::InvalidSpec("set_points must be at least 16".into()));
        }
        if !(d.max_amplitude >= 0.0 && d.max_amplitude < 1.0) {
            return Err(Error::InvalidSpec("max_amplitude must lie in [0, 1)".into()));
        }
        let t = &d.tolerances;
        let tols = [
            t.pohozaev,
            t.gauss_green,
            t.holder,
            t.quotient,
            t.grad_cv,
            t.k_increment,
            t.mu_slack,
            t.radial,
            t.mesh_multiple,
        ];
        if tols.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidSpec("tolerances must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Canonical JSON of the problem, mesh and solver blocks; equal fingerprints mean
    /// a stored solution can be reused.
    pub fn fingerprint(&self) -> String {
        serde_json::json!({ "problem": self.problem, "mesh": self.mesh, "solver": self.solver }).to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TORSION: &str = r#"{
        "problem": {"p": 2, "norm": {"kind": "euclidean"}, "weight": {"kind": "constant"},
                    "cone": {"kind": "full_plane"}, "R": 1, "f": {"law": {"kind": "constant", "c0": 1}}},
        "mesh": {"h": 0.05}
    }"#;

    #[test]
    fn defaults_fill_optional_blocks() {
        let cfg = RunConfig::from_json(TORSION).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.diagnostics.n_levels, 32);
        assert!(cfg.mesh.grading);
        assert_eq!(cfg.solver, SolverConfig::default());
        assert!(cfg.output.wants(Format::Svg));
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = TORSION.replace(r#""h": 0.05"#, r#""h": 0.05, "hh": 1"#);
        assert!(RunConfig::from_json(&bad).is_err());
        let bad = TORSION.replace(r#""mesh""#, r#""extra": {}, "mesh""#);
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn invalid_blocks_rejected() {
        let bad = TORSION.replace(r#""h": 0.05"#, r#""h": 0.5"#);
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::InvalidSpec(_))));
        let bad = TORSION.replace(r#""p": 2"#, r#""p": 1"#);
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::InvalidSpec(_))));
    }
}
