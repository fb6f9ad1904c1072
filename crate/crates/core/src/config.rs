//! Run configuration: a single JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{InfSupOptions, StudySpec};
use crate::cutoff::{CutoffKind, CutoffSpec};
use crate::error::{Error, Result};
use crate::mesh::DomainSpec;
use crate::solver::SolveOptions;
use crate::system::InitialData;

/// Version of the config format and of every JSON report.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    #[serde(rename = "T")]
    pub t_final: f64,
    /// `τ/h`
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_rho() -> f64 {
    1.0
}

/// Initial data as a preset name (`"zero"`, `"sin_product"`), a full
/// preset object, or a file of nodal values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Name(String),
    File { file: PathBuf },
    Preset(InitialData),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Preset(InitialData::Zero)
    }
}

impl DataSource {
    /// `base` resolves relative file names.
    pub fn resolve(&self, base: &Path) -> Result<InitialData> {
        match self {
            DataSource::Preset(d) => Ok(d.clone()),
            DataSource::Name(name) => {
                let value = serde_json::json!({ "kind": name });
                serde_json::from_value(value).map_err(|_| Error::Config(format!("unknown data preset '{name}'")))
            }
            DataSource::File { file } => {
                let path = base.join(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read nodal data {}: {e}", path.display())))?;
                let values = text
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{t}' in {}", path.display()))))
                    .collect::<Result<Vec<_>>>()?;
                Ok(InitialData::Nodal { values })
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default)]
    pub g0: DataSource,
    #[serde(default)]
    pub g1: DataSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Mesh parameter of level 0; defaults to `domain.target_h`.
    #[serde(default)]
    pub base_h: Option<f64>,
}

fn default_levels() -> usize {
    3
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            levels: default_levels(),
            base_h: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfSupConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub gammas: Option<Vec<f64>>,
    #[serde(default)]
    pub alpha0s: Option<Vec<f64>>,
}

fn default_trials() -> usize {
    200
}

impl Default for InfSupConfig {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            gammas: None,
            alpha0s: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub domain: DomainSpec,
    pub time: TimeSpec,
    pub cutoff: CutoffSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub infsup: InfSupConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Also write the saddle matrix, its metadata and the right-hand side.
    #[serde(default)]
    pub export_matrix: bool,
    /// Directory of the config file, for relative data paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Checks every invariant. The final-time guard for collar cut-offs
    /// (`T ≥ 2 diam Ω`) is skipped with `allow_short_t`.
    pub fn validate(&self, allow_short_t: bool) -> Result<()> {
        self.domain.validate()?;
        let t = self.time.t_final;
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Config(format!("T must be positive, got {t}")));
        }
        if !(0.25..=4.0).contains(&self.time.rho) {
            return Err(Error::Config(format!("rho must lie in [0.25, 4], got {}", self.time.rho)));
        }
        self.cutoff.validate(&self.domain.domain)?;
        let diam = self.domain.domain.diameter();
        if matches!(self.cutoff.kind, CutoffKind::BoundaryCollar { .. }) && t < 2.0 * diam && !allow_short_t {
            return Err(Error::Config(format!(
                "T = {t} is below 2 diam = {}; pass --allow-short-T to run anyway",
                2.0 * diam
            )));
        }
        self.solver.validate()?;
        if let Some(h) = self.study.base_h {
            DomainSpec::new(self.domain.domain, h).validate()?;
        }
        if self.infsup.trials < 100 {
            return Err(Error::Config(format!("infsup.trials must be at least 100, got {}", self.infsup.trials)));
        }
        Ok(())
    }

    pub fn initial_data(&self) -> Result<(InitialData, InitialData)> {
        Ok((self.data.g0.resolve(&self.base_dir)?, self.data.g1.resolve(&self.base_dir)?))
    }

    pub fn study_spec(&self) -> Result<StudySpec> {
        let (g0, g1) = self.initial_data()?;
        Ok(StudySpec {
            domain: DomainSpec::new(self.domain.domain, self.study.base_h.unwrap_or(self.domain.target_h)),
            cutoff: self.cutoff,
            g0,
            g1,
            t_final: self.time.t_final,
            rho: self.time.rho,
            levels: self.study.levels,
            solver: self.solver,
        })
    }

    pub fn infsup_options(&self, seed: u64) -> InfSupOptions {
        let mut opts = InfSupOptions {
            trials: self.infsup.trials,
            seed,
            ..Default::default()
        };
        if let Some(g) = &self.infsup.gammas {
            opts.gammas = g.clone();
        }
        if let Some(a) = &self.infsup.alpha0s {
            opts.alpha0s = a.clone();
        }
        opts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: &str = r#"{
        "domain": {"domain": {"kind": "unit_square"}, "target_h": 0.125},
        "time": {"T": 3.0, "rho": 1.0},
        "cutoff": {"kind": "boundary_collar", "width": 0.3, "delta": 0.1},
        "data": {"g0": "sin_product", "g1": "zero"}
    }"#;

    #[test]
    fn parses_presets_and_defaults() {
        let cfg = RunConfig::from_json(SQUARE).unwrap();
        cfg.validate(false).unwrap();
        let (g0, g1) = cfg.initial_data().unwrap();
        assert_eq!(g0, InitialData::SinProduct { modes: [1, 1], amplitude: 1.0 });
        assert_eq!(g1, InitialData::Zero);
        assert_eq!(cfg.study.levels, 3);
        assert_eq!(cfg.solver, SolveOptions::default());
        assert_eq!(cfg.study_spec().unwrap().domain.target_h, 0.125);
    }

    #[test]
    fn guards() {
        let mut cfg = RunConfig::from_json(SQUARE).unwrap();
        cfg.time.t_final = 2.0;
        assert!(matches!(cfg.validate(false), Err(Error::Config(_))));
        cfg.validate(true).unwrap();
        cfg.time.rho = 5.0;
        assert!(cfg.validate(true).is_err());
        cfg.time.rho = 0.25;
        cfg.solver.rel_tol = 1e-3;
        assert!(cfg.validate(true).is_err());
        assert!(RunConfig::from_json(&SQUARE.replace("\"sin_product\"", "\"nonsense\"")).unwrap().initial_data().is_err());
        assert!(RunConfig::from_json(&SQUARE.replace("\"time\"", "\"tme\"")).is_err());
        assert!(RunConfig::from_json(&SQUARE.replacen('{', "{\"schema_version\": 7,", 1)).is_err());
    }

    #[test]
    fn object_presets_and_files() {
        let dir = std::env::temp_dir().join(format!("wavecontrol-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("g1.txt"), "0 0.5\n1.0 0.5 0").unwrap();
        let text = SQUARE.replace(
            r#""g0": "sin_product", "g1": "zero""#,
            r#""g0": {"kind": "sin_product", "modes": [2, 1]}, "g1": {"file": "g1.txt"}"#,
        );
        std::fs::write(dir.join("run.json"), text).unwrap();
        let cfg = RunConfig::load(&dir.join("run.json")).unwrap();
        let (g0, g1) = cfg.initial_data().unwrap();
        assert_eq!(g0, InitialData::SinProduct { modes: [2, 1], amplitude: 1.0 });
        assert_eq!(g1, InitialData::Nodal { values: vec![0.0, 0.5, 1.0, 0.5, 0.0] });
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
