//! Run and analysis configuration files (TOML, or JSON when the file ends in
//! `.json` or starts with `{`).

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::acquisition::AcqOptions;
use crate::bench::{Method, SyntheticObjective};
use crate::gp::FitOptions;
use crate::space::{SearchSpace, SpaceDecl, Value};
use crate::study::{Mode, StudyOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {}", .problems.join("; "))]
    Invalid { path: String, problems: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Bn2d,
    MockCnn,
    /// Evaluated outside the process through suggest / tell.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub kind: ObjectiveKind,
    #[serde(default)]
    pub noise_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Sequential,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub n_init: usize,
    pub n_adaptive: usize,
    pub seed: u64,
    pub mode: ModeName,
    pub batch_size: usize,
    pub output_dir: PathBuf,
    pub random_fallback: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        let d = StudyOptions::default();
        Self {
            n_init: d.n_init,
            n_adaptive: d.n_adaptive,
            seed: 0,
            mode: ModeName::Sequential,
            batch_size: 1,
            output_dir: PathBuf::from("."),
            random_fallback: d.random_fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub replicates: usize,
    /// `bn_sequential`, `bn_batch` (uses `run.batch_size`) or `random_search`.
    pub methods: Vec<String>,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            replicates: 20,
            methods: vec!["bn_sequential".into(), "bn_batch".into(), "random_search".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required for external objectives; builtin objectives bring their own.
    #[serde(default)]
    pub space: Option<SpaceDecl>,
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub acquisition: AcqOptions,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
}

/// A config that passed validation, with everything resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub space: SearchSpace,
    pub options: StudyOptions,
    pub objective: Option<SyntheticObjective>,
    pub methods: Vec<Method>,
}

fn is_json(path: &Path, text: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) || text.trim_start().starts_with('{')
}

/// Parses TOML or JSON; parse errors carry line and column.
pub fn parse_file<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: p.clone(),
        message: e.to_string(),
    })?;
    parse_str(&text, is_json(path, &text)).map_err(|message| ConfigError::Parse { path: p, message })
}

pub fn parse_str<T: DeserializeOwned>(text: &str, json: bool) -> Result<T, String> {
    if json {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string().trim_end().to_string())
    }
}

fn parse_method(name: &str, batch_size: usize) -> Option<Method> {
    match name {
        "bn_sequential" => Some(Method::BnSequential),
        "bn_batch" => Some(Method::BnBatch { size: batch_size }),
        "random_search" => Some(Method::RandomSearch),
        _ => None,
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Resolved, ConfigError> {
        let cfg: RunConfig = parse_file(path)?;
        cfg.resolve().map_err(|problems| ConfigError::Invalid {
            path: path.display().to_string(),
            problems,
        })
    }

    pub fn study_options(&self) -> StudyOptions {
        StudyOptions {
            n_init: self.run.n_init,
            n_adaptive: self.run.n_adaptive,
            mode: match self.run.mode {
                ModeName::Sequential => Mode::Sequential,
                ModeName::Batch => Mode::Batch {
                    size: self.run.batch_size,
                },
            },
            fit: self.fit.clone(),
            acq: self.acquisition.clone(),
            random_fallback: self.run.random_fallback,
        }
    }

    /// Every problem found, each naming its field.
    pub fn resolve(self) -> Result<Resolved, Vec<String>> {
        let mut problems = Vec::new();
        let objective = match self.objective.kind {
            ObjectiveKind::External => None,
            ObjectiveKind::Bn2d => Some(SyntheticObjective::bn2d(self.objective.noise_sd)),
            ObjectiveKind::MockCnn => Some(SyntheticObjective::mock_cnn(self.objective.noise_sd)),
        };
        if !(self.objective.noise_sd.is_finite() && self.objective.noise_sd >= 0.0) {
            problems.push(format!(
                "objective.noise_sd: must be finite and >= 0 (got {})",
                self.objective.noise_sd
            ));
        }
        let declared = self
            .space
            .clone()
            .map(|d| SearchSpace::from_decl(d).map_err(|e| format!("space.{e}")));
        let space = match (&objective, declared) {
            (_, Some(Err(e))) => {
                problems.push(e);
                None
            }
            (None, None) => {
                problems.push("space: required for an external objective".into());
                None
            }
            (None, Some(Ok(s))) => Some(s),
            (Some(obj), Some(Ok(s))) => {
                if s != obj.space {
                    problems.push(format!(
                        "space: does not match the space of builtin objective '{}'; omit [space] to use it",
                        obj.name
                    ));
                }
                Some(s)
            }
            (Some(obj), None) => Some(obj.space.clone()),
        };
        if self.run.mode == ModeName::Batch && self.run.batch_size < 2 {
            problems.push(format!(
                "run.batch_size: must be at least 2 in batch mode (got {})",
                self.run.batch_size
            ));
        }
        let options = self.study_options();
        problems.extend(options.problems().into_iter().map(|p| {
            if p.starts_with("fit.") || p.starts_with("acquisition.") {
                p
            } else {
                format!("run.{p}")
            }
        }));
        if self.benchmark.replicates == 0 {
            problems.push("benchmark.replicates: must be at least 1".into());
        }
        let batch = self.run.batch_size.max(2);
        let mut methods = Vec::new();
        for (i, m) in self.benchmark.methods.iter().enumerate() {
            match parse_method(m, batch) {
                Some(m) => methods.push(m),
                None => problems.push(format!(
                    "benchmark.methods[{i}]: unknown method '{m}' (expected bn_sequential, bn_batch or random_search)"
                )),
            }
        }
        match (problems.is_empty(), space) {
            (true, Some(space)) => Ok(Resolved {
                config: self,
                space,
                options,
                objective,
                methods,
            }),
            _ => Err(problems),
        }
    }
}

/// Main-effect request in a sensitivity spec. Without `grid`, an evenly
/// spaced grid of `grid_points` (or all levels) is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MainRequest {
    pub variable: String,
    #[serde(default)]
    pub grid: Option<Vec<Value>>,
}

/// Curves of `variable` for each fixed value of `by`. Without `levels`,
/// quantile levels (or all categorical levels) of `by` are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionRequest {
    pub variable: String,
    pub by: String,
    #[serde(default)]
    pub grid: Option<Vec<Value>>,
    #[serde(default)]
    pub levels: Option<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySpec {
    pub n_mc: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub levels: usize,
    pub main: Vec<MainRequest>,
    pub interaction: Vec<InteractionRequest>,
}

impl Default for SensitivitySpec {
    fn default() -> Self {
        Self {
            n_mc: 2000,
            seed: 0,
            grid_points: 21,
            levels: 5,
            main: Vec::new(),
            interaction: Vec::new(),
        }
    }
}

impl SensitivitySpec {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let spec: SensitivitySpec = parse_file(path)?;
        let mut problems = Vec::new();
        if spec.n_mc < 2 {
            problems.push(format!("n_mc: must be at least 2 (got {})", spec.n_mc));
        }
        if spec.grid_points < 2 {
            problems.push(format!("grid_points: must be at least 2 (got {})", spec.grid_points));
        }
        if spec.levels == 0 {
            problems.push("levels: must be at least 1".into());
        }
        if spec.main.is_empty() && spec.interaction.is_empty() {
            problems.push("main / interaction: nothing requested".into());
        }
        if problems.is_empty() {
            Ok(spec)
        } else {
            Err(ConfigError::Invalid {
                path: path.display().to_string(),
                problems,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BN2D: &str = r#"
[objective]
kind = "bn2d"
noise_sd = 0.2

[run]
n_init = 10
n_adaptive = 5
seed = 7
"#;

    #[test]
    fn builtin_without_space() {
        let cfg: RunConfig = parse_str(BN2D, false).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.space.combo_count(), 5);
        assert_eq!(r.options.n_adaptive, 5);
        assert_eq!(r.methods.len(), 3);
    }

    #[test]
    fn json_is_equivalent() {
        let toml_cfg: RunConfig = parse_str(BN2D, false).unwrap();
        let json = serde_json::to_string(&toml_cfg).unwrap();
        let json_cfg: RunConfig = parse_str(&json, true).unwrap();
        assert_eq!(toml_cfg, json_cfg);
    }

    #[test]
    fn parse_errors_report_line() {
        let e = parse_str::<RunConfig>("[objective]\nkind = \"bn2d\"\nnoise_sd = \"x\"\n", false).unwrap_err();
        assert!(e.contains("line 3"), "{e}");
        let e = parse_str::<RunConfig>("[objective]\nkind = \"bn2d\"\n[run]\nn_inti = 3\n", false).unwrap_err();
        assert!(e.contains("n_inti"), "{e}");
    }

    #[test]
    fn validation_names_fields() {
        let text = r#"
[objective]
kind = "external"

[[space.quant]]
name = "lr"
lower = 1.0
upper = 0.5

[run]
n_init = 1
"#;
        let cfg: RunConfig = parse_str(text, false).unwrap();
        let problems = cfg.resolve().unwrap_err();
        assert!(
            problems.iter().any(|p| p.contains("'lr'") && p.contains("lower")),
            "{problems:?}"
        );
        assert!(problems.iter().any(|p| p.starts_with("run.n_init")), "{problems:?}");
    }

    #[test]
    fn external_needs_space() {
        let cfg: RunConfig = parse_str("[objective]\nkind = \"external\"\n", false).unwrap();
        assert!(cfg.resolve().unwrap_err()[0].starts_with("space"));
    }
}
