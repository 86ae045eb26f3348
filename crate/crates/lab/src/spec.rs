//! Experiment configuration files and run reports.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{LabError, LabResult};
use crate::format::{atomic_write, json_bytes, OutputFormat, CSV_SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunnerKind {
    #[serde(rename = "toy-table")]
    ToyTable,
    #[serde(rename = "curves")]
    Curves,
    #[serde(rename = "theory")]
    Theory,
    #[serde(rename = "copycat")]
    Copycat,
    #[serde(rename = "ablate")]
    Ablate,
}

impl RunnerKind {
    pub const ALL: [RunnerKind; 5] = [
        RunnerKind::ToyTable,
        RunnerKind::Curves,
        RunnerKind::Theory,
        RunnerKind::Copycat,
        RunnerKind::Ablate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RunnerKind::ToyTable => "toy-table",
            RunnerKind::Curves => "curves",
            RunnerKind::Theory => "theory",
            RunnerKind::Copycat => "copycat",
            RunnerKind::Ablate => "ablate",
        }
    }

    pub fn default_seeds(self) -> Vec<u64> {
        match self {
            RunnerKind::ToyTable | RunnerKind::Curves | RunnerKind::Theory => vec![0],
            RunnerKind::Copycat => (0..5).collect(),
            RunnerKind::Ablate => (0..3).collect(),
        }
    }
}

impl fmt::Display for RunnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RunnerKind {
    type Err = LabError;

    fn from_str(s: &str) -> LabResult<Self> {
        RunnerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| LabError::Config(format!("unknown runner {s:?}")))
    }
}

/// A runner invocation as stored in a JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub parameters: Map<String, Value>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentSpec {
    pub fn new(kind: RunnerKind) -> Self {
        Self {
            name: kind.name().into(),
            parameters: Map::new(),
            seeds: kind.default_seeds(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_json(text: &str) -> LabResult<Self> {
        let mut spec: ExperimentSpec =
            serde_json::from_str(text).map_err(|e| LabError::Config(format!("experiment spec: {e}")))?;
        let kind = spec.kind()?;
        if spec.seeds.is_empty() {
            spec.seeds = kind.default_seeds();
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn kind(&self) -> LabResult<RunnerKind> {
        self.name.parse()
    }

    pub fn with_parameters(mut self, parameters: Value) -> LabResult<Self> {
        match parameters {
            Value::Object(m) => {
                self.parameters = m;
                Ok(self)
            }
            _ => Err(LabError::Config("parameters must be a JSON object".into())),
        }
    }

    /// Typed parameters; keys not known to the runner are rejected.
    pub fn params<T: DeserializeOwned>(&self) -> LabResult<T> {
        serde_json::from_value(Value::Object(self.parameters.clone()))
            .map_err(|e| LabError::Config(format!("{} parameters: {e}", self.name)))
    }
}

/// One named pass/fail condition evaluated by a runner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// What a runner produced: its checks and the files it wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub runner: String,
    pub seeds: Vec<u64>,
    pub parameters: Value,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn new(kind: RunnerKind, seeds: &[u64], parameters: &impl Serialize) -> LabResult<Self> {
        Ok(Self {
            runner: kind.name().into(),
            seeds: seeds.to_vec(),
            parameters: serde_json::to_value(parameters)?,
            checks: Vec::new(),
            files: Vec::new(),
            notes: Vec::new(),
        })
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, passed, detail));
    }

    /// Writes `bytes` under `dir` and records the path.
    pub fn write(&mut self, dir: &Path, file: &str, bytes: &[u8]) -> LabResult<()> {
        let path = dir.join(file);
        atomic_write(&path, bytes)?;
        self.files.push(path);
        Ok(())
    }

    /// Writes `manifest.json` describing the run.
    pub fn write_manifest(&mut self, dir: &Path, format: OutputFormat) -> LabResult<()> {
        let path = dir.join("manifest.json");
        self.files.push(path.clone());
        let doc = serde_json::json!({
            "runner": self.runner,
            "csv_schema_version": CSV_SCHEMA_VERSION,
            "format": format,
            "seeds": self.seeds,
            "parameters": self.parameters,
            "checks": self.checks,
            "all_passed": self.all_passed(),
            "notes": self.notes,
            "files": self.files.iter().map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())).collect::<Vec<_>>(),
        });
        atomic_write(&path, &json_bytes(&doc)?)
    }
}
