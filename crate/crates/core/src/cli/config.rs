use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conditional::Arithmetic;
use crate::error::{Error, Result};
use crate::harness::{resolve_threads, BlockSpec, Regime};
use crate::models::MomentFunctional;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CltAnnealed,
    CltQuenched,
    Functional,
    GhCheck,
    Coboundary,
    Counterexample,
    VerifyStructure,
    CheckConditions,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::CltAnnealed => "clt-annealed",
            ExperimentKind::CltQuenched => "clt-quenched",
            ExperimentKind::Functional => "functional",
            ExperimentKind::GhCheck => "gh-check",
            ExperimentKind::Coboundary => "coboundary",
            ExperimentKind::Counterexample => "counterexample",
            ExperimentKind::VerifyStructure => "verify-structure",
            ExperimentKind::CheckConditions => "check-conditions",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub base: u64,
    /// Frozen pasts; each experiment has its own default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_pasts: Option<Vec<u64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<BlockSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    /// Also run the increment moment probe over this many dyadic levels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tightness_levels: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GhOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qs: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoboundaryOptions {
    /// Smallest accepted ratio between consecutive median residuals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_decay: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleOptions {
    #[serde(default)]
    pub windows: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_windows: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_draws: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arithmetic: Option<Arithmetic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<MomentFunctional>,
}

pub const DEFAULT_REPLICATES: usize = 10_000;

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

/// One experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    /// Model file, resolved against the directory of the config file.
    pub model: PathBuf,
    #[serde(default)]
    pub sizes: Vec<Vec<usize>>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Filled with the available core count when absent.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    #[serde(default)]
    pub omd_override: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_threshold: Option<f64>,
    #[serde(default)]
    pub keep_samples: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<FunctionalOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gh: Option<GhOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coboundary: Option<CoboundaryOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexampleOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<ConditionsOptions>,
}

const TOP_KEYS: &[&str] = &[
    "experiment",
    "model",
    "sizes",
    "replicates",
    "seeds",
    "out",
    "threads",
    "format",
    "regime",
    "omd_override",
    "ks_threshold",
    "keep_samples",
    "functional",
    "gh",
    "coboundary",
    "counterexample",
    "verify",
    "conditions",
];

const SECTION_KEYS: &[(&str, &[&str])] = &[
    ("seeds", &["base", "frozen_pasts"]),
    ("functional", &["grid", "blocks", "rel_tol", "tightness_levels"]),
    ("gh", &["qs"]),
    ("coboundary", &["min_decay"]),
    (
        "counterexample",
        &["windows", "mc_windows", "thresholds", "control_bound", "cell_draws"],
    ),
    ("verify", &["tol", "arithmetic", "cutoff"]),
    ("conditions", &["n_max", "functional"]),
];

const BLOCK_KEYS: &[&str] = &["edges", "coeffs"];

/// Line of the first assignment to `key`, or of the `[key]` header.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        let header = t
            .strip_prefix('[')
            .map(|h| h.trim_end().trim_end_matches(']').trim())
            .map(|h| h == key || h.ends_with(&format!(".{key}")))
            .unwrap_or(false);
        header
            || t.strip_prefix(key)
                .map(|rest| rest.trim_start().starts_with('='))
                .unwrap_or(false)
    })
    .map(|i| i + 1)
}

fn location(text: &str, key: &str) -> String {
    match line_of(text, key) {
        Some(l) => format!("line {l}, key `{key}`"),
        None => format!("key `{key}`"),
    }
}

fn suggest(key: &str, known: &[&str]) -> Option<String> {
    known
        .iter()
        .map(|k| (strsim::jaro_winkler(key, k), *k))
        .filter(|(s, _)| *s >= 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k.to_string())
}

fn check_keys(table: &toml::Table, known: &[&str], section: &str, text: &str) -> Result<()> {
    for key in table.keys() {
        if !known.contains(&key.as_str()) {
            let hint = suggest(key, known)
                .map(|s| format!("; did you mean `{s}`?"))
                .unwrap_or_default();
            let place = if section.is_empty() {
                String::new()
            } else {
                format!(" in [{section}]")
            };
            return Err(Error::Parse {
                location: location(text, key),
                message: format!("unknown key `{key}`{place}{hint}"),
            });
        }
    }
    Ok(())
}

fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let location = e
        .span()
        .map(|s| {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}")
        })
        .unwrap_or_else(|| "config".into());
    Error::Parse {
        location,
        message: e.message().trim().to_string(),
    }
}

/// Parse and validate a run configuration. A relative model path is
/// resolved against `base_dir`, and the model file must exist.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<RunConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    check_keys(&table, TOP_KEYS, "", text)?;
    for (section, keys) in SECTION_KEYS {
        if let Some(v) = table.get(*section) {
            let t = v.as_table().ok_or_else(|| Error::Parse {
                location: location(text, section),
                message: format!("`{section}` must be a table"),
            })?;
            check_keys(t, keys, section, text)?;
        }
    }
    if let Some(b) = table
        .get("functional")
        .and_then(|f| f.get("blocks"))
        .and_then(|b| b.as_table())
    {
        check_keys(b, BLOCK_KEYS, "functional.blocks", text)?;
    }
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    if !table.contains_key("threads") {
        cfg.threads = resolve_threads(None);
    }
    if let Some(dir) = base_dir {
        if cfg.model.is_relative() {
            cfg.model = dir.join(&cfg.model);
        }
    }
    validate(&cfg, text)?;
    Ok(cfg)
}

fn field_error(text: &str, key: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location(text, key),
        message: message.into(),
    }
}

fn validate(cfg: &RunConfig, text: &str) -> Result<()> {
    if !cfg.model.is_file() {
        return Err(field_error(
            text,
            "model",
            format!("model file {} does not exist", cfg.model.display()),
        ));
    }
    if cfg.replicates == 0 {
        return Err(field_error(text, "replicates", "replicates must be positive"));
    }
    if cfg.sizes.iter().any(|s| s.is_empty() || s.contains(&0)) {
        return Err(field_error(text, "sizes", "sizes must be positive"));
    }
    let needs_sizes = !matches!(
        cfg.experiment,
        ExperimentKind::Counterexample | ExperimentKind::VerifyStructure | ExperimentKind::CheckConditions
    );
    if needs_sizes && cfg.sizes.is_empty() {
        return Err(field_error(
            text,
            "sizes",
            format!("`sizes` is required for {}", cfg.experiment.as_str()),
        ));
    }
    if cfg.experiment == ExperimentKind::Counterexample
        && cfg.counterexample.as_ref().map_or(true, |c| c.windows.is_empty())
    {
        return Err(field_error(
            text,
            "counterexample",
            "the counterexample needs `counterexample.windows`",
        ));
    }
    Ok(())
}

/// Read and parse a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path.parent()).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

impl RunConfig {
    /// Canonical TOML form; parsing it back yields the same config.
    pub fn to_canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            location: "config".into(),
            message: e.to_string(),
        })
    }
}
