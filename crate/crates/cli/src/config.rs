//! Config file loading: TOML with one section per command, dotted
//! `key=value` overrides applied on top, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::{Table, Value};

use btdpo_core::clients::EndpointConfig;
use btdpo_core::dpo::DpoConfig;
use btdpo_core::metrics::TokenizationScheme;
use btdpo_core::pipeline::PipelineConfig;

fn default_report_metrics() -> Vec<String> {
    vec!["comet22".into(), "comet_kiwi22".into()]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    #[serde(default)]
    pub scorer: Option<EndpointConfig>,
    #[serde(default = "default_report_metrics")]
    pub metrics: Vec<String>,
    #[serde(default)]
    pub scheme: TokenizationScheme,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            scorer: None,
            metrics: default_report_metrics(),
            scheme: TokenizationScheme::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub pipeline: Option<PipelineConfig>,
    #[serde(default)]
    pub report: ReportSection,
    #[serde(default)]
    pub dpo_eval: Option<DpoConfig>,
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_override(root: &mut Table, spec: &str) -> Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override {spec:?} is not key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key {key:?} is malformed"));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| format!("override {key:?}: {p} is not a table"))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Loads the config (or an empty one), applies overrides and resolves
/// relative paths against the config file's directory.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<CliConfig, String> {
    let (mut table, base) = match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| format!("reading {}: {e}", p.display()))?;
            let table: Table =
                toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (table, base)
        }
        None => (Table::new(), PathBuf::new()),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg: CliConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| format!("invalid config: {}", e.message()))?;
    if let Some(p) = cfg.pipeline.as_mut() {
        for path in [&mut p.corpus_path, &mut p.parallel_path, &mut p.state_path]
            .into_iter()
            .flatten()
        {
            resolve(&base, path);
        }
        resolve(&base, &mut p.dataset_dir);
    }
    Ok(cfg)
}
