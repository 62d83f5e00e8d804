//! Scenario configuration files.
//!
//! A scenario is a TOML document selecting a built-in model, an integrator,
//! tolerance overrides, and output destinations:
//!
//! ```toml
//! t_end = 3.0
//!
//! [model]
//! name = "bouncing_ball"
//!
//! [model.params]
//! gravity = 10.0
//! restitution = 0.5
//!
//! [integrator]
//! method = "rk4"
//! step_size = 1e-3
//!
//! [tolerances]
//! event_tol = 1e-10
//!
//! [outputs]
//! trajectory = "trajectory.csv"
//! events = "events.jsonl"
//! ```
//!
//! Unknown keys are rejected everywhere. Command-line overrides are applied
//! to the raw TOML tree before the typed parse, so a mistyped override path
//! fails the same strict validation as a mistyped file key.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{Integrator, Method};
use crate::model::Tolerances;
use crate::models::build_model;
use crate::sim::Simulation;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Simulation horizon.
    pub t_end: f64,
    /// Reserved for stochastic model inputs; accepted and recorded but not
    /// consumed by the deterministic event-driven run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub model: ModelSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
    #[serde(default)]
    pub outputs: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<toml::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    /// `"rk4"` or `"rkf45"`.
    pub method: String,
    pub step_size: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let d = Integrator::default();
        IntegratorSection {
            method: "rk4".into(),
            step_size: d.step_size,
            rel_tol: d.rel_tol,
            abs_tol: d.abs_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceSection {
    pub event_tol: f64,
    pub gap_tol: f64,
    pub drift_tol: f64,
    pub rank_tol: Option<f64>,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        let d = Tolerances::default();
        ToleranceSection {
            event_tol: d.event_tol,
            gap_tol: d.gap_tol,
            drift_tol: d.drift_tol,
            rank_tol: d.rank_tol,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub trajectory: Option<PathBuf>,
    pub events: Option<PathBuf>,
}

/// Applies one `path.to.key=value` override to a raw TOML tree. Intermediate
/// tables are created as needed; the value is parsed as a TOML fragment and
/// falls back to a plain string.
pub fn apply_override(root: &mut toml::Value, path: &str, raw: &str) -> Result<()> {
    if path.is_empty() {
        return Err(Error::config("override", "empty key path"));
    }
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::config(
            "override",
            format!("key path '{path}' has an empty segment"),
        ));
    }
    let mut node = root;
    for seg in &segments[..segments.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| {
            Error::config(
                "override",
                format!("'{seg}' in '{path}' is not a table"),
            )
        })?;
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let leaf = segments[segments.len() - 1];
    let table = node.as_table_mut().ok_or_else(|| {
        Error::config("override", format!("parent of '{leaf}' in '{path}' is not a table"))
    })?;
    table.insert(leaf.to_string(), parse_fragment(raw));
    Ok(())
}

fn parse_fragment(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("fragment key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Parses scenario text, applying `key=value` overrides before validation.
pub fn parse_scenario(text: &str, overrides: &[(String, String)]) -> Result<ScenarioConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("scenario", e.to_string()))?;
    let mut tree = toml::Value::Table(table);
    for (path, raw) in overrides {
        apply_override(&mut tree, path, raw)?;
    }
    let config: ScenarioConfig = tree
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("scenario", e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_scenario(
    path: &std::path::Path,
    overrides: &[(String, String)],
) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text, overrides)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::config("t_end", "must be finite and nonnegative"));
        }
        self.integrator()?.validate()?;
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.event_tol", t.event_tol),
            ("tolerances.gap_tol", t.gap_tol),
            ("tolerances.drift_tol", t.drift_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if let Some(rt) = t.rank_tol {
            if !(rt.is_finite() && rt > 0.0) {
                return Err(Error::config("tolerances.rank_tol", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn integrator(&self) -> Result<Integrator> {
        let method = match self.integrator.method.as_str() {
            "rk4" => Method::Rk4,
            "rkf45" => Method::Rkf45,
            other => {
                return Err(Error::config(
                    "integrator.method",
                    format!("unknown method '{other}'; known: rk4, rkf45"),
                ))
            }
        };
        Ok(Integrator {
            method,
            step_size: self.integrator.step_size,
            rel_tol: self.integrator.rel_tol,
            abs_tol: self.integrator.abs_tol,
        })
    }

    pub fn tolerances(&self) -> Tolerances {
        let defaults = Tolerances::default();
        Tolerances {
            event_tol: self.tolerances.event_tol,
            gap_tol: self.tolerances.gap_tol,
            drift_tol: self.tolerances.drift_tol,
            rank_tol: self.tolerances.rank_tol,
            ..defaults
        }
    }

    /// Builds the ready-to-run simulation this scenario describes.
    pub fn build(&self) -> Result<Simulation> {
        let model = build_model(&self.model.name, self.model.params.as_ref())?;
        let mut sim = Simulation::new(model, self.t_end);
        sim.integrator = self.integrator()?;
        sim.tolerances = self.tolerances();
        Ok(sim)
    }
}
