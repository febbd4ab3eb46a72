//! Run configuration: flat `section.key = value` text or a JSON mirror, overlaid on defaults.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use mvflow_core::constitutive::{ConstitutiveModel, PotentialFamily};
use mvflow_core::noise::NoiseModel;
use mvflow_core::solver::{InitialLaw, Level, SolverParams};
use mvflow_core::spectral::{BasisConfig, BasisFamily};

use crate::error::{Result, RunError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub dim: usize,
    pub lengths: Vec<f64>,
    pub family: BasisFamily,
    pub modes: usize,
    pub grid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelKind {
    Base,
    Regularized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub level: LevelKind,
    pub mu: f64,
    pub epsilon: f64,
    /// Guard ladder `R`; every entry also sets the cutoff radius of the regularized level.
    pub guards: Vec<f64>,
    pub dt: f64,
    pub t_final: f64,
    pub cfl_safety: f64,
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub paths: u64,
    pub seed: u64,
    /// Worker threads (0: one per available core).
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    pub snapshots: bool,
    pub weak_form: bool,
    /// Resolutions of the deterministic defect ladder (empty: none).
    pub defect_ladder: Vec<usize>,
    /// Deterministic energy residual tolerance in units of `dt * energy scale`.
    pub energy_tolerance: f64,
    pub moment_order: f64,
    pub ym_time_cells: usize,
    pub ym_space_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub model: ConstitutiveModel,
    pub noise: NoiseModel,
    pub solver: SolverSpec,
    pub initial: InitialLaw,
    pub ensemble: EnsembleSpec,
    pub diagnostics: DiagnosticsSpec,
    pub output: OutputSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: DomainSpec {
                dim: 2,
                lengths: vec![1.0, 1.0],
                family: BasisFamily::Sine,
                modes: 16,
                grid: 48,
            },
            model: ConstitutiveModel {
                family: PotentialFamily::Newtonian { mu: 0.1, lambda: 0.0 },
                pressure_a: 1.0,
                pressure_gamma: 2.0,
            },
            noise: NoiseModel {
                modes: 4,
                alpha: 0.25,
                amplitude: 1.0,
            },
            solver: SolverSpec {
                level: LevelKind::Base,
                mu: 0.0,
                epsilon: 0.0,
                guards: Vec::new(),
                dt: 1e-3,
                t_final: 0.5,
                cfl_safety: 0.5,
                checkpoint_every: 100,
            },
            initial: InitialLaw {
                rho_min: 0.8,
                rho_max: 1.2,
                density_modes: 2,
                velocity_scale: 0.5,
                velocity_decay: 2.0,
                velocity_tail: 0.0,
                velocity_modes: 0,
            },
            ensemble: EnsembleSpec {
                paths: 64,
                seed: 1,
                workers: 0,
            },
            diagnostics: DiagnosticsSpec {
                snapshots: true,
                weak_form: true,
                defect_ladder: Vec::new(),
                energy_tolerance: 25.0,
                moment_order: 2.0,
                ym_time_cells: 2,
                ym_space_cells: 4,
            },
            output: OutputSpec {
                dir: "runs/default".into(),
            },
        }
    }
}

impl RunConfig {
    /// Parses flat key-value text over the defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                RunError::config(format!("line {}", lineno + 1), "expected `key = value`")
            })?;
            let key = key.trim();
            if key.is_empty() || key.split('.').any(str::is_empty) {
                return Err(RunError::config(format!("line {}", lineno + 1), "malformed key"));
            }
            pairs.push((key.to_string(), parse_scalar_or_list(value.trim())));
        }
        Self::from_pairs(pairs)
    }

    /// Parses the JSON mirror over the defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| RunError::config("<json>", e.to_string()))?;
        let mut pairs = Vec::new();
        flatten("", &value, &mut pairs);
        Self::from_pairs(pairs)
    }

    /// Dispatches on the first non-blank character.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Self::from_json(text)
        } else {
            Self::from_kv(text)
        }
    }

    fn from_pairs(mut pairs: Vec<(String, Value)>) -> Result<Self> {
        let mut root = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        // discriminators first, so a changed variant starts from an empty object
        pairs.sort_by_key(|(k, _)| !k.ends_with(".kind"));
        let mut seen = BTreeSet::new();
        for (key, value) in &pairs {
            if !seen.insert(key.clone()) {
                return Err(RunError::config(key, "duplicate key"));
            }
            overlay(&mut root, key, value.clone())?;
        }
        let config: RunConfig = serde_path_to_error::deserialize(root).map_err(|e| {
            RunError::config(e.path().to_string(), e.inner().to_string())
        })?;
        let mut known = Vec::new();
        flatten("", &serde_json::to_value(&config).expect("config serializes"), &mut known);
        let known: BTreeSet<&str> = known.iter().map(|(k, _)| k.as_str()).collect();
        if let Some((key, _)) = pairs.iter().find(|(k, _)| !known.contains(k.as_str())) {
            return Err(RunError::config(key, "unknown key"));
        }
        config.validate()?;
        Ok(config)
    }

    /// Flat text form; parsing it back yields an identical config.
    pub fn to_kv(&self) -> String {
        let mut pairs = Vec::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut pairs);
        let mut out = String::new();
        let mut section = "";
        for (key, value) in &pairs {
            let head = key.split('.').next().unwrap_or("");
            if head != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = head;
            }
            out.push_str(&format!("{key} = {}\n", format_value(value)));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if !(1..=3).contains(&d.dim) {
            return Err(RunError::config("domain.dim", "must be 1, 2 or 3"));
        }
        if d.lengths.len() != d.dim || d.lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(RunError::config("domain.lengths", "need one positive length per axis"));
        }
        if d.modes < 1 {
            return Err(RunError::config("domain.modes", "must be at least 1"));
        }
        let min_grid = BasisConfig::min_grid(d.family, d.modes);
        if d.grid < min_grid {
            return Err(RunError::config(
                "domain.grid",
                format!("{} points cannot resolve {} modes (need {})", d.grid, d.modes, min_grid),
            ));
        }
        match self.model.family {
            PotentialFamily::PowerLaw { p, scale } => {
                if !(p > 1.0) {
                    return Err(RunError::config("model.family.p", "exponent must exceed 1"));
                }
                if !(scale > 0.0) {
                    return Err(RunError::config("model.family.scale", "must be positive"));
                }
            }
            PotentialFamily::Newtonian { .. } => {}
        }
        if !(self.model.pressure_gamma > 1.0) {
            return Err(RunError::config("model.pressure_gamma", "adiabatic exponent must exceed 1"));
        }
        self.model
            .validate()
            .map_err(|e| RunError::config("model", e.to_string()))?;
        if !(self.noise.alpha > 0.0 && self.noise.alpha < 1.0) {
            return Err(RunError::config("noise.alpha", "must lie in (0, 1)"));
        }
        self.noise
            .validate()
            .map_err(|e| RunError::config("noise", e.to_string()))?;
        let s = &self.solver;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(RunError::config("solver.dt", "must be positive"));
        }
        if !(s.t_final > 0.0 && s.t_final.is_finite()) {
            return Err(RunError::config("solver.t_final", "must be positive"));
        }
        if s.guards.iter().any(|r| !(*r > 0.0)) {
            return Err(RunError::config("solver.guards", "guards must be positive"));
        }
        if s.level == LevelKind::Regularized {
            if s.guards.is_empty() {
                return Err(RunError::config("solver.guards", "regularized level needs a nonempty ladder"));
            }
            if !(s.mu > 0.0) {
                return Err(RunError::config("solver.mu", "must be positive on the regularized level"));
            }
            if !(s.epsilon > 0.0) {
                return Err(RunError::config("solver.epsilon", "must be positive on the regularized level"));
            }
        }
        for r in self.guard_ladder() {
            let params = self.solver_params(r);
            params
                .validate()
                .and_then(|_| params.steps().map(|_| ()))
                .map_err(|e| RunError::config("solver", e.to_string()))?;
        }
        self.initial
            .validate()
            .map_err(|e| RunError::config("initial", e.to_string()))?;
        if self.ensemble.paths < 1 {
            return Err(RunError::config("ensemble.paths", "must be at least 1"));
        }
        let g = &self.diagnostics;
        if g.defect_ladder.windows(2).any(|w| w[0] >= w[1]) || g.defect_ladder.len() == 1 {
            return Err(RunError::config(
                "diagnostics.defect_ladder",
                "needs at least two strictly increasing resolutions",
            ));
        }
        if g.defect_ladder.first() == Some(&0) {
            return Err(RunError::config("diagnostics.defect_ladder", "resolutions must be positive"));
        }
        if g.ym_time_cells < 1 || g.ym_space_cells < 1 {
            return Err(RunError::config("diagnostics.ym_space_cells", "cell counts must be positive"));
        }
        if !(g.energy_tolerance > 0.0) {
            return Err(RunError::config("diagnostics.energy_tolerance", "must be positive"));
        }
        Ok(())
    }

    pub fn basis_config(&self) -> BasisConfig {
        BasisConfig {
            dim: self.domain.dim,
            lengths: self.domain.lengths.clone(),
            family: self.domain.family,
            modes: self.domain.modes,
            grid: self.domain.grid,
        }
    }

    /// Guards to run; `None` disables stopping.
    pub fn guard_ladder(&self) -> Vec<Option<f64>> {
        if self.solver.guards.is_empty() {
            vec![None]
        } else {
            self.solver.guards.iter().map(|r| Some(*r)).collect()
        }
    }

    pub fn solver_params(&self, guard: Option<f64>) -> SolverParams {
        let s = &self.solver;
        let level = match s.level {
            LevelKind::Base => Level::Base,
            LevelKind::Regularized => Level::Regularized {
                mu: s.mu,
                epsilon: s.epsilon,
                r: guard.or_else(|| s.guards.first().copied()).unwrap_or(f64::INFINITY),
            },
        };
        SolverParams {
            level,
            dt: s.dt,
            t_final: s.t_final,
            cfl_safety: s.cfl_safety,
            guard,
            checkpoint_every: s.checkpoint_every,
        }
    }

    /// Applies `key = value` overrides in flat syntax.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut text = self.to_kv();
        let mut keys = BTreeSet::new();
        for o in overrides {
            let (k, _) = o
                .split_once('=')
                .ok_or_else(|| RunError::config(o.clone(), "override must be `key=value`"))?;
            keys.insert(k.trim().to_string());
        }
        text = text
            .lines()
            .filter(|l| {
                l.split_once('=')
                    .is_none_or(|(k, _)| !keys.contains(k.trim()) && !overrides_variant(&keys, k.trim()))
            })
            .collect::<Vec<_>>()
            .join("\n");
        for o in overrides {
            text.push('\n');
            text.push_str(o);
        }
        Self::from_kv(&text)
    }
}

/// A new `.kind` discriminator drops the sibling keys of the old variant.
fn overrides_variant(keys: &BTreeSet<String>, key: &str) -> bool {
    keys.iter().any(|k| {
        k.strip_suffix(".kind")
            .is_some_and(|parent| key.starts_with(parent) && key[parent.len()..].starts_with('.'))
    })
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_scalar(s: &str) -> Value {
    let s = s.trim();
    if let Some(inner) = s.strip_prefix('"').and_then(|r| r.strip_suffix('"')) {
        return Value::String(inner.to_string());
    }
    match s {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        "null" => return Value::Null,
        _ => {}
    }
    if let Ok(u) = s.parse::<u64>() {
        return Value::Number(u.into());
    }
    if let Ok(i) = s.parse::<i64>() {
        return Value::Number(i.into());
    }
    if let Ok(f) = s.parse::<f64>() {
        if let Some(n) = Number::from_f64(f) {
            return Value::Number(n);
        }
    }
    Value::String(s.to_string())
}

fn parse_scalar_or_list(s: &str) -> Value {
    if let Some(inner) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        let inner = inner.trim();
        if inner.is_empty() {
            return Value::Array(Vec::new());
        }
        return Value::Array(inner.split(',').map(parse_scalar).collect());
    }
    parse_scalar(s)
}

fn format_value(v: &Value) -> String {
    match v {
        Value::String(s) => format!("\"{s}\""),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(format_value).collect();
            format!("[{}]", parts.join(", "))
        }
        other => other.to_string(),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn overlay(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let map = match node {
            Value::Object(m) => m,
            _ => return Err(RunError::config(parts[..i].join("."), "not a section")),
        };
        if i + 1 == parts.len() {
            if *part == "kind" && map.get("kind") != Some(&value) {
                *map = Map::new();
            }
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}
