//! Run configuration: JSON schema, defaults and validation with key paths.

use std::fmt;
use std::path::{Path, PathBuf};

use lgrowth_core::growth::DeltaSchedule;
use lgrowth_core::sde::SdeOptions;
use lgrowth_core::{ChiProfile, Cutoff, KernelSpec};
use serde::{Deserialize, Serialize};

/// A configuration problem tied to the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(path: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        path: path.to_string(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Circle,
    Annulus,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default)]
    pub r_inner: Option<f64>,
    #[serde(default)]
    pub r_outer: Option<f64>,
    #[serde(default)]
    pub n_inner: Option<usize>,
    #[serde(default)]
    pub n_outer: Option<usize>,
    /// Mesh JSON, relative to the config file.
    #[serde(default)]
    pub mesh_file: Option<PathBuf>,
    /// Initial particle position as (component, arclength).
    #[serde(default)]
    pub start: (usize, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollarConfig {
    pub collar_length: f64,
    pub chi: ChiProfile,
}

impl Default for CollarConfig {
    fn default() -> Self {
        Self {
            collar_length: 0.5,
            chi: ChiProfile::Quintic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMethod {
    Euler,
    Picard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub method: FlowMethod,
    pub dt: f64,
    pub t_max: f64,
    /// Picard fixed-point tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub jac_floor: f64,
    pub clearance_floor: Option<f64>,
    pub store_every: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            method: FlowMethod::Euler,
            dt: 1e-3,
            t_max: 1.0,
            tol: 1e-8,
            max_iter: 50,
            jac_floor: 1e-3,
            clearance_floor: None,
            store_every: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaRule {
    Sqrt,
}

/// Either a fixed δ or a named schedule δ(ε).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaConfig {
    Value(f64),
    Rule(DeltaRule),
}

impl DeltaConfig {
    pub fn schedule(&self) -> DeltaSchedule {
        match *self {
            DeltaConfig::Value(d) => DeltaSchedule::Fixed(d),
            DeltaConfig::Rule(DeltaRule::Sqrt) => DeltaSchedule::Sqrt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicroConfig {
    pub epsilon: Option<f64>,
    pub epsilon_grid: Option<Vec<f64>>,
    pub delta: DeltaConfig,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub t_max: f64,
    pub snapshot_times: Option<Vec<f64>>,
    pub compensator_samples: usize,
    pub sde: SdeOptions,
}

impl Default for MicroConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            epsilon_grid: None,
            delta: DeltaConfig::Rule(DeltaRule::Sqrt),
            seed: None,
            seeds: None,
            t_max: 0.5,
            snapshot_times: None,
            compensator_samples: 64,
            sde: SdeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabConfig {
    pub flow_dt: f64,
    /// Two or more profiles turn on the χ-independence check in `compare`.
    pub chi_profiles: Vec<ChiProfile>,
    pub chi_epsilon: f64,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            flow_dt: 1e-3,
            chi_profiles: Vec::new(),
            chi_epsilon: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeCheckConfig {
    pub radius: f64,
    /// (δ, u) pairs for the half-line local-time law.
    pub law_points: Vec<(f64, f64)>,
    pub law_paths: usize,
    pub law_steps: usize,
    pub dirichlet_xi: Vec<f64>,
    pub dirichlet_paths: usize,
    pub trace_delta: f64,
    pub trace_samples: usize,
    pub ks_tol: f64,
    pub sde: SdeOptions,
}

impl Default for SdeCheckConfig {
    fn default() -> Self {
        Self {
            radius: 1.0,
            law_points: vec![(0.5, 1.0), (1.0, 1.0), (0.5, 0.25)],
            law_paths: 100_000,
            law_steps: 100,
            dirichlet_xi: vec![0.5, 1.0, 2.0],
            dirichlet_paths: 10_000,
            trace_delta: 4.0,
            trace_samples: 100_000,
            ks_tol: 0.02,
            sde: SdeOptions {
                dt: 1.6e-2,
                ..SdeOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    pub delta: f64,
    pub samples: usize,
    pub ks_tol: f64,
    /// Φ(p) = diag(stretch)·p·(1 + wobble·cos(wobble_mode·θ)).
    pub stretch: [f64; 2],
    pub wobble: f64,
    pub wobble_mode: u32,
    pub sde: SdeOptions,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            delta: 4.0,
            samples: 20_000,
            ks_tol: 0.02,
            stretch: [1.0, 1.0],
            wobble: 0.0,
            wobble_mode: 2,
            sde: SdeOptions {
                dt: 1.6e-2,
                ..SdeOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub collar: CollarConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub micro: MicroConfig,
    #[serde(default)]
    pub lab: LabConfig,
    #[serde(default)]
    pub sde_checks: SdeCheckConfig,
    #[serde(default)]
    pub trace: TraceConfig,
    /// Base seed of the checks and of `micro` when it sets none.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_output() -> PathBuf {
    PathBuf::from("lgrowth-out")
}

pub const DEFAULT_EPSILON_GRID: [f64; 3] = [0.04, 0.02, 0.01];
pub const DEFAULT_SEED_COUNT: u64 = 16;
pub const DEFAULT_SNAPSHOTS: usize = 10;

/// (ε, δ(ε)) pair written to the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub epsilon: f64,
    pub delta: f64,
}

impl RunConfig {
    /// Parses and validates, naming the offending key on failure. Relative
    /// mesh paths are resolved against `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ConfigError {
                path: if path == "." { String::new() } else { path },
                message: inner.to_string(),
            }
        })?;
        if let (Some(base), Some(file)) = (base, cfg.scenario.mesh_file.as_ref()) {
            if file.is_relative() {
                cfg.scenario.mesh_file = Some(base.join(file));
            }
        }
        cfg.materialize();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: String::new(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_json(&text, path.parent())
    }

    /// Fills every optional field with its default so the manifest is
    /// self-contained.
    pub fn materialize(&mut self) {
        let s = &mut self.scenario;
        match s.kind {
            ScenarioKind::Circle => {
                s.radius.get_or_insert(1.0);
                s.nodes.get_or_insert(128);
            }
            ScenarioKind::Annulus => {
                s.r_inner.get_or_insert(1.0);
                s.r_outer.get_or_insert(2.0);
                s.n_inner.get_or_insert(128);
                s.n_outer.get_or_insert(256);
            }
            ScenarioKind::Custom => {}
        }
        let m = &mut self.micro;
        if m.epsilon.is_none() && m.epsilon_grid.is_none() {
            m.epsilon_grid = Some(DEFAULT_EPSILON_GRID.to_vec());
        }
        if m.seed.is_none() && m.seeds.is_none() {
            m.seeds = Some((self.seed..self.seed + DEFAULT_SEED_COUNT).collect());
        }
        if m.snapshot_times.is_none() {
            let t = m.t_max;
            m.snapshot_times = Some(
                (1..=DEFAULT_SNAPSHOTS)
                    .map(|k| t * k as f64 / DEFAULT_SNAPSHOTS as f64)
                    .collect(),
            );
        }
    }

    /// Replaces every seed with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.micro.seed = None;
        self.micro.seeds = Some(vec![seed]);
    }

    pub fn epsilons(&self) -> Vec<f64> {
        match (&self.micro.epsilon, &self.micro.epsilon_grid) {
            (Some(e), _) => vec![*e],
            (None, Some(g)) => g.clone(),
            (None, None) => DEFAULT_EPSILON_GRID.to_vec(),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        match (&self.micro.seed, &self.micro.seeds) {
            (Some(s), _) => vec![*s],
            (None, Some(v)) => v.clone(),
            (None, None) => vec![self.seed],
        }
    }

    pub fn deltas(&self) -> Vec<DeltaEntry> {
        let schedule = self.micro.delta.schedule();
        self.epsilons()
            .into_iter()
            .map(|epsilon| DeltaEntry {
                epsilon,
                delta: schedule.delta(epsilon),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |path: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                err(path, format!("must be positive and finite, got {v}"))
            }
        };
        let s = &self.scenario;
        match s.kind {
            ScenarioKind::Circle => {
                positive("scenario.radius", s.radius.unwrap_or(1.0))?;
                if s.nodes.unwrap_or(128) < 8 {
                    return err("scenario.nodes", "need at least 8 nodes");
                }
                for (k, v) in [("r_inner", s.r_inner), ("r_outer", s.r_outer)] {
                    if v.is_some() {
                        return err(&format!("scenario.{k}"), "only valid for an annulus");
                    }
                }
            }
            ScenarioKind::Annulus => {
                let (a, b) = (s.r_inner.unwrap_or(1.0), s.r_outer.unwrap_or(2.0));
                positive("scenario.r_inner", a)?;
                positive("scenario.r_outer", b)?;
                if a >= b {
                    return err("scenario.r_inner", format!("must be below r_outer ({a} >= {b})"));
                }
                for (k, v) in [("n_inner", s.n_inner), ("n_outer", s.n_outer)] {
                    if v.unwrap_or(128) < 8 {
                        return err(&format!("scenario.{k}"), "need at least 8 nodes");
                    }
                }
                if s.radius.is_some() || s.nodes.is_some() {
                    return err("scenario", "an annulus takes r_inner, r_outer, n_inner, n_outer");
                }
            }
            ScenarioKind::Custom => {
                if s.mesh_file.is_none() {
                    return err("scenario.mesh_file", "required for a custom scenario");
                }
            }
        }
        let components = match s.kind {
            ScenarioKind::Annulus => Some(2),
            ScenarioKind::Circle => Some(1),
            ScenarioKind::Custom => None,
        };
        if let Some(n) = components {
            if s.start.0 >= n {
                return err("scenario.start", format!("component {} does not exist", s.start.0));
            }
        }
        self.kernel.validate().or_else(|e| err("kernel", e.to_string()))?;
        positive("collar.collar_length", self.collar.collar_length)?;
        Cutoff::new(self.collar.chi.clone(), self.collar.collar_length).or_else(|e| err("collar.chi", e.to_string()))?;

        let f = &self.flow;
        positive("flow.dt", f.dt)?;
        if !(f.t_max >= 0.0 && f.t_max.is_finite()) {
            return err("flow.t_max", format!("must be nonnegative, got {}", f.t_max));
        }
        positive("flow.tol", f.tol)?;
        positive("flow.jac_floor", f.jac_floor)?;
        if let Some(c) = f.clearance_floor {
            positive("flow.clearance_floor", c)?;
        }
        if f.store_every == 0 {
            return err("flow.store_every", "must be at least 1");
        }
        if f.max_iter == 0 {
            return err("flow.max_iter", "must be at least 1");
        }
        if f.method == FlowMethod::Picard && !(f.dt <= f.t_max || f.t_max == 0.0) {
            return err("flow.dt", "Picard grid step exceeds t_max");
        }

        let m = &self.micro;
        if m.epsilon.is_some() && m.epsilon_grid.is_some() {
            return err("micro", "set either epsilon or epsilon_grid, not both");
        }
        if m.seed.is_some() && m.seeds.is_some() {
            return err("micro", "set either seed or seeds, not both");
        }
        if let Some(e) = m.epsilon {
            positive("micro.epsilon", e)?;
        }
        if let Some(g) = &m.epsilon_grid {
            if g.is_empty() {
                return err("micro.epsilon_grid", "must not be empty");
            }
            for (i, &e) in g.iter().enumerate() {
                positive(&format!("micro.epsilon_grid[{i}]"), e)?;
            }
        }
        if let Some(v) = &m.seeds {
            if v.is_empty() {
                return err("micro.seeds", "must not be empty");
            }
        }
        if let DeltaConfig::Value(d) = m.delta {
            positive("micro.delta", d)?;
        }
        if !(m.t_max >= 0.0 && m.t_max.is_finite()) {
            return err("micro.t_max", format!("must be nonnegative, got {}", m.t_max));
        }
        if let Some(ts) = &m.snapshot_times {
            if ts.windows(2).any(|w| w[0] > w[1]) || ts.iter().any(|&t| !(0.0..=m.t_max).contains(&t)) {
                return err("micro.snapshot_times", "must be sorted within [0, micro.t_max]");
            }
        }
        positive("micro.sde.dt", m.sde.dt)?;
        positive("micro.sde.step_budget", m.sde.step_budget as f64)?;

        positive("lab.flow_dt", self.lab.flow_dt)?;
        positive("lab.chi_epsilon", self.lab.chi_epsilon)?;
        for (i, p) in self.lab.chi_profiles.iter().enumerate() {
            Cutoff::new(p.clone(), self.collar.collar_length)
                .or_else(|e| err(&format!("lab.chi_profiles[{i}]"), e.to_string()))?;
        }

        let c = &self.sde_checks;
        positive("sde_checks.radius", c.radius)?;
        for (i, &(d, u)) in c.law_points.iter().enumerate() {
            positive(&format!("sde_checks.law_points[{i}]"), d.min(u))?;
        }
        for (i, &x) in c.dirichlet_xi.iter().enumerate() {
            positive(&format!("sde_checks.dirichlet_xi[{i}]"), x)?;
        }
        for (k, v) in [
            ("law_paths", c.law_paths),
            ("law_steps", c.law_steps),
            ("dirichlet_paths", c.dirichlet_paths),
            ("trace_samples", c.trace_samples),
        ] {
            if v == 0 {
                return err(&format!("sde_checks.{k}"), "must be at least 1");
            }
        }
        positive("sde_checks.trace_delta", c.trace_delta)?;
        positive("sde_checks.ks_tol", c.ks_tol)?;
        positive("sde_checks.sde.dt", c.sde.dt)?;

        let t = &self.trace;
        positive("trace.delta", t.delta)?;
        positive("trace.ks_tol", t.ks_tol)?;
        positive("trace.sde.dt", t.sde.dt)?;
        if t.samples == 0 {
            return err("trace.samples", "must be at least 1");
        }
        positive("trace.stretch[0]", t.stretch[0])?;
        positive("trace.stretch[1]", t.stretch[1])?;
        if t.wobble.is_nan() || t.wobble.abs() >= 0.5 {
            return err("trace.wobble", format!("must lie in (-0.5, 0.5), got {}", t.wobble));
        }
        if let Some(n) = self.threads {
            if n == 0 {
                return err("threads", "must be at least 1");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_json(text, None)
    }

    #[test]
    fn minimal_circle_materializes_defaults() {
        let c = parse(r#"{"scenario": {"kind": "circle"}}"#).unwrap();
        assert_eq!(c.scenario.radius, Some(1.0));
        assert_eq!(c.scenario.nodes, Some(128));
        assert_eq!(c.micro.epsilon_grid.as_deref(), Some(&DEFAULT_EPSILON_GRID[..]));
        assert_eq!(c.seeds(), (0..16).collect::<Vec<_>>());
        assert_eq!(c.micro.snapshot_times.as_ref().unwrap().len(), DEFAULT_SNAPSHOTS);
        let echo = serde_json::to_value(&c).unwrap();
        for key in ["kernel", "collar", "flow", "micro", "lab", "sde_checks", "trace", "output"] {
            assert!(echo.get(key).is_some(), "{key}");
        }
        assert_eq!(echo["kernel"]["bandwidth"], 0.3);
        let again: RunConfig = serde_json::from_value(echo).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn nonpositive_epsilon_names_key() {
        let e = parse(r#"{"scenario": {"kind": "circle"}, "micro": {"epsilon": 0.0}}"#).unwrap_err();
        assert_eq!(e.path, "micro.epsilon");
        let e = parse(r#"{"scenario": {"kind": "circle"}, "micro": {"epsilon_grid": [0.1, -1]}}"#).unwrap_err();
        assert_eq!(e.path, "micro.epsilon_grid[1]");
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let e = parse(r#"{"scenario": {"kind": "circle"}, "micro": {"epsilonn": 0.1}}"#).unwrap_err();
        assert_eq!(e.path, "micro.epsilonn");
        assert!(e.message.contains("unknown field"), "{e}");
        let e = parse(r#"{"scenario": {"kind": "circle"}, "extra": 1}"#).unwrap_err();
        assert!(e.message.contains("extra"), "{e}");
        let e = parse(r#"{"scenario": {"kind": "circle"}, "micro": {"sde": {"dtt": 1}}}"#).unwrap_err();
        assert_eq!(e.path, "micro.sde.dtt");
    }

    #[test]
    fn type_errors_name_key() {
        let e = parse(r#"{"scenario": {"kind": "circle"}, "flow": {"dt": "fast"}}"#).unwrap_err();
        assert_eq!(e.path, "flow.dt");
    }

    #[test]
    fn sqrt_schedule_materializes_per_epsilon() {
        let c = parse(r#"{"scenario": {"kind": "circle"}, "micro": {"epsilon_grid": [0.04, 0.01], "delta": "sqrt"}}"#)
            .unwrap();
        let d = c.deltas();
        assert_eq!(d.len(), 2);
        assert!((d[0].delta - 0.2).abs() < 1e-15 && (d[1].delta - 0.1).abs() < 1e-15);
        let c = parse(r#"{"scenario": {"kind": "circle"}, "micro": {"epsilon": 0.04, "delta": 0.3}}"#).unwrap();
        assert_eq!(c.deltas(), vec![DeltaEntry { epsilon: 0.04, delta: 0.3 }]);
        let e = parse(r#"{"scenario": {"kind": "circle"}, "micro": {"delta": "cubic"}}"#).unwrap_err();
        assert_eq!(e.path, "micro.delta");
    }

    #[test]
    fn inconsistent_blocks_are_rejected() {
        let e = parse(r#"{"scenario": {"kind": "annulus", "r_inner": 2, "r_outer": 1}}"#).unwrap_err();
        assert_eq!(e.path, "scenario.r_inner");
        let e = parse(r#"{"scenario": {"kind": "annulus", "radius": 1}}"#).unwrap_err();
        assert_eq!(e.path, "scenario");
        let e = parse(r#"{"scenario": {"kind": "circle", "start": [1, 0.0]}}"#).unwrap_err();
        assert_eq!(e.path, "scenario.start");
        let e = parse(r#"{"scenario": {"kind": "custom"}}"#).unwrap_err();
        assert_eq!(e.path, "scenario.mesh_file");
        let e = parse(r#"{"scenario": {"kind": "circle"}, "micro": {"epsilon": 0.1, "epsilon_grid": [0.1]}}"#)
            .unwrap_err();
        assert_eq!(e.path, "micro");
        let e = parse(r#"{"scenario": {"kind": "circle"}, "collar": {"chi": {"polynomial": [0.1, 0, 0, 10, -15, 6]}}}"#)
            .unwrap_err();
        assert_eq!(e.path, "collar.chi");
    }

    #[test]
    fn seed_override_replaces_all_seeds() {
        let mut c = parse(r#"{"scenario": {"kind": "circle"}, "micro": {"seeds": [1, 2, 3]}}"#).unwrap();
        c.override_seed(9);
        assert_eq!(c.seeds(), vec![9]);
        assert_eq!(c.seed, 9);
    }
}
