//! Scenario configuration: JSON file with an explicit format version.

use std::path::Path;

use bpguard_core::arm::{ElbowBranch, RobotModel};
use bpguard_core::executive::{reference_edges, ExecConfig};
use bpguard_core::intent::{ACTIVITY_THRESHOLD, DEFAULT_BETA1, DEFAULT_SWITCH_MARGIN};
use bpguard_core::regions::{Limits, Region, RegionKind};
use bpguard_core::rrt::PlannerConfig;
use bpguard_core::synth::AlphaPolicy;
use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value at {field}: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsConfig {
    /// Workspace half-widths around each equilibrium (m).
    pub x_bar: Vec<f64>,
    /// Joint-velocity half-widths (rad/s).
    pub qd_bar: Vec<f64>,
    /// Joint half-widths of the validity box of each local model (rad).
    pub dq_box: Vec<f64>,
    /// Radius of the human-force disc (N).
    pub w_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub eps0: f64,
    pub eps1: f64,
    pub alpha: AlphaPolicy,
    pub ldi_samples: usize,
    pub ldi_margin: f64,
    pub contain_per_edge: usize,
    pub cert_samples: usize,
    pub max_iters: usize,
    pub goal_bias: f64,
    pub branch: ElbowBranch,
    pub avoid_other_tasks: bool,
    pub transition_lmi: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        let p = PlannerConfig::default();
        Self {
            eps0: p.eps0,
            eps1: p.eps1,
            alpha: p.alpha,
            ldi_samples: p.ldi_samples,
            ldi_margin: p.ldi_margin,
            contain_per_edge: p.contain_per_edge,
            cert_samples: p.cert_samples,
            max_iters: p.max_iters,
            goal_bias: p.goal_bias,
            branch: p.branch,
            avoid_other_tasks: p.avoid_other_tasks,
            transition_lmi: p.transition_lmi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntentConfig {
    pub beta1: f64,
    /// Forces below this magnitude (N) are ignored by the belief update.
    pub threshold: f64,
    /// Belief updates per second.
    pub rate_hz: f64,
    pub switch_margin: f64,
}

impl Default for IntentConfig {
    fn default() -> Self {
        Self {
            beta1: DEFAULT_BETA1,
            threshold: ACTIVITY_THRESHOLD,
            rate_hz: 10.0,
            switch_margin: DEFAULT_SWITCH_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutiveConfig {
    pub delta_switch: f64,
    pub breach_level: f64,
    pub dt: f64,
    /// Anchor where episodes and live sessions begin.
    pub start: String,
}

impl Default for ExecutiveConfig {
    fn default() -> Self {
        let e = ExecConfig::default();
        Self {
            delta_switch: e.delta_switch,
            breach_level: e.breach_level,
            dt: e.dt,
            start: "a1".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub plan: u64,
    pub ldi: u64,
    pub certify: u64,
    pub sim: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            plan: 7,
            ldi: 17,
            certify: 2024,
            sim: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub format_version: u32,
    #[serde(default)]
    pub name: String,
    pub robot: RobotModel,
    pub regions: Vec<Region>,
    /// Task regions in belief order; three are expected by the anchor layout.
    pub tasks: Vec<String>,
    pub limits: LimitsConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub intent: IntentConfig,
    #[serde(default)]
    pub executive: ExecutiveConfig,
    /// Anchor adjacency; defaults to the three-task, three-midway layout.
    #[serde(default = "default_anchor_edges")]
    pub anchor_edges: Vec<(String, String)>,
    #[serde(default)]
    pub seeds: Seeds,
}

fn default_anchor_edges() -> Vec<(String, String)> {
    reference_edges()
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect()
}

fn positive_vec(field: &str, v: &[f64], n: usize) -> Result<(), ConfigError> {
    if v.len() != n {
        return Err(invalid(
            field,
            format!("expected {n} entries, got {}", v.len()),
        ));
    }
    if let Some(i) = v.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(invalid(
            format!("{field}[{i}]"),
            "must be finite and positive",
        ));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(invalid(
                "format_version",
                format!(
                    "expected {CONFIG_FORMAT_VERSION}, got {}",
                    self.format_version
                ),
            ));
        }
        self.robot
            .validate()
            .map_err(|e| invalid("robot", e.to_string()))?;
        let n = self.robot.n();
        if n != 2 {
            return Err(invalid(
                "robot.link_lengths",
                "only two-link arms are supported",
            ));
        }
        let l = &self.limits;
        positive_vec("limits.x_bar", &l.x_bar, 2)?;
        positive_vec("limits.qd_bar", &l.qd_bar, n)?;
        positive_vec("limits.dq_box", &l.dq_box, n)?;
        if !(l.w_bar.is_finite() && l.w_bar > 0.0) {
            return Err(invalid("limits.w_bar", "must be finite and positive"));
        }
        for (i, r) in self.regions.iter().enumerate() {
            r.validate()
                .map_err(|e| invalid(format!("regions[{i}]"), e.to_string()))?;
            if self.regions[..i].iter().any(|o| o.id == r.id) {
                return Err(invalid(
                    format!("regions[{i}].id"),
                    format!("duplicate id {}", r.id),
                ));
            }
        }
        if self.tasks.is_empty() {
            return Err(invalid("tasks", "at least one task region is required"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            match self.region(t) {
                Some(r) if r.kind == RegionKind::Task => {}
                Some(_) => {
                    return Err(invalid(
                        format!("tasks[{i}]"),
                        format!("{t} is not a task region"),
                    ))
                }
                None => {
                    return Err(invalid(
                        format!("tasks[{i}]"),
                        format!("unknown region {t}"),
                    ))
                }
            }
        }
        let s = &self.synthesis;
        if !(s.eps0 > 0.0 && s.eps0 < 1.0) {
            return Err(invalid("synthesis.eps0", "must lie in (0, 1)"));
        }
        if !(s.eps1 > 0.0 && s.eps1 < 1.0) {
            return Err(invalid("synthesis.eps1", "must lie in (0, 1)"));
        }
        if s.eps0 >= 1.0 - s.eps1 {
            return Err(invalid(
                "synthesis.eps0",
                format!(
                    "eps0 < 1 - eps1 is required, got eps0 = {} and eps1 = {}",
                    s.eps0, s.eps1
                ),
            ));
        }
        if !(0.0..=1.0).contains(&s.goal_bias) {
            return Err(invalid("synthesis.goal_bias", "must lie in [0, 1]"));
        }
        if s.ldi_samples == 0 || s.cert_samples == 0 || s.max_iters == 0 {
            return Err(invalid(
                "synthesis",
                "sample counts and max_iters must be positive",
            ));
        }
        let i = &self.intent;
        if !(i.beta1 >= 0.0 && i.beta1.is_finite()) {
            return Err(invalid("intent.beta1", "must be finite and non-negative"));
        }
        if !(i.rate_hz > 0.0 && i.threshold >= 0.0 && i.switch_margin >= 0.0) {
            return Err(invalid(
                "intent",
                "rate_hz must be positive, threshold and switch_margin non-negative",
            ));
        }
        let e = &self.executive;
        if !(e.dt > 0.0 && e.delta_switch > 0.0 && e.breach_level >= 0.0) {
            return Err(invalid(
                "executive",
                "dt and delta_switch must be positive, breach_level non-negative",
            ));
        }
        if !self
            .anchor_edges
            .iter()
            .any(|(a, b)| *a == e.start || *b == e.start)
        {
            return Err(invalid(
                "executive.start",
                format!("{} is not an anchor", e.start),
            ));
        }
        Ok(())
    }

    pub fn region(&self, id: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    pub fn limits(&self) -> Limits {
        Limits {
            x_bounds: DVector::from_vec(self.limits.x_bar.clone()),
            qd_bounds: DVector::from_vec(self.limits.qd_bar.clone()),
            dq_bounds: DVector::from_vec(self.limits.dq_box.clone()),
            u_bounds: DVector::from_vec(self.robot.torque_limits.clone()),
            w_bar: self.limits.w_bar,
        }
    }

    pub fn planner(&self) -> PlannerConfig {
        let s = &self.synthesis;
        PlannerConfig {
            eps0: s.eps0,
            eps1: s.eps1,
            alpha: s.alpha,
            max_iters: s.max_iters,
            goal_bias: s.goal_bias,
            ldi_samples: s.ldi_samples,
            ldi_margin: s.ldi_margin,
            ldi_seed: self.seeds.ldi,
            contain_per_edge: s.contain_per_edge,
            cert_samples: s.cert_samples,
            branch: s.branch,
            avoid_other_tasks: s.avoid_other_tasks,
            transition_lmi: s.transition_lmi,
            ..PlannerConfig::default()
        }
    }

    pub fn exec_config(&self) -> ExecConfig {
        ExecConfig {
            delta_switch: self.executive.delta_switch,
            breach_level: self.executive.breach_level,
            belief_period: 1.0 / self.intent.rate_hz,
            dt: self.executive.dt,
            w_bar: self.limits.w_bar,
            beta1: self.intent.beta1,
            switch_margin: self.intent.switch_margin,
            activity_threshold: self.intent.threshold,
        }
    }

    /// Task ids with their region centers, in belief order.
    pub fn candidates(&self) -> Vec<(String, Vector2<f64>)> {
        self.tasks
            .iter()
            .map(|t| (t.clone(), self.region(t).expect("validated task").center()))
            .collect()
    }
}

pub fn parse_config(text: &str, origin: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse {
        path: origin.clone(),
        message: e.to_string(),
    })?;
    parse_config(&text, &origin)
}
