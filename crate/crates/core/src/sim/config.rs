//! Scenario configuration: agents, channel, timing model, unsafe sets.
//!
//! Scenarios are plain TOML documents. Everything that affects a run is in
//! the config (including each agent's concrete clock offset and the channel
//! seed), so a run is reproducible from the file alone.

use serde::{Deserialize, Serialize};

use crate::comm::DelayLaw;
use crate::dynamics::{model_by_name, PidGains};
use crate::geometry::{ConstraintRow, LinearConstraintSet};
use crate::reach::RuntimeBudget;
use crate::sim::SimError;
use crate::verify::TimingProfile;

fn default_position_axes() -> Vec<usize> {
    vec![0, 2]
}

fn default_model() -> String {
    "quadcopter4d".to_string()
}

fn default_control_period() -> f64 {
    0.2
}

fn default_horizon() -> f64 {
    2.0
}

fn default_h0() -> f64 {
    0.1
}

fn default_budget() -> RuntimeBudget {
    RuntimeBudget::Deterministic { passes: 3 }
}

fn default_delta() -> f64 {
    0.003
}

fn default_waypoint_tolerance() -> f64 {
    10.0
}

fn default_timing() -> TimingProfile {
    TimingProfile {
        tau_e: 0.058,
        tau_d: 0.0169,
        tau_tf: 2.64,
        tau_c: 0.04,
        tau_control: 10.0,
        t_runtime: 10.0,
    }
}

/// Channel parameters; delays in seconds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub delay_min_s: f64,
    pub delay_max_s: f64,
    #[serde(default)]
    pub drop_prob: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let law = DelayLaw::default();
        Self {
            delay_min_s: law.min_s,
            delay_max_s: law.max_s,
            drop_prob: 0.0,
        }
    }
}

impl ChannelConfig {
    pub fn delay_law(&self) -> DelayLaw {
        DelayLaw {
            min_s: self.delay_min_s,
            max_s: self.delay_max_s,
        }
    }
}

/// Linear constraint rows `coeffs . x <= bound` as written in scenario files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSetConfig {
    pub rows: Vec<ConstraintRowConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintRowConfig {
    pub coeffs: Vec<f64>,
    pub bound: f64,
}

impl ConstraintSetConfig {
    pub fn to_constraint_set(&self) -> Result<LinearConstraintSet, SimError> {
        LinearConstraintSet::new(
            self.rows
                .iter()
                .map(|r| ConstraintRow {
                    coeffs: r.coeffs.clone(),
                    bound: r.bound,
                })
                .collect(),
        )
        .map_err(|e| SimError::Config(format!("bad constraint set: {e}")))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub clamp: f64,
}

impl Default for GainsConfig {
    fn default() -> Self {
        let g = PidGains::default();
        Self {
            kp: g.kp,
            ki: g.ki,
            kd: g.kd,
            clamp: g.output_clamp,
        }
    }
}

impl GainsConfig {
    pub fn to_gains(self) -> PidGains {
        PidGains {
            kp: self.kp,
            ki: self.ki,
            kd: self.kd,
            output_clamp: self.clamp,
        }
    }
}

/// One agent of the scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub id: u32,
    #[serde(default = "default_model")]
    pub model: String,
    pub initial_state: Vec<f64>,
    #[serde(default)]
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default)]
    pub gains: GainsConfig,
    /// Clock synchronization error bound, seconds.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Concrete clock offset for this run; |offset| <= delta.
    #[serde(default)]
    pub clock_offset: f64,
    #[serde(default = "default_control_period")]
    pub control_period: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_h0")]
    pub h0: f64,
    #[serde(default = "default_budget")]
    pub budget: RuntimeBudget,
    /// Absolute initial-set widening per axis. When absent, positions widen
    /// by 2% of the matching speed times the control period and velocities
    /// by 2% of the speed (zero for non-quadcopter models).
    #[serde(default)]
    pub sensor_bloat: Option<Vec<f64>>,
    #[serde(default)]
    pub local_unsafe: Option<ConstraintSetConfig>,
    /// Constant model input for models without a waypoint controller.
    #[serde(default)]
    pub fixed_input: Option<Vec<f64>>,
    /// Per-agent cost profile; falls back to the scenario profile.
    #[serde(default)]
    pub timing: Option<TimingProfile>,
}

/// A complete scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Allowable safe distance between agents.
    pub safe_distance: f64,
    #[serde(default = "default_position_axes")]
    pub position_axes: Vec<usize>,
    #[serde(default = "default_waypoint_tolerance")]
    pub waypoint_tolerance: f64,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default = "default_timing")]
    pub timing: TimingProfile,
    #[serde(default)]
    pub global_unsafe: Option<ConstraintSetConfig>,
    pub agents: Vec<AgentConfig>,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig =
            toml::from_str(s).map_err(|e| SimError::Config(format!("cannot parse scenario: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Agents sorted by id; the order used for joint states and outputs.
    pub fn agents_by_id(&self) -> Vec<&AgentConfig> {
        let mut v: Vec<&AgentConfig> = self.agents.iter().collect();
        v.sort_by_key(|a| a.id);
        v
    }

    pub fn timing_for(&self, agent: &AgentConfig) -> TimingProfile {
        agent.timing.unwrap_or(self.timing)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::Config(msg));
        if !(self.duration > 0.0) {
            return fail("duration must be positive".into());
        }
        if self.agents.is_empty() {
            return fail("at least one agent is required".into());
        }
        if !(self.safe_distance > 0.0) {
            return fail("safe_distance must be positive".into());
        }
        if self.position_axes.is_empty() {
            return fail("position_axes must not be empty".into());
        }
        if !(self.channel.delay_min_s >= 0.0 && self.channel.delay_min_s <= self.channel.delay_max_s)
        {
            return fail("channel delays must satisfy 0 <= min <= max".into());
        }
        if !(0.0..=1.0).contains(&self.channel.drop_prob) {
            return fail("channel drop_prob must be within [0, 1]".into());
        }

        let mut ids = std::collections::BTreeSet::new();
        let mut joint_dim = 0usize;
        for agent in self.agents_by_id() {
            let tag = format!("agent {}", agent.id);
            if !ids.insert(agent.id) {
                return fail(format!("duplicate agent id {}", agent.id));
            }
            let model = match model_by_name(&agent.model) {
                Some(m) => m,
                None => return fail(format!("{tag}: unknown model '{}'", agent.model)),
            };
            let n = model.state_dim();
            joint_dim += n;
            if agent.initial_state.len() != n {
                return fail(format!(
                    "{tag}: initial_state has {} components, model '{}' needs {n}",
                    agent.initial_state.len(),
                    agent.model
                ));
            }
            if agent.initial_state.iter().any(|v| !v.is_finite()) {
                return fail(format!("{tag}: initial_state must be finite"));
            }
            if !(agent.control_period > 0.0) {
                return fail(format!("{tag}: control_period must be positive"));
            }
            if !(agent.horizon > agent.control_period) {
                return fail(format!("{tag}: horizon must exceed the control period"));
            }
            if !(agent.h0 > 0.0) {
                return fail(format!("{tag}: h0 must be positive"));
            }
            if !(agent.delta >= 0.0) {
                return fail(format!("{tag}: delta must be non-negative"));
            }
            if agent.clock_offset.abs() > agent.delta {
                return fail(format!(
                    "{tag}: |clock_offset| = {} exceeds delta = {}",
                    agent.clock_offset.abs(),
                    agent.delta
                ));
            }
            match agent.budget {
                RuntimeBudget::Deterministic { passes } if passes == 0 => {
                    return fail(format!("{tag}: budget needs at least one pass"));
                }
                RuntimeBudget::Wallclock { limit_ms } if !(limit_ms > 0.0) => {
                    return fail(format!("{tag}: wallclock budget must be positive"));
                }
                _ => {}
            }
            if let Some(bloat) = &agent.sensor_bloat {
                if bloat.len() != n {
                    return fail(format!("{tag}: sensor_bloat must have {n} components"));
                }
                if bloat.iter().any(|e| !(*e >= 0.0)) {
                    return fail(format!("{tag}: sensor_bloat must be non-negative"));
                }
            }
            if let Some(cs) = &agent.local_unsafe {
                let set = cs.to_constraint_set()?;
                if set.dim() != n {
                    return fail(format!(
                        "{tag}: local_unsafe rows must have {n} coefficients"
                    ));
                }
            }
            if let Some(u) = &agent.fixed_input {
                if u.len() != model.input_dim() {
                    return fail(format!(
                        "{tag}: fixed_input must have {} components",
                        model.input_dim()
                    ));
                }
                if u.iter().any(|v| !v.is_finite()) {
                    return fail(format!("{tag}: fixed_input must be finite"));
                }
            }
            for &axis in &self.position_axes {
                if axis >= n {
                    return fail(format!(
                        "{tag}: position axis {axis} out of range for model '{}'",
                        agent.model
                    ));
                }
            }
            if agent.model == "quadcopter4d" && agent.waypoints.is_empty() && agent.fixed_input.is_none()
            {
                return fail(format!("{tag}: quadcopter agents need waypoints"));
            }
        }
        if let Some(cs) = &self.global_unsafe {
            let set = cs.to_constraint_set()?;
            if set.dim() != joint_dim {
                return fail(format!(
                    "global_unsafe rows must have {joint_dim} coefficients (stacked states in id order), got {}",
                    set.dim()
                ));
            }
        }
        Ok(())
    }
}
