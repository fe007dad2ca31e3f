//! Per-run metrics aggregation.
//!
//! Everything here is recomputable from the event log, the ground truth and
//! the scenario config; the simulator carries no hidden counters. Scheduled
//! per-message costs come straight from the timing profiles, transfer times
//! are averaged from the actual (seeded) channel delays, and the total
//! verification time per agent is the closed-form estimate over its profile.

use serde::{Deserialize, Serialize};

use crate::sim::config::ScenarioConfig;
use crate::sim::events::{EventKind, EventLog};
use crate::sim::truth::GroundTruth;
use crate::verify::{vt_estimate, GlobalVerdict, PairVerdict};

/// Wallclock-mode cost measurements (milliseconds, per agent index).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasuredCosts {
    pub reach_ms: Vec<CostStat>,
    pub encode_ms: Vec<CostStat>,
    pub decode_ms: Vec<CostStat>,
    pub check_ms: Vec<CostStat>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostStat {
    pub sum: f64,
    pub count: u64,
}

impl CostStat {
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }
}

impl MeasuredCosts {
    pub fn new(n: usize) -> Self {
        Self {
            reach_ms: vec![CostStat::default(); n],
            encode_ms: vec![CostStat::default(); n],
            decode_ms: vec![CostStat::default(); n],
            check_ms: vec![CostStat::default(); n],
        }
    }

    pub fn record_reach(&mut self, a: usize, ms: f64) {
        self.reach_ms[a].add(ms);
    }
    pub fn record_encode(&mut self, a: usize, ms: f64) {
        self.encode_ms[a].add(ms);
    }
    pub fn record_decode(&mut self, a: usize, ms: f64) {
        self.decode_ms[a].add(ms);
    }
    pub fn record_check(&mut self, a: usize, ms: f64) {
        self.check_ms[a].add(ms);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub id: u32,
    /// Scheduled per-message costs from the agent's timing profile (ms).
    pub tau_e_ms: f64,
    pub tau_d_ms: f64,
    pub tau_c_ms: f64,
    /// Profile transfer cost used in the verification-time estimate (ms).
    pub tau_tf_profile_ms: f64,
    /// Mean of the actual channel delays on messages this agent received.
    pub tau_tf_measured_ms: Option<f64>,
    /// Estimated total verification time per period; absent for a lone agent.
    pub vt_ms: Option<f64>,
    pub reach_count: u64,
    pub useful_msgs: u64,
    pub stale_msgs: u64,
    pub pair_false: u64,
    pub pair_uncertain: u64,
    pub local_unsafe: u64,
    pub budget_overruns: u64,
    pub global_true: u64,
    pub global_uncertain: u64,
    pub waypoints_reached: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub agents: Vec<AgentMetrics>,
    /// Minimum ground-truth pairwise distance over the run, on the
    /// scenario's position axes.
    pub min_pairwise_distance: Option<f64>,
    /// Verdicts that could not exclude a violation, across all kinds.
    pub uncertain_total: u64,
    /// Wallclock-mode measurements; absent in deterministic runs.
    pub measured: Option<MeasuredCosts>,
}

/// Aggregate a completed run.
pub fn metrics_report(events: &EventLog, truth: &GroundTruth, cfg: &ScenarioConfig) -> Metrics {
    let n_agents = cfg.agents.len() as u32;
    let mut agents = Vec::new();
    for ac in cfg.agents_by_id() {
        let profile = cfg.timing_for(ac);
        let mut m = AgentMetrics {
            id: ac.id,
            tau_e_ms: profile.tau_e,
            tau_d_ms: profile.tau_d,
            tau_c_ms: profile.tau_c,
            tau_tf_profile_ms: profile.tau_tf,
            tau_tf_measured_ms: None,
            vt_ms: (n_agents >= 2).then(|| vt_estimate(&profile, n_agents)),
            reach_count: 0,
            useful_msgs: 0,
            stale_msgs: 0,
            pair_false: 0,
            pair_uncertain: 0,
            local_unsafe: 0,
            budget_overruns: 0,
            global_true: 0,
            global_uncertain: 0,
            waypoints_reached: 0,
        };
        let mut delay_sum = 0.0;
        let mut delay_count = 0u64;
        for r in events.records.iter().filter(|r| r.agent == ac.id) {
            match &r.kind {
                EventKind::ReachDone { .. } => m.reach_count += 1,
                EventKind::Deliver { delay_s, .. } => {
                    delay_sum += delay_s * 1e3;
                    delay_count += 1;
                }
                EventKind::PairCheck { verdict, .. } => {
                    m.useful_msgs += 1;
                    match verdict {
                        PairVerdict::False { .. } => m.pair_false += 1,
                        PairVerdict::Uncertain => m.pair_uncertain += 1,
                    }
                }
                EventKind::StaleMsg { .. } => m.stale_msgs += 1,
                EventKind::LocalUnsafe => m.local_unsafe += 1,
                EventKind::BudgetOverrun => m.budget_overruns += 1,
                EventKind::GlobalCheck { verdict, .. } => match verdict {
                    GlobalVerdict::True { .. } => m.global_true += 1,
                    GlobalVerdict::Uncertain => m.global_uncertain += 1,
                },
                EventKind::WaypointReached { .. } => m.waypoints_reached += 1,
                _ => {}
            }
        }
        if delay_count > 0 {
            m.tau_tf_measured_ms = Some(delay_sum / delay_count as f64);
        }
        agents.push(m);
    }
    Metrics {
        agents,
        min_pairwise_distance: truth.min_pairwise_distance(&cfg.position_axes),
        uncertain_total: events.uncertain_total() as u64,
        measured: None,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

impl Metrics {
    /// Delimited export: one row per agent, then a key/value summary block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "agent,tau_e_ms,tau_d_ms,tau_tf_profile_ms,tau_tf_measured_ms,tau_c_ms,vt_ms,\
             reach_count,useful_msgs,stale_msgs,pair_false,pair_uncertain,local_unsafe,\
             budget_overruns,global_true,global_uncertain,waypoints_reached\n",
        );
        for a in &self.agents {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                a.id,
                a.tau_e_ms,
                a.tau_d_ms,
                a.tau_tf_profile_ms,
                opt(a.tau_tf_measured_ms),
                a.tau_c_ms,
                opt(a.vt_ms),
                a.reach_count,
                a.useful_msgs,
                a.stale_msgs,
                a.pair_false,
                a.pair_uncertain,
                a.local_unsafe,
                a.budget_overruns,
                a.global_true,
                a.global_uncertain,
                a.waypoints_reached,
            ));
        }
        out.push_str("\n# summary\n");
        out.push_str(&format!(
            "min_pairwise_distance,{}\n",
            opt(self.min_pairwise_distance)
        ));
        out.push_str(&format!("uncertain_total,{}\n", self.uncertain_total));
        if let Some(measured) = &self.measured {
            out.push_str("\n# measured (wallclock mode, ms)\n");
            out.push_str("agent,reach_ms,encode_ms,decode_ms,check_ms\n");
            for (i, a) in self.agents.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    a.id,
                    opt(measured.reach_ms[i].mean()),
                    opt(measured.encode_ms[i].mean()),
                    opt(measured.decode_ms[i].mean()),
                    opt(measured.check_ms[i].mean()),
                ));
            }
        }
        out
    }
}
