//! Post-run soundness audit against dense ground truth.
//!
//! Three obligations are checked sample-by-sample on the millisecond grid:
//!
//! 1. containment — every true state lies inside the intermediate reach box
//!    covering its time offset, for as long as the control input the box was
//!    computed under is actually applied (one control period; a reach set is
//!    replaced at the next cycle anyway);
//! 2. pairwise — inside every no-collision window `[t_c, t_safe]`, the true
//!    pairwise distance never falls below the safe distance;
//! 3. global — inside every global-safe window, no joint true state satisfies
//!    all rows of the global unsafe set.
//!
//! A sound run reports zero violations in all three.

use serde::{Deserialize, Serialize};

use crate::sim::config::ScenarioConfig;
use crate::sim::events::{box_from_pairs, EventKind, EventLog, ReachRecord};
use crate::sim::truth::GroundTruth;
use crate::sim::SimError;
use crate::verify::{GlobalVerdict, PairVerdict};

const MAX_DETAILS: usize = 12;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub containment_checked: u64,
    pub containment_violations: u64,
    pub pair_windows_checked: u64,
    pub pairwise_violations: u64,
    pub global_windows_checked: u64,
    pub global_violations: u64,
    pub details: Vec<String>,
}

impl AuditReport {
    pub fn total_violations(&self) -> u64 {
        self.containment_violations + self.pairwise_violations + self.global_violations
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "containment: {} samples checked, {} violations\n",
            self.containment_checked, self.containment_violations
        ));
        out.push_str(&format!(
            "pairwise:    {} windows checked, {} violations\n",
            self.pair_windows_checked, self.pairwise_violations
        ));
        out.push_str(&format!(
            "global:      {} windows checked, {} violations\n",
            self.global_windows_checked, self.global_violations
        ));
        for d in &self.details {
            out.push_str(&format!("  {d}\n"));
        }
        out
    }
}

fn push_detail(report: &mut AuditReport, msg: String) {
    if report.details.len() < MAX_DETAILS {
        report.details.push(msg);
    }
}

/// Audit a completed run. Zero violations everywhere is the pass condition.
pub fn soundness_audit(
    events: &EventLog,
    truth: &GroundTruth,
    reach_sets: &[ReachRecord],
    cfg: &ScenarioConfig,
) -> Result<AuditReport, SimError> {
    let mut report = AuditReport::default();
    let agents = cfg.agents_by_id();
    let offset_of = |id: u32| -> Result<f64, SimError> {
        agents
            .iter()
            .find(|a| a.id == id)
            .map(|a| a.clock_offset)
            .ok_or_else(|| SimError::Artifact(format!("unknown agent id {id} in log")))
    };
    let duration = cfg.duration;
    let dt = truth.dt;
    let grid_len = truth.grid_len();
    let grid_index = |t: f64| -> usize { (t / dt).round() as usize };

    // (1) containment over each reach set's input-constancy window.
    for rec in reach_sets {
        let agent_cfg = agents
            .iter()
            .find(|a| a.id == rec.agent)
            .ok_or_else(|| SimError::Artifact(format!("unknown agent id {} in reach sets", rec.agent)))?;
        let a = truth
            .agent_index(rec.agent)
            .ok_or_else(|| SimError::Artifact(format!("agent {} missing from ground truth", rec.agent)))?;
        let tau_control_s = cfg.timing_for(agent_cfg).tau_control * 1e-3;
        let window_end = (rec.global_start + rec.horizon)
            .min(rec.global_start + agent_cfg.control_period - tau_control_s)
            .min(duration);
        let boxes: Vec<(f64, crate::geometry::HyperRectangle)> = rec
            .intermediates
            .iter()
            .map(|(o, b)| (*o, box_from_pairs(b)))
            .collect();
        let k_start = ((rec.global_start / dt).ceil() as usize).min(grid_len.saturating_sub(1));
        let k_end = ((window_end / dt).floor() as usize).min(grid_len.saturating_sub(1));
        for k in k_start..=k_end {
            let t = k as f64 * dt;
            if t + 1e-12 < rec.global_start {
                continue;
            }
            let offset = t - rec.global_start;
            let Some(idx) = crate::reach::intermediate_index_at(&boxes, offset) else {
                continue;
            };
            report.containment_checked += 1;
            let state = &truth.samples[a][k];
            if !boxes[idx].1.contains_point(state) {
                report.containment_violations += 1;
                push_detail(
                    &mut report,
                    format!(
                        "containment: agent {} at t={t:.3} escaped box {idx} of reach set started at {:.3}",
                        rec.agent, rec.global_start
                    ),
                );
            }
        }
    }

    // (2) no-collision windows against true pairwise distances.
    for r in &events.records {
        let EventKind::PairCheck {
            peer,
            t_c,
            verdict: PairVerdict::False { t_safe },
            ..
        } = &r.kind
        else {
            continue;
        };
        let offset_i = offset_of(r.agent)?;
        let (Some(ai), Some(aj)) = (truth.agent_index(r.agent), truth.agent_index(*peer)) else {
            continue;
        };
        report.pair_windows_checked += 1;
        let g_start = (t_c - offset_i).max(0.0);
        let g_end = (t_safe - offset_i).min(duration);
        let mut k = grid_index(g_start);
        while (k as f64) * dt <= g_end + 1e-12 && k < grid_len {
            let si = &truth.samples[ai][k];
            let sj = &truth.samples[aj][k];
            let mut sum = 0.0;
            for &axis in &cfg.position_axes {
                let d = si[axis] - sj[axis];
                sum += d * d;
            }
            let dist = sum.sqrt();
            if dist < cfg.safe_distance - 1e-9 {
                report.pairwise_violations += 1;
                push_detail(
                    &mut report,
                    format!(
                        "pairwise: agents {} and {} at distance {dist:.3} < {} inside window [{t_c:.3}, {t_safe:.3}] of agent {}",
                        r.agent, peer, cfg.safe_distance, r.agent
                    ),
                );
                break;
            }
            k += 1;
        }
    }

    // (3) global-safe windows against the joint unsafe set.
    if let Some(unsafe_cfg) = &cfg.global_unsafe {
        let unsafe_set = unsafe_cfg.to_constraint_set()?;
        for r in &events.records {
            let EventKind::GlobalCheck {
                t_c,
                verdict: GlobalVerdict::True { t_global_safe },
            } = &r.kind
            else {
                continue;
            };
            let offset_i = offset_of(r.agent)?;
            report.global_windows_checked += 1;
            let g_start = (t_c - offset_i).max(0.0);
            let g_end = (t_global_safe - offset_i).min(duration);
            let mut k = grid_index(g_start);
            while (k as f64) * dt <= g_end + 1e-12 && k < grid_len {
                let mut joint = Vec::new();
                for a in 0..truth.ids.len() {
                    joint.extend_from_slice(&truth.samples[a][k]);
                }
                if unsafe_set.satisfied_by(&joint) {
                    report.global_violations += 1;
                    push_detail(
                        &mut report,
                        format!(
                            "global: joint state at t={:.3} satisfies the unsafe set inside window [{t_c:.3}, {t_global_safe:.3}] of agent {}",
                            k as f64 * dt,
                            r.agent
                        ),
                    );
                    break;
                }
                k += 1;
            }
        }
    }

    Ok(report)
}
