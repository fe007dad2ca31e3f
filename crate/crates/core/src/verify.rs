//! Decentralized safety verification over exchanged reach sets.
//!
//! Everything here reasons in the local clock of the checking agent. A
//! received hull is only usable while its validity window, shifted by both
//! agents' synchronization error bounds, still extends into the checker's
//! future; the same shift caps how far any no-collision or global-safety
//! verdict may be trusted. Verdicts are two-valued: a violation can be
//! excluded up to some future instant, or the over-approximation could not
//! exclude it (`Uncertain`). There is no "collision will happen" verdict.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::ReachMessage;
use crate::geometry::{GeometryError, HyperRectangle, LinearConstraintSet};
use crate::reach::ReachResult;

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("message from {sender} is stale at local time {t_c}")]
    Stale { sender: u32, t_c: f64 },
    #[error("incomplete reach-set collection: expected {expected} peers, have {got}")]
    IncompleteSet { expected: usize, got: usize },
    #[error("validity window [{start}, {end}] has expired")]
    WindowExpired { start: f64, end: f64 },
    #[error("joint state has dimension {got}, unsafe set expects {expected}")]
    JointDimensionMismatch { expected: usize, got: usize },
    #[error("communication cost terms must be positive")]
    NonPositiveCostDenominator,
    #[error("no verification capacity: period budget {numerator} ms is not positive")]
    CapacityZero { numerator: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Outcome of one pairwise collision check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "collision", rename_all = "snake_case")]
pub enum PairVerdict {
    /// No collision before local time `t_safe`.
    False { t_safe: f64 },
    /// The hulls came within the safe distance; nothing can be concluded.
    Uncertain,
}

/// Outcome of one global-property check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "global_safe", rename_all = "snake_case")]
pub enum GlobalVerdict {
    /// The property holds up to local time `t_global_safe`.
    True { t_global_safe: f64 },
    Uncertain,
}

/// Per-message and per-period cost model, all in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingProfile {
    pub tau_e: f64,
    pub tau_d: f64,
    pub tau_tf: f64,
    pub tau_c: f64,
    pub tau_control: f64,
    pub t_runtime: f64,
}

/// Whether reach sets starting at `t_rs_i` (the checker's own) and `t_rs_j`
/// (the sender's), both valid for `horizon` seconds, still say something
/// about the checker's future at its local time `t_c_i`. Both comparisons
/// are strict.
pub fn is_useful(
    t_c_i: f64,
    t_rs_i: f64,
    t_rs_j: f64,
    horizon: f64,
    delta_i: f64,
    delta_j: f64,
) -> bool {
    t_c_i < t_rs_j + horizon - delta_i - delta_j && t_c_i < t_rs_i + horizon
}

fn useful_with_horizons(
    t_c: f64,
    own_t_rs: f64,
    own_horizon: f64,
    msg: &ReachMessage,
    delta_i: f64,
    delta_j: f64,
) -> bool {
    t_c < msg.t_rs + msg.horizon - delta_i - delta_j && t_c < own_t_rs + own_horizon
}

/// Pairwise collision check against one received reach set.
///
/// Requires the pair of sets to be useful at `own_t_c`; a stale message is
/// reported as an error so the caller can log and discard it. Otherwise the
/// verdict is `False` (no collision) with the skew-adjusted validity horizon
/// exactly when the hull distance exceeds `safe_distance` strictly.
pub fn check_pairwise(
    own: &ReachResult,
    own_t_c: f64,
    msg: &ReachMessage,
    safe_distance: f64,
    delta_i: f64,
    delta_j: f64,
    position_axes: &[usize],
) -> Result<PairVerdict, VerifyError> {
    if !useful_with_horizons(own_t_c, own.t_rs, own.horizon, msg, delta_i, delta_j) {
        return Err(VerifyError::Stale {
            sender: msg.sender,
            t_c: own_t_c,
        });
    }
    let d_min = own.hull.min_distance(&msg.hull, position_axes)?;
    if d_min > safe_distance {
        let t_safe = (msg.t_rs + msg.horizon - delta_i - delta_j).min(own.t_rs + own.horizon);
        Ok(PairVerdict::False { t_safe })
    } else {
        Ok(PairVerdict::Uncertain)
    }
}

/// Validity window of the joint reach set under the checker's clock:
/// starts now, ends at the earliest skew-adjusted expiry among the own set
/// and every peer set.
pub fn global_window(
    t_c_i: f64,
    own_t_rs: f64,
    own_horizon: f64,
    own_delta: f64,
    peers: &[(&ReachMessage, f64)],
    expected_peers: usize,
) -> Result<(f64, f64), VerifyError> {
    if peers.len() != expected_peers {
        return Err(VerifyError::IncompleteSet {
            expected: expected_peers,
            got: peers.len(),
        });
    }
    let mut end = own_t_rs + own_horizon;
    for (msg, delta_j) in peers {
        end = end.min(msg.t_rs + msg.horizon - own_delta - delta_j);
    }
    if t_c_i >= end {
        return Err(VerifyError::WindowExpired { start: t_c_i, end });
    }
    Ok((t_c_i, end))
}

/// Global safety check over the stacked states of all agents.
///
/// Requires one fresh message per peer; every message's usefulness is
/// re-validated at the current local time. The joint box concatenates each
/// agent's hull in ascending agent-id order (the checker's own hull
/// included), and is tested conservatively against the joint unsafe set.
pub fn check_global(
    own: &ReachResult,
    own_id: u32,
    own_delta: f64,
    own_t_c: f64,
    peers: &[(&ReachMessage, f64)],
    unsafe_set: &LinearConstraintSet,
    expected_peers: usize,
) -> Result<GlobalVerdict, VerifyError> {
    for (msg, delta_j) in peers {
        if !useful_with_horizons(own_t_c, own.t_rs, own.horizon, msg, own_delta, *delta_j) {
            return Err(VerifyError::Stale {
                sender: msg.sender,
                t_c: own_t_c,
            });
        }
    }
    let (_, end) = global_window(own_t_c, own.t_rs, own.horizon, own_delta, peers, expected_peers)?;

    let mut blocks: Vec<(u32, &HyperRectangle)> = Vec::with_capacity(peers.len() + 1);
    blocks.push((own_id, &own.hull));
    for (msg, _) in peers {
        blocks.push((msg.sender, &msg.hull));
    }
    blocks.sort_by_key(|(id, _)| *id);
    let mut dims = Vec::new();
    for (_, hull) in &blocks {
        dims.extend_from_slice(&hull.dims);
    }
    if dims.len() != unsafe_set.dim() {
        return Err(VerifyError::JointDimensionMismatch {
            expected: unsafe_set.dim(),
            got: dims.len(),
        });
    }
    let joint = HyperRectangle { dims };
    if joint.possibly_intersects(unsafe_set)? {
        Ok(GlobalVerdict::Uncertain)
    } else {
        Ok(GlobalVerdict::True { t_global_safe: end })
    }
}

/// Total verification time per period for one agent, in milliseconds:
/// reach-set computation plus one encode plus per-peer transfer, decode and
/// collision-check costs.
pub fn vt_estimate(profile: &TimingProfile, n_agents: u32) -> f64 {
    profile.t_runtime
        + profile.tau_e
        + (n_agents.saturating_sub(1)) as f64 * (profile.tau_tf + profile.tau_d + profile.tau_c)
}

/// Range of fleet sizes one verification period can sustain, from worst-case
/// and best-case cost profiles.
pub fn agent_capacity_bounds(
    worst: &TimingProfile,
    best: &TimingProfile,
    t_c_ms: f64,
    t_runtime_ms: f64,
) -> Result<(f64, f64), VerifyError> {
    let bound = |p: &TimingProfile| -> Result<f64, VerifyError> {
        let denominator = p.tau_tf + p.tau_d + p.tau_c;
        if denominator <= 0.0 {
            return Err(VerifyError::NonPositiveCostDenominator);
        }
        let numerator = t_c_ms - p.tau_control - t_runtime_ms - p.tau_e;
        if numerator <= 0.0 {
            return Err(VerifyError::CapacityZero { numerator });
        }
        Ok(numerator / denominator + 1.0)
    };
    Ok((bound(worst)?, bound(best)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reach::LocalSafety;

    fn own_result(t_rs: f64, horizon: f64, bounds: &[(f64, f64)]) -> ReachResult {
        let hull = HyperRectangle::from_bounds(bounds).unwrap();
        ReachResult {
            hull: hull.clone(),
            intermediates: vec![(0.0, hull)],
            t_rs,
            horizon,
            local_safe: LocalSafety::Safe,
            passes_completed: 1,
            final_step: 0.1,
            budget_overrun: false,
        }
    }

    fn msg(sender: u32, t_rs: f64, horizon: f64, bounds: &[(f64, f64)]) -> ReachMessage {
        ReachMessage {
            sender,
            t_rs,
            horizon,
            hull: HyperRectangle::from_bounds(bounds).unwrap(),
            t_send: t_rs,
        }
    }

    #[test]
    fn is_useful_examples() {
        // Fresh message with millisecond-scale skew.
        assert!(is_useful(10.0, 9.5, 9.0, 2.0, 0.003, 0.003));
        // Boundary is strict.
        let t_c = 9.0 + 2.0 - 0.003 - 0.003;
        assert!(!is_useful(t_c, 9.5, 9.0, 2.0, 0.003, 0.003));
        // Stale message.
        assert!(!is_useful(12.0, 9.5, 9.0, 2.0, 0.0, 0.0));
        // Own reach set too old.
        assert!(!is_useful(11.6, 9.5, 11.0, 2.0, 0.0, 0.0));
    }

    #[test]
    fn is_useful_monotone_in_time_and_skew() {
        let base = is_useful(10.0, 9.5, 9.0, 2.0, 0.003, 0.003);
        assert!(base);
        assert!(is_useful(9.5, 9.5, 9.0, 2.0, 0.003, 0.003));
        assert!(is_useful(10.0, 9.5, 9.0, 2.0, 0.001, 0.001));
    }

    #[test]
    fn pairwise_far_apart_yields_horizon() {
        let own = own_result(9.5, 2.0, &[(0.0, 1.0), (0.0, 1.0)]);
        let m = msg(1, 9.0, 2.0, &[(10.0, 11.0), (10.0, 11.0)]);
        let v = check_pairwise(&own, 10.0, &m, 1.0, 0.003, 0.003, &[0, 1]).unwrap();
        match v {
            PairVerdict::False { t_safe } => assert!((t_safe - 10.994).abs() < 1e-12),
            PairVerdict::Uncertain => panic!("expected a no-collision verdict"),
        }
    }

    #[test]
    fn pairwise_overlap_is_uncertain() {
        let own = own_result(9.5, 2.0, &[(0.0, 5.0), (0.0, 5.0)]);
        let m = msg(1, 9.0, 2.0, &[(4.0, 6.0), (4.0, 6.0)]);
        let v = check_pairwise(&own, 10.0, &m, 1.0, 0.003, 0.003, &[0, 1]).unwrap();
        assert_eq!(v, PairVerdict::Uncertain);
    }

    #[test]
    fn pairwise_distance_exactly_l_is_uncertain() {
        let own = own_result(9.5, 2.0, &[(0.0, 1.0), (0.0, 1.0)]);
        let m = msg(1, 9.0, 2.0, &[(3.5, 4.0), (0.0, 1.0)]);
        // Gap on axis 0 is exactly 2.5; the comparison is strict.
        let v = check_pairwise(&own, 10.0, &m, 2.5, 0.0, 0.0, &[0, 1]).unwrap();
        assert_eq!(v, PairVerdict::Uncertain);
    }

    #[test]
    fn pairwise_stale_is_error() {
        let own = own_result(9.5, 2.0, &[(0.0, 1.0), (0.0, 1.0)]);
        let m = msg(1, 7.0, 2.0, &[(10.0, 11.0), (10.0, 11.0)]);
        assert!(matches!(
            check_pairwise(&own, 10.0, &m, 1.0, 0.003, 0.003, &[0, 1]),
            Err(VerifyError::Stale { sender: 1, .. })
        ));
    }

    #[test]
    fn global_window_examples() {
        let m = msg(1, 9.0, 2.0, &[(0.0, 1.0)]);
        let (start, end) =
            global_window(10.0, 9.5, 2.0, 0.003, &[(&m, 0.003)], 1).unwrap();
        assert_eq!(start, 10.0);
        assert!((end - 10.994).abs() < 1e-12);

        // Symmetric start times and zero skew.
        let m = msg(1, 9.5, 2.0, &[(0.0, 1.0)]);
        let (_, end) = global_window(10.0, 9.5, 2.0, 0.0, &[(&m, 0.0)], 1).unwrap();
        assert!((end - 11.5).abs() < 1e-12);

        // Expired and incomplete windows are signalled.
        let m = msg(1, 9.0, 2.0, &[(0.0, 1.0)]);
        assert!(matches!(
            global_window(11.2, 9.5, 2.0, 0.003, &[(&m, 0.003)], 1),
            Err(VerifyError::WindowExpired { .. })
        ));
        assert!(matches!(
            global_window(10.0, 9.5, 2.0, 0.003, &[], 1),
            Err(VerifyError::IncompleteSet { expected: 1, got: 0 })
        ));
    }

    fn forbidden_region_two_agents() -> LinearConstraintSet {
        // 900 < x of agent 0 < 1200 and 900 < x of agent 1 < 1200 over the
        // stacked 8-dimensional state.
        let mut rows = Vec::new();
        for block in [0usize, 4] {
            let mut lo = vec![0.0; 8];
            lo[block] = -1.0;
            rows.push(crate::geometry::ConstraintRow {
                coeffs: lo,
                bound: -900.0,
            });
            let mut hi = vec![0.0; 8];
            hi[block] = 1.0;
            rows.push(crate::geometry::ConstraintRow {
                coeffs: hi,
                bound: 1200.0,
            });
        }
        LinearConstraintSet::new(rows).unwrap()
    }

    fn quad_bounds(x: (f64, f64)) -> Vec<(f64, f64)> {
        vec![x, (-10.0, 10.0), (0.0, 50.0), (-10.0, 10.0)]
    }

    #[test]
    fn global_both_agents_clear_of_region() {
        let unsafe_set = forbidden_region_two_agents();
        let own = own_result(9.5, 2.0, &quad_bounds((0.0, 100.0)));
        let m = msg(1, 9.5, 2.0, &quad_bounds((0.0, 100.0)));
        let v = check_global(&own, 0, 0.003, 10.0, &[(&m, 0.003)], &unsafe_set, 1).unwrap();
        match v {
            GlobalVerdict::True { t_global_safe } => assert!(t_global_safe > 10.0),
            GlobalVerdict::Uncertain => panic!("region misses both hulls"),
        }
    }

    #[test]
    fn global_concurrent_incursion_is_uncertain() {
        let unsafe_set = forbidden_region_two_agents();
        let own = own_result(9.5, 2.0, &quad_bounds((1000.0, 1100.0)));
        let m = msg(1, 9.5, 2.0, &quad_bounds((1000.0, 1100.0)));
        let v = check_global(&own, 0, 0.003, 10.0, &[(&m, 0.003)], &unsafe_set, 1).unwrap();
        assert_eq!(v, GlobalVerdict::Uncertain);
    }

    #[test]
    fn global_staggered_passage_is_safe() {
        let unsafe_set = forbidden_region_two_agents();
        // One agent inside the band, the other provably past it: row
        // x_1 <= 1200 has interval lower bound 1800 > 1200 over the joint
        // box, so the conjunction fails provably.
        let own = own_result(9.5, 2.0, &quad_bounds((1000.0, 1100.0)));
        let m = msg(1, 9.5, 2.0, &quad_bounds((1800.0, 2400.0)));
        let v = check_global(&own, 0, 0.003, 10.0, &[(&m, 0.003)], &unsafe_set, 1).unwrap();
        assert!(matches!(v, GlobalVerdict::True { .. }));
    }

    #[test]
    fn global_rechecks_staleness_and_dimensions() {
        let unsafe_set = forbidden_region_two_agents();
        let own = own_result(9.5, 2.0, &quad_bounds((0.0, 100.0)));
        let stale = msg(1, 7.0, 2.0, &quad_bounds((0.0, 100.0)));
        assert!(matches!(
            check_global(&own, 0, 0.003, 10.0, &[(&stale, 0.003)], &unsafe_set, 1),
            Err(VerifyError::Stale { .. })
        ));

        let short = msg(1, 9.5, 2.0, &[(0.0, 1.0)]);
        assert!(matches!(
            check_global(&own, 0, 0.003, 10.0, &[(&short, 0.003)], &unsafe_set, 1),
            Err(VerifyError::JointDimensionMismatch { .. })
        ));
    }

    /// Measured per-message costs of each vehicle in the eight-agent run.
    pub fn table_profiles() -> [TimingProfile; 8] {
        let mk = |tau_e, tau_d, tau_tf, tau_c| TimingProfile {
            tau_e,
            tau_d,
            tau_tf,
            tau_c,
            tau_control: 10.0,
            t_runtime: 10.0,
        };
        [
            mk(0.058, 0.0169, 2.64, 0.04),
            mk(0.055, 0.0193, 2.48, 0.05),
            mk(0.0553, 0.0197, 1.42, 0.07),
            mk(0.0525, 0.019, 1.11, 0.05),
            mk(0.0557, 0.0210, 1.12, 0.03),
            mk(0.0583, 0.0181, 1.08, 0.07),
            mk(0.0584, 0.0177, 1.05, 0.07),
            mk(0.0597, 0.022, 1.13, 0.14),
        ]
    }

    #[test]
    fn vt_matches_measured_totals() {
        let profiles = table_profiles();
        let expected = [
            28.9363, 27.9, 20.6232, 18.3055, 18.2527, 18.235, 18.0223, 19.1037,
        ];
        for (p, vt) in profiles.iter().zip(expected) {
            assert!(
                (vt_estimate(p, 8) - vt).abs() < 1e-3,
                "profile {p:?} expected {vt}"
            );
        }
        assert!((vt_estimate(&profiles[0], 8) - 28.9363).abs() < 1e-4);
    }

    #[test]
    fn vt_degenerate_forms() {
        let p = TimingProfile {
            tau_e: 0.5,
            tau_d: 0.25,
            tau_tf: 2.0,
            tau_c: 0.1,
            tau_control: 10.0,
            t_runtime: 10.0,
        };
        assert!((vt_estimate(&p, 2) - (10.0 + 0.5 + 2.35)).abs() < 1e-12);
        let zero = TimingProfile {
            tau_e: 0.0,
            tau_d: 0.0,
            tau_tf: 0.0,
            tau_c: 0.0,
            tau_control: 0.0,
            t_runtime: 10.0,
        };
        assert_eq!(vt_estimate(&zero, 5), 10.0);
    }

    #[test]
    fn vt_is_linear_in_peer_count() {
        let p = table_profiles()[0];
        let slope = p.tau_tf + p.tau_d + p.tau_c;
        for n in 2..20u32 {
            let d = vt_estimate(&p, n + 1) - vt_estimate(&p, n);
            assert!((d - slope).abs() < 1e-12);
        }
    }

    #[test]
    fn capacity_bounds_on_reference_profile() {
        let worst = TimingProfile {
            tau_e: 0.0597,
            tau_d: 0.022,
            tau_tf: 2.64,
            tau_c: 0.14,
            tau_control: 10.0,
            t_runtime: 10.0,
        };
        let best = TimingProfile {
            tau_e: 0.0525,
            tau_d: 0.0169,
            tau_tf: 1.05,
            tau_c: 0.03,
            tau_control: 5.0,
            t_runtime: 10.0,
        };
        let (n_min, n_max) = agent_capacity_bounds(&worst, &best, 200.0, 10.0).unwrap();
        assert!((n_min - 65.21852248394005).abs() < 1e-9);
        assert!((n_max - 169.60926246695232).abs() < 1e-9);
    }

    #[test]
    fn capacity_guards() {
        let zero_comm = TimingProfile {
            tau_e: 0.1,
            tau_d: 0.0,
            tau_tf: 0.0,
            tau_c: 0.0,
            tau_control: 1.0,
            t_runtime: 1.0,
        };
        assert_eq!(
            agent_capacity_bounds(&zero_comm, &zero_comm, 200.0, 10.0),
            Err(VerifyError::NonPositiveCostDenominator)
        );
        let slow = TimingProfile {
            tau_e: 1.0,
            tau_d: 1.0,
            tau_tf: 1.0,
            tau_c: 1.0,
            tau_control: 150.0,
            t_runtime: 10.0,
        };
        assert!(matches!(
            agent_capacity_bounds(&slow, &slow, 100.0, 10.0),
            Err(VerifyError::CapacityZero { .. })
        ));

        // Identical best and worst profiles give a single point.
        let p = TimingProfile {
            tau_e: 0.1,
            tau_d: 0.1,
            tau_tf: 1.0,
            tau_c: 0.1,
            tau_control: 5.0,
            t_runtime: 10.0,
        };
        let (lo, hi) = agent_capacity_bounds(&p, &p, 200.0, 10.0).unwrap();
        assert_eq!(lo, hi);
    }
}
