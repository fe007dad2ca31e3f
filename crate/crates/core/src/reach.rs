//! Anytime reachability by face lifting over hyper-rectangles.
//!
//! One call computes an enclosure of everything the agent can do over the
//! next `horizon` seconds under its current (constant) control input. The
//! horizon is swept in sub-steps: each sub-step validates a neighborhood
//! around the current box inside which the derivative ranges are trustworthy,
//! then moves every face by its one-sided derivative bound times the step.
//! Completed sweeps are repeated with a halved step while the runtime budget
//! lasts, so the enclosure tightens monotonically and the last finished sweep
//! is always a sound answer.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsError, Model};
use crate::geometry::{GeometryError, HyperRectangle, Interval, LinearConstraintSet};

/// Neighborhood validation attempts per candidate sub-step before the step
/// is halved.
const MAX_NEB_ITERATIONS: usize = 8;
/// Overshoot applied to candidate neighborhood widths so the fixed point is
/// reached in few iterations even for curved flows.
const NEB_GROWTH: f64 = 1.5;
/// Sub-steps below this are treated as a failure of the method.
const MIN_SUBSTEP: f64 = 1e-12;
/// Residual horizon below this counts as fully swept.
const REMAINING_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ReachError {
    #[error("model error: {0}")]
    Model(#[from] DynamicsError),
    #[error("geometry error: {0}")]
    Geometry(#[from] GeometryError),
    #[error("face-lifting sub-step collapsed below {MIN_SUBSTEP} s (at dt = {dt})")]
    StepCollapse { dt: f64 },
    #[error("derivative bounds are not finite")]
    NonFiniteBounds,
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("results cover different horizons: {a} vs {b}")]
    HorizonMismatch { a: f64, b: f64 },
}

/// Local safety verdict attached to a reach computation. `Uncertain` means
/// some per-step enclosure may touch the unsafe set; it is never a confirmed
/// violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalSafety {
    Safe,
    Uncertain,
}

/// Runtime allowance for one anytime reachability call.
///
/// `Deterministic` runs an exact number of refinement passes and is the mode
/// used in tests and reproducible simulations. `Wallclock` keeps refining
/// while real time remains, mirroring a deployment allowance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RuntimeBudget {
    Deterministic { passes: u32 },
    Wallclock { limit_ms: f64 },
}

impl RuntimeBudget {
    fn validate(&self) -> Result<(), ReachError> {
        let ok = match self {
            RuntimeBudget::Deterministic { passes } => *passes >= 1,
            RuntimeBudget::Wallclock { limit_ms } => *limit_ms > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ReachError::InvalidInput("runtime budget limit must be positive"))
        }
    }
}

/// Output of one anytime reachability call: the last fully completed sweep.
///
/// `intermediates` are the per-sub-step enclosures as `(offset, box)` pairs;
/// entry `k` covers local time `[t_rs + offset_k, t_rs + offset_{k+1}]` (the
/// final entry runs to `t_rs + horizon`). `hull` is their interval hull and
/// is what gets broadcast to the other agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachResult {
    pub hull: HyperRectangle,
    pub intermediates: Vec<(f64, HyperRectangle)>,
    pub t_rs: f64,
    pub horizon: f64,
    pub local_safe: LocalSafety,
    pub passes_completed: u32,
    pub final_step: f64,
    pub budget_overrun: bool,
}

/// Result of a single face-lifting sub-step.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceLiftStep {
    /// Enclosure of the reachable states exactly `dt` after `cr`.
    pub advanced: HyperRectangle,
    /// Enclosure of every state visited during the sub-step.
    pub step_hull: HyperRectangle,
    /// The sub-step actually taken, at most `min(step, remaining)`.
    pub dt: f64,
    pub new_remaining: f64,
}

/// Derivative ranges validated over an outward neighborhood of `cr`.
///
/// The neighborhood is grown from the candidate widths `bound * dt` until the
/// travel implied by the ranges over the grown box no longer exceeds the
/// widths, which guarantees no trajectory leaves the neighborhood within
/// `dt`. Returns `None` when the fixed point is not reached within the
/// iteration cap, in which case the caller halves `dt`.
fn validated_bounds(
    cr: &HyperRectangle,
    dt: f64,
    u: &[f64],
    model: &dyn Model,
) -> Result<Option<HyperRectangle>, ReachError> {
    let n = cr.dim();
    let mut w_lo = vec![0.0; n];
    let mut w_hi = vec![0.0; n];
    let mut neighborhood = cr.clone();
    for _ in 0..MAX_NEB_ITERATIONS {
        let bounds = model.deriv_bounds(&neighborhood, u)?;
        if bounds
            .dims
            .iter()
            .any(|d| !d.lo.is_finite() || !d.hi.is_finite())
        {
            return Err(ReachError::NonFiniteBounds);
        }
        let mut valid = true;
        for i in 0..n {
            let cand_lo = (-bounds.dims[i].lo * dt).max(0.0);
            let cand_hi = (bounds.dims[i].hi * dt).max(0.0);
            if cand_lo > w_lo[i] || cand_hi > w_hi[i] {
                valid = false;
                w_lo[i] = cand_lo * NEB_GROWTH;
                w_hi[i] = cand_hi * NEB_GROWTH;
            }
        }
        if valid {
            return Ok(Some(bounds));
        }
        neighborhood = HyperRectangle {
            dims: (0..n)
                .map(|i| Interval {
                    lo: cr.dims[i].lo - w_lo[i],
                    hi: cr.dims[i].hi + w_hi[i],
                })
                .collect(),
        };
    }
    Ok(None)
}

/// Advance `cr` by one face-lifting sub-step.
///
/// Each face moves by its one-sided derivative bound times `dt`, where the
/// bounds are valid over a neighborhood no trajectory can leave within `dt`.
/// `step_hull` covers the whole sub-step: travel is linear in time under the
/// same bounds, so the hull of `cr` and `advanced` already encloses every
/// intra-step excursion.
pub fn single_face_lift(
    cr: &HyperRectangle,
    step: f64,
    remaining: f64,
    u: &[f64],
    model: &dyn Model,
) -> Result<FaceLiftStep, ReachError> {
    if !(step > 0.0) {
        return Err(ReachError::InvalidInput("step must be positive"));
    }
    if !(remaining > 0.0) {
        return Err(ReachError::InvalidInput("remaining time must be positive"));
    }
    let mut dt = step.min(remaining);
    loop {
        if let Some(bounds) = validated_bounds(cr, dt, u, model)? {
            let advanced = HyperRectangle {
                dims: cr
                    .dims
                    .iter()
                    .zip(&bounds.dims)
                    .map(|(d, b)| Interval {
                        lo: d.lo + b.lo * dt,
                        hi: d.hi + b.hi * dt,
                    })
                    .collect(),
            };
            let step_hull = HyperRectangle {
                dims: cr
                    .dims
                    .iter()
                    .zip(&advanced.dims)
                    .map(|(a, b)| a.hull(b))
                    .collect(),
            };
            return Ok(FaceLiftStep {
                advanced,
                step_hull,
                dt,
                new_remaining: remaining - dt,
            });
        }
        dt *= 0.5;
        if dt < MIN_SUBSTEP {
            return Err(ReachError::StepCollapse { dt });
        }
    }
}

struct Sweep {
    intermediates: Vec<(f64, HyperRectangle)>,
    hull: HyperRectangle,
    local_safe: LocalSafety,
}

fn run_sweep(
    init: &HyperRectangle,
    u: &[f64],
    horizon: f64,
    step: f64,
    unsafe_local: Option<&LinearConstraintSet>,
    model: &dyn Model,
) -> Result<Sweep, ReachError> {
    let mut cr = init.clone();
    let mut remaining = horizon;
    let mut offset = 0.0;
    let mut intermediates = Vec::new();
    let mut local_safe = LocalSafety::Safe;
    while remaining > REMAINING_EPS {
        let lifted = single_face_lift(&cr, step, remaining, u, model)?;
        if let Some(unsafe_set) = unsafe_local {
            if lifted.step_hull.possibly_intersects(unsafe_set)? {
                local_safe = LocalSafety::Uncertain;
            }
        }
        intermediates.push((offset, lifted.step_hull));
        offset += lifted.dt;
        cr = lifted.advanced;
        remaining = lifted.new_remaining;
    }
    let boxes: Vec<HyperRectangle> = intermediates.iter().map(|(_, b)| b.clone()).collect();
    let hull = HyperRectangle::interval_hull(&boxes)?;
    Ok(Sweep {
        intermediates,
        hull,
        local_safe,
    })
}

/// Anytime reachability for one agent over `[t_rs, t_rs + horizon]`.
///
/// Sweeps the horizon at step `h0`, then keeps re-sweeping with a halved step
/// while the budget allows, committing only fully completed sweeps. The first
/// sweep always runs to completion even if it exceeds a wallclock budget
/// (recorded in `budget_overrun`), because a partial sweep would not cover
/// the horizon and could not be returned soundly.
pub fn reach_anytime(
    init: &HyperRectangle,
    u: &[f64],
    t_rs: f64,
    horizon: f64,
    h0: f64,
    budget: &RuntimeBudget,
    unsafe_local: Option<&LinearConstraintSet>,
    model: &dyn Model,
) -> Result<ReachResult, ReachError> {
    if !(horizon > 0.0) {
        return Err(ReachError::InvalidInput("horizon must be positive"));
    }
    if !(h0 > 0.0) {
        return Err(ReachError::InvalidInput("initial step must be positive"));
    }
    budget.validate()?;

    let started = Instant::now();
    let mut step = h0;
    let mut passes = 0u32;
    let mut budget_overrun = false;
    let (sweep, final_step) = loop {
        let sweep = run_sweep(init, u, horizon, step, unsafe_local, model)?;
        passes += 1;
        let exhausted = match budget {
            RuntimeBudget::Deterministic { passes: max_passes } => passes >= *max_passes,
            RuntimeBudget::Wallclock { limit_ms } => {
                let over = started.elapsed().as_secs_f64() * 1e3 >= *limit_ms;
                if over && passes == 1 {
                    budget_overrun = true;
                }
                over
            }
        };
        if exhausted {
            break (sweep, step);
        }
        step *= 0.5;
    };
    Ok(ReachResult {
        hull: sweep.hull,
        intermediates: sweep.intermediates,
        t_rs,
        horizon,
        local_safe: sweep.local_safe,
        passes_completed: passes,
        final_step,
        budget_overrun,
    })
}

/// Whether a refinement pass is at least as tight as its predecessor on every
/// axis of the hull, up to a 1e-9 slack.
pub fn refine_monotone_check(coarse: &ReachResult, fine: &ReachResult) -> Result<bool, ReachError> {
    if coarse.horizon != fine.horizon {
        return Err(ReachError::HorizonMismatch {
            a: coarse.horizon,
            b: fine.horizon,
        });
    }
    if coarse.hull.dim() != fine.hull.dim() {
        return Err(ReachError::Geometry(GeometryError::DimensionMismatch {
            expected: coarse.hull.dim(),
            got: fine.hull.dim(),
        }));
    }
    Ok(coarse
        .hull
        .widths()
        .iter()
        .zip(fine.hull.widths())
        .all(|(c, f)| f <= c + 1e-9))
}

/// Index into `intermediates` of the box covering the given time offset.
pub fn intermediate_index_at(intermediates: &[(f64, HyperRectangle)], offset: f64) -> Option<usize> {
    if intermediates.is_empty() || offset < -1e-9 {
        return None;
    }
    let mut idx = 0;
    for (k, (start, _)) in intermediates.iter().enumerate() {
        if *start <= offset + 1e-9 {
            idx = k;
        } else {
            break;
        }
    }
    Some(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        integrate_constant_input, model_by_name, Constant1d, Harmonic2d, Quadcopter4d, GRAVITY,
    };
    use crate::geometry::ConstraintRow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(passes: u32) -> RuntimeBudget {
        RuntimeBudget::Deterministic { passes }
    }

    #[test]
    fn sfl_constant_rate_is_exact() {
        let cr = HyperRectangle::from_bounds(&[(0.0, 0.0)]).unwrap();
        let lifted = single_face_lift(&cr, 0.1, 1.0, &[1.0], &Constant1d).unwrap();
        assert!((lifted.dt - 0.1).abs() < 1e-15);
        assert!((lifted.advanced.dims[0].lo - 0.1).abs() < 1e-15);
        assert!((lifted.advanced.dims[0].hi - 0.1).abs() < 1e-15);
        assert!((lifted.step_hull.dims[0].lo - 0.0).abs() < 1e-15);
        assert!((lifted.step_hull.dims[0].hi - 0.1).abs() < 1e-15);
        assert!((lifted.new_remaining - 0.9).abs() < 1e-15);
    }

    #[test]
    fn sfl_remaining_clamps_substep() {
        let cr = HyperRectangle::from_bounds(&[(0.0, 0.0)]).unwrap();
        let lifted = single_face_lift(&cr, 0.1, 0.05, &[1.0], &Constant1d).unwrap();
        assert!((lifted.dt - 0.05).abs() < 1e-15);
        assert!((lifted.advanced.dims[0].lo - 0.05).abs() < 1e-15);
        assert!(lifted.new_remaining.abs() < 1e-15);
    }

    #[test]
    fn sfl_quad_point_contains_closed_form() {
        let cr = HyperRectangle::point(&[0.0, 10.0, 0.0, 0.0]).unwrap();
        let lifted = single_face_lift(&cr, 0.01, 2.0, &[0.0, 0.0], &Quadcopter4d).unwrap();
        assert!(lifted.advanced.contains_point(&[0.1, 10.0, 0.0, 0.0]));

        // Nonzero input: closed form of the affine flow must stay inside.
        let u = [0.2, -0.15];
        let ax = GRAVITY * f64::tan(u[0]);
        let ay = GRAVITY * f64::tan(u[1]) / f64::cos(u[0]);
        let x0 = [1.0, -2.0, 3.0, 0.5];
        let cr = HyperRectangle::point(&x0).unwrap();
        let lifted = single_face_lift(&cr, 0.01, 2.0, &u, &Quadcopter4d).unwrap();
        let dt = lifted.dt;
        let truth = [
            x0[0] + x0[1] * dt + 0.5 * ax * dt * dt,
            x0[1] + ax * dt,
            x0[2] + x0[3] * dt + 0.5 * ay * dt * dt,
            x0[3] + ay * dt,
        ];
        assert!(lifted.advanced.contains_point(&truth));
        assert!(lifted.step_hull.contains(&lifted.advanced));
        assert!(lifted.step_hull.contains_point(&truth));
    }

    #[test]
    fn sfl_rejects_bad_inputs() {
        let cr = HyperRectangle::from_bounds(&[(0.0, 0.0)]).unwrap();
        assert!(single_face_lift(&cr, 0.0, 1.0, &[1.0], &Constant1d).is_err());
        assert!(single_face_lift(&cr, 0.1, 0.0, &[1.0], &Constant1d).is_err());
    }

    struct StiffModel;
    impl Model for StiffModel {
        fn name(&self) -> &'static str {
            "stiff"
        }
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            0
        }
        fn deriv_into(&self, x: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = -1e15 * x[0];
        }
        fn deriv_bounds(
            &self,
            b: &HyperRectangle,
            _u: &[f64],
        ) -> Result<HyperRectangle, DynamicsError> {
            Ok(HyperRectangle {
                dims: vec![Interval {
                    lo: -1e15 * b.dims[0].hi,
                    hi: -1e15 * b.dims[0].lo,
                }],
            })
        }
    }

    #[test]
    fn sfl_step_collapse_on_stiff_model() {
        let cr = HyperRectangle::from_bounds(&[(1.0, 2.0)]).unwrap();
        let err = single_face_lift(&cr, 0.1, 1.0, &[], &StiffModel).unwrap_err();
        assert!(matches!(err, ReachError::StepCollapse { .. }));
    }

    struct NanModel;
    impl Model for NanModel {
        fn name(&self) -> &'static str {
            "nan"
        }
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            0
        }
        fn deriv_into(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = f64::NAN;
        }
        fn deriv_bounds(
            &self,
            _b: &HyperRectangle,
            _u: &[f64],
        ) -> Result<HyperRectangle, DynamicsError> {
            Ok(HyperRectangle {
                dims: vec![Interval {
                    lo: f64::NAN,
                    hi: f64::NAN,
                }],
            })
        }
    }

    #[test]
    fn sfl_nonfinite_bounds_is_model_error() {
        let cr = HyperRectangle::from_bounds(&[(0.0, 1.0)]).unwrap();
        let err = single_face_lift(&cr, 0.1, 1.0, &[], &NanModel).unwrap_err();
        assert_eq!(err, ReachError::NonFiniteBounds);
    }

    #[test]
    fn reach_constant_rate_hull_exact() {
        let init = HyperRectangle::from_bounds(&[(0.0, 0.0)]).unwrap();
        let r = reach_anytime(&init, &[1.0], 0.0, 1.0, 0.5, &det(3), None, &Constant1d).unwrap();
        assert!((r.hull.dims[0].lo - 0.0).abs() < 1e-12);
        assert!((r.hull.dims[0].hi - 1.0).abs() < 1e-12);
        assert_eq!(r.local_safe, LocalSafety::Safe);
        assert_eq!(r.passes_completed, 3);
        assert!((r.final_step - 0.125).abs() < 1e-15);
        assert!(!r.budget_overrun);
    }

    #[test]
    fn reach_flags_unsafe_region() {
        let init = HyperRectangle::from_bounds(&[(0.0, 0.0)]).unwrap();
        // Unsafe set {x >= 0.5} written as -x <= -0.5.
        let unsafe_set = LinearConstraintSet::new(vec![ConstraintRow {
            coeffs: vec![-1.0],
            bound: -0.5,
        }])
        .unwrap();
        let r = reach_anytime(
            &init,
            &[1.0],
            0.0,
            1.0,
            0.5,
            &det(2),
            Some(&unsafe_set),
            &Constant1d,
        )
        .unwrap();
        assert_eq!(r.local_safe, LocalSafety::Uncertain);
    }

    #[test]
    fn reach_harmonic_contains_dense_rk4() {
        let init = HyperRectangle::from_bounds(&[(0.99, 1.01), (-0.01, 0.01)]).unwrap();
        let horizon = 0.5;
        let r = reach_anytime(&init, &[], 0.0, horizon, 0.05, &det(4), None, &Harmonic2d).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x0: Vec<f64> = init
                .dims
                .iter()
                .map(|d| rng.gen_range(d.lo..=d.hi))
                .collect();
            integrate_constant_input(&Harmonic2d, &x0, &[], horizon, 1e-3, |t, state| {
                let idx = intermediate_index_at(&r.intermediates, t).unwrap();
                assert!(
                    r.intermediates[idx].1.contains_point(state),
                    "sample at t={t} escaped its intermediate box"
                );
                assert!(r.hull.contains_point(state));
            });
        }

        // The circle arc from the box center must sit inside the hull.
        for k in 0..=1000 {
            let t = horizon * k as f64 / 1000.0;
            assert!(r.hull.contains_point(&[t.cos(), -t.sin()]));
        }
    }

    #[test]
    fn reach_refinement_is_monotone() {
        let model = model_by_name("quadcopter4d").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let center: Vec<f64> = vec![
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-30.0..30.0),
            ];
            let init = HyperRectangle::point(&center)
                .unwrap()
                .bloat(&[0.5, 0.1, 0.5, 0.1])
                .unwrap();
            let u = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
            let mut prev: Option<ReachResult> = None;
            for passes in 1..=4 {
                let r =
                    reach_anytime(&init, &u, 0.0, 2.0, 0.1, &det(passes), None, model.as_ref())
                        .unwrap();
                if let Some(p) = &prev {
                    assert!(refine_monotone_check(p, &r).unwrap());
                }
                prev = Some(r);
            }
        }
    }

    #[test]
    fn refine_monotone_check_examples() {
        let init = HyperRectangle::from_bounds(&[(0.0, 0.0)]).unwrap();
        let a = reach_anytime(&init, &[1.0], 0.0, 1.0, 0.5, &det(1), None, &Constant1d).unwrap();
        // Identical results pass.
        assert!(refine_monotone_check(&a, &a).unwrap());
        // Fine pass strictly inside passes; wider on any axis fails.
        let mut wider = a.clone();
        wider.hull.dims[0].hi += 1.0;
        assert!(refine_monotone_check(&wider, &a).unwrap());
        assert!(!refine_monotone_check(&a, &wider).unwrap());
        // Mismatched horizons are rejected.
        let mut other = a.clone();
        other.horizon = 2.0;
        assert!(refine_monotone_check(&a, &other).is_err());
    }

    #[test]
    fn sweep_substeps_cover_horizon() {
        let init = HyperRectangle::from_bounds(&[(0.99, 1.01), (-0.01, 0.01)]).unwrap();
        let horizon = 2.0;
        let mut cr = init;
        let mut remaining = horizon;
        let mut total = 0.0;
        while remaining > REMAINING_EPS {
            let lifted = single_face_lift(&cr, 0.037, remaining, &[], &Harmonic2d).unwrap();
            total += lifted.dt;
            cr = lifted.advanced;
            remaining = lifted.new_remaining;
        }
        assert!((total - horizon).abs() < 1e-9);
    }

    #[test]
    fn reach_is_deterministic() {
        let init = HyperRectangle::from_bounds(&[(0.0, 1.0), (-0.5, 0.5), (2.0, 3.0), (0.0, 0.0)])
            .unwrap();
        let u = [0.1, -0.2];
        let a = reach_anytime(&init, &u, 5.0, 2.0, 0.1, &det(3), None, &Quadcopter4d).unwrap();
        let b = reach_anytime(&init, &u, 5.0, 2.0, 0.1, &det(3), None, &Quadcopter4d).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reach_wallclock_overrun_recorded() {
        let init = HyperRectangle::from_bounds(&[(0.0, 0.0)]).unwrap();
        // A budget this small is exhausted before the first sweep finishes;
        // the sweep must still complete and be returned.
        let budget = RuntimeBudget::Wallclock { limit_ms: 1e-7 };
        let r = reach_anytime(&init, &[1.0], 0.0, 1.0, 0.001, &budget, None, &Constant1d).unwrap();
        assert_eq!(r.passes_completed, 1);
        assert!(r.budget_overrun);
        assert!((r.hull.dims[0].hi - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reach_hull_is_hull_of_intermediates() {
        let init = HyperRectangle::from_bounds(&[(0.99, 1.01), (-0.01, 0.01)]).unwrap();
        let r = reach_anytime(&init, &[], 0.0, 0.5, 0.05, &det(2), None, &Harmonic2d).unwrap();
        let boxes: Vec<HyperRectangle> = r.intermediates.iter().map(|(_, b)| b.clone()).collect();
        assert_eq!(r.hull, HyperRectangle::interval_hull(&boxes).unwrap());
    }
}
