//! Agent motion models and the waypoint controller.
//!
//! A model exposes its vector field twice: pointwise for simulation, and as
//! per-component derivative ranges over a box for the face-lifting kernel.
//! The range form must enclose the pointwise form everywhere on the box; for
//! the built-in models it is exact because, with the control input held
//! fixed, each derivative component is either a box coordinate or a constant.
//!
//! Built-ins: the planar quadcopter (positions and velocities along x and y,
//! pitch/roll inputs), a one-dimensional constant-rate model used as an exact
//! oracle in tests, and a harmonic oscillator whose curved flow exercises the
//! neighborhood fixed point of face lifting.

use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{HyperRectangle, Interval};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("model expects state dimension {expected}, got {got}")]
    StateDimMismatch { expected: usize, got: usize },
    #[error("model expects input dimension {expected}, got {got}")]
    InputDimMismatch { expected: usize, got: usize },
    #[error("control angle {value} out of range (-pi/2, pi/2)")]
    ControlOutOfRange { value: f64 },
    #[error("derivative bounds are not finite")]
    NonFiniteDerivative,
}

/// A motion model `x' = f(x, u)`.
pub trait Model: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// Evaluate the vector field at a point. `out` has length `state_dim`.
    fn deriv_into(&self, x: &[f64], u: &[f64], out: &mut [f64]);

    /// Per-component range of the vector field over `bounds_box` with `u`
    /// fixed. Must contain `deriv(x, u)` for every `x` in the box.
    fn deriv_bounds(
        &self,
        bounds_box: &HyperRectangle,
        u: &[f64],
    ) -> Result<HyperRectangle, DynamicsError>;

    fn deriv(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.deriv_into(x, u, &mut out);
        out
    }
}

fn check_dims(model: &dyn Model, box_dim: usize, u: &[f64]) -> Result<(), DynamicsError> {
    if box_dim != model.state_dim() {
        return Err(DynamicsError::StateDimMismatch {
            expected: model.state_dim(),
            got: box_dim,
        });
    }
    if u.len() != model.input_dim() {
        return Err(DynamicsError::InputDimMismatch {
            expected: model.input_dim(),
            got: u.len(),
        });
    }
    Ok(())
}

/// Planar quadcopter at constant altitude, state `(x, v_x, y, v_y)`:
///
/// ```text
/// x'   = v_x
/// v_x' = g tan(theta)
/// y'   = v_y
/// v_y' = g tan(phi) / cos(theta)
/// ```
pub struct Quadcopter4d;

impl Model for Quadcopter4d {
    fn name(&self) -> &'static str {
        "quadcopter4d"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn deriv_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let (theta, phi) = (u[0], u[1]);
        out[0] = x[1];
        out[1] = GRAVITY * theta.tan();
        out[2] = x[3];
        out[3] = GRAVITY * phi.tan() / theta.cos();
    }

    fn deriv_bounds(
        &self,
        bounds_box: &HyperRectangle,
        u: &[f64],
    ) -> Result<HyperRectangle, DynamicsError> {
        check_dims(self, bounds_box.dim(), u)?;
        let ax = GRAVITY * u[0].tan();
        let ay = GRAVITY * u[1].tan() / u[0].cos();
        if !(ax.is_finite() && ay.is_finite()) {
            return Err(DynamicsError::NonFiniteDerivative);
        }
        Ok(HyperRectangle {
            dims: vec![
                bounds_box.dims[1],
                Interval::point(ax),
                bounds_box.dims[3],
                Interval::point(ay),
            ],
        })
    }
}

/// One-dimensional constant-rate model `x' = u[0]`.
pub struct Constant1d;

impl Model for Constant1d {
    fn name(&self) -> &'static str {
        "constant1d"
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn deriv_into(&self, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }

    fn deriv_bounds(
        &self,
        bounds_box: &HyperRectangle,
        u: &[f64],
    ) -> Result<HyperRectangle, DynamicsError> {
        check_dims(self, bounds_box.dim(), u)?;
        if !u[0].is_finite() {
            return Err(DynamicsError::NonFiniteDerivative);
        }
        Ok(HyperRectangle {
            dims: vec![Interval::point(u[0])],
        })
    }
}

/// Harmonic oscillator `x' = y, y' = -x`; trajectories are circles.
pub struct Harmonic2d;

impl Model for Harmonic2d {
    fn name(&self) -> &'static str {
        "harmonic2d"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        0
    }

    fn deriv_into(&self, x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = x[1];
        out[1] = -x[0];
    }

    fn deriv_bounds(
        &self,
        bounds_box: &HyperRectangle,
        u: &[f64],
    ) -> Result<HyperRectangle, DynamicsError> {
        check_dims(self, bounds_box.dim(), u)?;
        Ok(HyperRectangle {
            dims: vec![
                bounds_box.dims[1],
                Interval {
                    lo: -bounds_box.dims[0].hi,
                    hi: -bounds_box.dims[0].lo,
                },
            ],
        })
    }
}

/// Look up a built-in model by its registry name.
pub fn model_by_name(name: &str) -> Option<Arc<dyn Model>> {
    match name {
        "quadcopter4d" => Some(Arc::new(Quadcopter4d)),
        "constant1d" => Some(Arc::new(Constant1d)),
        "harmonic2d" => Some(Arc::new(Harmonic2d)),
        _ => None,
    }
}

/// Quadcopter state `(x, v_x, y, v_y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState {
    pub x: f64,
    pub vx: f64,
    pub y: f64,
    pub vy: f64,
}

impl QuadState {
    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            x: s[0],
            vx: s[1],
            y: s[2],
            vy: s[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.vx, self.y, self.vy]
    }
}

/// Pitch and roll commands in radians. Both must stay strictly inside
/// `(-pi/2, pi/2)` so the vector field stays finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub theta: f64,
    pub phi: f64,
}

impl ControlInput {
    pub fn new(theta: f64, phi: f64) -> Result<Self, DynamicsError> {
        for v in [theta, phi] {
            if !(v.is_finite() && v.abs() < std::f64::consts::FRAC_PI_2) {
                return Err(DynamicsError::ControlOutOfRange { value: v });
            }
        }
        Ok(Self { theta, phi })
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.theta, self.phi]
    }
}

/// Vector field of the planar quadcopter at a point.
pub fn quad_deriv(s: &QuadState, u: &ControlInput) -> [f64; 4] {
    [
        s.vx,
        GRAVITY * u.theta.tan(),
        s.vy,
        GRAVITY * u.phi.tan() / u.theta.cos(),
    ]
}

/// Derivative ranges of the planar quadcopter over a box, exact for fixed `u`.
pub fn quad_deriv_bounds(
    bounds_box: &HyperRectangle,
    u: &ControlInput,
) -> Result<HyperRectangle, DynamicsError> {
    Quadcopter4d.deriv_bounds(bounds_box, &u.to_array())
}

/// PID gains applied independently on each planar axis. The derivative term
/// acts on the measured velocity, and outputs are clamped to
/// `+-output_clamp` radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub output_clamp: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        // Tuned so the eight-agent search mission completes with planar
        // accelerations well inside the clamp.
        Self {
            kp: 0.3,
            ki: 0.0001,
            kd: 0.5,
            output_clamp: 0.35,
        }
    }
}

/// Integral accumulator carried between controller invocations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidMemory {
    pub integral_x: f64,
    pub integral_y: f64,
}

/// One controller update toward `waypoint`, returning the clamped pitch/roll
/// command and the updated integral state.
pub fn pid_step(
    s: &QuadState,
    waypoint: (f64, f64),
    gains: &PidGains,
    dt: f64,
    mut memory: PidMemory,
) -> (ControlInput, PidMemory) {
    debug_assert!(dt > 0.0);
    let ex = waypoint.0 - s.x;
    let ey = waypoint.1 - s.y;
    memory.integral_x += ex * dt;
    memory.integral_y += ey * dt;
    let clamp = gains.output_clamp;
    let theta =
        (gains.kp * ex + gains.ki * memory.integral_x - gains.kd * s.vx).clamp(-clamp, clamp);
    let phi =
        (gains.kp * ey + gains.ki * memory.integral_y - gains.kd * s.vy).clamp(-clamp, clamp);
    (ControlInput { theta, phi }, memory)
}

/// Largest state dimension the stack-allocated integrator accepts.
pub const MAX_STATE_DIM: usize = 16;

/// One classic Runge-Kutta step of length `dt`, in place. Allocation-free so
/// dense oracle integrations stay cheap.
pub fn rk4_step(model: &dyn Model, x: &mut [f64], u: &[f64], dt: f64) {
    let n = x.len();
    assert!(n <= MAX_STATE_DIM);
    let mut k1 = [0.0; MAX_STATE_DIM];
    let mut k2 = [0.0; MAX_STATE_DIM];
    let mut k3 = [0.0; MAX_STATE_DIM];
    let mut k4 = [0.0; MAX_STATE_DIM];
    let mut tmp = [0.0; MAX_STATE_DIM];

    model.deriv_into(x, u, &mut k1[..n]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    model.deriv_into(&tmp[..n], u, &mut k2[..n]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    model.deriv_into(&tmp[..n], u, &mut k3[..n]);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    model.deriv_into(&tmp[..n], u, &mut k4[..n]);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrate from `x0` over `[0, horizon]` with constant input, visiting
/// `(t, state)` after every step of size `dt` (the last step is clipped so
/// the callback sees exactly `t = horizon`).
pub fn integrate_constant_input<F: FnMut(f64, &[f64])>(
    model: &dyn Model,
    x0: &[f64],
    u: &[f64],
    horizon: f64,
    dt: f64,
    mut visit: F,
) {
    let mut x = x0.to_vec();
    let mut t = 0.0;
    visit(t, &x);
    while t < horizon {
        let step = dt.min(horizon - t);
        rk4_step(model, &mut x, u, step);
        t += step;
        visit(t, &x);
    }
}
