//! Benchmark plants and their true total disturbances.
//!
//! Sim1 is a time-varying second-order plant with an external sinusoidal
//! disturbance switched on at 3.5 s. Sim2 is the normalized PVTOL aircraft
//! with crosswind, viewed as two fourth-order chains (x and z axes).

use serde::{Deserialize, Serialize};

use crate::control::{allocation_matrix, Axis, PvtolAllocatorState, ALLOCATION_SINGULAR_THRESHOLD};
use crate::error::{Error, Result};

/// Onset time of the Sim1 external disturbance [s].
pub const SIM1_DISTURBANCE_ONSET: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim1State {
    pub x1: f64,
    pub x2: f64,
}

/// External disturbance acting on the Sim1 plant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Sim1Disturbance {
    /// `0` before the onset, `5 sin(9 t)` afterwards.
    #[default]
    Sinusoid,
    /// Constant for all `t`.
    Constant(f64),
}

impl Sim1Disturbance {
    pub fn at(&self, t: f64) -> f64 {
        self.at_switched(t, self.is_active(t))
    }

    pub fn is_active(&self, t: f64) -> bool {
        match *self {
            Sim1Disturbance::Sinusoid => t >= SIM1_DISTURBANCE_ONSET,
            Sim1Disturbance::Constant(_) => true,
        }
    }

    /// Value with the onset decided by the caller, so a fixed integration
    /// step can stay on one side of the jump.
    pub fn at_switched(&self, t: f64, active: bool) -> f64 {
        match *self {
            Sim1Disturbance::Sinusoid if active => 5.0 * (9.0 * t).sin(),
            Sim1Disturbance::Sinusoid => 0.0,
            Sim1Disturbance::Constant(c) => c,
        }
    }
}

/// Internal dynamics `f = -x1 - 2 x2`.
pub fn sim1_f(s: &Sim1State) -> f64 {
    -s.x1 - 2.0 * s.x2
}

/// Input gain `g = (1 + 0.2 tanh(t - 2)) / (|x1| + 1)`.
pub fn sim1_g(s: &Sim1State, t: f64) -> f64 {
    (1.0 + 0.2 * (t - 2.0).tanh()) / (s.x1.abs() + 1.0)
}

pub fn sim1_deriv(s: &Sim1State, u: f64, t: f64) -> (f64, f64) {
    sim1_deriv_with(s, u, t, Sim1Disturbance::Sinusoid)
}

pub fn sim1_deriv_with(s: &Sim1State, u: f64, t: f64, dist: Sim1Disturbance) -> (f64, f64) {
    sim1_deriv_switched(s, u, t, dist, dist.is_active(t))
}

pub fn sim1_deriv_switched(
    s: &Sim1State,
    u: f64,
    t: f64,
    dist: Sim1Disturbance,
    active: bool,
) -> (f64, f64) {
    (s.x2, sim1_f(s) + sim1_g(s, t) * u + dist.at_switched(t, active))
}

/// `d = f + d* + (g - g_hat) u`.
pub fn sim1_total_disturbance(s: &Sim1State, u: f64, t: f64, g_hat: f64) -> f64 {
    sim1_total_disturbance_with(s, u, t, g_hat, Sim1Disturbance::Sinusoid)
}

pub fn sim1_total_disturbance_with(
    s: &Sim1State,
    u: f64,
    t: f64,
    g_hat: f64,
    dist: Sim1Disturbance,
) -> f64 {
    sim1_f(s) + dist.at(t) + (sim1_g(s, t) - g_hat) * u
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PvtolState {
    pub x: f64,
    pub xdot: f64,
    pub z: f64,
    pub zdot: f64,
    pub theta: f64,
    pub thetadot: f64,
}

impl PvtolState {
    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.xdot, self.z, self.zdot, self.theta, self.thetadot]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        PvtolState {
            x: s[0],
            xdot: s[1],
            z: s[2],
            zdot: s[3],
            theta: s[4],
            thetadot: s[5],
        }
    }
}

/// Crosswind thrust disturbance `d1* = 0.3 + 0.2 sin t cos t` with its first
/// two derivatives, via `sin t cos t = sin(2t) / 2`.
pub fn crosswind_thrust(t: f64) -> (f64, f64, f64) {
    let (s2, c2) = (2.0 * t).sin_cos();
    (0.3 + 0.1 * s2, 0.2 * c2, -0.4 * s2)
}

/// Crosswind torque disturbance `d2* = 0.2 + 0.1 sin(t/2) cos(t/2)`.
pub fn crosswind_torque(t: f64) -> f64 {
    0.2 + 0.05 * t.sin()
}

/// `[x'', z'', theta'']` of the normalized PVTOL model.
pub fn pvtol_accelerations(s: &PvtolState, v1: f64, v2: f64, t: f64) -> [f64; 3] {
    let (d1, _, _) = crosswind_thrust(t);
    let thrust = v1 + d1;
    let (sn, cs) = s.theta.sin_cos();
    [-sn * thrust, cs * thrust - 1.0, v2 + crosswind_torque(t)]
}

/// Time derivative of `[x, x', z, z', theta, theta']`.
pub fn pvtol_deriv(s: &PvtolState, alloc: &PvtolAllocatorState, v2: f64, t: f64) -> [f64; 6] {
    let [xdd, zdd, thdd] = pvtol_accelerations(s, alloc.v1, v2, t);
    [s.xdot, xdd, s.zdot, zdd, s.thetadot, thdd]
}

/// Position chain of one axis: `[p, p', p'', p''', p'''']` given the applied
/// thrust acceleration `v1''` and torque `v2`.
pub fn pvtol_axis_chain(
    axis: Axis,
    s: &PvtolState,
    alloc: &PvtolAllocatorState,
    v1ddot: f64,
    v2: f64,
    t: f64,
) -> [f64; 5] {
    let (d1, d1dot, d1ddot) = crosswind_thrust(t);
    let a = alloc.v1 + d1;
    let adot = alloc.v1dot + d1dot;
    let addot = v1ddot + d1ddot;
    let thdd = v2 + crosswind_torque(t);
    let (sn, cs) = s.theta.sin_cos();
    let w = s.thetadot;
    let m = allocation_matrix(s.theta, a);
    match axis {
        Axis::X => [
            s.x,
            s.xdot,
            -sn * a,
            -cs * w * a - sn * adot,
            m[0][0] * addot + m[0][1] * thdd + sn * w * w * a - 2.0 * cs * w * adot,
        ],
        Axis::Z => [
            s.z,
            s.zdot,
            cs * a - 1.0,
            -sn * w * a + cs * adot,
            m[1][0] * addot + m[1][1] * thdd - cs * w * w * a - 2.0 * sn * w * adot,
        ],
    }
}

/// True total disturbance of one axis: fourth derivative of the position
/// minus `g_hat * u_axis`.
#[allow(clippy::too_many_arguments)]
pub fn pvtol_total_disturbance(
    axis: Axis,
    s: &PvtolState,
    alloc: &PvtolAllocatorState,
    v1ddot: f64,
    v2: f64,
    u_axis: f64,
    g_hat: f64,
    t: f64,
) -> Result<f64> {
    if !(alloc.v1.abs() >= ALLOCATION_SINGULAR_THRESHOLD) {
        return Err(Error::AllocationSingular { v1: alloc.v1 });
    }
    Ok(pvtol_axis_chain(axis, s, alloc, v1ddot, v2, t)[4] - g_hat * u_axis)
}
