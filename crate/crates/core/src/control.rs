//! ADRC control law, the two benchmark feedbacks, reference generators and
//! the PVTOL control allocation.

use crate::error::{Error, Result};
use crate::observer::FusedEstimate;

/// Allocation is refused below this thrust magnitude (`det M = v1`).
pub const ALLOCATION_SINGULAR_THRESHOLD: f64 = 1e-9;

/// Reference value and its time derivatives, `[y_d, y_d', ..., y_d^(m)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample {
    pub derivs: Vec<f64>,
}

impl ReferenceSample {
    pub fn value(&self) -> f64 {
        self.derivs[0]
    }

    pub fn deriv(&self, k: usize) -> f64 {
        self.derivs[k]
    }
}

/// `u = (v - d_hat) / g_hat`.
pub fn adrc_control(d_hat: f64, v: f64, g_hat: f64) -> f64 {
    (-d_hat + v) / g_hat
}

/// Second-order tracking feedback with both closed-loop poles at -2.
pub fn sim1_feedback(r: &ReferenceSample, z: &FusedEstimate) -> f64 {
    r.deriv(2) + 4.0 * (r.deriv(1) - z.state(1)) + 4.0 * (r.deriv(0) - z.state(0))
}

/// Fourth-order tracking feedback used on each PVTOL position axis.
pub fn sim2_feedback(r: &ReferenceSample, z: &FusedEstimate) -> f64 {
    r.deriv(4)
        + 5.0625 * (r.deriv(3) - z.state(3))
        + 13.5 * (r.deriv(2) - z.state(2))
        + 13.5 * (r.deriv(1) - z.state(1))
        + 6.0 * (r.deriv(0) - z.state(0))
}

/// Number of first-order lags in the reference pre-filter.
pub const STEP_FILTER_ORDER: usize = 5;
/// Time constant of each lag [s].
pub const STEP_FILTER_TAU: f64 = 0.1;

/// Step reference shaped by `1 / (tau s + 1)^5`, realized as five cascaded
/// lags `q_k' = (q_{k-1} - q_k) / tau` with `q_0` the raw step. `q[4]` is the
/// filtered reference.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFilterState {
    pub q: [f64; STEP_FILTER_ORDER],
    pub amplitude: f64,
    pub t_step: f64,
}

impl StepFilterState {
    pub fn new(amplitude: f64, t_step: f64) -> Self {
        StepFilterState {
            q: [0.0; STEP_FILTER_ORDER],
            amplitude,
            t_step,
        }
    }

    pub fn input(&self, t: f64) -> f64 {
        if t >= self.t_step {
            self.amplitude
        } else {
            0.0
        }
    }

    /// Right-hand side of the lag chain.
    pub fn derivative_into(&self, q: &[f64], t: f64, out: &mut [f64]) {
        let mut upstream = self.input(t);
        for k in 0..STEP_FILTER_ORDER {
            out[k] = (upstream - q[k]) / STEP_FILTER_TAU;
            upstream = q[k];
        }
    }

    /// `[y_d, y_d', y_d'']` read from the chain states.
    pub fn sample_from_states(q: &[f64]) -> ReferenceSample {
        let tau = STEP_FILTER_TAU;
        let (q3, q4, q5) = (q[2], q[3], q[4]);
        ReferenceSample {
            derivs: vec![q5, (q4 - q5) / tau, (q3 - 2.0 * q4 + q5) / (tau * tau)],
        }
    }

    pub fn sample(&self) -> ReferenceSample {
        Self::sample_from_states(&self.q)
    }

    /// Closed-form chain states at time `t` for a filter initially at rest:
    /// `q_k = A (1 - e^{-s} sum_{j<k} s^j / j!)`, `s = (t - t_step) / tau`.
    pub fn exact_states(&self, t: f64) -> [f64; STEP_FILTER_ORDER] {
        let mut q = [0.0; STEP_FILTER_ORDER];
        if t < self.t_step {
            return q;
        }
        let s = (t - self.t_step) / STEP_FILTER_TAU;
        let e = (-s).exp();
        let mut term = 1.0;
        let mut partial = 0.0;
        for (k, qk) in q.iter_mut().enumerate() {
            partial += term;
            term *= s / (k + 1) as f64;
            *qk = self.amplitude * (1.0 - e * partial);
        }
        q
    }

    /// Advances the chain to `t` along the exact solution and returns the
    /// reference sample there.
    pub fn advance_to(&mut self, t: f64) -> ReferenceSample {
        self.q = self.exact_states(t);
        self.sample()
    }
}

/// Reference sample of the step filter at `t`, advancing the filter state.
pub fn step_reference(state: &mut StepFilterState, t: f64) -> ReferenceSample {
    state.advance_to(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Z => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Z => "z",
        }
    }
}

/// Angular rate of the PVTOL reference trajectory [rad/s].
pub const SIM2_REFERENCE_RATE: f64 = 0.75;

/// PVTOL reference with four analytic derivatives: `x_d = sin(0.75 t)`,
/// `z_d = 0.5 cos(0.75 t) + 1`.
pub fn sim2_reference(axis: Axis, t: f64) -> ReferenceSample {
    let w = SIM2_REFERENCE_RATE;
    let (s, c) = (w * t).sin_cos();
    let (w2, w3, w4) = (w * w, w * w * w, w * w * w * w);
    let derivs = match axis {
        Axis::X => vec![s, w * c, -w2 * s, -w3 * c, w4 * s],
        Axis::Z => vec![
            0.5 * c + 1.0,
            -0.5 * w * s,
            -0.5 * w2 * c,
            0.5 * w3 * s,
            0.5 * w4 * c,
        ],
    };
    ReferenceSample { derivs }
}

/// Internal thrust states of the PVTOL controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvtolAllocatorState {
    pub v1: f64,
    pub v1dot: f64,
}

/// `M(theta, a) = [[-sin, -a cos], [cos, -a sin]]`, row major.
pub fn allocation_matrix(theta: f64, a: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[-s, -a * c], [c, -a * s]]
}

/// `[v1'', v2] = M(theta, v1)^{-1} [u_x, u_z]`.
pub fn pvtol_allocate(
    theta: f64,
    state: &PvtolAllocatorState,
    ux: f64,
    uz: f64,
) -> Result<(f64, f64)> {
    let a = state.v1;
    if !(a.abs() >= ALLOCATION_SINGULAR_THRESHOLD) {
        return Err(Error::AllocationSingular { v1: a });
    }
    let (s, c) = theta.sin_cos();
    Ok((-s * ux + c * uz, (-c * ux - s * uz) / a))
}
