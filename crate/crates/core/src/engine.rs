//! Fixed-step closed-loop simulation.
//!
//! The joint state (plant, reference filter or PVTOL thrust states, observer
//! levels) is integrated with classic RK4 at step `h_int`. Every `ts` the
//! measurement is sampled (with held band-limited noise), the fused estimate
//! is read, the control is computed and a trace row is recorded. In
//! [`HoldMode::Sampled`] the measurement, control and PVTOL allocation stay
//! constant until the next tick; in [`HoldMode::Continuous`] they are
//! re-evaluated at every RK stage and only the noise is held.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chainform::{make_chain, ChainSystem};
use crate::control::{
    adrc_control, pvtol_allocate, sim1_feedback, sim2_feedback, sim2_reference, Axis,
    PvtolAllocatorState, ReferenceSample, StepFilterState, STEP_FILTER_ORDER,
};
use crate::error::{Error, Result};
use crate::noise::NoiseChannel;
use crate::observer::{CascadeConfig, FusedEstimate, ObserverBank, StandardEso};
use crate::plants::{
    pvtol_axis_chain, pvtol_deriv, sim1_deriv_switched, sim1_total_disturbance_with, PvtolState,
    Sim1Disturbance, Sim1State,
};
use crate::rk4::Rk4;

/// Any state magnitude above this aborts the run.
pub const BLOWUP_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    /// Generic second-order benchmark plant.
    Sim1,
    /// Normalized PVTOL aircraft, two fourth-order position chains.
    Pvtol,
}

impl PlantKind {
    pub fn order(self) -> usize {
        match self {
            PlantKind::Sim1 => 2,
            PlantKind::Pvtol => 4,
        }
    }

    pub fn axes(self) -> &'static [Option<Axis>] {
        match self {
            PlantKind::Sim1 => &[None],
            PlantKind::Pvtol => &[Some(Axis::X), Some(Axis::Z)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HoldMode {
    Sampled,
    #[default]
    Continuous,
}

/// Initial observer state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObserverInit {
    /// Every level's chain part starts at the true initial chain state
    /// `[y, y', ..., y^(n-1)]`; disturbance parts start at zero.
    #[default]
    Plant,
    /// All observer states start at zero.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// Cascade bank (any `p`, `p = 1` included).
    #[default]
    Cascade,
    /// Stand-alone single ESO evaluated through dense chain matrices; needs
    /// `p = 1`.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Noiseless.
    A,
    /// With measurement noise.
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub plant: PlantKind,
    #[serde(flatten)]
    pub observer: CascadeConfig,
    #[serde(default)]
    pub estimator: EstimatorKind,
    /// Sample period of measurement, noise and control [s].
    pub ts: f64,
    /// Internal integration step [s]; `ts / h_int` must be an integer.
    pub h_int: f64,
    pub duration: f64,
    pub noise_power: f64,
    pub seed: u64,
    /// `(t0, T)` of the quality criteria.
    pub metric_window: (f64, f64),
    #[serde(default)]
    pub hold_mode: HoldMode,
    #[serde(default)]
    pub observer_init: ObserverInit,
    /// Sim1 reference step amplitude.
    #[serde(default = "one")]
    pub step_amplitude: f64,
    /// Sim1 reference step time [s].
    #[serde(default)]
    pub step_time: f64,
    #[serde(default)]
    pub sim1_disturbance: Sim1Disturbance,
    #[serde(default)]
    pub start_time: f64,
    /// Plant initial condition; empty selects the scenario default.
    /// Sim1: `[x1, x2]`; PVTOL: `[x, x', z, z', theta, theta', v1, v1']`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial_state: Vec<f64>,
    /// Replaces the ADRC law by a constant input on every channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open_loop_input: Option<f64>,
    /// Noise sample period when it differs from `ts`; must be a multiple of it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_ts: Option<f64>,
}

fn one() -> f64 {
    1.0
}

/// Bandwidth settings of the Sim1 comparison for `p = 1, 2, 3`.
pub const SIM1_BANDWIDTHS: [(f64, f64); 3] = [(250.0, 2.0), (60.82, 2.0), (33.98, 2.0)];
/// Bandwidth settings of the PVTOL comparison for `p = 1, 2, 3`.
pub const SIM2_BANDWIDTHS: [(f64, f64); 3] = [(200.0, 3.0), (25.83, 3.0), (9.65, 3.0)];

pub const SIM1_NOISE_POWER: f64 = 1e-9;
pub const SIM2_NOISE_POWER: f64 = 1e-17;

impl ScenarioConfig {
    /// Generic-plant scenario with the tabulated bandwidths for `p`.
    pub fn sim1(variant: Variant, p: usize) -> Result<Self> {
        let &(omega1, alpha) = SIM1_BANDWIDTHS
            .get(p.wrapping_sub(1))
            .ok_or_else(|| Error::config(format!("tabulated Sim1 settings exist for p = 1..3, got {p}")))?;
        Self::sim1_with(variant, p, omega1, alpha)
    }

    pub fn sim1_with(variant: Variant, p: usize, omega1: f64, alpha: f64) -> Result<Self> {
        Ok(ScenarioConfig {
            plant: PlantKind::Sim1,
            observer: CascadeConfig::new(2, p, omega1, alpha, 1.0)?,
            estimator: EstimatorKind::Cascade,
            ts: 0.01,
            h_int: 1e-3,
            duration: 5.0,
            noise_power: match variant {
                Variant::A => 0.0,
                Variant::B => SIM1_NOISE_POWER,
            },
            seed: 0,
            metric_window: (0.0, 5.0),
            hold_mode: HoldMode::Continuous,
            observer_init: ObserverInit::Plant,
            step_amplitude: 1.0,
            step_time: 0.0,
            sim1_disturbance: Sim1Disturbance::Sinusoid,
            start_time: 0.0,
            initial_state: Vec::new(),
            open_loop_input: None,
            noise_ts: None,
        })
    }

    /// PVTOL scenario with the tabulated bandwidths for `p`.
    pub fn sim2(variant: Variant, p: usize) -> Result<Self> {
        let &(omega1, alpha) = SIM2_BANDWIDTHS
            .get(p.wrapping_sub(1))
            .ok_or_else(|| Error::config(format!("tabulated Sim2 settings exist for p = 1..3, got {p}")))?;
        Self::sim2_with(variant, p, omega1, alpha)
    }

    pub fn sim2_with(variant: Variant, p: usize, omega1: f64, alpha: f64) -> Result<Self> {
        Ok(ScenarioConfig {
            plant: PlantKind::Pvtol,
            observer: CascadeConfig::new(4, p, omega1, alpha, 1.0)?,
            estimator: EstimatorKind::Cascade,
            ts: 1e-3,
            h_int: 1e-4,
            duration: 40.0,
            noise_power: match variant {
                Variant::A => 0.0,
                Variant::B => SIM2_NOISE_POWER,
            },
            seed: 0,
            metric_window: (5.0, 40.0),
            hold_mode: HoldMode::Continuous,
            observer_init: ObserverInit::Plant,
            step_amplitude: 1.0,
            step_time: 0.0,
            sim1_disturbance: Sim1Disturbance::Sinusoid,
            start_time: 0.0,
            initial_state: Vec::new(),
            open_loop_input: None,
            noise_ts: None,
        })
    }

    pub fn substeps(&self) -> usize {
        (self.ts / self.h_int).round() as usize
    }

    pub fn ticks(&self) -> usize {
        (self.duration / self.ts).round() as usize
    }

    pub fn noise_period(&self) -> f64 {
        self.noise_ts.unwrap_or(self.ts)
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.ticks() as f64 * self.ts
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.plant.order();
        self.observer.validate(n)?;
        if self.estimator == EstimatorKind::Standard && self.observer.p != 1 {
            return Err(Error::config(format!(
                "the standard estimator has a single level, got p = {}",
                self.observer.p
            )));
        }
        if !(self.ts.is_finite() && self.ts > 0.0) {
            return Err(Error::config(format!("ts must be positive, got {}", self.ts)));
        }
        if !(self.h_int.is_finite() && self.h_int > 0.0) {
            return Err(Error::config(format!("h_int must be positive, got {}", self.h_int)));
        }
        if self.h_int > self.ts * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "h_int ({}) must not exceed ts ({})",
                self.h_int, self.ts
            )));
        }
        let ratio = self.ts / self.h_int;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(Error::config(format!(
                "ts / h_int must be a positive integer, got {ratio}"
            )));
        }
        let ticks = self.duration / self.ts;
        if !(self.duration > 0.0) || (ticks - ticks.round()).abs() > 1e-9 * ticks.max(1.0) {
            return Err(Error::config(format!(
                "duration must be a positive multiple of ts, got {}",
                self.duration
            )));
        }
        if let Some(nts) = self.noise_ts {
            let r = nts / self.ts;
            if !(nts > 0.0) || r < 1.0 - 1e-9 || (r - r.round()).abs() > 1e-9 * r {
                return Err(Error::config(format!(
                    "noise_ts must be a positive multiple of ts ({}), got {nts}",
                    self.ts
                )));
            }
        }
        if !(self.noise_power.is_finite() && self.noise_power >= 0.0) {
            return Err(Error::config("noise_power must be nonnegative"));
        }
        let (t0, t1) = self.metric_window;
        if !(t0 < t1) || t0 < self.start_time - 1e-12 || t1 > self.end_time() + 1e-9 {
            return Err(Error::config(format!(
                "metric window must satisfy start <= t0 < T <= end ({} .. {}), got ({t0}, {t1})",
                self.start_time,
                self.end_time()
            )));
        }
        let want = match self.plant {
            PlantKind::Sim1 => 2,
            PlantKind::Pvtol => 8,
        };
        if !self.initial_state.is_empty() && self.initial_state.len() != want {
            return Err(Error::config(format!(
                "initial_state for {:?} needs {want} entries, got {}",
                self.plant,
                self.initial_state.len()
            )));
        }
        Ok(())
    }

    /// Seed of the noise channel for `axis` (`seed xor axis index`).
    pub fn channel_seed(&self, axis: Option<Axis>) -> u64 {
        self.seed ^ axis.map_or(0, |a| a.index() as u64)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AbortReason {
    NumericBlowup,
    AllocationSingular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub t: f64,
    pub reason: AbortReason,
    /// Offending quantity, e.g. `state[12]` or `v1`.
    pub what: String,
    pub value: f64,
}

/// One sampled row of a chain trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    /// True chain state `[x1, ..., xn]`.
    pub state: Vec<f64>,
    /// Noisy measurement.
    pub y: f64,
    pub y_ref: f64,
    /// `y_d - x1`.
    pub e: f64,
    pub u: f64,
    pub v: f64,
    pub d_true: f64,
    pub d_hat: f64,
    /// `z - z_hat`, all `n + 1` components.
    pub z_err: Vec<f64>,
    /// `xi_i[0]` per level.
    pub level_out: Vec<f64>,
    /// `xi_i[n]` per level.
    pub level_dist: Vec<f64>,
}

/// Time-indexed record of one observed chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub axis: Option<Axis>,
    pub n: usize,
    pub p: usize,
    pub rows: Vec<TraceRow>,
    pub abort: Option<Abort>,
}

/// Shared PVTOL trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvtolRow {
    pub t: f64,
    pub state: PvtolState,
    pub v1: f64,
    pub v1dot: f64,
    pub v1ddot: f64,
    pub v2: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    /// One trace for Sim1, `[x, z]` for PVTOL.
    pub traces: Vec<Trace>,
    pub pvtol: Vec<PvtolRow>,
    pub abort: Option<Abort>,
}

impl RunOutput {
    pub fn trace(&self, axis: Option<Axis>) -> Option<&Trace> {
        self.traces.iter().find(|t| t.axis == axis)
    }

    /// Converts a recorded abort into the matching error.
    pub fn into_result(self) -> Result<Self> {
        match &self.abort {
            None => Ok(self),
            Some(a) => Err(match a.reason {
                AbortReason::NumericBlowup => Error::NumericBlowup {
                    t: a.t,
                    what: a.what.clone(),
                    value: a.value,
                    limit: BLOWUP_LIMIT,
                },
                AbortReason::AllocationSingular => Error::AllocationSingular { v1: a.value },
            }),
        }
    }

    /// Final integrated state vector is not kept; this returns the plant
    /// state of the last recorded row.
    pub fn final_plant_state(&self) -> Vec<f64> {
        match self.config.plant {
            PlantKind::Sim1 => self.traces[0].rows.last().map(|r| r.state.clone()).unwrap_or_default(),
            PlantKind::Pvtol => self
                .pvtol
                .last()
                .map(|r| {
                    let mut s = r.state.to_array().to_vec();
                    s.extend([r.v1, r.v1dot]);
                    s
                })
                .unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone)]
enum Estimator {
    Cascade(ObserverBank),
    Standard(StandardEso),
}

impl Estimator {
    fn new(cfg: &ScenarioConfig, sys: &ChainSystem) -> Result<Self> {
        Ok(match cfg.estimator {
            EstimatorKind::Cascade => Estimator::Cascade(ObserverBank::new(&cfg.observer, sys)?),
            EstimatorKind::Standard => Estimator::Standard(StandardEso::new(
                cfg.observer.omega1,
                cfg.observer.kappa_for_level(0),
                cfg.observer.g_hat,
                sys,
            )?),
        })
    }

    fn dim(&self) -> usize {
        match self {
            Estimator::Cascade(b) => b.dim(),
            Estimator::Standard(e) => e.dim(),
        }
    }

    fn derivative_into(&self, xi: &[f64], y: f64, u: f64, out: &mut [f64]) {
        match self {
            Estimator::Cascade(b) => b.derivative_into(xi, y, u, out),
            Estimator::Standard(e) => e.derivative_into(xi, y, u, out),
        }
    }

    fn fused(&self, xi: &[f64]) -> FusedEstimate {
        match self {
            Estimator::Cascade(b) => b.fused_from_flat(xi),
            Estimator::Standard(e) => e.fused_from_flat(xi),
        }
    }
}

/// Controller output for one chain at one instant.
#[derive(Debug, Clone, Copy)]
struct ChainCommand {
    u: f64,
    v: f64,
}

struct Layout {
    obs: Vec<usize>,
    obs_dim: usize,
    dim: usize,
}

/// Runs one closed-loop scenario.
///
/// Configuration problems are returned as errors; a numeric blow-up or a
/// singular PVTOL allocation stops the run and is reported in
/// [`RunOutput::abort`] with the trace recorded so far.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    Simulation::new(cfg)?.run()
}

pub fn run_sim1(variant: Variant, p: usize) -> Result<RunOutput> {
    run_scenario(&ScenarioConfig::sim1(variant, p)?)
}

pub fn run_sim2(variant: Variant, p: usize) -> Result<RunOutput> {
    run_scenario(&ScenarioConfig::sim2(variant, p)?)
}

struct Held {
    /// Sim1 disturbance onset, fixed per RK step by the step start time.
    dist_active: bool,
    y: [f64; 2],
    w: [f64; 2],
    u: [f64; 2],
    v: [f64; 2],
    alloc: (f64, f64),
}

struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    n: usize,
    est: Estimator,
    layout: Layout,
    filter: StepFilterState,
    noise: Vec<NoiseChannel>,
}

impl<'a> Simulation<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        let n = cfg.plant.order();
        let sys = make_chain(n)?;
        let est = Estimator::new(cfg, &sys)?;
        let obs_dim = est.dim();
        let (plant, aux) = match cfg.plant {
            PlantKind::Sim1 => (2, STEP_FILTER_ORDER),
            PlantKind::Pvtol => (6, 2),
        };
        let axes = cfg.plant.axes().len();
        let obs = (0..axes).map(|i| plant + aux + i * obs_dim).collect();
        let layout = Layout {
            obs,
            obs_dim,
            dim: plant + aux + axes * obs_dim,
        };
        let noise = cfg
            .plant
            .axes()
            .iter()
            .map(|&a| NoiseChannel::new(cfg.noise_power, cfg.noise_period(), cfg.channel_seed(a)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Simulation {
            cfg,
            n,
            est,
            layout,
            filter: StepFilterState::new(cfg.step_amplitude, cfg.step_time),
            noise,
        })
    }

    fn initial_state(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.layout.dim];
        let init: Vec<f64> = if !self.cfg.initial_state.is_empty() {
            self.cfg.initial_state.clone()
        } else {
            match self.cfg.plant {
                PlantKind::Sim1 => vec![0.0, 0.0],
                PlantKind::Pvtol => vec![0.0, 0.0, 0.0, 0.0, 0.6, 0.0, 1.5, 0.0],
            }
        };
        match self.cfg.plant {
            PlantKind::Sim1 => s[..2].copy_from_slice(&init),
            PlantKind::Pvtol => s[..8].copy_from_slice(&init),
        }
        if self.cfg.plant == PlantKind::Sim1 && self.cfg.start_time > self.cfg.step_time {
            let q = self.filter.exact_states(self.cfg.start_time);
            s[2..2 + STEP_FILTER_ORDER].copy_from_slice(&q);
        }
        if self.cfg.observer_init == ObserverInit::Plant {
            let n = self.n;
            for a in 0..self.layout.obs.len() {
                let chain = self.true_chain(&s, a);
                let o = self.layout.obs[a];
                for level in 0..self.layout.obs_dim / (n + 1) {
                    let at = o + level * (n + 1);
                    s[at..at + n].copy_from_slice(&chain);
                }
            }
        }
        s
    }

    /// True chain state `[y, ..., y^(n-1)]` of axis `a`.
    fn true_chain(&self, s: &[f64], a: usize) -> Vec<f64> {
        match self.cfg.plant {
            PlantKind::Sim1 => vec![s[0], s[1]],
            PlantKind::Pvtol => {
                let st = PvtolState::from_slice(&s[..6]);
                let alloc = PvtolAllocatorState { v1: s[6], v1dot: s[7] };
                let axis = self.cfg.plant.axes()[a].unwrap_or(Axis::X);
                // The first four chain entries do not depend on v1'' or v2.
                pvtol_axis_chain(axis, &st, &alloc, 0.0, 0.0, self.cfg.start_time)[..4].to_vec()
            }
        }
    }

    fn xi<'s>(&self, s: &'s [f64], axis: usize) -> &'s [f64] {
        let o = self.layout.obs[axis];
        &s[o..o + self.layout.obs_dim]
    }

    fn reference(&self, s: &[f64], axis: Option<Axis>, t: f64) -> ReferenceSample {
        match axis {
            None => StepFilterState::sample_from_states(&s[2..2 + STEP_FILTER_ORDER]),
            Some(a) => sim2_reference(a, t),
        }
    }

    fn command(&self, s: &[f64], axis_idx: usize, t: f64) -> ChainCommand {
        if let Some(u0) = self.cfg.open_loop_input {
            return ChainCommand { u: u0, v: f64::NAN };
        }
        let axis = self.cfg.plant.axes()[axis_idx];
        let z = self.est.fused(self.xi(s, axis_idx));
        let r = self.reference(s, axis, t);
        let v = match self.cfg.plant {
            PlantKind::Sim1 => sim1_feedback(&r, &z),
            PlantKind::Pvtol => sim2_feedback(&r, &z),
        };
        ChainCommand {
            u: adrc_control(z.d_hat(), v, self.cfg.observer.g_hat),
            v,
        }
    }

    fn measured(&self, s: &[f64], axis_idx: usize) -> f64 {
        match self.cfg.plant {
            PlantKind::Sim1 => s[0],
            PlantKind::Pvtol => s[2 * axis_idx],
        }
    }

    fn allocate(&self, s: &[f64], u: [f64; 2]) -> Result<(f64, f64)> {
        let alloc = PvtolAllocatorState { v1: s[6], v1dot: s[7] };
        pvtol_allocate(s[4], &alloc, u[0], u[1])
    }

    /// Joint right-hand side. Returns an allocation error in continuous mode.
    fn derivative(&self, t: f64, s: &[f64], ds: &mut [f64], held: &Held) -> Result<()> {
        let axes = self.layout.obs.len();
        let continuous = self.cfg.hold_mode == HoldMode::Continuous;
        let mut y = held.y;
        let mut u = held.u;
        if continuous {
            for a in 0..axes {
                y[a] = self.measured(s, a) + held.w[a];
                u[a] = self.command(s, a, t).u;
            }
        }
        match self.cfg.plant {
            PlantKind::Sim1 => {
                let st = Sim1State { x1: s[0], x2: s[1] };
                let (d0, d1) =
                    sim1_deriv_switched(&st, u[0], t, self.cfg.sim1_disturbance, held.dist_active);
                ds[0] = d0;
                ds[1] = d1;
                self.filter.derivative_into(&s[2..7], t, &mut ds[2..7]);
            }
            PlantKind::Pvtol => {
                let (v1dd, v2) = if continuous { self.allocate(s, u)? } else { held.alloc };
                let st = PvtolState::from_slice(&s[..6]);
                let alloc = PvtolAllocatorState { v1: s[6], v1dot: s[7] };
                ds[..6].copy_from_slice(&pvtol_deriv(&st, &alloc, v2, t));
                ds[6] = s[7];
                ds[7] = v1dd;
            }
        }
        for a in 0..axes {
            let o = self.layout.obs[a];
            let d = self.layout.obs_dim;
            self.est.derivative_into(&s[o..o + d], y[a], u[a], &mut ds[o..o + d]);
        }
        Ok(())
    }

    fn run(mut self) -> Result<RunOutput> {
        let cfg = self.cfg;
        let axes = cfg.plant.axes();
        let n = self.n;
        let p = cfg.observer.p;
        let m = cfg.substeps();
        let h = cfg.ts / m as f64;
        let ticks = cfg.ticks();
        let noise_stride = (cfg.noise_period() / cfg.ts).round() as usize;
        let mut s = self.initial_state();
        let mut rk = Rk4::new(self.layout.dim);
        let mut traces: Vec<Trace> = axes
            .iter()
            .map(|&axis| Trace {
                axis,
                n,
                p,
                rows: Vec::with_capacity(ticks + 1),
                abort: None,
            })
            .collect();
        let mut pvtol_rows = Vec::new();
        let mut held = Held {
            dist_active: false,
            y: [0.0; 2],
            w: [0.0; 2],
            u: [0.0; 2],
            v: [0.0; 2],
            alloc: (0.0, 0.0),
        };
        let mut abort = None;

        for k in 0..=ticks {
            let t = cfg.start_time + k as f64 * cfg.ts;
            for a in 0..axes.len() {
                held.w[a] = self.noise[a].sample_at_index((k / noise_stride) as u64);
                held.y[a] = self.measured(&s, a) + held.w[a];
                let c = self.command(&s, a, t);
                held.u[a] = c.u;
                held.v[a] = c.v;
            }
            if cfg.plant == PlantKind::Pvtol {
                match self.allocate(&s, held.u) {
                    Ok(al) => held.alloc = al,
                    Err(_) => {
                        abort = Some(Abort {
                            t,
                            reason: AbortReason::AllocationSingular,
                            what: "v1".into(),
                            value: s[6],
                        });
                        break;
                    }
                }
            }
            self.record(&s, t, &held, &mut traces, &mut pvtol_rows);
            if k == ticks {
                break;
            }
            let mut step_err = None;
            for j in 0..m {
                // Products of integers keep grid instants such as the Sim1
                // onset exact across step refinements.
                let ts = cfg.start_time + (k * m + j) as f64 * h;
                held.dist_active = cfg.sim1_disturbance.is_active(ts);
                rk.step(&mut s, ts, h, |tt, y, dy| {
                    if let Err(e) = self.derivative(tt, y, dy, &held) {
                        step_err.get_or_insert(e);
                        dy.iter_mut().for_each(|d| *d = 0.0);
                    }
                });
                if let Some(e) = step_err.take() {
                    let v1 = match e {
                        Error::AllocationSingular { v1 } => v1,
                        _ => f64::NAN,
                    };
                    abort = Some(Abort {
                        t: ts,
                        reason: AbortReason::AllocationSingular,
                        what: "v1".into(),
                        value: v1,
                    });
                    break;
                }
                if let Some(i) = s.iter().position(|v| !(v.abs() <= BLOWUP_LIMIT)) {
                    abort = Some(Abort {
                        t: ts + h,
                        reason: AbortReason::NumericBlowup,
                        what: format!("state[{i}]"),
                        value: s[i],
                    });
                    break;
                }
            }
            if abort.is_some() {
                break;
            }
        }
        for tr in &mut traces {
            tr.abort = abort.clone();
        }
        Ok(RunOutput {
            config: cfg.clone(),
            traces,
            pvtol: pvtol_rows,
            abort,
        })
    }

    fn record(
        &self,
        s: &[f64],
        t: f64,
        held: &Held,
        traces: &mut [Trace],
        pvtol_rows: &mut Vec<PvtolRow>,
    ) {
        let n = self.n;
        let g_hat = self.cfg.observer.g_hat;
        for (a, tr) in traces.iter_mut().enumerate() {
            let axis = tr.axis;
            let (chain, d_true) = match self.cfg.plant {
                PlantKind::Sim1 => {
                    let st = Sim1State { x1: s[0], x2: s[1] };
                    let d = sim1_total_disturbance_with(&st, held.u[0], t, g_hat, self.cfg.sim1_disturbance);
                    (vec![s[0], s[1]], d)
                }
                PlantKind::Pvtol => {
                    let st = PvtolState::from_slice(&s[..6]);
                    let alloc = PvtolAllocatorState { v1: s[6], v1dot: s[7] };
                    let c = pvtol_axis_chain(axis.unwrap_or(Axis::X), &st, &alloc, held.alloc.0, held.alloc.1, t);
                    (c[..4].to_vec(), c[4] - g_hat * held.u[a])
                }
            };
            let xi = self.xi(s, a);
            let z = self.est.fused(xi);
            let r = self.reference(s, axis, t);
            let mut z_err: Vec<f64> = chain.iter().zip(&z.z_hat).map(|(x, zh)| x - zh).collect();
            z_err.push(d_true - z.d_hat());
            let levels = xi.len() / (n + 1);
            tr.rows.push(TraceRow {
                t,
                y: held.y[a],
                y_ref: r.value(),
                e: r.value() - chain[0],
                u: held.u[a],
                v: held.v[a],
                d_true,
                d_hat: z.d_hat(),
                z_err,
                level_out: (0..levels).map(|i| xi[i * (n + 1)]).collect(),
                level_dist: (0..levels).map(|i| xi[i * (n + 1) + n]).collect(),
                state: chain,
            });
        }
        if self.cfg.plant == PlantKind::Pvtol {
            pvtol_rows.push(PvtolRow {
                t,
                state: PvtolState::from_slice(&s[..6]),
                v1: s[6],
                v1dot: s[7],
                v1ddot: held.alloc.0,
                v2: held.alloc.1,
            });
        }
    }
}

/// Formats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn config_comment(cfg: &ScenarioConfig) -> String {
    let mut out = String::new();
    for line in cfg.to_toml().lines() {
        let _ = writeln!(out, "# {line}");
    }
    out
}

impl Trace {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((1..=self.n).map(|i| format!("x{i}")));
        h.extend(["y", "y_d", "e", "u", "v", "d_true", "d_hat"].map(String::from));
        h.extend((1..=self.n + 1).map(|i| format!("ztilde{i}")));
        for i in 1..=self.p {
            h.push(format!("xi{i}_1"));
            h.push(format!("xi{i}_{}", self.n + 1));
        }
        h
    }

    /// CSV with `#` comment lines carrying the resolved configuration.
    pub fn write_csv<W: Write>(&self, cfg: &ScenarioConfig, mut w: W) -> Result<()> {
        w.write_all(config_comment(cfg).as_bytes())?;
        if let Some(a) = self.axis {
            writeln!(w, "# axis = \"{}\"", a.name())?;
        }
        if let Some(a) = &self.abort {
            writeln!(w, "# aborted at t = {}: {:?} ({} = {:e})", a.t, a.reason, a.what, a.value)?;
        }
        writeln!(w, "{}", self.header().join(","))?;
        for r in &self.rows {
            let mut vals = vec![r.t];
            vals.extend(&r.state);
            vals.extend([r.y, r.y_ref, r.e, r.u, r.v, r.d_true, r.d_hat]);
            vals.extend(&r.z_err);
            for (o, d) in r.level_out.iter().zip(&r.level_dist) {
                vals.push(*o);
                vals.push(*d);
            }
            let line: Vec<String> = vals.into_iter().map(fmt_f64).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// CSV of the shared PVTOL trajectory.
pub fn write_pvtol_csv<W: Write>(rows: &[PvtolRow], cfg: &ScenarioConfig, mut w: W) -> Result<()> {
    w.write_all(config_comment(cfg).as_bytes())?;
    writeln!(w, "t,x,xdot,z,zdot,theta,thetadot,v1,v1dot,v1ddot,v2")?;
    for r in rows {
        let mut vals = vec![r.t];
        vals.extend(r.state.to_array());
        vals.extend([r.v1, r.v1dot, r.v1ddot, r.v2]);
        let line: Vec<String> = vals.into_iter().map(fmt_f64).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Parsed CSV table: header names and numeric rows. Comment lines are
/// returned separately.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut comments = Vec::new();
        let mut header = None;
        let mut rows = Vec::new();
        for line in text.lines() {
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.trim_start().to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                header = Some(line.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>());
                continue;
            }
            let row = line
                .split(',')
                .map(|s| {
                    let s = s.trim();
                    if s.eq_ignore_ascii_case("nan") {
                        Ok(f64::NAN)
                    } else {
                        s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(CsvTable {
            comments,
            header: header.ok_or_else(|| Error::Parse("missing CSV header".into()))?,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in 1..=3 {
            for v in [Variant::A, Variant::B] {
                ScenarioConfig::sim1(v, p).unwrap().validate().unwrap();
                ScenarioConfig::sim2(v, p).unwrap().validate().unwrap();
            }
        }
        assert!(ScenarioConfig::sim1(Variant::A, 4).is_err());
        assert!(ScenarioConfig::sim2(Variant::A, 0).is_err());
    }

    #[test]
    fn config_checks() {
        let base = ScenarioConfig::sim1(Variant::A, 1).unwrap();
        let mut c = base.clone();
        c.h_int = 0.003;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.h_int = 0.02;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.metric_window = (0.0, 6.0);
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.estimator = EstimatorKind::Standard;
        c.validate().unwrap();
        c.observer = CascadeConfig::new(2, 2, 60.0, 2.0, 1.0).unwrap();
        assert!(c.validate().is_err());
        let mut c = base;
        c.initial_state = vec![0.0; 3];
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = ScenarioConfig::sim2(Variant::B, 3).unwrap();
        let text = c.to_toml();
        assert!(text.contains("omega1 = 9.65"));
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn trace_shape_and_determinism() {
        let mut c = ScenarioConfig::sim1(Variant::A, 2).unwrap();
        c.duration = 1.0;
        c.metric_window = (0.0, 1.0);
        let a = run_scenario(&c).unwrap();
        let b = run_scenario(&c).unwrap();
        let tr = &a.traces[0];
        assert!(a.abort.is_none());
        assert_eq!(tr.rows.len(), 101);
        assert!(tr.rows.windows(2).all(|w| w[1].t > w[0].t));
        assert_eq!(tr.rows, b.traces[0].rows);
        assert_eq!(tr.header().len(), 1 + 2 + 7 + 3 + 4);
    }

    #[test]
    fn seed_irrelevant_without_noise() {
        let mut c = ScenarioConfig::sim1(Variant::A, 1).unwrap();
        c.duration = 0.5;
        c.metric_window = (0.0, 0.5);
        let a = run_scenario(&c).unwrap();
        c.seed = 99;
        let b = run_scenario(&c).unwrap();
        assert_eq!(a.traces[0].rows, b.traces[0].rows);
    }

    #[test]
    fn blowup_is_flagged() {
        // A held input with omega * ts = 2.5 destabilizes the PVTOL loop.
        let mut c = ScenarioConfig::sim2(Variant::A, 1).unwrap();
        c.hold_mode = HoldMode::Sampled;
        let out = run_scenario(&c).unwrap();
        let a = out.abort.clone().expect("aborted");
        assert_eq!(a.reason, AbortReason::NumericBlowup);
        assert!(out.traces[0].rows.len() < c.ticks() + 1);
        assert!(matches!(out.into_result(), Err(Error::NumericBlowup { .. })));
    }

    #[test]
    fn singular_allocation_is_flagged() {
        let mut c = ScenarioConfig::sim2(Variant::A, 1).unwrap();
        c.duration = 0.01;
        c.metric_window = (0.0, 0.01);
        c.initial_state = vec![0.0, 0.0, 0.0, 0.0, 0.6, 0.0, 0.0, 0.0];
        let out = run_scenario(&c).unwrap();
        assert_eq!(out.abort.as_ref().unwrap().reason, AbortReason::AllocationSingular);
        assert!(matches!(out.into_result(), Err(Error::AllocationSingular { .. })));
    }

    #[test]
    fn sampled_hold_keeps_inputs_constant() {
        // Between ticks the plant sees the held input: with x2 tracked exactly
        // by RK4 and u constant, the recorded u at a tick is what was applied.
        let mut c = ScenarioConfig::sim1(Variant::A, 1).unwrap();
        c.duration = 0.05;
        c.metric_window = (0.0, 0.05);
        c.hold_mode = HoldMode::Sampled;
        let sim = Simulation::new(&c).unwrap();
        let s = sim.initial_state();
        let held = Held {
            dist_active: false,
            y: [0.25, 0.0],
            w: [0.0; 2],
            u: [1.5, 0.0],
            v: [0.0; 2],
            alloc: (0.0, 0.0),
        };
        let mut d1 = vec![0.0; s.len()];
        let mut d2 = vec![0.0; s.len()];
        let mut s2 = s.clone();
        s2[0] += 0.1;
        sim.derivative(0.001, &s, &mut d1, &held).unwrap();
        sim.derivative(0.004, &s2, &mut d2, &held).unwrap();
        // Observer input is the held y: identical observer state and inputs
        // give identical observer derivatives regardless of the plant state.
        let o = sim.layout.obs[0];
        assert_eq!(d1[o..], d2[o..]);
    }

    #[test]
    fn csv_round_trip() {
        let mut c = ScenarioConfig::sim1(Variant::B, 2).unwrap();
        c.duration = 0.1;
        c.metric_window = (0.0, 0.1);
        c.seed = 3;
        let out = run_scenario(&c).unwrap();
        let mut buf = Vec::new();
        out.traces[0].write_csv(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let tab = CsvTable::parse(&text).unwrap();
        assert_eq!(tab.header, out.traces[0].header());
        assert_eq!(tab.rows.len(), 11);
        let y = tab.column("y").unwrap();
        for (a, r) in y.iter().zip(&out.traces[0].rows) {
            assert_eq!(*a, r.y);
        }
        let cfg_text: String = tab.comments.iter().map(|l| format!("{l}\n")).collect();
        assert_eq!(ScenarioConfig::from_toml(&cfg_text).unwrap(), c);
    }
}
