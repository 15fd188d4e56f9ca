//! Standard and cascade extended state observers.
//!
//! A cascade of `p` levels runs level 1 as an ordinary ESO on the measured
//! output. Level `i >= 2` tracks the output estimate of level `i - 1`, is fed
//! by the control plus the disturbance estimates of all lower levels, and runs
//! at bandwidth `omega_i = alpha^(i-1) * omega_1`. The fused estimate takes
//! the plant-state part from the top level and sums the disturbance estimates
//! of every level.

use crate::chainform::ChainSystem;
use crate::error::{Error, Result};

/// Pole-placement coefficients `kappa_1..kappa_{n+1}`, all strictly positive.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GainCoefficients(Vec<f64>);

impl GainCoefficients {
    pub fn new(kappa: Vec<f64>) -> Result<Self> {
        if kappa.is_empty() {
            return Err(Error::config("gain coefficients must not be empty"));
        }
        if let Some(k) = kappa.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(Error::config(format!(
                "gain coefficients must be finite and positive, got {k}"
            )));
        }
        Ok(GainCoefficients(kappa))
    }

    pub fn binomial(n: usize) -> Result<Self> {
        binomial_kappas(n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::MIN, f64::max)
    }
}

impl TryFrom<Vec<f64>> for GainCoefficients {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        GainCoefficients::new(v)
    }
}

impl From<GainCoefficients> for Vec<f64> {
    fn from(k: GainCoefficients) -> Self {
        k.0
    }
}

/// `kappa_i = C(n+1, i)` for `i = 1..=n+1`, which places every observer
/// eigenvalue at `-omega`.
pub fn binomial_kappas(n: usize) -> Result<GainCoefficients> {
    if n == 0 {
        return Err(Error::config("observer order n must be at least 1"));
    }
    let m = n + 1;
    let mut kappa = Vec::with_capacity(m);
    let mut c = 1.0_f64;
    for i in 1..=m {
        c = c * (m + 1 - i) as f64 / i as f64;
        kappa.push(c.round());
    }
    GainCoefficients::new(kappa)
}

/// Observer gain vector `l[j] = kappa_{j+1} * omega^{j+1}`.
pub fn eso_gains(n: usize, omega: f64, kappa: &GainCoefficients) -> Result<Vec<f64>> {
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::config(format!(
            "observer bandwidth must be positive, got {omega}"
        )));
    }
    if kappa.len() != n + 1 {
        return Err(Error::config(format!(
            "expected {} gain coefficients for order {n}, got {}",
            n + 1,
            kappa.len()
        )));
    }
    let mut w = 1.0;
    Ok(kappa
        .as_slice()
        .iter()
        .map(|k| {
            w *= omega;
            k * w
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CascadeConfig {
    /// Number of cascade levels; `p = 1` is the standard ESO.
    pub p: usize,
    /// First-level bandwidth [rad/s].
    pub omega1: f64,
    /// Bandwidth multiplier between consecutive levels.
    pub alpha: f64,
    pub kappa: GainCoefficients,
    /// Input-gain estimate.
    pub g_hat: f64,
    /// Per-level coefficient override; empty means every level uses `kappa`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub level_kappa: Vec<GainCoefficients>,
}

impl CascadeConfig {
    /// Binomial coefficients at every level.
    pub fn new(n: usize, p: usize, omega1: f64, alpha: f64, g_hat: f64) -> Result<Self> {
        let cfg = CascadeConfig {
            p,
            omega1,
            alpha,
            kappa: binomial_kappas(n)?,
            g_hat,
            level_kappa: Vec::new(),
        };
        cfg.validate(n)?;
        Ok(cfg)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.p == 0 {
            return Err(Error::config("cascade levels p must be at least 1"));
        }
        if !(self.omega1.is_finite() && self.omega1 > 0.0) {
            return Err(Error::config(format!(
                "omega1 must be positive, got {}",
                self.omega1
            )));
        }
        if self.p >= 2 && !(self.alpha.is_finite() && self.alpha > 1.0) {
            return Err(Error::config(format!(
                "alpha must exceed 1 when p >= 2, got alpha = {} with p = {}",
                self.alpha, self.p
            )));
        }
        if !(self.g_hat.is_finite() && self.g_hat != 0.0) {
            return Err(Error::config("input-gain estimate g_hat must be nonzero"));
        }
        if self.kappa.len() != n + 1 {
            return Err(Error::config(format!(
                "kappa must have n + 1 = {} entries, got {}",
                n + 1,
                self.kappa.len()
            )));
        }
        if !self.level_kappa.is_empty() {
            if self.level_kappa.len() != self.p {
                return Err(Error::config(format!(
                    "level_kappa must list one coefficient vector per level ({}), got {}",
                    self.p,
                    self.level_kappa.len()
                )));
            }
            if self.level_kappa.iter().any(|k| k.len() != n + 1) {
                return Err(Error::config("every level_kappa entry must have n + 1 entries"));
            }
        }
        Ok(())
    }

    /// `omega_i = alpha^(i-1) * omega1` for `i = 1..=p`. `alpha` is ignored
    /// for `p = 1`.
    pub fn bandwidths(&self) -> Vec<f64> {
        let mut w = self.omega1;
        (0..self.p)
            .map(|i| {
                if i > 0 {
                    w *= self.alpha;
                }
                w
            })
            .collect()
    }

    pub fn kappa_for_level(&self, level: usize) -> &GainCoefficients {
        self.level_kappa.get(level).unwrap_or(&self.kappa)
    }

    pub fn level_gains(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        self.bandwidths()
            .iter()
            .enumerate()
            .map(|(i, &w)| eso_gains(n, w, self.kappa_for_level(i)))
            .collect()
    }
}

/// Combined extended-state estimate `[x1_hat, ..., xn_hat, d_hat]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedEstimate {
    pub z_hat: Vec<f64>,
}

impl FusedEstimate {
    pub fn d_hat(&self) -> f64 {
        self.z_hat[self.z_hat.len() - 1]
    }

    /// Estimate of `x_{k+1}` (zero based).
    pub fn state(&self, k: usize) -> f64 {
        self.z_hat[k]
    }
}

/// Level-1 (standard) ESO right-hand side:
/// `xi' = A xi + b_ext g_hat u + l (y - xi[0])`.
pub fn standard_eso_deriv(
    xi: &[f64],
    y: f64,
    u: f64,
    gains: &[f64],
    g_hat: f64,
    sys: &ChainSystem,
) -> Vec<f64> {
    let mut out = vec![0.0; xi.len()];
    standard_eso_deriv_into(xi, y, u, gains, g_hat, sys, &mut out);
    out
}

/// Dense matrix-vector form of [`standard_eso_deriv`].
pub fn standard_eso_deriv_into(
    xi: &[f64],
    y: f64,
    u: f64,
    gains: &[f64],
    g_hat: f64,
    sys: &ChainSystem,
    out: &mut [f64],
) {
    let m = sys.extended_dim();
    let a = sys.extended_a();
    let b_ext = sys.b_ext();
    let innovation = y - xi[0];
    for r in 0..m {
        let mut acc = 0.0;
        for c in 0..m {
            acc += a[(r, c)] * xi[c];
        }
        out[r] = acc + gains[r] * innovation + b_ext[r] * g_hat * u;
    }
}

/// Right-hand side of cascade level `level` (one based, `2..=p`).
///
/// `levels` holds `xi_1..xi_level` (at least); the measurement never enters.
pub fn cascade_eso_deriv(
    level: usize,
    levels: &[Vec<f64>],
    u: f64,
    gains: &[f64],
    g_hat: f64,
    sys: &ChainSystem,
) -> Result<Vec<f64>> {
    if level < 2 || level > levels.len() {
        return Err(Error::config(format!(
            "cascade level must lie in 2..={}, got {level}",
            levels.len()
        )));
    }
    let m = sys.extended_dim();
    let n = sys.order();
    let a = sys.extended_a();
    let b_ext = sys.b_ext();
    let xi = &levels[level - 1];
    let lower = &levels[level - 2];
    let drive = g_hat * u + levels[..level - 1].iter().map(|l| l[n]).sum::<f64>();
    let innovation = lower[0] - xi[0];
    Ok((0..m)
        .map(|r| {
            let ax: f64 = (0..m).map(|c| a[(r, c)] * xi[c]).sum();
            ax + b_ext[r] * drive + gains[r] * innovation
        })
        .collect())
}

/// `z_hat = xi_p + b_dist b_dist^T sum_{j<p} xi_j`.
pub fn fused_estimate(levels: &[Vec<f64>]) -> FusedEstimate {
    let top = levels.last().expect("at least one observer level");
    let n = top.len() - 1;
    let mut z_hat = top.clone();
    z_hat[n] = levels.iter().map(|l| l[n]).sum();
    FusedEstimate { z_hat }
}

/// Observer levels `xi_1..xi_p` with their gains.
///
/// The simulation engine keeps the level states in a flat slice laid out
/// level after level; [`ObserverBank::derivative_into`] and
/// [`ObserverBank::fused_from_flat`] work on that layout directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverBank {
    n: usize,
    g_hat: f64,
    bandwidths: Vec<f64>,
    gains: Vec<Vec<f64>>,
    xi: Vec<f64>,
}

impl ObserverBank {
    pub fn new(cfg: &CascadeConfig, sys: &ChainSystem) -> Result<Self> {
        let n = sys.order();
        cfg.validate(n)?;
        Ok(ObserverBank {
            n,
            g_hat: cfg.g_hat,
            bandwidths: cfg.bandwidths(),
            gains: cfg.level_gains(n)?,
            xi: vec![0.0; cfg.p * (n + 1)],
        })
    }

    /// Replaces the gains of one level (zero based). Used to probe cascade
    /// reductions; gains may be zero here even though synthesized gains never
    /// are.
    pub fn with_level_gains(mut self, level: usize, gains: Vec<f64>) -> Self {
        assert_eq!(gains.len(), self.n + 1);
        self.gains[level] = gains;
        self
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn levels(&self) -> usize {
        self.gains.len()
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    pub fn gains(&self) -> &[Vec<f64>] {
        &self.gains
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn state(&self) -> &[f64] {
        &self.xi
    }

    pub fn set_state(&mut self, xi: &[f64]) {
        self.xi.copy_from_slice(xi);
    }

    pub fn level(&self, i: usize) -> &[f64] {
        let m = self.n + 1;
        &self.xi[i * m..(i + 1) * m]
    }

    pub fn level_states(&self) -> Vec<Vec<f64>> {
        self.xi.chunks(self.n + 1).map(<[f64]>::to_vec).collect()
    }

    /// Derivative of all levels stacked, using the shift structure of the
    /// chain form instead of dense products.
    pub fn derivative_into(&self, xi: &[f64], y: f64, u: f64, out: &mut [f64]) {
        let n = self.n;
        let m = n + 1;
        let mut drive = self.g_hat * u;
        let mut tracked = y;
        for (i, l) in self.gains.iter().enumerate() {
            let s = &xi[i * m..(i + 1) * m];
            let o = &mut out[i * m..(i + 1) * m];
            let innovation = tracked - s[0];
            for j in 0..n {
                o[j] = s[j + 1] + l[j] * innovation;
            }
            o[n - 1] += drive;
            o[n] = l[n] * innovation;
            drive += s[n];
            tracked = s[0];
        }
    }

    pub fn derivative(&self, y: f64, u: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.xi.len()];
        self.derivative_into(&self.xi, y, u, &mut out);
        out
    }

    pub fn fused_from_flat(&self, xi: &[f64]) -> FusedEstimate {
        let m = self.n + 1;
        let p = self.gains.len();
        let mut z_hat = xi[(p - 1) * m..p * m].to_vec();
        z_hat[self.n] = (0..p).map(|i| xi[i * m + self.n]).sum();
        FusedEstimate { z_hat }
    }

    pub fn fused(&self) -> FusedEstimate {
        self.fused_from_flat(&self.xi)
    }
}

/// Single-level ESO evaluated through the dense chain matrices. Kept apart
/// from [`ObserverBank`] so the two routes can be checked against each other.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardEso {
    sys: ChainSystem,
    gains: Vec<f64>,
    g_hat: f64,
}

impl StandardEso {
    pub fn new(omega: f64, kappa: &GainCoefficients, g_hat: f64, sys: &ChainSystem) -> Result<Self> {
        if g_hat == 0.0 || !g_hat.is_finite() {
            return Err(Error::config("input-gain estimate g_hat must be nonzero"));
        }
        Ok(StandardEso {
            gains: eso_gains(sys.order(), omega, kappa)?,
            sys: sys.clone(),
            g_hat,
        })
    }

    pub fn dim(&self) -> usize {
        self.sys.extended_dim()
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn derivative_into(&self, xi: &[f64], y: f64, u: f64, out: &mut [f64]) {
        standard_eso_deriv_into(xi, y, u, &self.gains, self.g_hat, &self.sys, out);
    }

    pub fn fused_from_flat(&self, xi: &[f64]) -> FusedEstimate {
        FusedEstimate { z_hat: xi.to_vec() }
    }
}
