//! Integral quality criteria, seed batches and 2-D bandwidth sweeps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{fmt_f64, run_scenario, PlantKind, PvtolRow, RunOutput, ScenarioConfig, Trace};
use crate::error::{Error, Result};
use crate::noise::mix_seed;
use crate::observer::CascadeConfig;

const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    /// Tracking accuracy (Sim1: `1e3 * int |e|`, PVTOL: `int sqrt(ex^2 + ez^2)`).
    pub iae: f64,
    /// Control energy (Sim1: `int u^2`, PVTOL: `int v1^2 + v2^2`).
    pub energy: f64,
    /// Disturbance estimation error (Sim1: `int |z~3|`, PVTOL: Euclidean over both axes).
    pub dist_err: f64,
    pub window: (f64, f64),
}

impl CriteriaReport {
    pub fn as_array(&self) -> [f64; 3] {
        [self.iae, self.energy, self.dist_err]
    }
}

/// Trapezoid integral of samples `f` at times `t` over `[t0, t1]`.
///
/// Only grid points inside the window contribute; both ends must lie on the
/// grid (to within 1e-9 relative) and the samples must cover the window.
pub fn trapezoid(t: &[f64], f: &[f64], window: (f64, f64)) -> Result<f64> {
    let (t0, t1) = window;
    let err = || Error::Window {
        t0,
        t1,
        start: t.first().copied().unwrap_or(f64::NAN),
        end: t.last().copied().unwrap_or(f64::NAN),
    };
    if !(t0 < t1) || t.len() < 2 || t.len() != f.len() {
        return Err(err());
    }
    let tol = GRID_EPS * t1.abs().max(1.0);
    let i0 = t.iter().position(|&x| (x - t0).abs() <= tol).ok_or_else(err)?;
    let i1 = t.iter().rposition(|&x| (x - t1).abs() <= tol).ok_or_else(err)?;
    if i1 <= i0 {
        return Err(err());
    }
    Ok((i0..i1)
        .map(|k| 0.5 * (t[k + 1] - t[k]) * (f[k] + f[k + 1]))
        .sum())
}

/// Sim1 criteria from a single chain trace.
pub fn criteria_sim1(trace: &Trace, window: (f64, f64)) -> Result<CriteriaReport> {
    let t: Vec<f64> = trace.rows.iter().map(|r| r.t).collect();
    let col = |f: &dyn Fn(&crate::engine::TraceRow) -> f64| -> Vec<f64> { trace.rows.iter().map(f).collect() };
    let n = trace.n;
    Ok(CriteriaReport {
        iae: 1e3 * trapezoid(&t, &col(&|r| r.e.abs()), window)?,
        energy: trapezoid(&t, &col(&|r| r.u * r.u), window)?,
        dist_err: trapezoid(&t, &col(&|r| r.z_err[n].abs()), window)?,
        window,
    })
}

/// PVTOL criteria from the two axis traces and the shared trajectory.
pub fn criteria_sim2(x: &Trace, z: &Trace, pvtol: &[PvtolRow], window: (f64, f64)) -> Result<CriteriaReport> {
    if x.rows.len() != z.rows.len() || x.rows.len() != pvtol.len() {
        return Err(Error::config("PVTOL traces have different lengths"));
    }
    let t: Vec<f64> = x.rows.iter().map(|r| r.t).collect();
    let n = x.n;
    let e: Vec<f64> = x.rows.iter().zip(&z.rows).map(|(a, b)| a.e.hypot(b.e)).collect();
    let d: Vec<f64> = x
        .rows
        .iter()
        .zip(&z.rows)
        .map(|(a, b)| a.z_err[n].hypot(b.z_err[n]))
        .collect();
    let u: Vec<f64> = pvtol.iter().map(|r| r.v1 * r.v1 + r.v2 * r.v2).collect();
    Ok(CriteriaReport {
        iae: trapezoid(&t, &e, window)?,
        energy: trapezoid(&t, &u, window)?,
        dist_err: trapezoid(&t, &d, window)?,
        window,
    })
}

/// Criteria of a finished run over `window`.
pub fn criteria(run: &RunOutput, window: (f64, f64)) -> Result<CriteriaReport> {
    match run.config.plant {
        PlantKind::Sim1 => criteria_sim1(&run.traces[0], window),
        PlantKind::Pvtol => criteria_sim2(&run.traces[0], &run.traces[1], &run.pvtol, window),
    }
}

/// Runs `cfg` and evaluates its configured metric window. Aborted runs are
/// errors.
pub fn run_criteria(cfg: &ScenarioConfig) -> Result<CriteriaReport> {
    let run = run_scenario(cfg)?.into_result()?;
    criteria(&run, cfg.metric_window)
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

pub fn mean_stderr(xs: &[f64]) -> MeanStderr {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let stderr = if xs.len() > 1 {
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    MeanStderr { mean, stderr }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub seeds: Vec<u64>,
    pub iae: MeanStderr,
    pub energy: MeanStderr,
    pub dist_err: MeanStderr,
}

/// Runs `cfg` once per seed in parallel. Any failing run fails the batch.
pub fn seed_batch(cfg: &ScenarioConfig, seeds: &[u64]) -> Result<(Vec<CriteriaReport>, BatchSummary)> {
    let reports = seeds
        .par_iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.seed = s;
            run_criteria(&c)
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&CriteriaReport) -> f64| mean_stderr(&reports.iter().map(f).collect::<Vec<_>>());
    let summary = BatchSummary {
        seeds: seeds.to_vec(),
        iae: col(|r| r.iae),
        energy: col(|r| r.energy),
        dist_err: col(|r| r.dist_err),
    };
    Ok((reports, summary))
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|k| {
                    if k == 0 {
                        lo
                    } else if k + 1 == count {
                        hi
                    } else {
                        (a + (b - a) * k as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub pa: usize,
    pub pb: usize,
    pub grid_a: Vec<f64>,
    pub grid_b: Vec<f64>,
    pub alpha: f64,
    /// Seeds per cell; noiseless runs use one.
    pub seeds: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub axis_a: Vec<f64>,
    pub axis_b: Vec<f64>,
    /// `cells[i][j] = distErr(A at axis_a[i]) - distErr(B at axis_b[j])`,
    /// averaged over seeds; NaN where a run aborted.
    pub cells: Vec<Vec<f64>>,
    pub pa: usize,
    pub pb: usize,
}

/// Seed shared by both runs of a cell. Symmetric in the two observers so
/// swapping A and B reproduces the same noise.
pub fn cell_seed(base: u64, seed_index: usize, a: (usize, f64), b: (usize, f64)) -> u64 {
    let side = |(p, w): (usize, f64)| mix_seed(w.to_bits() ^ mix_seed(p as u64));
    mix_seed(base.wrapping_add(seed_index as u64)) ^ side(a) ^ side(b)
}

fn observer_at(base: &ScenarioConfig, p: usize, omega1: f64, alpha: f64) -> Result<CascadeConfig> {
    let mut obs = base.observer.clone();
    obs.p = p;
    obs.omega1 = omega1;
    obs.alpha = alpha;
    obs.level_kappa.clear();
    obs.validate(base.plant.order())?;
    Ok(obs)
}

fn dist_err_or_nan(cfg: &ScenarioConfig) -> Result<f64> {
    let run = run_scenario(cfg)?;
    if run.abort.is_some() {
        return Ok(f64::NAN);
    }
    Ok(criteria(&run, cfg.metric_window)?.dist_err)
}

/// Difference heatmap between observer A (`pa`, swept over `grid_a`) and
/// observer B (`pb`, swept over `grid_b`) on the scenario `base`.
///
/// Cells run in parallel on the current rayon pool; aborted runs give NaN.
pub fn sweep(base: &ScenarioConfig, spec: &SweepSpec) -> Result<SweepGrid> {
    if spec.grid_a.is_empty() || spec.grid_b.is_empty() {
        return Err(Error::config("sweep grids must be nonempty"));
    }
    if spec.seeds == 0 {
        return Err(Error::config("sweep needs at least one seed per cell"));
    }
    // Reject invalid observer settings up front rather than per cell.
    for &w in &spec.grid_a {
        observer_at(base, spec.pa, w, spec.alpha)?;
    }
    for &w in &spec.grid_b {
        observer_at(base, spec.pb, w, spec.alpha)?;
    }
    let (na, nb) = (spec.grid_a.len(), spec.grid_b.len());
    let flat = (0..na * nb)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / nb, idx % nb);
            let (wa, wb) = (spec.grid_a[i], spec.grid_b[j]);
            let mut acc = 0.0;
            for s in 0..spec.seeds {
                let seed = cell_seed(spec.base_seed, s, (spec.pa, wa), (spec.pb, wb));
                let mut ca = base.clone();
                ca.observer = observer_at(base, spec.pa, wa, spec.alpha)?;
                ca.seed = seed;
                let mut cb = base.clone();
                cb.observer = observer_at(base, spec.pb, wb, spec.alpha)?;
                cb.seed = seed;
                acc += dist_err_or_nan(&ca)? - dist_err_or_nan(&cb)?;
            }
            Ok(acc / spec.seeds as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(SweepGrid {
        axis_a: spec.grid_a.clone(),
        axis_b: spec.grid_b.clone(),
        cells: flat.chunks(nb).map(|c| c.to_vec()).collect(),
        pa: spec.pa,
        pb: spec.pb,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub omega_a: f64,
    pub omega_b: f64,
    /// False when the row has no sign change and the boundary minimizer of
    /// `|cell|` is reported instead.
    pub bracketed: bool,
}

/// Per row of `axis_a`, the `axis_b` value where the difference vanishes.
///
/// Uses the first sign change (linear interpolation in `omega_b`); rows
/// without one report the minimizer of `|cell|`, flagged. All-NaN rows are
/// skipped.
pub fn equal_performance_contour(grid: &SweepGrid) -> Vec<ContourPoint> {
    let mut out = Vec::new();
    for (i, row) in grid.cells.iter().enumerate() {
        let omega_a = grid.axis_a[i];
        if let Some(j) = row.iter().position(|&c| c == 0.0) {
            out.push(ContourPoint { omega_a, omega_b: grid.axis_b[j], bracketed: true });
            continue;
        }
        let crossing = (0..row.len().saturating_sub(1)).find_map(|j| {
            let (c0, c1) = (row[j], row[j + 1]);
            (c0.is_finite() && c1.is_finite() && c0.signum() != c1.signum()).then(|| {
                let (b0, b1) = (grid.axis_b[j], grid.axis_b[j + 1]);
                b0 + (b1 - b0) * c0 / (c0 - c1)
            })
        });
        match crossing {
            Some(omega_b) => out.push(ContourPoint { omega_a, omega_b, bracketed: true }),
            None => {
                let best = row
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.is_finite())
                    .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
                if let Some((j, _)) = best {
                    out.push(ContourPoint { omega_a, omega_b: grid.axis_b[j], bracketed: false });
                }
            }
        }
    }
    out
}

impl SweepGrid {
    /// Grid CSV: first row `axis_b`, first column `axis_a`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut head = vec![format!("pA={};pB={}", self.pa, self.pb)];
        head.extend(self.axis_b.iter().map(|&v| fmt_f64(v)));
        writeln!(w, "{}", head.join(","))?;
        for (a, row) in self.axis_a.iter().zip(&self.cells) {
            let mut line = vec![fmt_f64(*a)];
            line.extend(row.iter().map(|&v| fmt_f64(v)));
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let num = |s: &str| -> Result<f64> {
            let s = s.trim();
            if s.eq_ignore_ascii_case("nan") {
                Ok(f64::NAN)
            } else {
                s.parse().map_err(|e| Error::Parse(format!("{s:?}: {e}")))
            }
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let head = lines.next().ok_or_else(|| Error::Parse("empty grid CSV".into()))?;
        let mut fields = head.split(',');
        let corner = fields.next().unwrap_or_default();
        let (mut pa, mut pb) = (0, 0);
        for kv in corner.split(';') {
            match kv.split_once('=') {
                Some(("pA", v)) => pa = v.trim().parse().unwrap_or(0),
                Some(("pB", v)) => pb = v.trim().parse().unwrap_or(0),
                _ => {}
            }
        }
        let axis_b = fields.map(num).collect::<Result<Vec<_>>>()?;
        let mut axis_a = Vec::new();
        let mut cells = Vec::new();
        for line in lines {
            let mut f = line.split(',');
            axis_a.push(num(f.next().unwrap_or_default())?);
            let row = f.map(num).collect::<Result<Vec<_>>>()?;
            if row.len() != axis_b.len() {
                return Err(Error::Parse(format!(
                    "grid row has {} cells, expected {}",
                    row.len(),
                    axis_b.len()
                )));
            }
            cells.push(row);
        }
        Ok(SweepGrid { axis_a, axis_b, cells, pa, pb })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{TraceRow, Variant};
    use proptest::prelude::*;

    fn synthetic(ts: &[f64], e: impl Fn(f64) -> f64, u: impl Fn(f64) -> f64, d: impl Fn(f64) -> f64) -> Trace {
        Trace {
            axis: None,
            n: 2,
            p: 1,
            rows: ts
                .iter()
                .map(|&t| TraceRow {
                    t,
                    state: vec![0.0, 0.0],
                    y: 0.0,
                    y_ref: 0.0,
                    e: e(t),
                    u: u(t),
                    v: 0.0,
                    d_true: 0.0,
                    d_hat: 0.0,
                    z_err: vec![0.0, 0.0, d(t)],
                    level_out: vec![0.0],
                    level_dist: vec![0.0],
                })
                .collect(),
            abort: None,
        }
    }

    fn grid(t1: f64, ts: f64) -> Vec<f64> {
        let n = (t1 / ts).round() as usize;
        (0..=n).map(|k| k as f64 * ts).collect()
    }

    #[test]
    fn constant_error() {
        let tr = synthetic(&grid(5.0, 0.01), |_| 1.0, |_| 0.0, |_| 0.0);
        let c = criteria_sim1(&tr, (0.0, 5.0)).unwrap();
        assert!((c.iae - 5000.0).abs() < 1e-9);
        assert_eq!((c.energy, c.dist_err), (0.0, 0.0));
    }

    #[test]
    fn zero_trace() {
        let tr = synthetic(&grid(5.0, 0.01), |_| 0.0, |_| 0.0, |_| 0.0);
        let c = criteria_sim1(&tr, (0.0, 5.0)).unwrap();
        assert_eq!(c.as_array(), [0.0; 3]);
    }

    #[test]
    fn linear_error_exact() {
        let tr = synthetic(&grid(1.0, 0.01), |t| t, |t| t, |_| 0.0);
        let c = criteria_sim1(&tr, (0.0, 1.0)).unwrap();
        assert!((c.iae - 500.0).abs() / 500.0 <= 1e-9);
        // int t^2 over [0,1] with trapezoid on h = 0.01: 1/3 + h^2/6
        assert!((c.energy - (1.0 / 3.0 + 1e-4 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn sub_window() {
        let tr = synthetic(&grid(5.0, 0.01), |t| t, |_| 0.0, |_| 1.0);
        let c = criteria_sim1(&tr, (1.0, 3.0)).unwrap();
        assert!((c.iae - 4000.0).abs() < 1e-6);
        assert!((c.dist_err - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_uncovered_window() {
        let tr = synthetic(&grid(5.0, 0.01), |_| 1.0, |_| 0.0, |_| 0.0);
        assert!(matches!(criteria_sim1(&tr, (0.0, 6.0)), Err(Error::Window { .. })));
        assert!(criteria_sim1(&tr, (-1.0, 2.0)).is_err());
        assert!(criteria_sim1(&tr, (2.0, 2.0)).is_err());
    }

    #[test]
    fn stats() {
        let m = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.stderr - (1.666_666_666_666_666_7f64 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn log_space_ends() {
        let g = log_space(10.0, 400.0, 10);
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 10.0);
        assert_eq!(g[9], 400.0);
        assert!(g.windows(2).all(|w| (w[1] / w[0] - 40f64.powf(1.0 / 9.0)).abs() < 1e-12));
    }

    #[test]
    fn contour_single_zero() {
        let g = SweepGrid {
            axis_a: vec![1.0, 2.0],
            axis_b: vec![10.0, 20.0, 30.0],
            cells: vec![vec![1.0, 0.0, 2.0], vec![-1.0, 1.0, 3.0]],
            pa: 1,
            pb: 2,
        };
        let c = equal_performance_contour(&g);
        assert_eq!(c[0], ContourPoint { omega_a: 1.0, omega_b: 20.0, bracketed: true });
        assert!((c[1].omega_b - 15.0).abs() < 1e-12);
        let g2 = SweepGrid { cells: vec![vec![3.0, 1.0, 2.0], vec![f64::NAN; 3]], ..g };
        let c2 = equal_performance_contour(&g2);
        assert_eq!(c2.len(), 1);
        assert_eq!(c2[0], ContourPoint { omega_a: 1.0, omega_b: 20.0, bracketed: false });
    }

    #[test]
    fn grid_csv_round_trip() {
        let g = SweepGrid {
            axis_a: vec![10.0, 20.5],
            axis_b: vec![1.0, 2.0, 3.25],
            cells: vec![vec![0.1, f64::NAN, -0.3], vec![1e-12, 2.0, 3.0]],
            pa: 1,
            pb: 3,
        };
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains(",nan,"));
        let back = SweepGrid::parse_csv(&text).unwrap();
        assert_eq!(back.axis_a, g.axis_a);
        assert_eq!(back.axis_b, g.axis_b);
        assert_eq!((back.pa, back.pb), (1, 3));
        assert!(back.cells[0][1].is_nan());
        assert_eq!(back.cells[1], g.cells[1]);
    }

    fn short_sim1(variant: Variant) -> ScenarioConfig {
        let mut c = ScenarioConfig::sim1(variant, 1).unwrap();
        c.duration = 1.0;
        c.metric_window = (0.0, 1.0);
        c
    }

    #[test]
    fn self_difference_is_zero() {
        let spec = SweepSpec {
            pa: 2,
            pb: 2,
            grid_a: vec![60.0],
            grid_b: vec![60.0],
            alpha: 2.0,
            seeds: 2,
            base_seed: 5,
        };
        let g = sweep(&short_sim1(Variant::B), &spec).unwrap();
        assert_eq!(g.cells, vec![vec![0.0]]);
    }

    #[test]
    fn sweep_rejects_bad_alpha() {
        let spec = SweepSpec {
            pa: 1,
            pb: 2,
            grid_a: vec![60.0],
            grid_b: vec![60.0],
            alpha: 1.0,
            seeds: 1,
            base_seed: 0,
        };
        assert!(sweep(&short_sim1(Variant::A), &spec).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn sweep_antisymmetric(wa in 20.0f64..300.0, wb in 20.0f64..150.0, base in 0u64..1000) {
            let cfg = short_sim1(Variant::B);
            let ab = SweepSpec { pa: 1, pb: 2, grid_a: vec![wa], grid_b: vec![wb], alpha: 2.0, seeds: 2, base_seed: base };
            let ba = SweepSpec { pa: 2, pb: 1, grid_a: vec![wb], grid_b: vec![wa], alpha: 2.0, seeds: 2, base_seed: base };
            let g1 = sweep(&cfg, &ab).unwrap();
            let g2 = sweep(&cfg, &ba).unwrap();
            prop_assert_eq!(g1.cells[0][0], -g2.cells[0][0]);
        }

        #[test]
        fn trapezoid_linear_exact(a in -5.0f64..5.0, b in -5.0f64..5.0, k in 10usize..200) {
            let t: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
            let f: Vec<f64> = t.iter().map(|&x| a + b * x).collect();
            let got = trapezoid(&t, &f, (0.0, 1.0)).unwrap();
            let want = a + b / 2.0;
            prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}
