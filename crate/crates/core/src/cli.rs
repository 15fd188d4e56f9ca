//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{
    criteria, equal_performance_contour, log_space, seed_batch, sweep, BatchSummary, CriteriaReport,
    SweepGrid, SweepSpec,
};
use crate::engine::{
    run_scenario, write_pvtol_csv, EstimatorKind, HoldMode, PlantKind, RunOutput, ScenarioConfig, Variant,
};
use crate::error::{Error, Result};
use crate::plot;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "CASCADE_ESO_OUT_DIR";
/// Sweeps above this many cells need `--force`.
pub const MAX_CELLS: usize = 10_000;

/// Noiseless / noisy reference rows `(iae, energy, distErr)` for `p = 1, 2, 3`.
pub const REFERENCE_SIM1: [[[f64; 3]; 3]; 2] = [
    [[19.525, 79.076, 0.956], [12.351, 89.958, 0.957], [8.346, 84.804, 0.955]],
    [[19.738, 193.93, 8.785], [12.833, 100.61, 3.162], [8.952, 93.67, 3.006]],
];
pub const REFERENCE_SIM2: [[[f64; 3]; 3]; 2] = [
    [[3.237, 44.508, 0.122], [3.092, 44.525, 0.122], [2.990, 44.552, 0.122]],
    [[3.237, 27813.0, 1121.0], [3.092, 45.244, 4.562], [2.990, 44.643, 1.601]],
];

#[derive(Debug, Parser)]
#[command(name = "cascade-eso", version, about = "Cascade ESO / ADRC simulations")]
pub struct Cli {
    /// Output directory (default: $CASCADE_ESO_OUT_DIR or ./out).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for seed batches and sweeps.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario (or a seed batch) and report its criteria.
    Run(RunArgs),
    /// Reproduce the comparison table of one benchmark.
    Table(TableArgs),
    /// Difference heatmap between two observers over a bandwidth grid.
    Sweep(SweepArgs),
    /// Render PNG panels from a trace or grid CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioId {
    Sim1a,
    Sim1b,
    Sim2a,
    Sim2b,
}

impl ScenarioId {
    pub fn plant(self) -> PlantKind {
        match self {
            ScenarioId::Sim1a | ScenarioId::Sim1b => PlantKind::Sim1,
            ScenarioId::Sim2a | ScenarioId::Sim2b => PlantKind::Pvtol,
        }
    }

    pub fn variant(self) -> Variant {
        match self {
            ScenarioId::Sim1a | ScenarioId::Sim2a => Variant::A,
            ScenarioId::Sim1b | ScenarioId::Sim2b => Variant::B,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::Sim1a => "sim1a",
            ScenarioId::Sim1b => "sim1b",
            ScenarioId::Sim2a => "sim2a",
            ScenarioId::Sim2b => "sim2b",
        }
    }

    /// Preset for cascade level `p`, with tabulated bandwidths when `p <= 3`.
    pub fn preset(self, p: usize) -> Result<ScenarioConfig> {
        let tab = p.clamp(1, 3);
        let mut cfg = match self.plant() {
            PlantKind::Sim1 => ScenarioConfig::sim1(self.variant(), tab)?,
            PlantKind::Pvtol => ScenarioConfig::sim2(self.variant(), tab)?,
        };
        cfg.observer.p = p;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HoldArg {
    Sampled,
    Continuous,
}

impl From<HoldArg> for HoldMode {
    fn from(h: HoldArg) -> Self {
        match h {
            HoldArg::Sampled => HoldMode::Sampled,
            HoldArg::Continuous => HoldMode::Continuous,
        }
    }
}

/// Scenario overrides shared by `run`, `table` and `sweep`.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML file with ScenarioConfig keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub omega1: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ts: Option<f64>,
    #[arg(long)]
    pub h_int: Option<f64>,
    #[arg(long)]
    pub noise_power: Option<f64>,
    #[arg(long)]
    pub duration: Option<f64>,
    /// Noise sample period (default: ts).
    #[arg(long)]
    pub noise_ts: Option<f64>,
    #[arg(long, value_enum)]
    pub hold_mode: Option<HoldArg>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(value_enum)]
    pub scenario: ScenarioId,
    /// Cascade levels.
    #[arg(long)]
    pub p: Option<usize>,
    /// Use the stand-alone single ESO (requires p = 1).
    #[arg(long)]
    pub standard: bool,
    /// Run this many consecutive seeds starting at --seed and report means.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Benchmark {
    Sim1,
    Sim2,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(value_enum)]
    pub which: Benchmark,
    /// Seeds per noisy cell.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub hold_mode: Option<HoldArg>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(value_enum)]
    pub scenario: ScenarioId,
    #[arg(long, default_value_t = 1)]
    pub pa: usize,
    #[arg(long, default_value_t = 2)]
    pub pb: usize,
    /// Grid as `min:max:count`, log-spaced, for both axes unless overridden.
    #[arg(long, default_value = "10:400:40")]
    pub grid: String,
    #[arg(long)]
    pub grid_a: Option<String>,
    #[arg(long)]
    pub grid_b: Option<String>,
    /// Seeds per cell.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    /// Allow grids above the cell limit.
    #[arg(long)]
    pub force: bool,
    /// Also render a heatmap PNG.
    #[arg(long)]
    pub image: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(subcommand)]
    pub what: PlotKind,
}

#[derive(Debug, Subcommand)]
pub enum PlotKind {
    /// Stacked panels from a trace CSV (default: e, u, last ztilde).
    Trace {
        csv: PathBuf,
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Diverging heatmap from a grid CSV.
    Heatmap {
        csv: PathBuf,
        /// Half-range of the color scale (default: max |cell|).
        #[arg(long)]
        scale: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub config: ScenarioConfig,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Window { .. } => 2,
        Error::NumericBlowup { .. } => 3,
        Error::AllocationSingular { .. } => 4,
        Error::Io(_) => 1,
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn merge_toml(base: &ScenarioConfig, file_text: &str) -> Result<ScenarioConfig> {
    let mut table: toml::Table = toml::from_str(&base.to_toml()).map_err(|e| Error::Parse(e.to_string()))?;
    let over: toml::Table = toml::from_str(file_text).map_err(|e| Error::Parse(e.to_string()))?;
    for (k, v) in over {
        table.insert(k, v);
    }
    ScenarioConfig::from_toml(&toml::to_string(&table).map_err(|e| Error::Parse(e.to_string()))?)
}

/// Preset for `scenario`, then the config file, then flags.
pub fn resolve_config(scenario: ScenarioId, p: Option<usize>, ov: &Overrides) -> Result<ScenarioConfig> {
    let file_text = ov.config.as_ref().map(fs::read_to_string).transpose()?;
    let file_p = match &file_text {
        Some(text) => {
            let t: toml::Table = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
            t.get("p").and_then(|v| v.as_integer()).map(|v| v.max(0) as usize)
        }
        None => None,
    };
    let p = p.or(file_p).unwrap_or(1);
    let mut cfg = scenario.preset(p)?;
    if let Some(text) = &file_text {
        cfg = merge_toml(&cfg, text)?;
    }
    cfg.observer.p = p;
    if let Some(v) = ov.omega1 {
        cfg.observer.omega1 = v;
    }
    if let Some(v) = ov.alpha {
        cfg.observer.alpha = v;
    }
    if let Some(v) = ov.seed {
        cfg.seed = v;
    }
    if let Some(v) = ov.ts {
        cfg.ts = v;
    }
    if let Some(v) = ov.h_int {
        cfg.h_int = v;
    }
    if let Some(v) = ov.noise_power {
        cfg.noise_power = v;
    }
    if let Some(v) = ov.duration {
        cfg.duration = v;
        let end = cfg.start_time + v;
        cfg.metric_window.1 = cfg.metric_window.1.min(end);
        if cfg.metric_window.0 >= end {
            cfg.metric_window.0 = cfg.start_time;
        }
    }
    if let Some(v) = ov.noise_ts {
        cfg.noise_ts = Some(v);
    }
    if let Some(h) = ov.hold_mode {
        cfg.hold_mode = h.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| Error::config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Aligned table plus `key=value` lines.
pub fn format_report(r: &CriteriaReport) -> String {
    format!(
        "{:>14} {:>14} {:>14}\n{:>14.6} {:>14.6} {:>14.6}\niae={}\nenergy={}\ndistErr={}\nwindow={},{}\n",
        "iae", "energy", "distErr", r.iae, r.energy, r.dist_err, r.iae, r.energy, r.dist_err, r.window.0, r.window.1
    )
}

fn format_batch(b: &BatchSummary) -> String {
    format!(
        "{:>10} {:>14} {:>14}\n{:>10} {:>14.6} {:>14.6}\n{:>10} {:>14.6} {:>14.6}\n{:>10} {:>14.6} {:>14.6}\n\
         seeds={}\niae_mean={}\niae_stderr={}\nenergy_mean={}\nenergy_stderr={}\ndistErr_mean={}\ndistErr_stderr={}\n",
        "", "mean", "stderr",
        "iae", b.iae.mean, b.iae.stderr,
        "energy", b.energy.mean, b.energy.stderr,
        "distErr", b.dist_err.mean, b.dist_err.stderr,
        b.seeds.len(), b.iae.mean, b.iae.stderr, b.energy.mean, b.energy.stderr, b.dist_err.mean, b.dist_err.stderr
    )
}

fn write_run_files(dir: &Path, stem: &str, run: &RunOutput) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for tr in &run.traces {
        let name = match tr.axis {
            Some(a) => format!("{stem}_{}.csv", a.name()),
            None => format!("{stem}.csv"),
        };
        let path = dir.join(name);
        let mut buf = Vec::new();
        tr.write_csv(&run.config, &mut buf)?;
        fs::write(&path, buf)?;
        paths.push(path);
    }
    if run.config.plant == PlantKind::Pvtol {
        let path = dir.join(format!("{stem}_pvtol.csv"));
        let mut buf = Vec::new();
        write_pvtol_csv(&run.pvtol, &run.config, &mut buf)?;
        fs::write(&path, buf)?;
        paths.push(path);
    }
    Ok(paths)
}

fn path_strings(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn cmd_run(cli: &Cli, args: &RunArgs, argv: &[String]) -> Result<String> {
    let started = Instant::now();
    let mut cfg = resolve_config(args.scenario, args.p, &args.overrides)?;
    if args.standard {
        cfg.estimator = EstimatorKind::Standard;
        cfg.validate()?;
    }
    let dir = out_dir(cli);
    fs::create_dir_all(&dir)?;
    let stem = format!("{}_p{}", args.scenario.name(), cfg.observer.p);
    match args.seeds {
        Some(k) if k > 1 => {
            let seeds: Vec<u64> = (0..k as u64).map(|s| cfg.seed.wrapping_add(s)).collect();
            let (reports, summary) = with_pool(cli.jobs, || seed_batch(&cfg, &seeds))??;
            let csv = dir.join(format!("{stem}_seeds.csv"));
            let mut text = String::from("seed,iae,energy,distErr\n");
            for (s, r) in seeds.iter().zip(&reports) {
                text.push_str(&format!("{s},{},{},{}\n", r.iae, r.energy, r.dist_err));
            }
            fs::write(&csv, text)?;
            let manifest = RunManifest {
                command_line: argv.to_vec(),
                config: cfg,
                seeds,
                outputs: vec![csv.display().to_string()],
                tool_version: env!("CARGO_PKG_VERSION").into(),
                wall_clock_seconds: started.elapsed().as_secs_f64(),
                sweep: None,
            };
            write_manifest(&dir.join(format!("{stem}_seeds.manifest.json")), &manifest)?;
            Ok(format_batch(&summary))
        }
        _ => {
            let run = run_scenario(&cfg)?;
            let stem = format!("{stem}_seed{}", cfg.seed);
            let paths = write_run_files(&dir, &stem, &run)?;
            let manifest = RunManifest {
                command_line: argv.to_vec(),
                config: cfg.clone(),
                seeds: vec![cfg.seed],
                outputs: path_strings(&paths),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                wall_clock_seconds: started.elapsed().as_secs_f64(),
                sweep: None,
            };
            write_manifest(&dir.join(format!("{stem}.manifest.json")), &manifest)?;
            let run = run.into_result()?;
            Ok(format_report(&criteria(&run, cfg.metric_window)?))
        }
    }
}

fn cmd_table(cli: &Cli, args: &TableArgs, argv: &[String]) -> Result<String> {
    let started = Instant::now();
    let (ids, reference) = match args.which {
        Benchmark::Sim1 => ([ScenarioId::Sim1a, ScenarioId::Sim1b], REFERENCE_SIM1),
        Benchmark::Sim2 => ([ScenarioId::Sim2a, ScenarioId::Sim2b], REFERENCE_SIM2),
    };
    let mut out = format!(
        "{:<6} {:>2} {:>12} {:>12} {:>12}   {:>10} {:>10} {:>10}\n",
        "case", "p", "iae", "energy", "distErr", "ref iae", "ref energy", "ref dist"
    );
    let mut configs = Vec::new();
    for (vi, id) in ids.iter().enumerate() {
        for p in 1..=3 {
            let mut cfg = id.preset(p)?;
            cfg.seed = args.seed;
            if let Some(h) = args.hold_mode {
                cfg.hold_mode = h.into();
            }
            let noisy = id.variant() == Variant::B;
            let seeds: Vec<u64> = if noisy {
                (0..args.seeds.max(1) as u64).map(|s| args.seed.wrapping_add(s)).collect()
            } else {
                vec![args.seed]
            };
            let res = with_pool(cli.jobs, || seed_batch(&cfg, &seeds)).and_then(|r| r);
            let r = reference[vi][p - 1];
            let cells = match res {
                Ok((_, b)) => format!("{:>12.4} {:>12.4} {:>12.4}", b.iae.mean, b.energy.mean, b.dist_err.mean),
                Err(e) => format!("{:>38}", format!("error: {e}")),
            };
            out.push_str(&format!(
                "{:<6} {:>2} {cells}   {:>10} {:>10} {:>10}\n",
                id.name(),
                p,
                r[0],
                r[1],
                r[2]
            ));
            configs.push(cfg);
        }
    }
    let dir = out_dir(cli);
    fs::create_dir_all(&dir)?;
    let name = match args.which {
        Benchmark::Sim1 => "table_sim1",
        Benchmark::Sim2 => "table_sim2",
    };
    let txt = dir.join(format!("{name}.txt"));
    fs::write(&txt, &out)?;
    let manifest = RunManifest {
        command_line: argv.to_vec(),
        config: configs[0].clone(),
        seeds: (0..args.seeds.max(1) as u64).map(|s| args.seed.wrapping_add(s)).collect(),
        outputs: vec![txt.display().to_string()],
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        sweep: None,
    };
    write_manifest(&dir.join(format!("{name}.manifest.json")), &manifest)?;
    Ok(out)
}

/// Parses `min:max:count` into a log-spaced grid.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::config(format!("grid must be `min:max:count`, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi >= lo && n >= 1) {
        return Err(Error::config(format!("grid needs 0 < min <= max and count >= 1, got {s:?}")));
    }
    Ok(log_space(lo, hi, n))
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs, argv: &[String]) -> Result<String> {
    let started = Instant::now();
    let base = resolve_config(args.scenario, Some(args.pa.max(1)), &args.overrides)?;
    let grid_a = parse_grid(args.grid_a.as_deref().unwrap_or(&args.grid))?;
    let grid_b = parse_grid(args.grid_b.as_deref().unwrap_or(&args.grid))?;
    let cells = grid_a.len() * grid_b.len();
    if cells > MAX_CELLS && !args.force {
        return Err(Error::config(format!(
            "grid has {cells} cells (limit {MAX_CELLS}); pass --force to run it"
        )));
    }
    let spec = SweepSpec {
        pa: args.pa,
        pb: args.pb,
        grid_a,
        grid_b,
        alpha: args.overrides.alpha.unwrap_or(base.observer.alpha),
        seeds: args.seeds,
        base_seed: args.base_seed,
    };
    let grid = with_pool(cli.jobs, || sweep(&base, &spec))??;
    let dir = out_dir(cli);
    fs::create_dir_all(&dir)?;
    let stem = format!("sweep_{}_p{}_vs_p{}", args.scenario.name(), args.pa, args.pb);
    let csv = dir.join(format!("{stem}.csv"));
    let mut buf = Vec::new();
    grid.write_csv(&mut buf)?;
    fs::write(&csv, buf)?;
    let mut outputs = vec![csv.display().to_string()];
    if args.image {
        let png = dir.join(format!("{stem}.png"));
        plot::render_heatmap(&grid, None, &png)?;
        outputs.push(png.display().to_string());
    }
    let manifest = RunManifest {
        command_line: argv.to_vec(),
        config: base,
        seeds: vec![args.base_seed],
        outputs,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        sweep: Some(spec),
    };
    write_manifest(&dir.join(format!("{stem}.manifest.json")), &manifest)?;
    let mut out = format!("grid={}\ncells={cells}\n", csv.display());
    for c in equal_performance_contour(&grid) {
        out.push_str(&format!(
            "contour omegaA={:.4} omegaB={:.4}{}\n",
            c.omega_a,
            c.omega_b,
            if c.bracketed { "" } else { " (unbracketed)" }
        ));
    }
    Ok(out)
}

fn cmd_plot(args: &PlotArgs) -> Result<String> {
    match &args.what {
        PlotKind::Trace { csv, columns, output } => {
            let text = fs::read_to_string(csv)?;
            let cols = if columns.is_empty() {
                plot::default_trace_columns(&text)?
            } else {
                columns.clone()
            };
            let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
            let out = output.clone().unwrap_or_else(|| csv.with_extension("png"));
            plot::render_trace_panels(&text, &refs, &out)?;
            Ok(format!("wrote {}\n", out.display()))
        }
        PlotKind::Heatmap { csv, scale, output } => {
            let grid = SweepGrid::parse_csv(&fs::read_to_string(csv)?)?;
            let out = output.clone().unwrap_or_else(|| csv.with_extension("png"));
            plot::render_heatmap(&grid, *scale, &out)?;
            Ok(format!("wrote {}\n", out.display()))
        }
    }
}

/// Executes a parsed command line; returns the text to print.
pub fn execute(cli: &Cli, argv: &[String]) -> Result<String> {
    match &cli.command {
        Command::Run(a) => cmd_run(cli, a, argv),
        Command::Table(a) => cmd_table(cli, a, argv),
        Command::Sweep(a) => cmd_sweep(cli, a, argv),
        Command::Plot(a) => cmd_plot(a),
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli, &argv) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
