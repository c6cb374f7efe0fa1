use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use feos_core::config::{apply_override, parse_table, set_string, ConfigTable};
use feos_core::diagnostics::DiagnosticsRecord;
use feos_core::harness::{
    convergence_study, diffusive_tau, fit_power_law, run_example2, temporal_study, ConvergenceRow,
    Example1, Example2, Problem, ReferenceSpec,
};
use feos_core::io::{read_csv_columns, write_diagnostics_csv, write_snapshot, write_table_csv, write_text};
use feos_core::splitting::evolve;
use feos_core::{
    build_initial_condition, max_gradient, ConfigFile, Error, Field, InitialCondition, Result, Sink,
};

use crate::ConfigArgs;

#[derive(Args, Debug, Clone)]
pub struct StudyArgs {
    /// Grid sizes for the spatial study, each double the previous.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256")]
    grids: Vec<usize>,
    /// Reference grid size (default: twice the largest grid).
    #[arg(long)]
    reference_nodes: Option<usize>,
    /// Reference time step (default: smallest study step / 8).
    #[arg(long)]
    reference_tau: Option<f64>,
    /// Vary the time step on the fixed grid `J` instead of the grid.
    #[arg(long)]
    temporal: bool,
    /// Time steps for the temporal study, each half the previous.
    #[arg(long, value_delimiter = ',', default_value = "4e-3,2e-3,1e-3")]
    taus: Vec<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct WindowArgs {
    /// Fit window; samples strictly inside are used.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [20.0, 400.0])]
    window: Vec<f64>,
    /// Diagnostic samples placed strictly inside the window.
    #[arg(long, default_value_t = 40)]
    samples_per_window: usize,
}

const CONVERGE_DEFAULTS: &str = r#"
dims = 2
J = 128
L = "pi"
delta = 0.1
tau = 0.005
T = 1.0
ic = "ts32-trig"
"#;

const COARSEN_DEFAULTS: &str = r#"
dims = 2
J = 256
L = 50.0
delta = 0.1
tau = 0.01
T = 400.0
ic = "uniform-random"
seed = 1
"#;

/// Preset defaults, then the config file, then `--set`, then `--out`.
fn resolve(args: &ConfigArgs, defaults: &str) -> Result<ConfigFile> {
    let mut table: ConfigTable = parse_table(defaults)?;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = parse_table(&text).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        table.extend(file);
    }
    for assignment in &args.set {
        apply_override(&mut table, assignment)?;
    }
    if let Some(out) = &args.out {
        set_string(&mut table, "out_dir", &out.to_string_lossy());
    }
    ConfigFile::from_table(table)
}

/// Collects diagnostics and writes state snapshots as they arrive.
struct DirSink {
    dir: PathBuf,
    prefix: &'static str,
    records: Vec<DiagnosticsRecord>,
    delta: Option<f64>,
}

impl Sink for DirSink {
    fn record(&mut self, record: DiagnosticsRecord) -> Result<()> {
        self.records.push(record);
        Ok(())
    }

    fn snapshot(&mut self, t: f64, field: &Field) -> Result<()> {
        let path = self
            .dir
            .join("snapshots")
            .join(format!("{}_t{t}.mbef", self.prefix));
        match self.delta {
            Some(delta) => write_snapshot(&feos_core::free_energy_density(field, delta)?, &path),
            None => write_snapshot(field, &path),
        }
    }
}

/// Evolves `cfg` and writes the echo, diagnostics, snapshots and final state
/// into `dir`. Diagnostics gathered before a failure are still written.
fn run_into(cfg: &ConfigFile, dir: &Path) -> Result<(Field, Vec<DiagnosticsRecord>)> {
    write_text(&dir.join("config.toml"), &cfg.echo())?;
    let grid = cfg.grid()?;
    let u0 = build_initial_condition(cfg, &grid)?;
    let mut sink = DirSink {
        dir: dir.to_path_buf(),
        prefix: "u",
        records: Vec::new(),
        delta: None,
    };
    let outcome = evolve(&u0, &cfg.run_config(), &mut sink);
    write_diagnostics_csv(&sink.records, &dir.join("diagnostics.csv"))?;
    let u = outcome?;
    write_snapshot(&u, &dir.join("final.mbef"))?;
    Ok((u, sink.records))
}

fn print_last(records: &[DiagnosticsRecord]) {
    if let Some(r) = records.last() {
        println!(
            "t = {}  energy = {:.10e}  roughness = {:.6e}  mean = {:.3e}  max|grad u| = {:.6}",
            r.t, r.energy, r.roughness, r.mean_u, r.max_grad
        );
    }
}

pub fn run(args: &ConfigArgs) -> Result<()> {
    let cfg = resolve(args, "")?;
    let dir = PathBuf::from(&cfg.out_dir);
    let (_, records) = run_into(&cfg, &dir)?;
    print_last(&records);
    println!("wrote {}", dir.display());
    Ok(())
}

fn problem_of(cfg: &ConfigFile) -> Result<Problem> {
    if cfg.ic == InitialCondition::UniformRandom {
        return Err(Error::Config(
            "ic: convergence studies need a deterministic initial condition".into(),
        ));
    }
    Ok(Problem {
        dims: cfg.dims,
        half_period: cfg.half_period,
        delta: cfg.delta,
        t_final: cfg.t_final,
        ic: cfg.ic,
    })
}

fn print_rows(rows: &[ConvergenceRow]) {
    println!("{:>6} {:>12} {:>14} {:>10} {:>8}", "J", "tau", "error", "ratio", "order");
    for r in rows {
        let opt = |v: Option<f64>, p: usize| v.map_or(String::new(), |v| format!("{v:.p$}"));
        println!(
            "{:>6} {:>12.4e} {:>14.6e} {:>10} {:>8}",
            r.nodes,
            r.tau,
            r.error,
            opt(r.ratio, 4),
            opt(r.order, 4)
        );
    }
}

pub fn converge(args: &ConfigArgs, study: &StudyArgs) -> Result<()> {
    let cfg = resolve(args, CONVERGE_DEFAULTS)?;
    let problem = problem_of(&cfg)?;
    let dir = PathBuf::from(&cfg.out_dir);
    write_text(&dir.join("config.toml"), &cfg.echo())?;
    let (rows, name) = if study.temporal {
        let smallest = study.taus.iter().cloned().fold(f64::INFINITY, f64::min);
        let tau_ref = study.reference_tau.unwrap_or(smallest / 8.0);
        (temporal_study(&problem, cfg.nodes, &study.taus, tau_ref)?, "temporal.csv")
    } else {
        // The configured tau fixes C0 through tau = C0 h² at the configured J.
        let c0 = cfg.tau / diffusive_tau(&problem, cfg.nodes, 1.0);
        let largest = study.grids.iter().copied().max().unwrap_or(cfg.nodes);
        let nodes = study.reference_nodes.unwrap_or(2 * largest);
        let finest_tau = diffusive_tau(&problem, largest, c0);
        let reference = ReferenceSpec {
            nodes,
            tau: study.reference_tau.unwrap_or(finest_tau / 8.0),
        };
        (convergence_study(&problem, &study.grids, c0, reference)?, "convergence.csv")
    };
    print_rows(&rows);
    write_table_csv(&rows, &dir.join(name))?;
    println!("wrote {}", dir.join(name).display());
    Ok(())
}

pub fn coarsen(args: &ConfigArgs, fit: &WindowArgs) -> Result<()> {
    let cfg = resolve(args, COARSEN_DEFAULTS)?;
    if cfg.ic != InitialCondition::UniformRandom || cfg.dims != 2 {
        return Err(Error::Config(
            "ic: coarsening runs use dims = 2 and ic = uniform-random".into(),
        ));
    }
    let seed = cfg.seed.expect("validated: uniform-random has a seed");
    let params = Example2 {
        nodes: cfg.nodes,
        half_period: cfg.half_period,
        delta: cfg.delta,
        tau: cfg.tau,
        t_final: cfg.t_final,
        seed,
        fit_window: (fit.window[0], fit.window[1]),
        samples_per_window: fit.samples_per_window,
        snapshot_times: cfg.snapshot_times.clone(),
    };
    let dir = PathBuf::from(&cfg.out_dir);
    write_text(&dir.join("config.toml"), &cfg.echo())?;
    let run = run_example2(&params)?;
    write_diagnostics_csv(&run.records, &dir.join("diagnostics.csv"))?;
    for (t, density) in &run.snapshots {
        write_snapshot(density, &dir.join("snapshots").join(format!("density_t{t}.mbef")))?;
    }
    write_snapshot(&run.final_field, &dir.join("final.mbef"))?;
    print_last(&run.records);
    let energy = run.energy_fit(params.fit_window)?;
    let roughness = run.roughness_fit(params.fit_window)?;
    write_table_csv(&[energy], &dir.join("energy_fit.csv"))?;
    write_table_csv(&[roughness], &dir.join("roughness_fit.csv"))?;
    println!("energy slope    {:+.4}  (residual {:.2e})", energy.slope, energy.residual);
    println!("roughness slope {:+.4}  (residual {:.2e})", roughness.slope, roughness.residual);
    println!("wrote {}", dir.display());
    Ok(())
}

fn example1_defaults(p: &Example1) -> String {
    format!(
        "dims = 1\nJ = {}\nL = {}\ndelta = {:?}\ntau = {:?}\nT = {:?}\nic = \"ex1-trig\"\n",
        p.nodes,
        Example1::HALF_PERIOD,
        p.delta,
        p.tau,
        p.t_final
    )
}

pub fn example1(args: &ConfigArgs, presets: &[u8]) -> Result<()> {
    let chosen: Vec<usize> = if presets.is_empty() {
        (1..=Example1::PRESETS.len()).collect()
    } else {
        presets.iter().map(|&p| p as usize).collect()
    };
    for index in chosen {
        let cfg = resolve(args, &example1_defaults(&Example1::PRESETS[index - 1]))?;
        let dir = PathBuf::from(&cfg.out_dir).join(format!("preset{index}"));
        let (u, records) = run_into(&cfg, &dir)?;
        println!(
            "preset {index}: delta = {}  J = {}  tau = {}  T = {}",
            cfg.delta, cfg.nodes, cfg.tau, cfg.t_final
        );
        print_last(&records);
        println!("  max|u_x| = {:.6}  -> {}", max_gradient(&u)?, dir.display());
    }
    Ok(())
}

pub fn fit(
    input: &Path,
    column: &str,
    time_column: &str,
    window: &[f64],
    out: Option<&Path>,
) -> Result<()> {
    let window = match window {
        [lo, hi] => (*lo, *hi),
        [] => (0.0, f64::INFINITY),
        _ => return Err(Error::Config("--window takes two values".into())),
    };
    let cols = read_csv_columns(input)?;
    let series: Vec<(f64, f64)> = cols
        .column(time_column)?
        .iter()
        .copied()
        .zip(cols.column(column)?.iter().copied())
        .collect();
    let window = if window.0 == 0.0 && window.1.is_infinite() {
        let positive = series.iter().map(|p| p.0).filter(|&t| t > 0.0);
        let lo = positive.clone().fold(f64::INFINITY, f64::min);
        let hi = positive.fold(0.0, f64::max);
        // Open interval just wide enough to keep every positive time.
        (lo * (1.0 - 1e-12), hi * (1.0 + 1e-12))
    } else {
        window
    };
    let f = fit_power_law(&series, window)?;
    println!(
        "slope = {:.6}  intercept = {:.6}  residual = {:.3e}  window = ({}, {})",
        f.slope, f.intercept, f.residual, f.window_min, f.window_max
    );
    if let Some(path) = out {
        write_table_csv(&[f], path)?;
    }
    Ok(())
}
