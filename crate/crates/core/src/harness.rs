//! Experiments: convergence studies, the 1D δ-sweep, 2D coarsening runs and
//! power-law fitting.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::config::InitialCondition;
use crate::diagnostics::{free_energy_density, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::grid::{discrete_l2_norm, Field, Grid};
use crate::io::{format_float, CsvRow};
use crate::splitting::{evolve, Cadence, NullSink, RunConfig, Sink};

/// A periodic initial-value problem with a preset initial condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Problem {
    pub dims: usize,
    pub half_period: f64,
    pub delta: f64,
    pub t_final: f64,
    pub ic: InitialCondition,
}

impl Problem {
    /// `0.1(sin 3x sin 2y + sin 5x sin 5y)` on `(0, 2π)²`, δ = 0.1, T = 1.
    pub fn accuracy_test() -> Self {
        Problem {
            dims: 2,
            half_period: PI,
            delta: 0.1,
            t_final: 1.0,
            ic: InitialCondition::AccuracyTrig,
        }
    }

    pub fn grid(&self, nodes: usize) -> Result<Grid> {
        Grid::new(self.dims, nodes, self.half_period)
    }

    pub fn initial(&self, nodes: usize) -> Result<Field> {
        self.ic.build(&self.grid(nodes)?, None)
    }

    /// Final state at `t_final` with step `tau`.
    pub fn solve(&self, nodes: usize, tau: f64) -> Result<Field> {
        let cfg = RunConfig::new(self.delta, self.t_final)
            .with_tau(tau)
            .with_cadence(Cadence::AtTimes(Vec::new()));
        evolve(&self.initial(nodes)?, &cfg, &mut NullSink)
    }
}

/// The fine run every study row is compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSpec {
    pub nodes: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    /// Points per axis, `J`.
    pub nodes: usize,
    pub tau: f64,
    pub error: f64,
    /// `error(previous row) / error(this row)`; absent on the first row.
    pub ratio: Option<f64>,
    /// `log₂(ratio)`.
    pub order: Option<f64>,
}

impl CsvRow for ConvergenceRow {
    fn header() -> &'static [&'static str] {
        &["J", "tau", "error", "ratio", "order"]
    }

    fn cells(&self) -> Vec<Option<String>> {
        vec![
            Some(self.nodes.to_string()),
            Some(format_float(self.tau)),
            Some(format_float(self.error)),
            self.ratio.map(format_float),
            self.order.map(format_float),
        ]
    }
}

/// `τ = C0 h²` on a grid with `nodes` points per axis.
pub fn diffusive_tau(problem: &Problem, nodes: usize, c0: f64) -> f64 {
    let h = 2.0 * problem.half_period / nodes as f64;
    c0 * h * h
}

/// Discrete L² distance between `coarse` and `fine` restricted to its grid.
pub fn restricted_error(coarse: &Field, fine: &Field) -> Result<f64> {
    let r = fine.restrict(coarse.grid().nodes())?;
    Ok(discrete_l2_norm(&coarse.difference(&r)?))
}

/// `restricted_error` divided by the norm of the restricted fine field.
pub fn relative_discrepancy(coarse: &Field, fine: &Field) -> Result<f64> {
    let r = fine.restrict(coarse.grid().nodes())?;
    Ok(discrete_l2_norm(&coarse.difference(&r)?) / discrete_l2_norm(&r))
}

fn fill_orders(nodes_taus: &[(usize, f64)], errors: Vec<f64>) -> Vec<ConvergenceRow> {
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(errors.len());
    for (&(nodes, tau), error) in nodes_taus.iter().zip(errors) {
        let ratio = rows.last().map(|prev| prev.error / error);
        rows.push(ConvergenceRow {
            nodes,
            tau,
            error,
            ratio,
            order: ratio.map(f64::log2),
        });
    }
    rows
}

fn check_doubling(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config(format!("{what}: empty list")));
    }
    for w in values.windows(2) {
        if (w[1] / w[0] - 2.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "{what}: consecutive entries must differ by a factor of 2, got {} and {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Spatial convergence study with `τ = C0 h²` on each grid.
///
/// Every grid must nest in the reference grid. Runs execute concurrently;
/// rows come back in the order of `nodes`.
pub fn convergence_study(
    problem: &Problem,
    nodes: &[usize],
    c0: f64,
    reference: ReferenceSpec,
) -> Result<Vec<ConvergenceRow>> {
    check_doubling(&nodes.iter().map(|&j| j as f64).collect::<Vec<_>>(), "J list")?;
    for &j in nodes {
        if reference.nodes % j != 0 {
            return Err(Error::Config(format!(
                "J = {j} does not nest in reference J = {}",
                reference.nodes
            )));
        }
    }
    let plan: Vec<(usize, f64)> = nodes
        .iter()
        .map(|&j| (j, diffusive_tau(problem, j, c0)))
        .collect();

    let (reference_field, runs) = rayon::join(
        || problem.solve(reference.nodes, reference.tau),
        || {
            plan.par_iter()
                .map(|&(j, tau)| problem.solve(j, tau))
                .collect::<Result<Vec<_>>>()
        },
    );
    let reference_field = reference_field?;
    let errors = runs?
        .iter()
        .map(|u| restricted_error(u, &reference_field))
        .collect::<Result<Vec<_>>>()?;
    Ok(fill_orders(&plan, errors))
}

/// Temporal convergence on a fixed grid: each `τ` halves the previous one.
/// Rows are reported in the order of `taus` and `ratio` compares each row with
/// the one before it.
pub fn temporal_study(
    problem: &Problem,
    nodes: usize,
    taus: &[f64],
    tau_reference: f64,
) -> Result<Vec<ConvergenceRow>> {
    let inverted: Vec<f64> = taus.iter().map(|t| 1.0 / t).collect();
    check_doubling(&inverted, "tau list (reciprocals)")?;
    let (reference_field, runs) = rayon::join(
        || problem.solve(nodes, tau_reference),
        || {
            taus.par_iter()
                .map(|&tau| problem.solve(nodes, tau))
                .collect::<Result<Vec<_>>>()
        },
    );
    let reference_field = reference_field?;
    let errors = runs?
        .iter()
        .map(|u| restricted_error(u, &reference_field))
        .collect::<Result<Vec<_>>>()?;
    let plan: Vec<(usize, f64)> = taus.iter().map(|&t| (nodes, t)).collect();
    Ok(fill_orders(&plan, errors))
}

pub const MIN_FIT_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    /// Exponent `α` of `value ≈ C t^α`.
    pub slope: f64,
    /// `ln C`.
    pub intercept: f64,
    pub window_min: f64,
    pub window_max: f64,
    /// RMS of the log-log residuals.
    pub residual: f64,
}

impl CsvRow for PowerLawFit {
    fn header() -> &'static [&'static str] {
        &["slope", "intercept", "window_min", "window_max", "residual"]
    }

    fn cells(&self) -> Vec<Option<String>> {
        [self.slope, self.intercept, self.window_min, self.window_max, self.residual]
            .iter()
            .map(|v| Some(format_float(*v)))
            .collect()
    }
}

/// Least-squares line through `(ln t, ln value)` for samples with
/// `window.0 < t < window.1`.
pub fn fit_power_law(series: &[(f64, f64)], window: (f64, f64)) -> Result<PowerLawFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Fit(format!("window [{lo}, {hi}] must satisfy 0 < min < max")));
    }
    let mut pts = Vec::new();
    for (i, &(t, v)) in series.iter().enumerate() {
        if t > lo && t < hi {
            if !(v > 0.0) {
                return Err(Error::Fit(format!(
                    "sample {i} at t = {t} has nonpositive value {v}"
                )));
            }
            pts.push((t.ln(), v.ln()));
        }
    }
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::Fit(format!(
            "{} samples inside ({lo}, {hi}), need at least {MIN_FIT_SAMPLES}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("all samples share one time".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(PowerLawFit {
        slope,
        intercept,
        window_min: lo,
        window_max: hi,
        residual,
    })
}

/// Times `w_min ρ^k` inside `[t_min, t_max]`, with `ρ` chosen so that exactly
/// `per_window` of them fall strictly inside `(w_min, w_max)`.
pub fn geometric_times(t_min: f64, t_max: f64, window: (f64, f64), per_window: usize) -> Vec<f64> {
    let (w_min, w_max) = window;
    let log_rho = (w_max / w_min).ln() / (per_window + 1) as f64;
    let k_lo = ((t_min / w_min).ln() / log_rho).ceil() as i64;
    let k_hi = ((t_max / w_min).ln() / log_rho).floor() as i64;
    let edges = per_window as i64 + 1;
    (k_lo..=k_hi)
        .map(|k| match k {
            0 => w_min,
            k if k == edges => w_max,
            k => w_min * (k as f64 * log_rho).exp(),
        })
        .filter(|t| (t_min..=t_max).contains(t))
        .collect()
}

/// Parameters of a one-dimensional run on `(0, 12)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example1 {
    pub delta: f64,
    pub nodes: usize,
    pub tau: f64,
    pub t_final: f64,
}

impl Example1 {
    pub const HALF_PERIOD: f64 = 6.0;

    /// The four `(δ, J, τ, T)` combinations of the δ-sweep.
    pub const PRESETS: [Example1; 4] = [
        Example1 { delta: 1.0, nodes: 128, tau: 0.1, t_final: 100.0 },
        Example1 { delta: 0.1, nodes: 128, tau: 0.01, t_final: 200.0 },
        Example1 { delta: 0.01, nodes: 256, tau: 0.001, t_final: 500.0 },
        Example1 { delta: 0.001, nodes: 512, tau: 0.0001, t_final: 1000.0 },
    ];

    /// `τ = δ/10`.
    pub fn with_default_tau(delta: f64, nodes: usize, t_final: f64) -> Self {
        Example1 {
            delta,
            nodes,
            tau: RunConfig::new(delta, t_final).tau,
            t_final,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(1, self.nodes, Self::HALF_PERIOD)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example1Run {
    pub params: Example1,
    pub final_field: Field,
    pub records: Vec<DiagnosticsRecord>,
}

/// Runs the δ-sweep problem, recording diagnostics every `diag_every` steps.
pub fn run_example1(params: Example1, diag_every: usize) -> Result<Example1Run> {
    let grid = params.grid()?;
    let u0 = InitialCondition::Example1Trig.build(&grid, None)?;
    let cfg = RunConfig::new(params.delta, params.t_final)
        .with_tau(params.tau)
        .with_cadence(Cadence::EverySteps(diag_every));
    let mut records = Vec::new();
    let final_field = evolve(&u0, &cfg, &mut records)?;
    Ok(Example1Run {
        params,
        final_field,
        records,
    })
}

/// Parameters of a two-dimensional coarsening run from seeded random data.
#[derive(Debug, Clone, PartialEq)]
pub struct Example2 {
    pub nodes: usize,
    pub half_period: f64,
    pub delta: f64,
    pub tau: f64,
    pub t_final: f64,
    pub seed: u64,
    pub fit_window: (f64, f64),
    /// Diagnostic samples strictly inside the fit window.
    pub samples_per_window: usize,
    /// Times at which free-energy density snapshots are taken.
    pub snapshot_times: Vec<f64>,
}

impl Example2 {
    /// Laptop-scale defaults: `J = 256` on `(0, 100)²` up to `T = 400`.
    pub fn desk_scale(seed: u64) -> Self {
        Example2 {
            nodes: 256,
            half_period: 50.0,
            delta: 0.1,
            tau: 0.01,
            t_final: 400.0,
            seed,
            fit_window: (20.0, 400.0),
            samples_per_window: 40,
            snapshot_times: Vec::new(),
        }
    }

    pub fn diagnostic_times(&self) -> Vec<f64> {
        geometric_times(self.tau, self.t_final, self.fit_window, self.samples_per_window)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example2Run {
    pub records: Vec<DiagnosticsRecord>,
    /// `(t, free-energy density)` pairs.
    pub snapshots: Vec<(f64, Field)>,
    pub final_field: Field,
}

impl Example2Run {
    pub fn energy_series(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.t, r.energy)).collect()
    }

    pub fn roughness_series(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.t, r.roughness)).collect()
    }

    pub fn energy_fit(&self, window: (f64, f64)) -> Result<PowerLawFit> {
        fit_power_law(&self.energy_series(), window)
    }

    pub fn roughness_fit(&self, window: (f64, f64)) -> Result<PowerLawFit> {
        fit_power_law(&self.roughness_series(), window)
    }
}

struct CoarseningSink {
    delta: f64,
    records: Vec<DiagnosticsRecord>,
    snapshots: Vec<(f64, Field)>,
}

impl Sink for CoarseningSink {
    fn record(&mut self, record: DiagnosticsRecord) -> Result<()> {
        self.records.push(record);
        Ok(())
    }

    fn snapshot(&mut self, t: f64, field: &Field) -> Result<()> {
        self.snapshots.push((t, free_energy_density(field, self.delta)?));
        Ok(())
    }
}

pub fn run_example2(params: &Example2) -> Result<Example2Run> {
    let grid = Grid::new(2, params.nodes, params.half_period)?;
    let u0 = InitialCondition::UniformRandom.build(&grid, Some(params.seed))?;
    let mut cfg = RunConfig::new(params.delta, params.t_final)
        .with_tau(params.tau)
        .with_cadence(Cadence::AtTimes(params.diagnostic_times()));
    cfg.snapshot_times = params.snapshot_times.clone();
    let mut sink = CoarseningSink {
        delta: params.delta,
        records: Vec::new(),
        snapshots: Vec::new(),
    };
    let final_field = evolve(&u0, &cfg, &mut sink)?;
    Ok(Example2Run {
        records: sink.records,
        snapshots: sink.snapshots,
        final_field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_core::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn exact(c: f64, alpha: f64) -> Vec<(f64, f64)> {
        (0..=200)
            .map(|i| {
                let t = 10f64.powf(i as f64 / 100.0);
                (t, c * t.powf(alpha))
            })
            .collect()
    }

    #[test]
    fn exact_power_laws() {
        let w = (0.5, 200.0);
        let f = fit_power_law(&exact(5.0, 1.0 / 3.0), w).unwrap();
        assert!((f.slope - 1.0 / 3.0).abs() < 1e-12);
        assert!((f.intercept - 5f64.ln()).abs() < 1e-12);
        assert!(f.residual < 1e-12);
        let f = fit_power_law(&exact(2.0, -1.0 / 3.0), w).unwrap();
        assert!((f.slope + 1.0 / 3.0).abs() < 1e-12);
        let f = fit_power_law(&exact(7.0, 0.0), w).unwrap();
        assert!(f.slope.abs() < 1e-12);
    }

    #[test]
    fn window_is_strict() {
        let series: Vec<(f64, f64)> = (1..=10).map(|i| (i as f64, i as f64)).collect();
        // Samples 1 and 10 sit on the boundary: only 8 remain.
        assert!(fit_power_law(&series, (1.0, 10.0)).is_ok());
        assert!(fit_power_law(&series, (1.0, 9.0)).is_err());
        // A bad value outside the window is ignored, inside it is reported.
        let mut bad = series.clone();
        bad[0].1 = -1.0;
        assert!(fit_power_law(&bad, (1.0, 10.0)).is_ok());
        bad[4].1 = 0.0;
        let err = fit_power_law(&bad, (1.0, 10.0)).unwrap_err();
        assert!(err.to_string().contains("sample 4"), "{err}");
        assert!(fit_power_law(&series, (5.0, 2.0)).is_err());
    }

    #[test]
    fn planted_exponents_survive_noise() {
        // 1% multiplicative noise, 50 samples per decade over two decades.
        let mut rng = SplitMix64::seed_from_u64(7);
        let mut unit = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        for &alpha in &[-1.0 / 3.0, 1.0 / 3.0, 0.5, -1.0] {
            for _ in 0..20 {
                let series: Vec<(f64, f64)> = (0..=100)
                    .map(|i| {
                        let t = 10f64.powf(i as f64 / 50.0);
                        (t, 3.0 * t.powf(alpha) * (1.0 + 0.01 * (2.0 * unit() - 1.0)))
                    })
                    .collect();
                let f = fit_power_law(&series, (0.99, 101.0)).unwrap();
                assert!((f.slope - alpha).abs() <= 0.02, "{alpha}: {}", f.slope);
            }
        }
    }

    proptest! {
        #[test]
        fn fit_is_scale_invariant(c in 0.01f64..100.0, alpha in -2.0f64..2.0) {
            let f = fit_power_law(&exact(c, alpha), (1.0, 100.0)).unwrap();
            prop_assert!((f.slope - alpha).abs() < 1e-9);
            prop_assert!((f.intercept - c.ln()).abs() < 1e-8);
        }
    }

    #[test]
    fn geometric_grid_density() {
        let ts = geometric_times(0.01, 400.0, (20.0, 400.0), 40);
        let inside = ts.iter().filter(|&&t| t > 20.0 && t < 400.0).count();
        assert_eq!(inside, 40);
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert!(ts[0] >= 0.01 && *ts.last().unwrap() <= 400.0 * (1.0 + 1e-12));
        let r0 = ts[1] / ts[0];
        assert!(ts.windows(2).all(|w| (w[1] / w[0] - r0).abs() < 1e-9));
    }

    #[test]
    fn orders_from_errors() {
        let rows = fill_orders(&[(16, 0.1), (32, 0.025), (64, 0.00625)], vec![1.6e-3, 1e-4, 6.25e-6]);
        assert_eq!(rows[0].ratio, None);
        assert_eq!(rows[0].order, None);
        assert!((rows[1].ratio.unwrap() - 16.0).abs() < 1e-12);
        assert!((rows[2].order.unwrap() - 4.0).abs() < 1e-12);
        let csv = crate::io::table_to_string(&rows);
        let first = csv.lines().nth(1).unwrap();
        assert!(first.starts_with("16,") && first.ends_with(",,"), "{first}");
    }

    #[test]
    fn self_reference_gives_zero_error() {
        let p = Problem {
            t_final: 0.02,
            ..Problem::accuracy_test()
        };
        let c0 = 0.01 / (2.0 * PI / 16.0f64).powi(2);
        let rows = convergence_study(&p, &[16], c0, ReferenceSpec { nodes: 16, tau: 0.01 }).unwrap();
        assert_eq!(rows[0].error, 0.0);
        assert!((rows[0].tau - 0.01).abs() < 1e-15);
    }

    #[test]
    fn study_preconditions() {
        let p = Problem {
            t_final: 0.01,
            ..Problem::accuracy_test()
        };
        let r = ReferenceSpec { nodes: 48, tau: 1e-3 };
        let err = convergence_study(&p, &[32], 1.0, r).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Config);
        assert!(convergence_study(&p, &[16, 48], 1.0, ReferenceSpec { nodes: 96, tau: 1e-3 }).is_err());
        assert!(temporal_study(&p, 16, &[0.01, 0.004], 1e-3).is_err());
    }

    #[test]
    fn small_spatial_study_converges() {
        let p = Problem {
            t_final: 0.2,
            ..Problem::accuracy_test()
        };
        let c0 = 0.005 / (2.0 * PI / 32.0f64).powi(2);
        let reference = ReferenceSpec { nodes: 128, tau: 1.5625e-4 };
        let rows = convergence_study(&p, &[32, 64], c0, reference).unwrap();
        assert!((rows[1].tau - 0.00125).abs() < 1e-15);
        assert!(rows[1].error < rows[0].error);
        assert!(rows[1].order.unwrap() > 2.0, "{rows:?}");
    }

    #[test]
    fn example1_presets_and_default_tau() {
        assert_eq!(Example1::PRESETS[0].tau, 0.1);
        let e = Example1::with_default_tau(0.1, 64, 1.0);
        assert!((e.tau - 0.01).abs() < 1e-16);
        let short = Example1 { t_final: 0.5, ..Example1::PRESETS[0] };
        let run = run_example1(short, 1).unwrap();
        assert_eq!(run.records.len(), 6);
        assert!(run.records.last().unwrap().energy < run.records[0].energy);
    }

    #[test]
    fn example2_short_run_records_on_schedule() {
        let params = Example2 {
            nodes: 32,
            t_final: 2.0,
            fit_window: (0.5, 2.0),
            samples_per_window: 8,
            snapshot_times: vec![1.0],
            ..Example2::desk_scale(3)
        };
        let run = run_example2(&params).unwrap();
        let inside = run.records.iter().filter(|r| r.t > 0.5 && r.t < 2.0).count();
        assert_eq!(inside, 8);
        assert_eq!(run.snapshots.len(), 1);
        assert!((run.snapshots[0].0 - 1.0).abs() < 1e-12);
        assert!(run.records.iter().all(|r| r.mean_u.abs() < 1e-4));
    }
}
