//! Strang splitting `L(τ/2) N(τ) L(τ/2)` and the time-marching driver.

use std::collections::BTreeSet;

use crate::diagnostics::{self, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::spectral::{linear_substep, PropagatorCache, SpectralPropagator};
use crate::stencil::{nonlinear_substep_with, SubcycleOptions, DEFAULT_MAX_SUBSTEPS, DEFAULT_SAFETY};

/// When diagnostics are sampled, besides the first and last state.
#[derive(Debug, Clone, PartialEq)]
pub enum Cadence {
    /// Every `n` Strang steps.
    EverySteps(usize),
    /// At the step boundary nearest to each listed time.
    AtTimes(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub delta: f64,
    pub tau: f64,
    pub t_final: f64,
    pub safety: f64,
    pub diagnostics: Cadence,
    pub snapshot_times: Vec<f64>,
    pub max_substeps: usize,
}

impl RunConfig {
    /// Defaults: `τ = δ/10`, safety 0.9, diagnostics every step.
    pub fn new(delta: f64, t_final: f64) -> Self {
        RunConfig {
            delta,
            tau: delta / 10.0,
            t_final,
            safety: DEFAULT_SAFETY,
            diagnostics: Cadence::EverySteps(1),
            snapshot_times: Vec::new(),
            max_substeps: DEFAULT_MAX_SUBSTEPS,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_cadence(mut self, cadence: Cadence) -> Self {
        self.diagnostics = cadence;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("delta", self.delta)?;
        positive("tau", self.tau)?;
        positive("T", self.t_final)?;
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::Config(format!(
                "safety must lie in (0, 1], got {}",
                self.safety
            )));
        }
        if self.diagnostics == Cadence::EverySteps(0) {
            return Err(Error::Config("diag_every must be at least 1".into()));
        }
        Ok(())
    }

    fn subcycle(&self) -> SubcycleOptions {
        SubcycleOptions {
            safety: self.safety,
            max_steps: self.max_substeps,
        }
    }

    /// Number of full steps and the length of a shortened final step, if any.
    pub fn step_plan(&self) -> (usize, Option<f64>) {
        let ratio = self.t_final / self.tau;
        let nearest = ratio.round();
        if nearest >= 1.0 && (ratio - nearest).abs() <= 1e-9 * nearest {
            return (nearest as usize, None);
        }
        let full = ratio.floor() as usize;
        let rest = self.t_final - full as f64 * self.tau;
        (full, Some(rest))
    }
}

/// Receives diagnostics and snapshots from [`evolve`] in time order.
pub trait Sink {
    fn record(&mut self, record: DiagnosticsRecord) -> Result<()>;

    fn snapshot(&mut self, _t: f64, _field: &Field) -> Result<()> {
        Ok(())
    }
}

impl Sink for Vec<DiagnosticsRecord> {
    fn record(&mut self, record: DiagnosticsRecord) -> Result<()> {
        self.push(record);
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl Sink for NullSink {
    fn record(&mut self, _: DiagnosticsRecord) -> Result<()> {
        Ok(())
    }
}

fn strang_with(
    field: &Field,
    tau: f64,
    opts: &SubcycleOptions,
    half: &SpectralPropagator,
) -> Result<Field> {
    let u = linear_substep(field, half)?;
    let (u, _) = nonlinear_substep_with(&u, tau, opts)?;
    linear_substep(&u, half)
}

/// One splitting step of length `cfg.tau`; `half` must propagate for `cfg.tau / 2`.
pub fn strang_step(field: &Field, cfg: &RunConfig, half: &SpectralPropagator) -> Result<Field> {
    let expect = cfg.tau / 2.0;
    if (half.time() - expect).abs() > 1e-12 * expect || half.delta() != cfg.delta {
        return Err(Error::Config(format!(
            "half-step propagator built for t = {}, δ = {}; step needs t = {expect}, δ = {}",
            half.time(),
            half.delta(),
            cfg.delta
        )));
    }
    strang_with(field, cfg.tau, &cfg.subcycle(), half)
}

/// Step indices (0 = start) nearest to each requested time.
fn nearest_steps(times: &[f64], t0: f64, tau: f64, last: usize) -> BTreeSet<usize> {
    times
        .iter()
        .filter(|t| t.is_finite())
        .map(|t| (((t - t0) / tau).round().max(0.0) as usize).min(last))
        .collect()
}

/// Marches from `t = 0` to `cfg.t_final`.
pub fn evolve(field: &Field, cfg: &RunConfig, sink: &mut dyn Sink) -> Result<Field> {
    evolve_from(field, 0.0, cfg, sink)
}

/// Marches `cfg.t_final` time units starting at `t0`. Diagnostics are always
/// taken at the start and the end.
pub fn evolve_from(field: &Field, t0: f64, cfg: &RunConfig, sink: &mut dyn Sink) -> Result<Field> {
    cfg.validate()?;
    let grid = *field.grid();
    let (full, rest) = cfg.step_plan();
    let total = full + usize::from(rest.is_some());
    let time_at = |n: usize| {
        if n == total {
            t0 + cfg.t_final
        } else {
            t0 + n as f64 * cfg.tau
        }
    };

    let diag_steps = match &cfg.diagnostics {
        Cadence::EverySteps(k) => (0..=total).filter(|n| n % k == 0).collect(),
        Cadence::AtTimes(ts) => nearest_steps(ts, t0, cfg.tau, total),
    };
    let snap_steps = nearest_steps(&cfg.snapshot_times, t0, cfg.tau, total);

    let emit = |n: usize, u: &Field, sink: &mut dyn Sink| -> Result<()> {
        let t = time_at(n);
        if n == 0 || n == total || diag_steps.contains(&n) {
            sink.record(diagnostics::record(u, t, cfg.delta)?)?;
        }
        if snap_steps.contains(&n) {
            sink.snapshot(t, u)?;
        }
        Ok(())
    };

    let mut cache = PropagatorCache::new();
    let opts = cfg.subcycle();
    let mut u = field.clone();
    emit(0, &u, sink)?;
    for n in 1..=total {
        let tau = if n > full { rest.unwrap_or(cfg.tau) } else { cfg.tau };
        let half = cache.get(&grid, cfg.delta, tau / 2.0)?;
        u = strang_with(&u, tau, &opts, &half).map_err(|e| Error::AtStep {
            step: n,
            time: time_at(n - 1),
            source: Box::new(e),
        })?;
        emit(n, &u, sink)?;
    }
    Ok(u)
}
