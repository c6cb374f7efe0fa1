//! Run configuration files and initial-condition presets.
//!
//! A config is a flat TOML document:
//!
//! ```toml
//! dims = 2
//! J = 128
//! L = "pi"          # number, or a multiple of pi: "pi", "2pi", "0.5*pi"
//! delta = 0.1
//! T = 1.0
//! ic = "ts32-trig"  # "ts32-trig" | "ex1-trig" | "uniform-random"
//! # optional: tau (= delta/10), safety (= 0.9), diag_every (= 1),
//! #           snapshot_times (= []), seed, rng (= "splitmix64"), out_dir (= "out")
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{sample_function, Field, Grid};
use crate::splitting::{Cadence, RunConfig};

/// Key/value table a config document parses into before validation.
pub use toml::Table as ConfigTable;

pub const DEFAULT_RNG: &str = "splitmix64";
/// Half-width of the uniform random initial data.
pub const RANDOM_AMPLITUDE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialCondition {
    /// `0.1(sin 3x sin 2y + sin 5x sin 5y)` on `(0, 2π)²`.
    #[serde(rename = "ts32-trig")]
    AccuracyTrig,
    /// `0.1(sin(πx/2) + sin(2πx/3) + sin(πx))` on `(0, 12)`.
    #[serde(rename = "ex1-trig")]
    Example1Trig,
    /// Independent uniform draws in `[-0.001, 0.001]`.
    #[serde(rename = "uniform-random")]
    UniformRandom,
}

impl InitialCondition {
    pub fn name(&self) -> &'static str {
        match self {
            InitialCondition::AccuracyTrig => "ts32-trig",
            InitialCondition::Example1Trig => "ex1-trig",
            InitialCondition::UniformRandom => "uniform-random",
        }
    }

    fn required_dims(&self) -> Option<usize> {
        match self {
            InitialCondition::AccuracyTrig => Some(2),
            InitialCondition::Example1Trig => Some(1),
            InitialCondition::UniformRandom => None,
        }
    }

    /// Samples the preset on `grid`. `seed` is required for the random preset.
    pub fn build(&self, grid: &Grid, seed: Option<u64>) -> Result<Field> {
        if let Some(d) = self.required_dims() {
            if d != grid.dims() {
                return Err(Error::Config(format!(
                    "ic {} requires dims = {d}, grid has dims = {}",
                    self.name(),
                    grid.dims()
                )));
            }
        }
        match self {
            InitialCondition::AccuracyTrig => sample_function(grid, |x, y| {
                0.1 * ((3.0 * x).sin() * (2.0 * y).sin() + (5.0 * x).sin() * (5.0 * y).sin())
            }),
            InitialCondition::Example1Trig => sample_function(grid, |x, _| {
                0.1 * ((PI * x / 2.0).sin() + (2.0 * PI * x / 3.0).sin() + (PI * x).sin())
            }),
            InitialCondition::UniformRandom => {
                let seed = seed.ok_or_else(|| {
                    Error::Config("ic uniform-random requires a seed".into())
                })?;
                Ok(uniform_random_field(grid, seed, RANDOM_AMPLITUDE))
            }
        }
    }
}

impl fmt::Display for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Uniform draws in `[-amplitude, amplitude)`, one per node in storage order.
///
/// Each SplitMix64 output keeps its top 53 bits as a double in `[0, 1)`, which
/// is then mapped affinely. The generator state starts at `seed`.
pub fn uniform_random_field(grid: &Grid, seed: u64, amplitude: f64) -> Field {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let scale = 1.0 / (1u64 << 53) as f64;
    let values = (0..grid.len())
        .map(|_| {
            let unit = (rng.next_u64() >> 11) as f64 * scale;
            -amplitude + 2.0 * amplitude * unit
        })
        .collect();
    Field::from_values_unchecked(*grid, values)
}

/// A length that may be written as a plain number or as a multiple of π.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum Length {
    Number(f64),
    Text(String),
}

impl Length {
    fn value(&self) -> Result<f64> {
        match self {
            Length::Number(v) => Ok(*v),
            Length::Text(s) => parse_pi_multiple(s)
                .ok_or_else(|| Error::Config(format!("L: cannot interpret {s:?} as a length"))),
        }
    }
}

fn parse_pi_multiple(s: &str) -> Option<f64> {
    let t = s.trim().to_ascii_lowercase();
    let t = t.as_str();
    if let Ok(v) = f64::from_str(t) {
        return Some(v);
    }
    let coef = t.strip_suffix("pi")?.trim().trim_end_matches('*').trim();
    if coef.is_empty() {
        Some(PI)
    } else {
        f64::from_str(coef).ok().map(|c| c * PI)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dims: usize,
    #[serde(rename = "J")]
    nodes: usize,
    #[serde(rename = "L")]
    half_period: Length,
    delta: f64,
    tau: Option<f64>,
    #[serde(rename = "T")]
    t_final: f64,
    safety: Option<f64>,
    diag_every: Option<usize>,
    snapshot_times: Option<Vec<f64>>,
    ic: InitialCondition,
    seed: Option<u64>,
    rng: Option<String>,
    out_dir: Option<String>,
}

/// Validated run configuration with every default resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigFile {
    pub dims: usize,
    #[serde(rename = "J")]
    pub nodes: usize,
    #[serde(rename = "L")]
    pub half_period: f64,
    pub delta: f64,
    pub tau: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub safety: f64,
    pub diag_every: usize,
    pub snapshot_times: Vec<f64>,
    pub ic: InitialCondition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub rng: String,
    pub out_dir: String,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a config document into a key table, rejecting duplicates.
pub fn parse_table(text: &str) -> Result<ConfigTable> {
    text.parse::<toml::Table>().map_err(|e| {
        let span = e.span();
        let mut message = e.message().trim().to_string();
        if let Some(key) = span.as_ref().and_then(|s| text.get(s.clone())) {
            if message.starts_with("duplicate key") && !message.contains(key.trim()) {
                message = format!("{message} `{}`", key.trim());
            }
        }
        Error::Parse {
            line: span.map(|s| line_of(text, s.start)).unwrap_or(0),
            message,
        }
    })
}

/// Applies a `key=value` override. The value is read as a TOML value when
/// possible and as a bare string otherwise.
pub fn apply_override(table: &mut ConfigTable, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override {assignment:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    table.insert(key.to_string(), value);
    Ok(())
}

/// Sets a string-valued key without TOML interpretation of `value`.
pub fn set_string(table: &mut ConfigTable, key: &str, value: &str) {
    table.insert(key.to_string(), toml::Value::String(value.to_string()));
}

impl ConfigFile {
    /// Parses and validates a config document.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    pub fn from_table(table: ConfigTable) -> Result<Self> {
        let raw: RawConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_string()))?;
        let cfg = ConfigFile {
            dims: raw.dims,
            nodes: raw.nodes,
            half_period: raw.half_period.value()?,
            delta: raw.delta,
            tau: raw.tau.unwrap_or(raw.delta / 10.0),
            t_final: raw.t_final,
            safety: raw.safety.unwrap_or(crate::stencil::DEFAULT_SAFETY),
            diag_every: raw.diag_every.unwrap_or(1),
            snapshot_times: raw.snapshot_times.unwrap_or_default(),
            ic: raw.ic,
            seed: raw.seed,
            rng: raw.rng.unwrap_or_else(|| DEFAULT_RNG.to_string()),
            out_dir: raw.out_dir.unwrap_or_else(|| "out".to_string()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.grid()?;
        self.run_config().validate()?;
        if self.rng != DEFAULT_RNG {
            return Err(Error::Config(format!(
                "rng: unsupported generator {:?} (only {DEFAULT_RNG})",
                self.rng
            )));
        }
        if self.ic == InitialCondition::UniformRandom && self.seed.is_none() {
            return Err(Error::Config("seed: required when ic = uniform-random".into()));
        }
        if let Some(d) = self.ic.required_dims() {
            if d != self.dims {
                return Err(Error::Config(format!(
                    "ic: {} requires dims = {d}, got dims = {}",
                    self.ic, self.dims
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims, self.nodes, self.half_period)
    }

    pub fn run_config(&self) -> RunConfig {
        let mut rc = RunConfig::new(self.delta, self.t_final).with_tau(self.tau);
        rc.safety = self.safety;
        rc.diagnostics = Cadence::EverySteps(self.diag_every);
        rc.snapshot_times = self.snapshot_times.clone();
        rc
    }

    /// Fully resolved config as TOML; parsing it back yields the same config.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}

/// Initial field for a validated config.
pub fn build_initial_condition(cfg: &ConfigFile, grid: &Grid) -> Result<Field> {
    cfg.ic.build(grid, cfg.seed)
}
