//! Exact exponential integration of `u_t = -Δu - δΔ²u` on the periodic grid.
//!
//! A Fourier mode `e^{iπ(px + qy)/L}` evolves by `e^{λ_pq t}` with
//! `λ_pq = k² - δ k⁴`, `k² = π²(p² + q²)/L²`. The transform uses the standard
//! `J = 2N` mode set `p ∈ {-N, …, N-1}`; the unpaired Nyquist mode gets its
//! multiplier like any other mode.
//!
//! Internally the transform is real-to-complex along the contiguous (`y`)
//! axis followed by a complex transform along `x`. Spectra are stored
//! half-axis-major: entry `m * J + i` holds column mode `q = m ∈ 0..=N` and row
//! mode index `i` (signed mode `p = i` for `i < N`, `i - J` otherwise). In one
//! dimension the spectrum is just the `N + 1` half-axis coefficients.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Relative size of the imaginary part tolerated when returning to real space.
pub const IMAGINARY_RESIDUE_TOL: f64 = 1e-10;

/// Growth rate of mode `(p, q)`.
pub fn lambda_mode(grid: &Grid, delta: f64, p: i64, q: i64) -> f64 {
    let k2 = wavenumber_squared(grid, p, q);
    k2 - delta * k2 * k2
}

fn wavenumber_squared(grid: &Grid, p: i64, q: i64) -> f64 {
    let l = grid.half_period();
    PI * PI * ((p * p + q * q) as f64) / (l * l)
}

/// Signed mode for full-axis index `i` of a length-`n` transform.
#[inline]
pub(crate) fn signed_mode(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Planned transforms for one grid size and dimension.
pub struct Transform {
    dims: usize,
    nodes: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transform")
            .field("dims", &self.dims)
            .field("nodes", &self.nodes)
            .finish()
    }
}

static PLANS: OnceLock<Mutex<HashMap<(usize, usize), Arc<Transform>>>> = OnceLock::new();

impl Transform {
    /// Shared plan for `grid`'s size; plans are built once per process.
    pub fn for_grid(grid: &Grid) -> Arc<Transform> {
        let key = (grid.dims(), grid.nodes());
        let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry(key)
            .or_insert_with(|| {
                let n = grid.nodes();
                let mut real = RealFftPlanner::<f64>::new();
                let mut cplx = FftPlanner::<f64>::new();
                Arc::new(Transform {
                    dims: grid.dims(),
                    nodes: n,
                    r2c: real.plan_fft_forward(n),
                    c2r: real.plan_fft_inverse(n),
                    fwd: cplx.plan_fft_forward(n),
                    inv: cplx.plan_fft_inverse(n),
                })
            })
            .clone()
    }

    /// Number of stored spectral coefficients.
    pub fn spectrum_len(&self) -> usize {
        let half = self.nodes / 2 + 1;
        if self.dims == 1 {
            half
        } else {
            half * self.nodes
        }
    }

    /// Unnormalized forward transform of nodal values.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex<f64>> {
        let n = self.nodes;
        let half = n / 2 + 1;
        let rows = if self.dims == 1 { 1 } else { n };
        debug_assert_eq!(values.len(), rows * n);

        let mut input = values.to_vec();
        let mut rowspec = vec![Complex::new(0.0, 0.0); rows * half];
        input
            .par_chunks_mut(n)
            .zip(rowspec.par_chunks_mut(half))
            .for_each_init(
                || self.r2c.make_scratch_vec(),
                |scratch, (inp, out)| {
                    self.r2c
                        .process_with_scratch(inp, out, scratch)
                        .expect("buffer sizes fixed by plan");
                },
            );
        if self.dims == 1 {
            return rowspec;
        }

        // rows x half -> half x rows, then transform along x.
        let mut spec = transpose(&rowspec, n, half);
        spec.par_chunks_mut(n).for_each_init(
            || vec![Complex::new(0.0, 0.0); self.fwd.get_inplace_scratch_len()],
            |scratch, col| self.fwd.process_with_scratch(col, scratch),
        );
        spec
    }

    /// Inverse of [`Transform::forward`], including the `1/J^d` normalization.
    ///
    /// Coefficients that must be real for a real result (the `q = 0` and
    /// `q = N` columns after the `x` transform) are checked against
    /// [`IMAGINARY_RESIDUE_TOL`] relative to the largest coefficient.
    pub fn inverse(&self, mut spec: Vec<Complex<f64>>) -> Result<Vec<f64>> {
        let n = self.nodes;
        let half = n / 2 + 1;
        let rows = if self.dims == 1 { 1 } else { n };
        debug_assert_eq!(spec.len(), self.spectrum_len());

        if self.dims == 2 {
            spec.par_chunks_mut(n).for_each_init(
                || vec![Complex::new(0.0, 0.0); self.inv.get_inplace_scratch_len()],
                |scratch, col| self.inv.process_with_scratch(col, scratch),
            );
            spec = transpose(&spec, half, n);
        }
        let rowspec = &mut spec;

        let scale = rowspec.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        let mut residue = 0.0f64;
        for row in rowspec.chunks_mut(half) {
            for idx in [0, half - 1] {
                residue = residue.max(row[idx].im.abs());
                row[idx].im = 0.0;
            }
        }
        if residue > IMAGINARY_RESIDUE_TOL * scale {
            return Err(Error::Internal(format!(
                "imaginary residue {residue:e} exceeds tolerance relative to {scale:e}"
            )));
        }

        let mut out = vec![0.0; rows * n];
        rowspec
            .par_chunks_mut(half)
            .zip(out.par_chunks_mut(n))
            .for_each_init(
                || self.c2r.make_scratch_vec(),
                |scratch, (inp, o)| {
                    self.c2r
                        .process_with_scratch(inp, o, scratch)
                        .expect("real-valued edge coefficients enforced above");
                },
            );
        let norm = 1.0 / (rows * n) as f64;
        out.iter_mut().for_each(|v| *v *= norm);
        Ok(out)
    }

    /// Signed modes `(p, q)` of spectrum entry `idx`. In one dimension `q = 0`.
    pub fn mode_of(&self, idx: usize) -> (i64, i64) {
        let n = self.nodes;
        if self.dims == 1 {
            (idx as i64, 0)
        } else {
            let (m, i) = (idx / n, idx % n);
            (signed_mode(i, n), m as i64)
        }
    }
}

fn transpose(src: &[Complex<f64>], rows: usize, cols: usize) -> Vec<Complex<f64>> {
    const TILE: usize = 16;
    let mut dst = vec![Complex::new(0.0, 0.0); rows * cols];
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    dst
}

/// Per-mode multipliers `e^{λ_pq t}` for a fixed grid, `δ` and `t`.
#[derive(Debug)]
pub struct SpectralPropagator {
    grid: Grid,
    delta: f64,
    time: f64,
    multipliers: Vec<f64>,
    transform: Arc<Transform>,
}

impl SpectralPropagator {
    pub fn new(grid: &Grid, delta: f64, time: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Config(format!("delta must be positive, got {delta}")));
        }
        if !(time >= 0.0) || !time.is_finite() {
            return Err(Error::Config(format!(
                "propagation time must be non-negative, got {time}"
            )));
        }
        let transform = Transform::for_grid(grid);
        let multipliers = (0..transform.spectrum_len())
            .map(|idx| {
                let (p, q) = transform.mode_of(idx);
                (lambda_mode(grid, delta, p, q) * time).exp()
            })
            .collect();
        Ok(SpectralPropagator {
            grid: *grid,
            delta,
            time,
            multipliers,
            transform,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Multipliers in the transform's spectrum layout.
    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    /// Multiplier for signed mode `(p, q)`.
    pub fn multiplier(&self, p: i64, q: i64) -> f64 {
        (lambda_mode(&self.grid, self.delta, p, q) * self.time).exp()
    }
}

/// Convenience wrapper for [`SpectralPropagator::new`].
pub fn build_propagator(grid: &Grid, delta: f64, time: f64) -> Result<SpectralPropagator> {
    SpectralPropagator::new(grid, delta, time)
}

/// Advances `field` by the propagator's time under the linear flow.
pub fn linear_substep(field: &Field, propagator: &SpectralPropagator) -> Result<Field> {
    if field.grid() != propagator.grid() {
        return Err(Error::GridMismatch);
    }
    let tr = &propagator.transform;
    let mut spec = tr.forward(field.values());
    for (c, m) in spec.iter_mut().zip(&propagator.multipliers) {
        *c *= *m;
    }
    let values = tr.inverse(spec)?;
    Ok(Field::from_values_unchecked(*field.grid(), values))
}

/// Reuses propagators across steps with identical `(J, L, δ, t)`.
#[derive(Debug, Default)]
pub struct PropagatorCache {
    entries: HashMap<(usize, usize, u64, u64, u64), Arc<SpectralPropagator>>,
}

impl PropagatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, grid: &Grid, delta: f64, time: f64) -> Result<Arc<SpectralPropagator>> {
        let key = (
            grid.dims(),
            grid.nodes(),
            grid.half_period().to_bits(),
            delta.to_bits(),
            time.to_bits(),
        );
        if let Some(p) = self.entries.get(&key) {
            return Ok(p.clone());
        }
        let p = Arc::new(SpectralPropagator::new(grid, delta, time)?);
        self.entries.insert(key, p.clone());
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Spectrally exact derivatives of the trigonometric interpolant.
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub ux: Vec<f64>,
    /// Empty in one dimension.
    pub uy: Vec<f64>,
    pub laplacian: Vec<f64>,
}

/// First derivatives and Laplacian. The first-derivative multiplier at the
/// Nyquist mode is zero; the second-derivative multiplier there is
/// `-(πN/L)²`.
pub fn derivatives(field: &Field) -> Result<Derivatives> {
    let grid = field.grid();
    let tr = Transform::for_grid(grid);
    let n = grid.nodes() as i64;
    let nyq = n / 2;
    let base = PI / grid.half_period();
    let spec = tr.forward(field.values());

    let first = |mode: i64| {
        if mode.abs() == nyq {
            0.0
        } else {
            base * mode as f64
        }
    };
    let i_times = |c: Complex<f64>, k: f64| Complex::new(-c.im * k, c.re * k);

    let mut sx = Vec::with_capacity(spec.len());
    let mut sy = Vec::with_capacity(if grid.dims() == 2 { spec.len() } else { 0 });
    let mut sl = Vec::with_capacity(spec.len());
    for (idx, &c) in spec.iter().enumerate() {
        let (p, q) = tr.mode_of(idx);
        sx.push(i_times(c, first(p)));
        if grid.dims() == 2 {
            sy.push(i_times(c, first(q)));
        }
        sl.push(c * -wavenumber_squared(grid, p, q));
    }
    let ux = tr.inverse(sx)?;
    let uy = if grid.dims() == 2 { tr.inverse(sy)? } else { Vec::new() };
    let laplacian = tr.inverse(sl)?;
    Ok(Derivatives { ux, uy, laplacian })
}
