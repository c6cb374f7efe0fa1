//! Fourth-order finite differences for the nonlinear flow `u_t = ∇·(|∇u|²∇u)`.
//!
//! At each node `(j, k)` the flux divergence is a centered fourth-order
//! difference of flux values taken at the four neighbouring points along each
//! axis. The slopes at those offset points are one-sided five-point formulas
//! for the derivative along the offset axis and centered four-point formulas
//! for the transverse derivative, giving a 25-point footprint in 2D.
//! Time integration uses SSP-RK3 with the step restricted by the
//! frozen-coefficient bound `dt ≤ 3h² / (16A)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Lower clamp on the frozen coefficient so flat fields do not divide by zero.
pub const A_FLOOR: f64 = 1e-12;
pub const DEFAULT_SAFETY: f64 = 0.9;
pub const DEFAULT_MAX_SUBSTEPS: usize = 10_000_000;

/// Offsets of the four flux sample points, in the order used by every
/// `[_; 4]` array in this module.
pub const OFFSETS: [isize; 4] = [2, 1, -1, -2];

/// One-sided slope numerators (over `12h`) for the sample at each offset in
/// [`OFFSETS`]; columns are nodes `-2..=2` along the same axis.
const BIASED: [[f64; 5]; 4] = [
    [3.0, -16.0, 36.0, -48.0, 25.0],
    [-1.0, 6.0, -18.0, 10.0, 3.0],
    [-3.0, -10.0, 18.0, -6.0, 1.0],
    [-25.0, 48.0, -36.0, 16.0, -3.0],
];

/// Centered fourth-order first-derivative numerators over nodes `-2..=2`.
const CENTERED: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];

/// `F(p, q) = (p² + q²) p`, `G(p, q) = (p² + q²) q`.
#[inline]
pub fn flux(p: f64, q: f64) -> (f64, f64) {
    let m = p * p + q * q;
    (m * p, m * q)
}

/// One-dimensional flux `p³`.
#[inline]
pub fn flux_1d(p: f64) -> f64 {
    p * p * p
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Slope {
    pub ux: f64,
    pub uy: f64,
}

impl Slope {
    #[inline]
    pub fn squared(&self) -> f64 {
        self.ux * self.ux + self.uy * self.uy
    }
}

/// Slopes at the eight offset points around one node.
///
/// `along_x[n]` is the slope at `(x_{j+OFFSETS[n]}, y_k)`, `along_y[n]` at
/// `(x_j, y_{k+OFFSETS[n]})`. In one dimension `along_y` is zero and every
/// `uy` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradientSamples {
    pub along_x: [Slope; 4],
    pub along_y: [Slope; 4],
}

/// 5×5 neighbourhood, `patch[a][b] = u(j + a - 2, k + b - 2)`.
pub type Patch = [[f64; 5]; 5];

#[inline]
fn dot5(c: &[f64; 5], v: [f64; 5]) -> f64 {
    c[0] * v[0] + c[1] * v[1] + c[2] * v[2] + c[3] * v[3] + c[4] * v[4]
}

/// Applies the ten slope formulas to a neighbourhood.
pub fn samples_from_patch(patch: &Patch, h: f64) -> GradientSamples {
    let d = 12.0 * h;
    let row = |a: usize| patch[a];
    let col = |b: usize| [patch[0][b], patch[1][b], patch[2][b], patch[3][b], patch[4][b]];
    let mut s = GradientSamples::default();
    for (n, off) in OFFSETS.iter().enumerate() {
        let o = (off + 2) as usize;
        s.along_x[n] = Slope {
            ux: dot5(&BIASED[n], col(2)) / d,
            uy: dot5(&CENTERED, row(o)) / d,
        };
        s.along_y[n] = Slope {
            ux: dot5(&CENTERED, col(o)) / d,
            uy: dot5(&BIASED[n], row(2)) / d,
        };
    }
    s
}

/// One-sided slopes at offsets `+2, +1, -1, -2` from a five-node line.
pub fn samples_from_line(line: &[f64; 5], h: f64) -> [f64; 4] {
    let d = 12.0 * h;
    std::array::from_fn(|n| dot5(&BIASED[n], *line) / d)
}

fn gather_patch(field: &Field, i: usize, k: usize) -> Patch {
    let (i, k) = (i as isize, k as isize);
    std::array::from_fn(|a| std::array::from_fn(|b| field.at(i + a as isize - 2, k + b as isize - 2)))
}

fn gather_line(field: &Field, i: usize) -> [f64; 5] {
    std::array::from_fn(|a| field.at(i as isize + a as isize - 2, 0))
}

/// Slopes around node `(j, k)` (0-based storage indices, read periodically).
pub fn gradient_samples(field: &Field, j: usize, k: usize) -> GradientSamples {
    let h = field.grid().spacing();
    if field.grid().dims() == 1 {
        let ux = samples_from_line(&gather_line(field, j), h);
        let mut s = GradientSamples::default();
        for n in 0..4 {
            s.along_x[n].ux = ux[n];
        }
        s
    } else {
        samples_from_patch(&gather_patch(field, j, k), h)
    }
}

/// Centered fourth-order difference of the four flux samples.
#[inline]
fn difference4(f: [f64; 4], h: f64) -> f64 {
    (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h)
}

/// Flux divergence at a node from its eight slope samples.
#[inline]
pub fn flux_divergence(s: &GradientSamples, h: f64) -> f64 {
    let fx = s.along_x.map(|sl| flux(sl.ux, sl.uy).0);
    let gy = s.along_y.map(|sl| flux(sl.ux, sl.uy).1);
    difference4(fx, h) + difference4(gy, h)
}

#[inline]
fn divergence_1d(ux: [f64; 4], h: f64) -> f64 {
    difference4(ux.map(flux_1d), h)
}

/// Periodic neighbour index tables `[i-2, i-1, i, i+1, i+2]` for every `i`.
fn neighbour_table(grid: &Grid) -> Vec<[usize; 5]> {
    (0..grid.nodes() as isize)
        .map(|i| std::array::from_fn(|a| grid.wrap(i + a as isize - 2)))
        .collect()
}

/// Copies `src` into `dst[2..n+2]` with two periodic ghost values per side.
fn pad_periodic(dst: &mut [f64], src: &[f64]) {
    let n = src.len();
    dst[2..n + 2].copy_from_slice(src);
    dst[..2].copy_from_slice(&src[n - 2..]);
    dst[n + 2..].copy_from_slice(&src[..2]);
}

/// Position of each entry of [`OFFSETS`] in a neighbour table row.
const OFFSET_SLOT: [usize; 4] = [4, 3, 1, 0];

/// Evaluates the flux divergence on one grid, reusing its buffers.
///
/// The transverse slopes at the offset points are centered differences at
/// grid nodes, so they are computed once per node and shared.
struct Kernel {
    grid: Grid,
    nb: Vec<[usize; 5]>,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl Kernel {
    fn new(grid: &Grid) -> Self {
        let len = if grid.dims() == 2 { grid.len() } else { 0 };
        Kernel {
            grid: *grid,
            nb: neighbour_table(grid),
            dx: vec![0.0; len],
            dy: vec![0.0; len],
        }
    }

    /// Writes the right-hand side into `out` and returns the frozen
    /// coefficient of `values`.
    fn eval(&mut self, values: &[f64], out: &mut [f64]) -> f64 {
        if self.grid.dims() == 1 {
            self.eval_1d(values, out)
        } else {
            self.eval_2d(values, out)
        }
    }

    fn eval_1d(&self, values: &[f64], out: &mut [f64]) -> f64 {
        let h = self.grid.spacing();
        let nb = &self.nb;
        out.par_iter_mut()
            .enumerate()
            .map(|(i, o)| {
                let ux = samples_from_line(&nb[i].map(|a| values[a]), h);
                *o = divergence_1d(ux, h);
                ux.iter().fold(0.0f64, |m, p| m.max(p * p))
            })
            .reduce(|| 0.0, f64::max)
    }

    fn eval_2d(&mut self, values: &[f64], out: &mut [f64]) -> f64 {
        let n = self.grid.nodes();
        let inv = 1.0 / (12.0 * self.grid.spacing());
        let nb = &self.nb;
        let rows_of = |i: usize| nb[i].map(|a| &values[a * n..(a + 1) * n]);

        self.dx
            .par_chunks_mut(n)
            .zip(self.dy.par_chunks_mut(n))
            .enumerate()
            .for_each_init(
                || vec![0.0; n + 4],
                |u_pad, (i, (dxr, dyr))| {
                    let r = rows_of(i);
                    pad_periodic(u_pad, r[2]);
                    for k in 0..n {
                        let col = [r[0][k], r[1][k], r[2][k], r[3][k], r[4][k]];
                        dxr[k] = dot5(&CENTERED, col) * inv;
                        let line: [f64; 5] = u_pad[k..k + 5].try_into().unwrap();
                        dyr[k] = dot5(&CENTERED, line) * inv;
                    }
                },
            );

        let (dx, dy) = (&self.dx, &self.dy);
        out.par_chunks_mut(n)
            .enumerate()
            .map_init(
                || (vec![0.0; n + 4], vec![0.0; n + 4]),
                |(u_pad, dx_pad), (i, out_row)| {
                    let r = rows_of(i);
                    pad_periodic(u_pad, r[2]);
                    pad_periodic(dx_pad, &dx[i * n..(i + 1) * n]);
                    let dy_at = OFFSET_SLOT.map(|m| &dy[nb[i][m] * n..(nb[i][m] + 1) * n]);
                    let mut a_max = 0.0f64;
                    for k in 0..n {
                        let col = [r[0][k], r[1][k], r[2][k], r[3][k], r[4][k]];
                        let line: [f64; 5] = u_pad[k..k + 5].try_into().unwrap();
                        let dx_win = &dx_pad[k..k + 5];
                        let mut fx = [0.0; 4];
                        let mut gy = [0.0; 4];
                        for m in 0..4 {
                            let (px, qx) = (dot5(&BIASED[m], col) * inv, dy_at[m][k]);
                            let (py, qy) = (dx_win[OFFSET_SLOT[m]], dot5(&BIASED[m], line) * inv);
                            let sx = px * px + qx * qx;
                            let sy = py * py + qy * qy;
                            fx[m] = sx * px;
                            gy[m] = sy * qy;
                            let s = if sx > sy { sx } else { sy };
                            if s > a_max {
                                a_max = s;
                            }
                        }
                        out_row[k] = ((-fx[0] + 8.0 * fx[1] - 8.0 * fx[2] + fx[3])
                            + (-gy[0] + 8.0 * gy[1] - 8.0 * gy[2] + gy[3]))
                            * inv;
                    }
                    a_max
                },
            )
            .reduce(|| 0.0, f64::max)
    }
}

/// Semi-discrete right-hand side of the nonlinear flow.
pub fn nonlinear_rhs(field: &Field) -> Field {
    let mut out = vec![0.0; field.grid().len()];
    Kernel::new(field.grid()).eval(field.values(), &mut out);
    Field::from_values_unchecked(*field.grid(), out)
}

/// Largest `|∇u|²` over all nodes and all eight offset samples.
pub fn frozen_coefficient_a(field: &Field) -> f64 {
    let mut out = vec![0.0; field.grid().len()];
    Kernel::new(field.grid()).eval(field.values(), &mut out)
}

/// `safety · 3h² / (16 max(A, A_FLOOR))`.
pub fn stable_dt(a: f64, h: f64, safety: f64) -> f64 {
    safety * 3.0 * h * h / (16.0 * a.max(A_FLOOR))
}

/// Amplification factor of the frozen-coefficient forward Euler scheme,
/// `ρ = 1 - (r/3)[(1 - cos θ₁)(7 - cos θ₁) + (1 - cos θ₂)(7 - cos θ₂)]`
/// with `r = Aτ/h²` and `θ = σh`.
pub fn amplification_symbol(r: f64, theta1: f64, theta2: f64) -> f64 {
    let g = |t: f64| {
        let c = t.cos();
        (1.0 - c) * (7.0 - c)
    };
    1.0 - r / 3.0 * (g(theta1) + g(theta2))
}

fn check_finite(values: &[f64], stage: u8) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(node) => Err(Error::BlowUp { stage, node }),
        None => Ok(()),
    }
}

/// One Shu–Osher SSP-RK3 step for `du/dt = rhs(u)`, with `rhs(u, out)` writing
/// into `out`.
pub fn ssp_rk3_step_with(
    u: &[f64],
    dt: f64,
    mut rhs: impl FnMut(&[f64], &mut [f64]),
) -> Result<Vec<f64>> {
    let mut r = vec![0.0; u.len()];
    rhs(u, &mut r);
    rk3_from_first_stage(u, dt, r, rhs)
}

/// Completes an SSP-RK3 step given `r = rhs(u)`.
fn rk3_from_first_stage(
    u: &[f64],
    dt: f64,
    mut r: Vec<f64>,
    mut rhs: impl FnMut(&[f64], &mut [f64]),
) -> Result<Vec<f64>> {
    let s1: Vec<f64> = u.iter().zip(&r).map(|(u, r)| u + dt * r).collect();
    check_finite(&s1, 1)?;

    rhs(&s1, &mut r);
    let s2: Vec<f64> = u
        .iter()
        .zip(&s1)
        .zip(&r)
        .map(|((u, s), r)| 0.75 * u + 0.25 * (s + dt * r))
        .collect();
    check_finite(&s2, 2)?;

    rhs(&s2, &mut r);
    let next: Vec<f64> = u
        .iter()
        .zip(&s2)
        .zip(&r)
        .map(|((u, s), r)| u / 3.0 + 2.0 / 3.0 * (s + dt * r))
        .collect();
    check_finite(&next, 3)?;
    Ok(next)
}

/// SSP-RK3 step of the nonlinear semi-discrete system.
pub fn ssp_rk3_step(field: &Field, dt: f64) -> Result<Field> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("RK step must be positive, got {dt}")));
    }
    let grid = *field.grid();
    let mut kernel = Kernel::new(&grid);
    let next = ssp_rk3_step_with(field.values(), dt, |v, out| {
        kernel.eval(v, out);
    })?;
    Ok(Field::from_values_unchecked(grid, next))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubcycleReport {
    pub requested_time: f64,
    pub steps_taken: usize,
    /// Largest RK step used.
    pub dt_used: f64,
    pub a_max_seen: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubcycleOptions {
    pub safety: f64,
    pub max_steps: usize,
}

impl Default for SubcycleOptions {
    fn default() -> Self {
        SubcycleOptions {
            safety: DEFAULT_SAFETY,
            max_steps: DEFAULT_MAX_SUBSTEPS,
        }
    }
}

/// Advances the nonlinear flow by exactly `tau` using as many SSP-RK3 steps
/// as the stability bound requires.
pub fn nonlinear_substep(field: &Field, tau: f64, safety: f64) -> Result<(Field, SubcycleReport)> {
    nonlinear_substep_with(
        field,
        tau,
        &SubcycleOptions {
            safety,
            ..Default::default()
        },
    )
}

pub fn nonlinear_substep_with(
    field: &Field,
    tau: f64,
    opts: &SubcycleOptions,
) -> Result<(Field, SubcycleReport)> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("substep time must be positive, got {tau}")));
    }
    if !(opts.safety > 0.0 && opts.safety <= 1.0) {
        return Err(Error::Config(format!(
            "safety factor must lie in (0, 1], got {}",
            opts.safety
        )));
    }
    let grid = *field.grid();
    let h = grid.spacing();
    let mut kernel = Kernel::new(&grid);
    let mut u = field.values().to_vec();
    let mut report = SubcycleReport {
        requested_time: tau,
        steps_taken: 0,
        dt_used: 0.0,
        a_max_seen: 0.0,
    };
    let mut elapsed = 0.0;
    loop {
        if report.steps_taken >= opts.max_steps {
            return Err(Error::Runaway { limit: opts.max_steps });
        }
        let remaining = tau - elapsed;
        // A is refreshed before every RK step, alongside the first stage.
        let mut r = vec![0.0; u.len()];
        let a = kernel.eval(&u, &mut r);
        report.a_max_seen = report.a_max_seen.max(a);
        let dt_stable = stable_dt(a, h, opts.safety);
        let (dt, last) = if dt_stable >= remaining {
            (remaining, true)
        } else {
            (dt_stable, false)
        };
        u = rk3_from_first_stage(&u, dt, r, |v, out| {
            kernel.eval(v, out);
        })?;
        report.steps_taken += 1;
        report.dt_used = report.dt_used.max(dt);
        if last {
            break;
        }
        elapsed += dt;
    }
    Ok((Field::from_values_unchecked(grid, u), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{discrete_l2_norm, mean, sample_function};
    use std::f64::consts::PI;

    #[test]
    fn flux_values() {
        assert_eq!(flux(0.0, 0.0), (0.0, 0.0));
        assert_eq!(flux(1.0, 0.0), (1.0, 0.0));
        assert_eq!(flux(1.0, 2.0), (5.0, 10.0));
        assert_eq!(flux_1d(-2.0), -8.0);
    }

    #[test]
    fn one_sided_slope_examples() {
        let h = 0.37;
        // u = x with x_j = 0.
        let lin = [-2.0 * h, -h, 0.0, h, 2.0 * h];
        let s = samples_from_line(&lin, h);
        for v in s {
            assert!((v - 1.0).abs() < 1e-14);
        }
        // u = x²: slope at x_{j+2} is 2·(2h) = 4h.
        let quad = lin.map(|x| x * x);
        assert!((samples_from_line(&quad, h)[0] - 4.0 * h).abs() < 1e-14);
    }

    /// Every formula against exact derivatives of `x^a y^b`, `a + b ≤ 4`.
    fn check_monomials(h: f64, x0: f64, y0: f64, tol: f64) {
        for a in 0..=4i32 {
            for b in 0..=(4 - a) {
                let u = |x: f64, y: f64| x.powi(a) * y.powi(b);
                let dx = |x: f64, y: f64| {
                    if a == 0 { 0.0 } else { a as f64 * x.powi(a - 1) * y.powi(b) }
                };
                let dy = |x: f64, y: f64| {
                    if b == 0 { 0.0 } else { b as f64 * x.powi(a) * y.powi(b - 1) }
                };
                let patch: Patch = std::array::from_fn(|i| {
                    std::array::from_fn(|k| {
                        u(x0 + (i as f64 - 2.0) * h, y0 + (k as f64 - 2.0) * h)
                    })
                });
                let s = samples_from_patch(&patch, h);
                let scale = 1.0 + (x0.abs() + y0.abs() + 2.0 * h).powi(4) / h;
                for (n, off) in OFFSETS.iter().enumerate() {
                    let xo = x0 + *off as f64 * h;
                    let yo = y0 + *off as f64 * h;
                    let ex = s.along_x[n];
                    let ey = s.along_y[n];
                    assert!((ex.ux - dx(xo, y0)).abs() <= tol * scale, "a={a} b={b} n={n} x.ux");
                    assert!((ex.uy - dy(xo, y0)).abs() <= tol * scale, "a={a} b={b} n={n} x.uy");
                    assert!((ey.ux - dx(x0, yo)).abs() <= tol * scale, "a={a} b={b} n={n} y.ux");
                    assert!((ey.uy - dy(x0, yo)).abs() <= tol * scale, "a={a} b={b} n={n} y.uy");
                }
            }
        }
    }

    #[test]
    fn stencils_exact_on_quartics() {
        check_monomials(0.1, 0.0, 0.0, 1e-12);
        check_monomials(0.1, 0.3, -0.2, 1e-12);
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn stencils_exact_for_random_spacing(h in 1e-3f64..1.0, x0 in -1.0f64..1.0, y0 in -1.0f64..1.0) {
            check_monomials(h, x0, y0, 1e-11);
        }

        #[test]
        fn rhs_is_odd_and_translation_equivariant(seed in 0u64..500, di in -5isize..5, dk in -5isize..5) {
            let g = Grid::new(2, 12, 1.7).unwrap();
            let s = seed as f64;
            let f = sample_function(&g, |x, y| (x * 2.0 * PI / 3.4 + s).sin() * 0.3 + (y * PI / 1.7 - s).cos() * (x * PI / 1.7).sin()).unwrap();
            let r = nonlinear_rhs(&f);
            prop_assert_eq!(nonlinear_rhs(&f.scaled(-1.0)), r.scaled(-1.0));
            prop_assert_eq!(nonlinear_rhs(&f.shifted(di, dk)), r.shifted(di, dk));
        }
    }

    #[test]
    fn gradient_samples_match_patch_kernel() {
        let g = Grid::new(2, 8, PI).unwrap();
        let f = sample_function(&g, |x, y| (x + 2.0 * y).sin()).unwrap();
        // Node in the corner exercises the periodic seam.
        let s = gradient_samples(&f, 0, 7);
        let patch: Patch = std::array::from_fn(|a| {
            std::array::from_fn(|b| f.at(a as isize - 2, 7 + b as isize - 2))
        });
        assert_eq!(s, samples_from_patch(&patch, g.spacing()));
    }

    #[test]
    fn grid_kernel_matches_per_node_formulas() {
        for (dims, j) in [(2, 12), (2, 16), (1, 20)] {
            let g = Grid::new(dims, j, 1.7).unwrap();
            let f = sample_function(&g, |x, y| {
                (1.3 * x).sin() * (2.0 * y + 0.4).cos() + 0.3 * (3.0 * x - y).cos() + 0.1 * x.cos()
            })
            .unwrap();
            let h = g.spacing();
            let rhs = nonlinear_rhs(&f);
            let mut a_oracle = 0.0f64;
            let ny = if dims == 2 { j } else { 1 };
            for i in 0..j {
                for k in 0..ny {
                    let s = gradient_samples(&f, i, k);
                    let expect = if dims == 2 {
                        flux_divergence(&s, h)
                    } else {
                        divergence_1d(s.along_x.map(|sl| sl.ux), h)
                    };
                    let got = rhs.values()[i * ny + k];
                    assert!((got - expect).abs() <= 1e-12 * (1.0 + expect.abs()), "{dims} ({i},{k})");
                    for sl in s.along_x.iter().chain(&s.along_y) {
                        a_oracle = a_oracle.max(sl.squared());
                    }
                }
            }
            let a = frozen_coefficient_a(&f);
            assert!((a - a_oracle).abs() <= 1e-12 * a_oracle);
        }
    }

    #[test]
    fn constant_field_has_zero_rhs() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let c = Field::constant(g, 2.5);
        assert!(nonlinear_rhs(&c).values().iter().all(|&v| v == 0.0));
        assert_eq!(frozen_coefficient_a(&c), 0.0);
        let (out, rep) = nonlinear_substep(&c, 0.1, 0.9).unwrap();
        assert_eq!(out, c);
        assert_eq!(rep.steps_taken, 1);
        assert_eq!(ssp_rk3_step(&c, 0.3).unwrap(), c);
    }

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn rhs_fourth_order_1d() {
        let mut errs = Vec::new();
        for j in [32, 64] {
            let g = Grid::new(1, j, PI).unwrap();
            let f = sample_function(&g, |x, _| x.sin()).unwrap();
            let exact = sample_function(&g, |x, _| -3.0 * x.cos().powi(2) * x.sin()).unwrap();
            errs.push(max_err(nonlinear_rhs(&f).values(), exact.values()));
        }
        assert!(errs[0] / errs[1] >= 14.0, "{errs:?}");
    }

    /// ∇·(|∇u|²∇u) for u = sin x sin y.
    fn div_flux_sinsin(x: f64, y: f64) -> f64 {
        let (sx, cx, sy, cy) = (x.sin(), x.cos(), y.sin(), y.cos());
        let g = cx * cx * sy * sy + sx * sx * cy * cy;
        let gx = 2.0 * sx * cx * (cy * cy - sy * sy);
        let gy = 2.0 * sy * cy * (cx * cx - sx * sx);
        gx * cx * sy + gy * sx * cy + g * (-2.0 * sx * sy)
    }

    #[test]
    fn analytic_divergence_matches_finite_difference_oracle() {
        // Independent check of the closed form: central differences of the flux.
        let flux_at = |x: f64, y: f64| {
            let (ux, uy) = (x.cos() * y.sin(), x.sin() * y.cos());
            flux(ux, uy)
        };
        let e = 1e-4;
        for &(x, y) in &[(0.3, 1.1), (2.0, -0.7), (4.1, 5.5)] {
            let fd = (flux_at(x + e, y).0 - flux_at(x - e, y).0) / (2.0 * e)
                + (flux_at(x, y + e).1 - flux_at(x, y - e).1) / (2.0 * e);
            assert!((fd - div_flux_sinsin(x, y)).abs() < 1e-7);
        }
    }

    #[test]
    fn rhs_fourth_order_2d() {
        let mut errs = Vec::new();
        for j in [32, 64, 128] {
            let g = Grid::new(2, j, PI).unwrap();
            let f = sample_function(&g, |x, y| x.sin() * y.sin()).unwrap();
            let exact = sample_function(&g, div_flux_sinsin).unwrap();
            errs.push(max_err(nonlinear_rhs(&f).values(), exact.values()));
        }
        assert!(errs[0] / errs[1] >= 14.0, "{errs:?}");
        assert!(errs[1] / errs[2] >= 14.0, "{errs:?}");
    }

    #[test]
    fn rhs_sums_to_zero() {
        let g = Grid::new(2, 16, PI).unwrap();
        let f = sample_function(&g, |x, y| (3.0 * x).sin() * (2.0 * y).cos() + 0.4 * (x - y).cos()).unwrap();
        let r = nonlinear_rhs(&f);
        let scale = r.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(mean(&r).abs() < 1e-14 * scale.max(1.0));
    }

    #[test]
    fn frozen_coefficient_limits() {
        let g = Grid::new(1, 64, PI).unwrap();
        let f = sample_function(&g, |x, _| x.sin()).unwrap();
        let a = frozen_coefficient_a(&f);
        assert!((a - 1.0).abs() < 0.02, "{a}");
        let a2 = frozen_coefficient_a(&f.scaled(2.0));
        assert!((a2 - 4.0 * a).abs() < 1e-12);
        assert_eq!(frozen_coefficient_a(&Field::zeros(g)), 0.0);
    }

    #[test]
    fn stable_dt_values() {
        assert!((stable_dt(1.0, 0.1, 1.0) - 1.875e-3).abs() < 1e-15);
        assert!(stable_dt(0.0, 0.1, 1.0) > 1e8);
        let ratio = stable_dt(2.0, 0.2, 0.9) / stable_dt(2.0, 0.1, 0.9);
        assert!((ratio - 4.0).abs() < 1e-12);
    }

    #[test]
    fn symbol_boundary() {
        let r = 3.0 / 16.0;
        assert!((amplification_symbol(r, PI, PI) + 1.0).abs() < 1e-15);
        assert_eq!(amplification_symbol(r, 0.0, 0.0), 1.0);
        assert!(amplification_symbol(0.2, PI, PI) < -1.0);
    }

    #[test]
    fn rk3_matches_cubic_taylor_on_linear_operator() {
        let a = -1.7;
        let dt = 0.23;
        let u = vec![1.0, -0.5, 2.0];
        let out = ssp_rk3_step_with(&u, dt, |v, o| {
            for (oi, vi) in o.iter_mut().zip(v) {
                *oi = a * vi;
            }
        })
        .unwrap();
        let z: f64 = a * dt;
        let amp = 1.0 + z + z * z / 2.0 + z * z * z / 6.0;
        for (o, v) in out.iter().zip(&u) {
            assert!((o - amp * v).abs() < 1e-15);
        }
    }

    #[test]
    fn rk3_local_error_is_fourth_order() {
        let g = Grid::new(1, 32, PI).unwrap();
        let f = sample_function(&g, |x, _| 0.1 * x.sin()).unwrap();
        let mut diffs = Vec::new();
        for dt in [0.2, 0.1, 0.05] {
            let two = ssp_rk3_step(&ssp_rk3_step(&f, dt).unwrap(), dt).unwrap();
            let one = ssp_rk3_step(&f, 2.0 * dt).unwrap();
            diffs.push(discrete_l2_norm(&two.difference(&one).unwrap()));
        }
        for w in diffs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((12.0..20.0).contains(&ratio), "{diffs:?}");
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let err = ssp_rk3_step_with(&[1.0, 2.0], 1.0, |v, o| {
            o[0] = 0.0;
            o[1] = if v[1] > 1.0 { f64::INFINITY } else { 0.0 };
        });
        assert!(matches!(err, Err(Error::BlowUp { stage: 1, node: 1 })));
    }

    #[test]
    fn subcycling_lands_on_tau() {
        let g = Grid::new(2, 32, PI).unwrap();
        let f = sample_function(&g, |x, y| 0.5 * (x.sin() * (2.0 * y).sin())).unwrap();
        let tau = 0.05;
        let (_, rep) = nonlinear_substep(&f, tau, 0.9).unwrap();
        assert!(rep.steps_taken > 1);
        assert!(rep.steps_taken as f64 * rep.dt_used >= tau);

        // Tiny tau: one step of exactly tau.
        let (u1, rep) = nonlinear_substep(&f, 1e-6, 0.9).unwrap();
        assert_eq!(rep.steps_taken, 1);
        assert_eq!(rep.dt_used, 1e-6);
        assert_eq!(u1, ssp_rk3_step(&f, 1e-6).unwrap());

        let err = nonlinear_substep_with(&f, tau, &SubcycleOptions { safety: 0.9, max_steps: 2 });
        assert!(matches!(err, Err(Error::Runaway { limit: 2 })));
        assert!(nonlinear_substep(&f, 0.0, 0.9).is_err());
        assert!(nonlinear_substep(&f, 0.1, 1.5).is_err());
    }

    #[test]
    fn substep_conserves_mean() {
        let g = Grid::new(2, 32, PI).unwrap();
        let f = sample_function(&g, |x, y| 0.3 + 0.4 * (x.sin() * (2.0 * y).cos() + (x + y).cos())).unwrap();
        let (out, _) = nonlinear_substep(&f, 0.1, 0.9).unwrap();
        assert!((mean(&out) - mean(&f)).abs() < 1e-12);
    }
}
