//! Energy, interface height and slope diagnostics.
//!
//! Derivatives here are spectral, not the solver's finite differences.

use crate::error::Result;
use crate::grid::{discrete_l2_norm, mean, Field};
use crate::spectral::{derivatives, Derivatives};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub energy: f64,
    pub roughness: f64,
    pub mean_u: f64,
    pub max_grad: f64,
}

fn grad_squared(d: &Derivatives, idx: usize) -> f64 {
    let ux = d.ux[idx];
    if d.uy.is_empty() {
        ux * ux
    } else {
        let uy = d.uy[idx];
        ux * ux + uy * uy
    }
}

fn density_from(d: &Derivatives, delta: f64) -> Vec<f64> {
    (0..d.ux.len())
        .map(|i| {
            let s = grad_squared(d, i) - 1.0;
            let lap = d.laplacian[i];
            0.25 * s * s + 0.5 * delta * lap * lap
        })
        .collect()
}

fn integrate(field: &Field, density: &[f64]) -> f64 {
    field.grid().cell_volume() * density.iter().sum::<f64>()
}

/// Nodal free-energy density `¼(|∇u|² - 1)² + (δ/2)(Δu)²`.
pub fn free_energy_density(field: &Field, delta: f64) -> Result<Field> {
    let d = derivatives(field)?;
    Field::from_values(*field.grid(), density_from(&d, delta))
}

/// `E(u) = h^d Σ [¼(|∇u|² - 1)² + (δ/2)(Δu)²]`.
pub fn energy(field: &Field, delta: f64) -> Result<f64> {
    let d = derivatives(field)?;
    Ok(integrate(field, &density_from(&d, delta)))
}

/// Interface height `sqrt(|Ω|⁻¹ ∫ u²)`.
pub fn roughness(field: &Field) -> f64 {
    discrete_l2_norm(field) / field.grid().measure().sqrt()
}

pub fn max_gradient(field: &Field) -> Result<f64> {
    let d = derivatives(field)?;
    Ok(max_grad_from(&d))
}

fn max_grad_from(d: &Derivatives) -> f64 {
    (0..d.ux.len())
        .map(|i| grad_squared(d, i))
        .fold(0.0, f64::max)
        .sqrt()
}

/// All diagnostics at time `t`, sharing one set of spectral derivatives.
pub fn record(field: &Field, t: f64, delta: f64) -> Result<DiagnosticsRecord> {
    let d = derivatives(field)?;
    Ok(DiagnosticsRecord {
        t,
        energy: integrate(field, &density_from(&d, delta)),
        roughness: roughness(field),
        mean_u: mean(field),
        max_grad: max_grad_from(&d),
    })
}
