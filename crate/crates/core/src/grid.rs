//! Periodic grids on `(0, 2L)^d` and the nodal fields that live on them.
//!
//! Nodes follow the 1-based convention `x_j = j h`, `j = 1..=J`, so the node at
//! `2L` stands in for the origin. Storage is 0-based: slot `i` holds node
//! `j = i + 1`. In two dimensions the layout is row-major with the `y` index
//! contiguous, i.e. slot `i * J + k` holds `u(x_{i+1}, y_{k+1})`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dims: usize,
    nodes: usize,
    half_period: f64,
    spacing: f64,
}

impl Grid {
    /// Builds the grid for `(0, 2L)^dims` with `nodes` points per dimension.
    pub fn new(dims: usize, nodes: usize, half_period: f64) -> Result<Self> {
        if dims != 1 && dims != 2 {
            return Err(Error::Config(format!("dims must be 1 or 2, got {dims}")));
        }
        if nodes < 4 {
            return Err(Error::Config(format!("J must be at least 4, got {nodes}")));
        }
        if nodes % 2 != 0 {
            return Err(Error::Config(format!("J must be even, got {nodes}")));
        }
        if !(half_period > 0.0) || !half_period.is_finite() {
            return Err(Error::Config(format!(
                "L must be positive and finite, got {half_period}"
            )));
        }
        Ok(Grid {
            dims,
            nodes,
            half_period,
            spacing: 2.0 * half_period / nodes as f64,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// `J`, the number of nodes per dimension.
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// `L`, half the period length.
    pub fn half_period(&self) -> f64 {
        self.half_period
    }

    /// `h = 2L / J`.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Total number of nodes, `J^dims`.
    pub fn len(&self) -> usize {
        self.nodes.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `|Ω| = (2L)^dims`.
    pub fn measure(&self) -> f64 {
        (2.0 * self.half_period).powi(self.dims as i32)
    }

    /// Cell volume `h^dims` used as quadrature weight.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dims as i32)
    }

    /// Coordinate of the node stored in slot `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.spacing
    }

    /// Wraps a signed index into `0..J`.
    #[inline]
    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.nodes as isize) as usize
    }

    /// Flat storage offset of `(i, k)`; `k` is ignored in one dimension.
    #[inline]
    pub fn offset(&self, i: usize, k: usize) -> usize {
        if self.dims == 1 {
            i
        } else {
            i * self.nodes + k
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Field {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Field {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Wraps raw nodal values, checking length and finiteness.
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Config(format!(
                "expected {} nodal values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "non-finite nodal value {} at slot {i}",
                values[i]
            )));
        }
        Ok(Field { grid, values })
    }

    pub(crate) fn from_values_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Periodic read at signed indices.
    #[inline]
    pub fn at(&self, i: isize, k: isize) -> f64 {
        let g = &self.grid;
        self.values[g.offset(g.wrap(i), g.wrap(k))]
    }

    pub fn scaled(&self, factor: f64) -> Field {
        Field::from_values_unchecked(self.grid, self.values.iter().map(|v| v * factor).collect())
    }

    /// Nodewise `self - other`; grids must match.
    pub fn difference(&self, other: &Field) -> Result<Field> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Field::from_values_unchecked(self.grid, values))
    }

    /// Cyclic shift by `(di, dk)` nodes: `out(i, k) = self(i - di, k - dk)`.
    pub fn shifted(&self, di: isize, dk: isize) -> Field {
        let g = self.grid;
        let n = g.nodes();
        let mut out = vec![0.0; g.len()];
        if g.dims() == 1 {
            for (i, slot) in out.iter_mut().enumerate() {
                *slot = self.at(i as isize - di, 0);
            }
        } else {
            for i in 0..n {
                for k in 0..n {
                    out[i * n + k] = self.at(i as isize - di, k as isize - dk);
                }
            }
        }
        Field::from_values_unchecked(g, out)
    }

    /// Restricts to a coarser nested grid with `coarse_nodes` points per
    /// dimension by index subsampling. Node `x_j` of the coarse grid coincides
    /// with node `x_{j r}` of this grid, `r = J / coarse_nodes`.
    pub fn restrict(&self, coarse_nodes: usize) -> Result<Field> {
        let g = self.grid;
        if coarse_nodes == 0 || g.nodes() % coarse_nodes != 0 {
            return Err(Error::Config(format!(
                "grids do not nest: J = {} is not a multiple of {coarse_nodes}",
                g.nodes()
            )));
        }
        let coarse = Grid::new(g.dims(), coarse_nodes, g.half_period())?;
        let r = g.nodes() / coarse_nodes;
        let fine_index = |i: usize| (i + 1) * r - 1;
        let mut out = Vec::with_capacity(coarse.len());
        if g.dims() == 1 {
            out.extend((0..coarse_nodes).map(|i| self.values[fine_index(i)]));
        } else {
            for i in 0..coarse_nodes {
                for k in 0..coarse_nodes {
                    out.push(self.values[g.offset(fine_index(i), fine_index(k))]);
                }
            }
        }
        Ok(Field::from_values_unchecked(coarse, out))
    }
}

/// Samples `f(x, y)` at every node. One-dimensional grids pass `y = 0`.
pub fn sample_function(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
    let n = grid.nodes();
    let mut values = Vec::with_capacity(grid.len());
    if grid.dims() == 1 {
        for i in 0..n {
            let v = f(grid.coord(i), 0.0);
            if !v.is_finite() {
                return Err(Error::Sampling { node: (i + 1, 0), value: v });
            }
            values.push(v);
        }
    } else {
        for i in 0..n {
            let x = grid.coord(i);
            for k in 0..n {
                let v = f(x, grid.coord(k));
                if !v.is_finite() {
                    return Err(Error::Sampling { node: (i + 1, k + 1), value: v });
                }
                values.push(v);
            }
        }
    }
    Ok(Field::from_values_unchecked(*grid, values))
}

/// `sqrt(h^d Σ u²)`, summed in ascending storage order.
pub fn discrete_l2_norm(field: &Field) -> f64 {
    let sum: f64 = field.values.iter().map(|v| v * v).sum();
    (field.grid.cell_volume() * sum).sqrt()
}

pub fn mean(field: &Field) -> f64 {
    field.values.iter().sum::<f64>() / field.values.len() as f64
}
