//! Cell-centered rectangular meshes with homogeneous Neumann boundaries.
//!
//! Cells are indexed with the x axis running fastest: cell `(i, j)` lives at
//! `i + nx * j`. Faces normal to axis 0 are indexed `i + (nx + 1) * j` with
//! `i = 0..=nx`, faces normal to axis 1 are indexed `i + nx * j` with
//! `j = 0..=ny`. Boundary faces always carry zero, which is how the zero
//! normal derivative enters every operator in this module.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum number of cells along each axis.
pub const MIN_CELLS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("expected {expected} entries in `{what}`, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("length along axis {axis} must be positive and finite, got {value}")]
    BadLength { axis: usize, value: f64 },
    #[error("axis {axis} needs at least {MIN_CELLS} cells, got {value}")]
    TooFewCells { axis: usize, value: usize },
    #[error("field value at cell {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("boundary face {index} on axis {axis} carries nonzero flux {value}")]
    BoundaryFlux { axis: usize, index: usize, value: f64 },
    #[error("Hölder exponent must lie in (0, 1), got {0}")]
    BadTheta(f64),
    #[error("strides must be a nonempty list of positive offsets")]
    BadStrides,
}

/// A 1D interval or 2D rectangle split into equal cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lengths: [f64; 2],
    cells: [usize; 2],
    spacing: [f64; 2],
}

impl Grid {
    pub fn new(dim: usize, lengths: &[f64], cells: &[usize]) -> Result<Grid, GridError> {
        if dim != 1 && dim != 2 {
            return Err(GridError::BadDimension(dim));
        }
        if lengths.len() != dim {
            return Err(GridError::ShapeMismatch {
                what: "lengths",
                expected: dim,
                got: lengths.len(),
            });
        }
        if cells.len() != dim {
            return Err(GridError::ShapeMismatch {
                what: "cells",
                expected: dim,
                got: cells.len(),
            });
        }
        let mut l = [1.0; 2];
        let mut n = [1usize; 2];
        let mut h = [1.0; 2];
        for axis in 0..dim {
            let len = lengths[axis];
            if !(len.is_finite() && len > 0.0) {
                return Err(GridError::BadLength { axis, value: len });
            }
            if cells[axis] < MIN_CELLS {
                return Err(GridError::TooFewCells {
                    axis,
                    value: cells[axis],
                });
            }
            l[axis] = len;
            n[axis] = cells[axis];
            h[axis] = len / cells[axis] as f64;
        }
        Ok(Grid {
            dim,
            lengths: l,
            cells: n,
            spacing: h,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    /// Cells along axis 1; 1 for interval grids.
    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// |Ω|, the product of the axis lengths.
    pub fn volume(&self) -> f64 {
        self.lengths().iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.cells[0] * j
    }

    /// Cell center coordinates; the second entry is 0 on interval grids.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let i = idx % self.cells[0];
        let j = idx / self.cells[0];
        let x = (i as f64 + 0.5) * self.spacing[0];
        let y = if self.dim == 2 {
            (j as f64 + 0.5) * self.spacing[1]
        } else {
            0.0
        };
        [x, y]
    }

    /// Number of faces normal to `axis`, boundary faces included.
    pub fn face_count(&self, axis: usize) -> usize {
        match axis {
            0 => (self.cells[0] + 1) * self.cells[1],
            _ => self.cells[0] * (self.cells[1] + 1),
        }
    }

    pub(crate) fn x_face(&self, i: usize, j: usize) -> usize {
        i + (self.cells[0] + 1) * j
    }

    pub(crate) fn y_face(&self, i: usize, j: usize) -> usize {
        i + self.cells[0] * j
    }

    /// Whether face `idx` normal to `axis` lies on ∂Ω.
    pub fn is_boundary_face(&self, axis: usize, idx: usize) -> bool {
        if axis == 0 {
            let i = idx % (self.cells[0] + 1);
            i == 0 || i == self.cells[0]
        } else {
            let j = idx / self.cells[0];
            j == 0 || j == self.cells[1]
        }
    }

    /// Cells on either side of interior face `idx` normal to `axis`, as
    /// (lower, upper). Returns `None` for boundary faces.
    pub fn face_cells(&self, axis: usize, idx: usize) -> Option<(usize, usize)> {
        if self.is_boundary_face(axis, idx) {
            return None;
        }
        if axis == 0 {
            let stride = self.cells[0] + 1;
            let (i, j) = (idx % stride, idx / stride);
            Some((self.index(i - 1, j), self.index(i, j)))
        } else {
            let (i, j) = (idx % self.cells[0], idx / self.cells[0]);
            Some((self.index(i, j - 1), self.index(i, j)))
        }
    }
}

/// One finite value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<ScalarField, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::ShapeMismatch {
                what: "field values",
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { index, value });
        }
        Ok(ScalarField { grid, values })
    }

    /// Build a field from already-validated values; panics in debug builds
    /// if a value is not finite.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> ScalarField {
        debug_assert_eq!(values.len(), grid.len());
        debug_assert!(values.iter().all(|v| v.is_finite()), "non-finite field value");
        ScalarField { grid, values }
    }

    pub fn constant(grid: Grid, value: f64) -> ScalarField {
        assert!(value.is_finite(), "constant field value must be finite");
        ScalarField {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: Grid) -> ScalarField {
        ScalarField::constant(grid, 0.0)
    }

    /// Sample `f` at cell centers.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Result<ScalarField, GridError> {
        let values = (0..grid.len()).map(|k| f(grid.center(k))).collect();
        ScalarField::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ScalarField, GridError> {
        ScalarField::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Entrywise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField, GridError> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        ScalarField::new(self.grid, values)
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField, GridError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, alpha: f64) -> Result<ScalarField, GridError> {
        self.map(|v| alpha * v)
    }
}

/// Per-axis face values. Boundary faces are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    grid: Grid,
    axes: Vec<Vec<f64>>,
}

impl FaceField {
    pub fn zeros(grid: Grid) -> FaceField {
        let axes = (0..grid.dim()).map(|a| vec![0.0; grid.face_count(a)]).collect();
        FaceField { grid, axes }
    }

    /// Wrap per-axis face values. Boundary entries are not checked here;
    /// [`divergence_faces`] rejects nonzero ones.
    pub fn new(grid: Grid, axes: Vec<Vec<f64>>) -> Result<FaceField, GridError> {
        if axes.len() != grid.dim() {
            return Err(GridError::ShapeMismatch {
                what: "face axes",
                expected: grid.dim(),
                got: axes.len(),
            });
        }
        for (a, vals) in axes.iter().enumerate() {
            if vals.len() != grid.face_count(a) {
                return Err(GridError::ShapeMismatch {
                    what: "face values",
                    expected: grid.face_count(a),
                    got: vals.len(),
                });
            }
            if let Some((index, &value)) = vals.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(GridError::NonFinite { index, value });
            }
        }
        Ok(FaceField { grid, axes })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn axis(&self, axis: usize) -> &[f64] {
        &self.axes[axis]
    }

    pub(crate) fn axis_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.axes[axis]
    }

    pub fn max_abs(&self) -> f64 {
        self.axes.iter().flatten().fold(0.0, |m, v| f64::max(m, v.abs()))
    }
}

/// Shorthand for [`Grid::new`].
pub fn build_grid(dim: usize, lengths: &[f64], cells: &[usize]) -> Result<Grid, GridError> {
    Grid::new(dim, lengths, cells)
}

/// Midpoint quadrature over Ω.
pub fn integrate(field: &ScalarField) -> f64 {
    field.values.iter().sum::<f64>() * field.grid.cell_volume()
}

/// Two-point difference across each interior face; zero on ∂Ω.
pub fn gradient_faces(field: &ScalarField) -> FaceField {
    let g = field.grid;
    let f = &field.values;
    let mut out = FaceField::zeros(g);
    let (nx, ny) = (g.nx(), g.ny());
    let hx = g.spacing[0];
    {
        let fx = out.axis_mut(0);
        for j in 0..ny {
            for i in 1..nx {
                fx[g.x_face(i, j)] = (f[g.index(i, j)] - f[g.index(i - 1, j)]) / hx;
            }
        }
    }
    if g.dim() == 2 {
        let hy = g.spacing[1];
        let fy = out.axis_mut(1);
        for j in 1..ny {
            for i in 0..nx {
                fy[g.y_face(i, j)] = (f[g.index(i, j)] - f[g.index(i, j - 1)]) / hy;
            }
        }
    }
    out
}

fn divergence_unchecked(flux: &FaceField) -> Vec<f64> {
    let g = flux.grid;
    let (nx, ny) = (g.nx(), g.ny());
    let mut out = vec![0.0; g.len()];
    let fx = flux.axis(0);
    let hx = g.spacing[0];
    for j in 0..ny {
        for i in 0..nx {
            out[g.index(i, j)] = (fx[g.x_face(i + 1, j)] - fx[g.x_face(i, j)]) / hx;
        }
    }
    if g.dim() == 2 {
        let fy = flux.axis(1);
        let hy = g.spacing[1];
        for j in 0..ny {
            for i in 0..nx {
                out[g.index(i, j)] += (fy[g.y_face(i, j + 1)] - fy[g.y_face(i, j)]) / hy;
            }
        }
    }
    out
}

/// Per-cell net outward flux divided by spacing. Positive flux points along
/// the increasing axis direction.
pub fn divergence_faces(flux: &FaceField) -> Result<ScalarField, GridError> {
    let g = flux.grid;
    for axis in 0..g.dim() {
        for (index, &value) in flux.axis(axis).iter().enumerate() {
            if value != 0.0 && g.is_boundary_face(axis, index) {
                return Err(GridError::BoundaryFlux { axis, index, value });
            }
        }
    }
    ScalarField::new(g, divergence_unchecked(flux))
}

/// Δ_h with mirrored ghost cells: the composition of [`gradient_faces`] and
/// [`divergence_faces`], evaluated with identical arithmetic.
pub fn laplacian_neumann(field: &ScalarField) -> ScalarField {
    let flux = gradient_faces(field);
    ScalarField::from_raw(field.grid, divergence_unchecked(&flux))
}

/// Powers of two below the largest axis cell count, plus the full-width
/// offset `n - 1`.
pub fn default_strides(grid: &Grid) -> Vec<usize> {
    let n = grid.cells().iter().copied().max().unwrap_or(1);
    let mut strides = Vec::new();
    let mut s = 1;
    while s < n - 1 {
        strides.push(s);
        s *= 2;
    }
    strides.push(n - 1);
    strides
}

/// Lower estimate of the C^θ seminorm from axis-aligned cell pairs at the
/// given lattice offsets.
pub fn holder_seminorm(field: &ScalarField, theta: f64, strides: &[usize]) -> Result<f64, GridError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(GridError::BadTheta(theta));
    }
    if strides.is_empty() || strides.contains(&0) {
        return Err(GridError::BadStrides);
    }
    let g = field.grid;
    let f = &field.values;
    let (nx, ny) = (g.nx(), g.ny());
    let mut best: f64 = 0.0;
    for &s in strides {
        if s < nx {
            let denom = (s as f64 * g.spacing[0]).powf(theta);
            for j in 0..ny {
                for i in 0..nx - s {
                    let d = (f[g.index(i + s, j)] - f[g.index(i, j)]).abs();
                    best = best.max(d / denom);
                }
            }
        }
        if g.dim() == 2 && s < ny {
            let denom = (s as f64 * g.spacing[1]).powf(theta);
            for j in 0..ny - s {
                for i in 0..nx {
                    let d = (f[g.index(i, j + s)] - f[g.index(i, j)]).abs();
                    best = best.max(d / denom);
                }
            }
        }
    }
    Ok(best)
}
