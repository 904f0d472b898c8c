//! Solvers for the shifted Neumann Laplacian `(-Δ_h + σ I)`.
//!
//! The operator is a symmetric M-matrix. Its banded Cholesky factor keeps
//! nonpositive off-diagonal entries, so forward and backward substitution
//! of a nonnegative right-hand side only ever add nonnegative terms and the
//! result is nonnegative in floating point as well.

use crate::grid::Grid;

/// Band storage budget (entries of the Cholesky factor) for the direct path.
pub const DIRECT_MAX_BAND_ENTRIES: usize = 1 << 24;
/// Cell-count ceiling for the direct path.
pub const DIRECT_MAX_CELLS: usize = 250_000;

#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    pub grid: Grid,
    pub shift: f64,
    /// 1 / h² per axis
    inv_h2: [f64; 2],
}

impl Stencil {
    pub fn new(grid: Grid, shift: f64) -> Stencil {
        let mut inv_h2 = [0.0; 2];
        for (a, h) in grid.spacing().iter().enumerate() {
            inv_h2[a] = 1.0 / (h * h);
        }
        Stencil { grid, shift, inv_h2 }
    }

    pub fn bandwidth(&self) -> usize {
        if self.grid.dim() == 1 {
            1
        } else {
            self.grid.nx()
        }
    }

    /// Row `k` as (diagonal, [(column, value)]) with only the strictly lower
    /// and upper neighbours listed.
    pub fn row(&self, k: usize) -> (f64, [(usize, f64); 4], usize) {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let (i, j) = (k % nx, k / nx);
        let mut diag = self.shift;
        let mut nb = [(0usize, 0.0f64); 4];
        let mut cnt = 0;
        let cx = self.inv_h2[0];
        if i > 0 {
            nb[cnt] = (k - 1, -cx);
            cnt += 1;
            diag += cx;
        }
        if i + 1 < nx {
            nb[cnt] = (k + 1, -cx);
            cnt += 1;
            diag += cx;
        }
        if g.dim() == 2 {
            let cy = self.inv_h2[1];
            if j > 0 {
                nb[cnt] = (k - nx, -cy);
                cnt += 1;
                diag += cy;
            }
            if j + 1 < ny {
                nb[cnt] = (k + nx, -cy);
                cnt += 1;
                diag += cy;
            }
        }
        (diag, nb, cnt)
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (k, yk) in y.iter_mut().enumerate() {
            let (d, nb, cnt) = self.row(k);
            let mut acc = d * x[k];
            for &(c, v) in &nb[..cnt] {
                acc += v * x[c];
            }
            *yk = acc;
        }
    }

    /// Verify the M-matrix sign pattern and strict diagonal dominance.
    /// Returns the smallest row surplus `diag - Σ|offdiag|`.
    pub fn certify_m_matrix(&self) -> Result<f64, String> {
        let mut min_surplus = f64::INFINITY;
        for k in 0..self.grid.len() {
            let (d, nb, cnt) = self.row(k);
            if !(d > 0.0) {
                return Err(format!("row {k}: diagonal {d} not positive"));
            }
            let mut off = 0.0;
            for &(_, v) in &nb[..cnt] {
                if v > 0.0 {
                    return Err(format!("row {k}: positive off-diagonal {v}"));
                }
                off += v.abs();
            }
            min_surplus = min_surplus.min(d - off);
        }
        if min_surplus > 0.0 {
            Ok(min_surplus)
        } else {
            Err(format!("not strictly diagonally dominant (surplus {min_surplus})"))
        }
    }
}

/// Lower-triangular band factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub(crate) struct BandedCholesky {
    n: usize,
    p: usize,
    /// row-major, `l[i * (p + 1) + (j + p - i)]` holds L[i][j] for i-p <= j <= i
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(stencil: &Stencil) -> Result<BandedCholesky, String> {
        let n = stencil.grid.len();
        let p = stencil.bandwidth();
        let w = p + 1;
        let mut l = vec![0.0; n * w];
        for k in 0..n {
            let (d, nb, cnt) = stencil.row(k);
            l[k * w + p] = d;
            for &(c, v) in &nb[..cnt] {
                if c < k {
                    l[k * w + (c + p - k)] = v;
                }
            }
        }
        for i in 0..n {
            let lo_i = i.saturating_sub(p);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(p));
                let mut sum = l[i * w + (j + p - i)];
                for k in lo..j {
                    sum -= l[i * w + (k + p - i)] * l[j * w + (k + p - j)];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return Err(format!("pivot {i} not positive ({sum})"));
                    }
                    l[i * w + p] = sum.sqrt();
                } else {
                    l[i * w + (j + p - i)] = sum / l[j * w + p];
                }
            }
        }
        Ok(BandedCholesky { n, p, l })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, p) = (self.n, self.p);
        let w = p + 1;
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(p)..i {
                s -= self.l[i * w + (k + p - i)] * x[k];
            }
            x[i] = s / self.l[i * w + p];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..(i + p + 1).min(n) {
                s -= self.l[k * w + (i + p - k)] * x[k];
            }
            x[i] = s / self.l[i * w + p];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CgFailure {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients; `x` holds the initial guess.
pub(crate) fn pcg(
    stencil: &Stencil,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize, CgFailure> {
    let n = b.len();
    let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let inv_diag: Vec<f64> = (0..n).map(|k| 1.0 / stencil.row(k).0).collect();
    let mut ax = vec![0.0; n];
    stencil.apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for it in 0..max_iter {
        if inf(&r) <= rel_tol * bnorm {
            return Ok(it);
        }
        stencil.apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    let rel = inf(&r) / bnorm;
    if rel <= rel_tol {
        Ok(max_iter)
    } else {
        Err(CgFailure {
            iterations: max_iter,
            relative_residual: rel,
        })
    }
}

pub(crate) fn direct_fits(stencil: &Stencil) -> bool {
    let n = stencil.grid.len();
    n <= DIRECT_MAX_CELLS && n.saturating_mul(stencil.bandwidth() + 1) <= DIRECT_MAX_BAND_ENTRIES
}
