//! Unilateral incompressibility: sparse assembly of the density transport
//! operator, the per-step linear complementarity problem and its projected
//! Gauss-Seidel solution, plus the pressure feedback into velocities.
//!
//! Flat cell index is `k = i + j·nx`, so operators acting along x are
//! `I_ny ⊗ A_nx` and those acting along y are `A_ny ⊗ I_nx`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{cutoff, diff_x, diff_y, divergence_central, gradient_central, ScalarField, VectorField};
use crate::geom::Vec2;
use crate::scene::Grid;

/// Compressed sparse row matrix with sorted columns and no stored zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            rows[r].push((c, v));
        }
        Self::from_rows(ncols, rows)
    }

    fn from_rows(ncols: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut m = CsrMatrix::zeros(rows.len(), ncols);
        for (r, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    m.col_idx.push(c);
                    m.values.push(v);
                }
            }
            m.row_ptr[r + 1] = m.col_idx.len();
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[s.clone()].iter().copied().zip(self.values[s].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let s = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[s.clone()].binary_search(&c) {
            Ok(pos) => self.values[s.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.ncols];
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                rows[c].push((r, v));
            }
        }
        Self::from_rows(self.nrows, rows)
    }

    pub fn scale(&self, s: f64) -> CsrMatrix {
        let rows = (0..self.nrows).map(|r| self.row(r).map(|(c, v)| (c, v * s)).collect()).collect();
        Self::from_rows(self.ncols, rows)
    }

    /// `diag(d)·self`.
    pub fn scale_rows(&self, d: &[f64]) -> CsrMatrix {
        assert_eq!(d.len(), self.nrows);
        let rows = (0..self.nrows).map(|r| self.row(r).map(|(c, v)| (c, v * d[r])).collect()).collect();
        Self::from_rows(self.ncols, rows)
    }

    pub fn add(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let rows = (0..self.nrows).map(|r| self.row(r).chain(other.row(r)).collect()).collect();
        Self::from_rows(self.ncols, rows)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        d
    }

    pub fn from_dense(d: &[Vec<f64>]) -> CsrMatrix {
        let ncols = d.first().map_or(0, Vec::len);
        let rows = d.iter().map(|row| row.iter().copied().enumerate().collect()).collect();
        Self::from_rows(ncols, rows)
    }

    /// Replaces row `r` by the unit row `e_r`.
    pub fn set_identity_row(&mut self, r: usize) {
        let mut rows: Vec<Vec<(usize, f64)>> = (0..self.nrows).map(|k| self.row(k).collect()).collect();
        rows[r] = vec![(r, 1.0)];
        *self = Self::from_rows(self.ncols, rows);
    }

    fn replace_rows_with_identity(&self, which: &[bool]) -> CsrMatrix {
        let rows = (0..self.nrows)
            .map(|r| if which[r] { vec![(r, 1.0)] } else { self.row(r).collect() })
            .collect();
        Self::from_rows(self.ncols, rows)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tridiagonal {
    /// Skew: `+1` above the diagonal, `−1` below.
    P,
    /// `−2` on the diagonal, `+1` beside it.
    Q,
}

pub fn assemble_tridiagonal(kind: Tridiagonal, m: usize) -> CsrMatrix {
    let mut t = Vec::with_capacity(3 * m);
    for i in 0..m {
        match kind {
            Tridiagonal::P => {
                if i > 0 {
                    t.push((i, i - 1, -1.0));
                }
                if i + 1 < m {
                    t.push((i, i + 1, 1.0));
                }
            }
            Tridiagonal::Q => {
                if i > 0 {
                    t.push((i, i - 1, 1.0));
                }
                t.push((i, i, -2.0));
                if i + 1 < m {
                    t.push((i, i + 1, 1.0));
                }
            }
        }
    }
    CsrMatrix::from_triplets(m, m, &t)
}

/// `A ⊗ B`: entry `a_ij·b_kl` at `(i·p + k, j·q + l)` for `B` of shape `p×q`.
pub fn kronecker(a: &CsrMatrix, b: &CsrMatrix) -> CsrMatrix {
    let (p, q) = (b.nrows, b.ncols);
    let mut m = CsrMatrix::zeros(a.nrows * p, a.ncols * q);
    for i in 0..a.nrows {
        for k in 0..p {
            for (j, av) in a.row(i) {
                for (l, bv) in b.row(k) {
                    m.col_idx.push(j * q + l);
                    m.values.push(av * bv);
                }
            }
            m.row_ptr[i * p + k + 1] = m.col_idx.len();
        }
    }
    m
}

/// Operators of the scheme: `(X_P, Y_P, X_Q, Y_Q)`.
fn difference_operators(g: &Grid) -> (CsrMatrix, CsrMatrix, CsrMatrix, CsrMatrix) {
    let ix = CsrMatrix::identity(g.nx);
    let iy = CsrMatrix::identity(g.ny);
    (
        kronecker(&iy, &assemble_tridiagonal(Tridiagonal::P, g.nx)),
        kronecker(&assemble_tridiagonal(Tridiagonal::P, g.ny), &ix),
        kronecker(&iy, &assemble_tridiagonal(Tridiagonal::Q, g.nx)),
        kronecker(&assemble_tridiagonal(Tridiagonal::Q, g.ny), &ix),
    )
}

/// Matrix `C(ρ)` with `C(ρ)p ≈ ∇·(ρ∇p)`:
/// `diag(D_xρ)X_P/(4Δx²) + diag(D_yρ)Y_P/(4Δy²) + diag(ρ)X_Q/Δx² + diag(ρ)Y_Q/Δy²`.
pub fn assemble_c(rho: &ScalarField) -> CsrMatrix {
    let g = rho.grid;
    let (xp, yp, xq, yq) = difference_operators(&g);
    let dxr: Vec<f64> = diff_x(rho).values.iter().map(|v| v / (4.0 * g.dx * g.dx)).collect();
    let dyr: Vec<f64> = diff_y(rho).values.iter().map(|v| v / (4.0 * g.dy * g.dy)).collect();
    let rx: Vec<f64> = rho.values.iter().map(|v| v / (g.dx * g.dx)).collect();
    let ry: Vec<f64> = rho.values.iter().map(|v| v / (g.dy * g.dy)).collect();
    xp.scale_rows(&dxr)
        .add(&yp.scale_rows(&dyr))
        .add(&xq.scale_rows(&rx))
        .add(&yq.scale_rows(&ry))
}

/// Advective flux term `b = −∇·(ρv)` by central differences.
pub fn assemble_b(rho: &ScalarField, v: &VectorField) -> Vec<f64> {
    let flux = VectorField {
        x: rho.zip_map(&v.x, |r, u| r * u),
        y: rho.zip_map(&v.y, |r, u| r * u),
    };
    divergence_central(&flux).values.into_iter().map(|d| -d).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PressureParams {
    pub rho_max: f64,
    /// Dirichlet pressure on obstacle boundary cells.
    pub p0: f64,
    /// Density shift applied inside `M` only.
    pub eps_rho: f64,
    /// PGS stopping tolerance.
    pub tol: f64,
    /// PGS sweep cap; `None` means `10·n`.
    pub max_iter: Option<usize>,
    pub v_max: f64,
}

impl Default for PressureParams {
    fn default() -> Self {
        PressureParams { rho_max: 2.0, p0: 1.0, eps_rho: 0.01, tol: 1e-6, max_iter: None, v_max: 1.44 }
    }
}

impl PressureParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.rho_max, self.p0, self.eps_rho, self.tol, self.v_max];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.max_iter == Some(0) {
            return Err(Error::InvalidArgument(format!("pressure parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LcpProblem {
    pub m: CsrMatrix,
    pub q: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LcpSolution {
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub fb_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Cells of `mask` that touch a free cell through an edge.
pub fn obstacle_boundary_cells(grid: &Grid, mask: &[bool]) -> Vec<bool> {
    (0..grid.len())
        .map(|k| {
            if !mask[k] {
                return false;
            }
            let (i, j) = grid.unflatten(k);
            [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|&(di, dj)| grid.offset(i, j, di, dj).is_some_and(|(a, b)| !mask[grid.flat(a, b)]))
        })
        .collect()
}

/// LCP for the pressure `z` with slack `w = ρ_max − ρ^{n+1}`, where
/// `ρ^{n+1} = ρⁿ + (C(ρⁿ + ε_ρ) z + b(ρⁿ, vⁿ))Δt`: `M = −C(ρⁿ + ε_ρ)Δt`,
/// `q = ρ_max − ρⁿ − bΔt`. Obstacle cells get identity rows, pinning
/// boundary cells to `z = p0` and interior ones to `z = 0`.
pub fn build_lcp(
    rho: &ScalarField,
    v: &VectorField,
    mask: Option<&[bool]>,
    params: &PressureParams,
    dt: f64,
) -> Result<LcpProblem> {
    params.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let shifted = rho.map(|r| r + params.eps_rho);
    let mut m = assemble_c(&shifted).scale(-dt);
    let b = assemble_b(rho, v);
    let mut q: Vec<f64> = rho.values.iter().zip(&b).map(|(r, bk)| params.rho_max - r - bk * dt).collect();
    if let Some(mask) = mask {
        let boundary = obstacle_boundary_cells(&rho.grid, mask);
        m = m.replace_rows_with_identity(mask);
        for k in 0..q.len() {
            if mask[k] {
                q[k] = if boundary[k] { -params.p0 } else { 0.0 };
            }
        }
    }
    Ok(LcpProblem { m, q })
}

/// One explicit step of the transport scheme: `ρ + (C(ρ_M) z + b)Δt`.
pub fn advance_density(rho: &ScalarField, rho_in_c: &ScalarField, v: &VectorField, z: &[f64], dt: f64) -> ScalarField {
    let cz = assemble_c(rho_in_c).matvec(z);
    let b = assemble_b(rho, v);
    let values = rho.values.iter().zip(cz.iter().zip(&b)).map(|(r, (c, bk))| r + (c + bk) * dt).collect();
    ScalarField::from_values(rho.grid, values)
}

fn complementarity_met(w: &[f64], z: &[f64], eps: f64) -> bool {
    w.iter().all(|&x| x >= -eps) && w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>().abs() <= eps
}

/// Projected Gauss-Seidel in ascending index order, starting from `z0`
/// (zero when `None`), until `w ≥ −ε` and `|⟨w, z⟩| ≤ ε` or `n_max` sweeps.
/// Without convergence the iterate with the smallest Fischer-Burmeister
/// residual is returned; a sweep producing non-finite values ends the solve.
pub fn pgs_solve(prob: &LcpProblem, z0: Option<&[f64]>, eps: f64, n_max: usize) -> Result<LcpSolution> {
    let n = prob.q.len();
    let diag = prob.m.diagonal();
    if let Some(i) = diag.iter().position(|&d| d == 0.0) {
        return Err(Error::ZeroDiagonal(i));
    }
    let mut z: Vec<f64> = match z0 {
        Some(z0) if z0.len() == n => z0.iter().map(|&v| v.max(0.0)).collect(),
        _ => vec![0.0; n],
    };
    let residual = |z: &[f64]| -> Vec<f64> { prob.m.matvec(z).iter().zip(&prob.q).map(|(a, b)| a + b).collect() };
    let mut w = residual(&z);
    let mut best = (fb_residual(&w, &z), z.clone(), w.clone());
    let mut k = 0;
    while !complementarity_met(&w, &z, eps) && k < n_max {
        k += 1;
        for i in 0..n {
            let dot: f64 = prob.m.row(i).map(|(c, v)| v * z[c]).sum();
            let r = -prob.q[i] - dot + diag[i] * z[i];
            z[i] = (r / diag[i]).max(0.0);
        }
        if !z.iter().all(|v| v.is_finite()) {
            break;
        }
        w = residual(&z);
        let fb = fb_residual(&w, &z);
        if fb < best.0 {
            best = (fb, z.clone(), w.clone());
        }
    }
    if z.iter().all(|v| v.is_finite()) {
        let converged = complementarity_met(&w, &z, eps);
        return Ok(LcpSolution { fb_residual: fb_residual(&w, &z), z, w, iterations: k, converged });
    }
    // Diverged: the last finite iterate with the smallest residual.
    let (fb, z, w) = best;
    Ok(LcpSolution { fb_residual: fb, z, w, iterations: k, converged: false })
}

/// Default sweep cap `10·n`.
pub fn default_max_iter(n: usize) -> usize {
    10 * n.max(1)
}

/// `‖x + y − √(x² + y²)‖₂` over the pairs `(w_i, z_i)`.
pub fn fb_residual(w: &[f64], z: &[f64]) -> f64 {
    w.iter()
        .zip(z)
        .map(|(&x, &y)| {
            let f = x + y - x.hypot(y);
            f * f
        })
        .sum::<f64>()
        .sqrt()
}

/// `zᵀ(Mz + q)`; zero exactly at LCP solutions among feasible points.
pub fn qp_objective(m: &CsrMatrix, q: &[f64], z: &[f64]) -> f64 {
    m.matvec(z).iter().zip(q).zip(z).map(|((a, b), c)| c * (a + b)).sum()
}

/// Solves the dense system `a·x = b` by Gaussian elimination with partial
/// pivoting; `None` when singular.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut aug: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, &bi)| {
        let mut r = row.clone();
        r.push(bi);
        r
    }).collect();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))?;
        if aug[piv][col].abs() <= 1e-13 * scale {
            return None;
        }
        aug.swap(col, piv);
        for r in col + 1..n {
            let f = aug[r][col] / aug[col][col];
            if f != 0.0 {
                for c in col..=n {
                    aug[r][c] -= f * aug[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| aug[r][c] * x[c]).sum();
        x[r] = (aug[r][n] - s) / aug[r][r];
    }
    Some(x)
}

/// Exhaustive LCP solve over all `2ⁿ` active sets (`n ≤ 12`), in increasing
/// bitmask order.
pub fn lcp_active_set_oracle(m: &CsrMatrix, q: &[f64]) -> Result<Vec<f64>> {
    let n = q.len();
    if n > 12 {
        return Err(Error::InvalidArgument(format!("active-set enumeration limited to n <= 12, got {n}")));
    }
    let dense = m.to_dense();
    let tol = 1e-10 * (1.0 + q.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    for mask in 0u32..(1u32 << n) {
        let idx: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let mut z = vec![0.0; n];
        if !idx.is_empty() {
            let a: Vec<Vec<f64>> = idx.iter().map(|&r| idx.iter().map(|&c| dense[r][c]).collect()).collect();
            let b: Vec<f64> = idx.iter().map(|&r| -q[r]).collect();
            let Some(za) = dense_solve(&a, &b) else { continue };
            if za.iter().any(|&v| v < -tol) {
                continue;
            }
            for (&i, &v) in idx.iter().zip(&za) {
                z[i] = v.max(0.0);
            }
        }
        let w = m.matvec(&z);
        if w.iter().zip(q).all(|(a, b)| a + b >= -tol) {
            return Ok(z);
        }
    }
    Err(Error::Infeasible)
}

/// Random LCP with `M = BᵀB/n + I` (symmetric positive definite) and `B`, `q`
/// uniform on `[−1, 1]`.
pub fn random_spd_lcp(n: usize, rng: &mut crate::rng::RngState) -> LcpProblem {
    let b: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).collect();
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let s: f64 = (0..n).map(|k| b[k][i] * b[k][j]).sum();
            *v = s / n as f64 + if i == j { 1.0 } else { 0.0 };
        }
    }
    let q = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    LcpProblem { m: CsrMatrix::from_dense(&m), q }
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn spectral_norm(a: &CsrMatrix) -> f64 {
    let at = a.transpose();
    let n = a.ncols;
    if n == 0 {
        return 0.0;
    }
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let y = at.matvec(&a.matvec(&x));
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let next = norm / xn;
        x = y.into_iter().map(|v| v / norm).collect();
        if (next - lambda).abs() <= 1e-10 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.sqrt()
}

/// `‖(M − Mᵀ)/2‖₂ / ‖M‖₂`.
pub fn asymmetry_ratio(m: &CsrMatrix) -> f64 {
    let skew = m.add(&m.transpose().scale(-1.0)).scale(0.5);
    let denom = spectral_norm(m);
    if denom == 0.0 {
        0.0
    } else {
        spectral_norm(&skew) / denom
    }
}

/// `ṽ = v_max (v − ∇p)/‖v − ∇p‖` per cell; zero where the difference vanishes.
pub fn apply_pressure(v: &VectorField, z: &[f64], v_max: f64) -> VectorField {
    let g = v.grid();
    let grad = gradient_central(&ScalarField::from_values(g, z.to_vec()));
    let mut out = VectorField::zeros(g);
    for k in 0..g.len() {
        let d = v.get(k) - grad.get(k);
        let n = d.norm();
        if n >= 1e-12 {
            out.set(k, d * (v_max / n));
        }
    }
    out
}

/// Desired velocity at zero density, crowd velocity at `ρ_max`, linear between.
pub fn swarm_blend(desired: Vec2, crowd: Vec2, rho: f64, rho_max: f64) -> Vec2 {
    let t = cutoff(0.0, rho_max, rho).expect("rho_max > 0");
    desired + (crowd - desired) * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::laplacian_compact;
    use crate::rng::RngState;

    fn dense(m: &CsrMatrix) -> Vec<Vec<f64>> {
        m.to_dense()
    }

    #[test]
    fn tridiagonal_examples() {
        assert_eq!(dense(&assemble_tridiagonal(Tridiagonal::P, 2)), vec![vec![0.0, 1.0], vec![-1.0, 0.0]]);
        assert_eq!(dense(&assemble_tridiagonal(Tridiagonal::Q, 2)), vec![vec![-2.0, 1.0], vec![1.0, -2.0]]);
        let q = dense(&assemble_tridiagonal(Tridiagonal::Q, 6));
        let sums: Vec<f64> = q.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(sums, vec![-1.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn kronecker_examples() {
        let q2 = assemble_tridiagonal(Tridiagonal::Q, 2);
        let k = dense(&kronecker(&CsrMatrix::identity(2), &q2));
        assert_eq!(k[0][..2], [-2.0, 1.0]);
        assert_eq!(k[2][2..], [-2.0, 1.0]);
        assert_eq!(k[0][2..], [0.0, 0.0]);

        let mut rng = RngState::new(3);
        let mut rnd = || {
            let d: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..3).map(|_| if rng.uniform() < 0.3 { 0.0 } else { rng.uniform_range(-1.0, 1.0) }).collect())
                .collect();
            d
        };
        let (a, b) = (rnd(), rnd());
        let kd = dense(&kronecker(&CsrMatrix::from_dense(&a), &CsrMatrix::from_dense(&b)));
        for i in 0..3 {
            for j in 0..3 {
                for k2 in 0..3 {
                    for l in 0..3 {
                        assert_eq!(kd[i * 3 + k2][j * 3 + l], a[i][j] * b[k2][l]);
                    }
                }
            }
        }
        let (ca, cb) = (CsrMatrix::from_dense(&a), CsrMatrix::from_dense(&b));
        assert_eq!(kronecker(&ca, &cb).nnz(), ca.nnz() * cb.nnz());
    }

    fn random_field(g: Grid, rng: &mut RngState, lo: f64, hi: f64) -> ScalarField {
        ScalarField::from_values(g, (0..g.len()).map(|_| rng.uniform_range(lo, hi)).collect())
    }

    #[test]
    fn c_matches_stencil() {
        let g = Grid::new(4, 4, 0.7, 1.1);
        let mut rng = RngState::new(17);
        for _ in 0..20 {
            let rho = random_field(g, &mut rng, 0.0, 3.0);
            let z = random_field(g, &mut rng, -1.0, 1.0);
            let cz = assemble_c(&rho).matvec(&z.values);
            let (dxr, dyr, dxz, dyz) = (diff_x(&rho), diff_y(&rho), diff_x(&z), diff_y(&z));
            let lap = laplacian_compact(&z);
            for k in 0..g.len() {
                let want = dxr.values[k] * dxz.values[k] / (4.0 * g.dx * g.dx)
                    + dyr.values[k] * dyz.values[k] / (4.0 * g.dy * g.dy)
                    + rho.values[k] * lap.values[k];
                assert!((cz[k] - want).abs() < 1e-12, "{k}: {} vs {want}", cz[k]);
            }
        }
    }

    #[test]
    fn c_uniform_and_zero() {
        let g = Grid::new(5, 4, 0.5, 0.5);
        assert_eq!(assemble_c(&ScalarField::zeros(g)).nnz(), 0);
        let c = assemble_c(&ScalarField::filled(g, 2.0));
        let d = dense(&c);
        let s = 2.0 / 0.25;
        let interior = g.flat(2, 2);
        assert!(d[interior].iter().sum::<f64>().abs() < 1e-12);
        assert!((d[interior][interior] + 4.0 * s).abs() < 1e-12);
        // corner: two missing Q neighbours, plus the zero-extended jump in D_x ρ and D_y ρ
        let jump = 2.0 / (4.0 * 0.25);
        assert!((d[0].iter().sum::<f64>() + 2.0 * s - 2.0 * jump).abs() < 1e-12);
    }

    #[test]
    fn b_examples() {
        let g = Grid::new(5, 5, 1.0, 1.0);
        let mut rng = RngState::new(2);
        let rho = random_field(g, &mut rng, 0.0, 2.0);
        assert!(assemble_b(&rho, &VectorField::zeros(g)).iter().all(|&x| x == 0.0));
        let uni = ScalarField::filled(g, 1.5);
        let vel = VectorField::from_fn(g, |_| Vec2::new(0.3, -0.2));
        let b = assemble_b(&uni, &vel);
        assert!(b[g.flat(2, 2)].abs() < 1e-15);
        let v = VectorField { x: random_field(g, &mut rng, -1.0, 1.0), y: random_field(g, &mut rng, -1.0, 1.0) };
        let b = assemble_b(&rho, &v);
        let flux = VectorField { x: rho.zip_map(&v.x, |a, b| a * b), y: rho.zip_map(&v.y, |a, b| a * b) };
        let div = divergence_central(&flux);
        for k in 0..g.len() {
            assert_eq!(b[k], -div.values[k]);
        }
    }

    #[test]
    fn pgs_small_examples() {
        let m = CsrMatrix::from_dense(&[vec![2.0, 0.0], vec![0.0, 3.0]]);
        let p = LcpProblem { m: m.clone(), q: vec![-2.0, 3.0] };
        let s = pgs_solve(&p, None, 1e-12, 100).unwrap();
        assert!((s.z[0] - 1.0).abs() < 1e-12 && s.z[1] == 0.0);
        assert!((s.w[1] - 3.0).abs() < 1e-12 && s.w[0].abs() < 1e-12);
        assert!(s.converged);
        assert!(qp_objective(&m, &p.q, &s.z).abs() < 1e-12);
        assert_eq!(lcp_active_set_oracle(&m, &p.q).unwrap(), s.z);

        let id = LcpProblem { m: CsrMatrix::identity(3), q: vec![1.0, 0.0, 2.0] };
        let s = pgs_solve(&id, None, 1e-12, 100).unwrap();
        assert!(s.iterations <= 1 && s.z.iter().all(|&v| v == 0.0));

        let bad = LcpProblem { m: CsrMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 0.0]]), q: vec![0.0, 0.0] };
        assert!(matches!(pgs_solve(&bad, None, 1e-6, 10), Err(Error::ZeroDiagonal(1))));
    }

    #[test]
    fn oracle_examples() {
        let m = CsrMatrix::from_dense(&[vec![2.0]]);
        assert_eq!(lcp_active_set_oracle(&m, &[-4.0]).unwrap(), vec![2.0]);
        let m = CsrMatrix::from_dense(&[vec![1.0, 0.2], vec![0.2, 1.0]]);
        assert_eq!(lcp_active_set_oracle(&m, &[0.5, 0.0]).unwrap(), vec![0.0, 0.0]);
        // M = −I, q = −1 has no solution
        let m = CsrMatrix::from_dense(&[vec![-1.0]]);
        assert!(matches!(lcp_active_set_oracle(&m, &[-1.0]), Err(Error::Infeasible)));
    }

    #[test]
    fn fb_examples() {
        assert_eq!(fb_residual(&[0.0], &[5.0]), 0.0);
        assert!((fb_residual(&[3.0], &[4.0]) - 2.0).abs() < 1e-15);
        assert_eq!(fb_residual(&[7.5], &[0.0]), 0.0);
    }

    #[test]
    fn qp_objective_detects_perturbation() {
        let m = CsrMatrix::from_dense(&[vec![2.0, 0.0], vec![0.0, 3.0]]);
        let q = [-2.0, 3.0];
        assert_eq!(qp_objective(&m, &q, &[0.0, 0.0]), 0.0);
        assert!(qp_objective(&m, &q, &[1.0, 0.1]) > 0.0);
    }

    #[test]
    fn lcp_round_trip() {
        let g = Grid::new(6, 5, 0.5, 0.5);
        let mut rng = RngState::new(21);
        let rho = random_field(g, &mut rng, 0.0, 3.0);
        let v = VectorField { x: random_field(g, &mut rng, -1.0, 1.0), y: random_field(g, &mut rng, -1.0, 1.0) };
        let params = PressureParams { rho_max: 2.0, ..Default::default() };
        let dt = 0.05;
        let prob = build_lcp(&rho, &v, None, &params, dt).unwrap();
        let sol = pgs_solve(&prob, None, 1e-10, 100_000).unwrap();
        let next = advance_density(&rho, &rho.map(|r| r + params.eps_rho), &v, &sol.z, dt);
        for k in 0..g.len() {
            assert!((params.rho_max - next.values[k] - sol.w[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn sign_of_q() {
        let g = Grid::new(4, 4, 1.0, 1.0);
        let params = PressureParams { rho_max: 2.0, ..Default::default() };
        let low = build_lcp(&ScalarField::filled(g, 1.0), &VectorField::zeros(g), None, &params, 0.1).unwrap();
        assert!(low.q.iter().all(|&q| q > 0.0));
        let mut rho = ScalarField::filled(g, 1.0);
        rho.values[5] = 3.0;
        let high = build_lcp(&rho, &VectorField::zeros(g), None, &params, 0.1).unwrap();
        assert!(high.q[5] < 0.0);
        let s = pgs_solve(&high, None, 1e-10, 10_000).unwrap();
        assert!(s.z[5] > 0.0);
    }

    #[test]
    fn obstacle_rows_pin_pressure() {
        let g = Grid::new(5, 5, 1.0, 1.0);
        let mut mask = vec![false; g.len()];
        for j in 0..5 {
            mask[g.flat(3, j)] = true;
            mask[g.flat(4, j)] = true;
        }
        let params = PressureParams { rho_max: 2.0, p0: 1.5, ..Default::default() };
        let prob = build_lcp(&ScalarField::filled(g, 0.5), &VectorField::zeros(g), Some(&mask), &params, 0.1).unwrap();
        let s = pgs_solve(&prob, None, 1e-12, 10_000).unwrap();
        assert!((s.z[g.flat(3, 2)] - 1.5).abs() < 1e-12);
        assert_eq!(s.z[g.flat(4, 2)], 0.0);
    }

    #[test]
    fn asymmetry_of_symmetric_is_zero() {
        let q = kronecker(&CsrMatrix::identity(3), &assemble_tridiagonal(Tridiagonal::Q, 3));
        assert!(asymmetry_ratio(&q) < 1e-12);
        let p = assemble_tridiagonal(Tridiagonal::P, 4);
        assert!((asymmetry_ratio(&p) - 1.0).abs() < 1e-9);
        assert!((spectral_norm(&CsrMatrix::from_dense(&[vec![3.0, 0.0], vec![0.0, -5.0]])) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn pressure_and_blend_examples() {
        let g = Grid::new(3, 3, 1.0, 1.0);
        let v = VectorField::from_fn(g, |_| Vec2::new(0.6, 0.8));
        let out = apply_pressure(&v, &[0.0; 9], 1.0);
        assert!((out.get(4) - Vec2::new(0.6, 0.8)).norm() < 1e-15);
        let z: Vec<f64> = (0..9).map(|k| g.center_flat(k).x).collect();
        let out = apply_pressure(&VectorField::from_fn(g, |_| Vec2::new(1.0, 0.0)), &z, 2.0);
        assert_eq!(out.get(4), Vec2::ZERO);
        assert!((out.get(0).norm() - 2.0).abs() < 1e-12);

        let (a, b) = (Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0));
        assert_eq!(swarm_blend(a, b, 0.0, 2.0), a);
        assert_eq!(swarm_blend(a, b, 3.0, 2.0), b);
        assert_eq!(swarm_blend(a, b, 1.0, 2.0), Vec2::new(0.5, 0.5));
    }
}
