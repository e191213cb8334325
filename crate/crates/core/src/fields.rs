//! Cell-centred fields and their discrete calculus.
//!
//! Differences use a virtual layer of zero-valued cells around the grid, so
//! every operator is defined on boundary cells as well.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::scene::Grid;

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

/// Edge directions, in the order `θ = 0, π/2, π, 3π/2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    East,
    North,
    West,
    South,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::East,
        Direction::North,
        Direction::West,
        Direction::South,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Grid offset `(di, dj)` of the neighbour across this edge.
    pub fn offset(self) -> (isize, isize) {
        match self {
            Direction::East => (1, 0),
            Direction::North => (0, 1),
            Direction::West => (-1, 0),
            Direction::South => (0, -1),
        }
    }

    /// Unit normal `n_θ`.
    pub fn normal(self) -> Vec2 {
        let (di, dj) = self.offset();
        Vec2::new(di as f64, dj as f64)
    }
}

/// Per-cell values attached to the four cell edges; `layer(θ)[k]` belongs to
/// the edge of cell `k` facing direction θ.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeField {
    pub grid: Grid,
    pub layers: [Vec<f64>; 4],
}

impl EdgeField {
    pub fn filled(grid: Grid, value: f64) -> Self {
        let layer = vec![value; grid.len()];
        EdgeField {
            grid,
            layers: [layer.clone(), layer.clone(), layer.clone(), layer],
        }
    }

    pub fn layer(&self, dir: Direction) -> &[f64] {
        &self.layers[dir.index()]
    }

    pub fn layer_mut(&mut self, dir: Direction) -> &mut [f64] {
        &mut self.layers[dir.index()]
    }

    #[inline]
    pub fn get(&self, k: usize, dir: Direction) -> f64 {
        self.layers[dir.index()][k]
    }

    /// Elementwise map over all four layers.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> EdgeField {
        EdgeField {
            grid: self.grid,
            layers: std::array::from_fn(|d| self.layers[d].iter().map(|&v| f(v)).collect()),
        }
    }
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField::filled(grid, 0.0)
    }

    pub fn filled(grid: Grid, value: f64) -> Self {
        ScalarField {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len(), "field length must match the grid");
        ScalarField { grid, values }
    }

    /// Samples `f` at every cell centre.
    pub fn from_fn(grid: Grid, f: impl Fn(Vec2) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.center_flat(k))).collect();
        ScalarField { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.flat(i, j)]
    }

    /// Value at `(i, j)` with zeros outside the grid.
    #[inline]
    pub fn extended(&self, i: isize, j: isize) -> f64 {
        let g = &self.grid;
        if i < 0 || j < 0 || i as usize >= g.nx || j as usize >= g.ny {
            0.0
        } else {
            self.values[i as usize + j as usize * g.nx]
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert_eq!(self.grid, other.grid);
        ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Writes `i,j,value` rows in flat-index order (0-based indices).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("i,j,value\n");
        for (k, v) in self.values.iter().enumerate() {
            let (i, j) = self.grid.unflatten(k);
            out.push_str(&format!("{i},{j},{v}\n"));
        }
        write_text(path, &out)
    }
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        VectorField {
            x: ScalarField::zeros(grid),
            y: ScalarField::zeros(grid),
        }
    }

    pub fn grid(&self) -> Grid {
        self.x.grid
    }

    #[inline]
    pub fn get(&self, k: usize) -> Vec2 {
        Vec2::new(self.x.values[k], self.y.values[k])
    }

    #[inline]
    pub fn set(&mut self, k: usize, v: Vec2) {
        self.x.values[k] = v.x;
        self.y.values[k] = v.y;
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Vec2) -> Vec2) -> Self {
        let mut out = VectorField::zeros(grid);
        for k in 0..grid.len() {
            out.set(k, f(grid.center_flat(k)));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("i,j,vx,vy\n");
        for k in 0..self.grid().len() {
            let (i, j) = self.grid().unflatten(k);
            out.push_str(&format!("{i},{j},{},{}\n", self.x.values[k], self.y.values[k]));
        }
        write_text(path, &out)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// `(D_x u)(i,j) = ũ(i+1,j) − ũ(i−1,j)` on the zero-extended field.
pub fn diff_x(u: &ScalarField) -> ScalarField {
    let g = u.grid;
    let mut out = ScalarField::zeros(g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (i, j) = (i as isize, j as isize);
            out.values[g.flat(i as usize, j as usize)] = u.extended(i + 1, j) - u.extended(i - 1, j);
        }
    }
    out
}

/// `(D_y u)(i,j) = ũ(i,j+1) − ũ(i,j−1)` on the zero-extended field.
pub fn diff_y(u: &ScalarField) -> ScalarField {
    let g = u.grid;
    let mut out = ScalarField::zeros(g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (i, j) = (i as isize, j as isize);
            out.values[g.flat(i as usize, j as usize)] = u.extended(i, j + 1) - u.extended(i, j - 1);
        }
    }
    out
}

/// Second-order central gradient.
pub fn gradient_central(u: &ScalarField) -> VectorField {
    let g = u.grid;
    VectorField {
        x: diff_x(u).map(|v| v / (2.0 * g.dx)),
        y: diff_y(u).map(|v| v / (2.0 * g.dy)),
    }
}

/// Second-order central divergence.
pub fn divergence_central(w: &VectorField) -> ScalarField {
    let g = w.grid();
    let dx = diff_x(&w.x);
    let dy = diff_y(&w.y);
    dx.zip_map(&dy, |a, b| a / (2.0 * g.dx) + b / (2.0 * g.dy))
}

/// Five-point Laplacian.
pub fn laplacian_compact(u: &ScalarField) -> ScalarField {
    let g = u.grid;
    let (hx2, hy2) = (g.dx * g.dx, g.dy * g.dy);
    let mut out = ScalarField::zeros(g);
    for j in 0..g.ny as isize {
        for i in 0..g.nx as isize {
            let c = u.extended(i, j);
            let lx = (u.extended(i + 1, j) - 2.0 * c + u.extended(i - 1, j)) / hx2;
            let ly = (u.extended(i, j + 1) - 2.0 * c + u.extended(i, j - 1)) / hy2;
            out.values[g.flat(i as usize, j as usize)] = lx + ly;
        }
    }
    out
}

/// Lower cell index and weight for interpolating between centres along one axis.
/// Positions outside the ring of cell centres are clamped onto it.
fn axis_stencil(x: f64, h: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let s = (x / h - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = (s.floor() as usize).min(n - 2);
    (i0, i0 + 1, s - i0 as f64)
}

/// Four cell indices and their bilinear weights around `p`.
pub fn bilinear_weights(grid: &Grid, p: Vec2) -> Result<[(usize, f64); 4]> {
    let inside = p.x >= 0.0 && p.y >= 0.0 && p.x <= grid.width() && p.y <= grid.height();
    if !inside {
        return Err(Error::OutOfDomain { x: p.x, y: p.y });
    }
    let (i0, i1, tx) = axis_stencil(p.x, grid.dx, grid.nx);
    let (j0, j1, ty) = axis_stencil(p.y, grid.dy, grid.ny);
    Ok([
        (grid.flat(i0, j0), (1.0 - tx) * (1.0 - ty)),
        (grid.flat(i1, j0), tx * (1.0 - ty)),
        (grid.flat(i0, j1), (1.0 - tx) * ty),
        (grid.flat(i1, j1), tx * ty),
    ])
}

/// Bilinear interpolant through the four surrounding cell centres.
pub fn bilinear_sample(u: &ScalarField, p: Vec2) -> Result<f64> {
    let w = bilinear_weights(&u.grid, p)?;
    Ok(w.iter().map(|&(k, wk)| wk * u.values[k]).sum())
}

pub fn bilinear_sample_vector(v: &VectorField, p: Vec2) -> Result<Vec2> {
    let w = bilinear_weights(&v.grid(), p)?;
    Ok(w
        .iter()
        .fold(Vec2::ZERO, |acc, &(k, wk)| acc + v.get(k) * wk))
}

/// Piecewise-linear ramp `L_a^b(t)`: 0 below `a`, 1 above `b`, linear between.
pub fn cutoff(a: f64, b: f64, t: f64) -> Result<f64> {
    if a >= b {
        return Err(Error::InvalidArgument(format!("cutoff needs a < b, got a={a}, b={b}")));
    }
    Ok(((t - a) / (b - a)).clamp(0.0, 1.0))
}
