//! Domain-potential planner: speed, discomfort and unit-cost fields, the
//! anisotropic fast marching method, and steering along the potential.
//!
//! Edge fields are stored per cell and direction: `layer(θ)[k]` is the value
//! for leaving cell `k` through its θ-facing edge. Edge costs are per metre;
//! the solver multiplies them by the cell size so potentials are in metres
//! (for unit cost) or cost units.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{bilinear_sample, bilinear_weights, cutoff, Direction, EdgeField, ScalarField};
use crate::geom::Vec2;
use crate::particles::ParticleSet;
use crate::rng::RngState;
use crate::scene::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    /// Speed at low density, `f̄⁺` (m/s).
    pub f_plus: f64,
    /// Speed at high density, `f̄⁻` (m/s).
    pub f_minus: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Look-ahead distance for density sampling (m).
    pub lookahead: f64,
    /// Obstacle clearance radius; `None` means one cell.
    pub obstacle_clearance: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            f_plus: 1.4,
            f_minus: 0.2,
            rho_min: 0.5,
            rho_max: 2.0,
            lookahead: 1.0,
            obstacle_clearance: None,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.rho_min < self.rho_max) {
            return bad(format!("need rho_min < rho_max, got {} and {}", self.rho_min, self.rho_max));
        }
        if !(self.f_minus > 0.0 && self.f_minus <= self.f_plus) {
            return bad(format!("need 0 < f_minus <= f_plus, got {} and {}", self.f_minus, self.f_plus));
        }
        if !(self.lookahead >= 0.0) {
            return bad(format!("lookahead must be >= 0, got {}", self.lookahead));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 || self.alpha + self.beta <= 0.0 {
            return bad(format!(
                "cost weights must be >= 0 with alpha + beta > 0, got {}, {}, {}",
                self.alpha, self.beta, self.gamma
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedField {
    pub edges: EdgeField,
    pub f_plus: f64,
    pub f_minus: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscomfortField {
    /// `g_obs` per cell.
    pub obstacle: ScalarField,
    /// `g_obs + g_dens` per cell and direction.
    pub total: EdgeField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitCostField {
    pub edges: EdgeField,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellStatus {
    Known,
    Unknown,
    Candidate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    pub phi: ScalarField,
    pub status: Vec<CellStatus>,
    /// Cells in the order they became known by marching (goal and obstacle
    /// cells excluded).
    pub accepted: Vec<usize>,
}

/// Density seen from each cell centre `r` ahead in every direction.
fn lookahead_density(rho: &ScalarField, r: f64) -> [Vec<f64>; 4] {
    let g = rho.grid;
    let w = g.width();
    let h = g.height();
    std::array::from_fn(|d| {
        let n = Direction::ALL[d].normal();
        (0..g.len())
            .map(|k| {
                let p = g.center_flat(k) + n * r;
                let p = Vec2::new(p.x.clamp(0.0, w), p.y.clamp(0.0, h));
                bilinear_sample(rho, p).expect("clamped point lies in the domain")
            })
            .collect()
    })
}

fn density_weight(params: &PlannerParams, rho: f64) -> f64 {
    cutoff(params.rho_min, params.rho_max, rho).expect("validated thresholds")
}

/// `f(x,θ) = f̄⁺ + L(ρ(x + r n_θ))·(f̄⁻ − f̄⁺)` at every cell.
pub fn compute_speed_field(rho: &ScalarField, params: &PlannerParams) -> Result<SpeedField> {
    params.validate()?;
    let look = lookahead_density(rho, params.lookahead);
    let layers = look.map(|l| {
        l.into_iter()
            .map(|r| params.f_plus + density_weight(params, r) * (params.f_minus - params.f_plus))
            .collect()
    });
    Ok(SpeedField {
        edges: EdgeField { grid: rho.grid, layers },
        f_plus: params.f_plus,
        f_minus: params.f_minus,
    })
}

/// `g = g_obs + g_dens`: unit discomfort near obstacle cells plus the
/// density ramp at the look-ahead point.
pub fn compute_discomfort(rho: &ScalarField, mask: &[bool], params: &PlannerParams) -> Result<DiscomfortField> {
    params.validate()?;
    let g = rho.grid;
    let r_obs = params.obstacle_clearance.unwrap_or(g.dx.max(g.dy));
    let mut obstacle = ScalarField::zeros(g);
    let reach_i = (r_obs / g.dx).ceil() as isize + 1;
    let reach_j = (r_obs / g.dy).ceil() as isize + 1;
    for (k, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (oi, oj) = g.unflatten(k);
        let cell = g.cell_rect(oi, oj);
        for dj in -reach_j..=reach_j {
            for di in -reach_i..=reach_i {
                if let Some((i, j)) = g.offset(oi, oj, di, dj) {
                    if cell.distance_to(g.center(i, j)) < r_obs {
                        obstacle.values[g.flat(i, j)] = 1.0;
                    }
                }
            }
        }
    }
    let look = lookahead_density(rho, params.lookahead);
    let layers = look.map(|l| {
        l.into_iter()
            .zip(&obstacle.values)
            .map(|(r, &go)| go + density_weight(params, r))
            .collect()
    });
    Ok(DiscomfortField { obstacle, total: EdgeField { grid: g, layers } })
}

/// `u = (α f + β + γ g)/f` off obstacles, `∞` on obstacle cells.
pub fn compute_unit_cost(
    speed: &SpeedField,
    discomfort: &DiscomfortField,
    mask: &[bool],
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> UnitCostField {
    let g = speed.edges.grid;
    let layers = std::array::from_fn(|d| {
        (0..g.len())
            .map(|k| {
                if mask[k] {
                    f64::INFINITY
                } else {
                    let f = speed.edges.layers[d][k];
                    (alpha * f + beta + gamma * discomfort.total.layers[d][k]) / f
                }
            })
            .collect()
    });
    UnitCostField { edges: EdgeField { grid: g, layers } }
}

/// Constant cost `value` off obstacles, `∞` on them. With `value = 1` the
/// marched potential is a travel distance in metres.
pub fn uniform_unit_cost(grid: Grid, mask: &[bool], value: f64) -> UnitCostField {
    let mut edges = EdgeField::filled(grid, value);
    for d in 0..4 {
        for (k, &m) in mask.iter().enumerate() {
            if m {
                edges.layers[d][k] = f64::INFINITY;
            }
        }
    }
    UnitCostField { edges }
}

/// Best upwind neighbour along one axis: `(potential, edge cost)` minimising
/// their sum, or `None` if no neighbour has a finite potential.
fn upwind(
    phi: &ScalarField,
    u: &UnitCostField,
    i: usize,
    j: usize,
    dirs: [Direction; 2],
    h: f64,
) -> Option<(f64, f64)> {
    let g = phi.grid;
    let k = g.flat(i, j);
    let mut best: Option<(f64, f64)> = None;
    for dir in dirs {
        let (di, dj) = dir.offset();
        let Some((ni, nj)) = g.offset(i, j, di, dj) else {
            continue;
        };
        let pot = phi.values[g.flat(ni, nj)];
        let cost = u.edges.get(k, dir) * h;
        if !pot.is_finite() || !cost.is_finite() {
            continue;
        }
        if best.is_none_or(|(bp, bc)| pot + cost < bp + bc) {
            best = Some((pot, cost));
        }
    }
    best
}

/// Upwind update of one cell from its current neighbour potentials.
pub fn compute_new_potential(i: usize, j: usize, phi: &ScalarField, u: &UnitCostField) -> Result<f64> {
    let g = phi.grid;
    let hor = upwind(phi, u, i, j, [Direction::East, Direction::West], g.dx);
    let ver = upwind(phi, u, i, j, [Direction::North, Direction::South], g.dy);
    let (hp, hc, vp, vc) = match (hor, ver) {
        (None, None) => return Err(Error::NoFiniteNeighbour(g.flat(i, j))),
        (Some((hp, hc)), None) => return Ok(hp + hc),
        (None, Some((vp, vc))) => return Ok(vp + vc),
        (Some((hp, hc)), Some((vp, vc))) => (hp, hc, vp, vc),
    };
    let one_d = (hp + hc).min(vp + vc);
    let a = 1.0 / (hc * hc) + 1.0 / (vc * vc);
    let b = -2.0 * (hp / (hc * hc) + vp / (vc * vc));
    let c = (hp / hc).powi(2) + (vp / vc).powi(2) - 1.0;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Ok(one_d);
    }
    let sq = disc.sqrt();
    let denom = -b - sq;
    let r = if denom.abs() < 1e-12 {
        (-b + sq) / (2.0 * a)
    } else {
        2.0 * c / denom
    };
    if !r.is_finite() || r < hp.max(vp) {
        return Ok(one_d);
    }
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct HeapEntry {
    phi: f64,
    k: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    // reversed so BinaryHeap pops the smallest potential, then smallest index
    fn cmp(&self, other: &Self) -> Ordering {
        other.phi.total_cmp(&self.phi).then_with(|| other.k.cmp(&self.k))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Fast marching from the goal cells over the cost field.
pub fn fast_march(mask: &[bool], goal: &[bool], u: &UnitCostField) -> Result<PotentialField> {
    let g = u.edges.grid;
    if !goal.iter().any(|&x| x) {
        return Err(Error::EmptyGoal);
    }
    let mut phi = ScalarField::filled(g, f64::INFINITY);
    let mut status = vec![CellStatus::Unknown; g.len()];
    for k in 0..g.len() {
        if goal[k] {
            phi.values[k] = 0.0;
            status[k] = CellStatus::Known;
        } else if mask[k] {
            status[k] = CellStatus::Known;
        }
    }
    let mut heap = BinaryHeap::new();
    let seeds: Vec<usize> = (0..g.len()).filter(|&k| goal[k]).collect();
    for k in seeds {
        update_neighbours(k, &mut phi, &mut status, u, &mut heap);
    }
    let mut accepted = Vec::new();
    while let Some(HeapEntry { phi: v, k }) = heap.pop() {
        if status[k] == CellStatus::Known || v != phi.values[k] {
            continue;
        }
        status[k] = CellStatus::Known;
        accepted.push(k);
        update_neighbours(k, &mut phi, &mut status, u, &mut heap);
    }
    Ok(PotentialField { phi, status, accepted })
}

fn update_neighbours(
    k: usize,
    phi: &mut ScalarField,
    status: &mut [CellStatus],
    u: &UnitCostField,
    heap: &mut BinaryHeap<HeapEntry>,
) {
    let g = phi.grid;
    let (i, j) = g.unflatten(k);
    for dir in Direction::ALL {
        let (di, dj) = dir.offset();
        let Some((ni, nj)) = g.offset(i, j, di, dj) else {
            continue;
        };
        let nk = g.flat(ni, nj);
        if status[nk] == CellStatus::Known {
            continue;
        }
        let Ok(cand) = compute_new_potential(ni, nj, phi, u) else {
            continue;
        };
        if cand < phi.values[nk] {
            phi.values[nk] = cand;
            heap.push(HeapEntry { phi: cand, k: nk });
        }
        status[nk] = CellStatus::Candidate;
    }
}

/// Cell-centred gradient of a potential: central differences between finite
/// neighbours, one-sided next to `∞` cells and the domain edge, zero on `∞` cells.
pub fn potential_gradient(phi: &ScalarField) -> (ScalarField, ScalarField) {
    let g = phi.grid;
    let mut gx = ScalarField::zeros(g);
    let mut gy = ScalarField::zeros(g);
    let axis = |i: usize, j: usize, d0: Direction, d1: Direction, h: f64| -> f64 {
        let c = phi.at(i, j);
        let val = |d: Direction| {
            let (di, dj) = d.offset();
            g.offset(i, j, di, dj).map(|(a, b)| phi.at(a, b)).filter(|v| v.is_finite())
        };
        match (val(d0), val(d1)) {
            (Some(p), Some(m)) => (p - m) / (2.0 * h),
            (Some(p), None) => (p - c) / h,
            (None, Some(m)) => (c - m) / h,
            (None, None) => 0.0,
        }
    };
    for j in 0..g.ny {
        for i in 0..g.nx {
            if !phi.at(i, j).is_finite() {
                continue;
            }
            let k = g.flat(i, j);
            gx.values[k] = axis(i, j, Direction::East, Direction::West, g.dx);
            gy.values[k] = axis(i, j, Direction::North, Direction::South, g.dy);
        }
    }
    (gx, gy)
}

fn sample_layer(grid: &Grid, layer: &[f64], p: Vec2) -> Result<f64> {
    Ok(bilinear_weights(grid, p)?.iter().map(|&(k, w)| w * layer[k]).sum())
}

/// Velocity along `−∇φ` for every active particle, with speed
/// `v_max,i · f(x,θ)/f̄⁺` where `f(x,θ)` blends the two edge directions the
/// heading points into. Particles with a vanishing gradient, or flagged in
/// `stalled`, get a random direction whose short probe does not land on an
/// `∞` cell.
pub fn potential_velocity(
    particles: &ParticleSet,
    potential: &PotentialField,
    speed: &SpeedField,
    stalled: &[bool],
    rng: &mut RngState,
) -> Result<Vec<Vec2>> {
    let phi = &potential.phi;
    let g = phi.grid;
    let (gx, gy) = potential_gradient(phi);
    let probe = 0.5 * g.dx.min(g.dy);
    let mut out = vec![Vec2::ZERO; particles.len()];
    for i in particles.active_indices() {
        let x = particles.positions[i];
        let grad = Vec2::new(bilinear_sample(&gx, x)?, bilinear_sample(&gy, x)?);
        let stuck = stalled.get(i).copied().unwrap_or(false);
        let dir = match grad.normalized() {
            Some(d) if !stuck => -d,
            _ => random_open_direction(phi, x, probe, rng),
        };
        let ex = if dir.x >= 0.0 { Direction::East } else { Direction::West };
        let ey = if dir.y >= 0.0 { Direction::North } else { Direction::South };
        let f = dir.x * dir.x * sample_layer(&g, speed.edges.layer(ex), x)?
            + dir.y * dir.y * sample_layer(&g, speed.edges.layer(ey), x)?;
        out[i] = dir * (particles.max_speeds[i] * f / speed.f_plus);
    }
    Ok(out)
}

fn random_open_direction(phi: &ScalarField, x: Vec2, probe: f64, rng: &mut RngState) -> Vec2 {
    let g = phi.grid;
    let mut d = rng.unit_direction();
    for _ in 0..16 {
        let q = x + d * probe;
        if let Ok((i, j)) = g.cell_of_point(q) {
            if phi.at(i, j).is_finite() {
                return d;
            }
        }
        d = rng.unit_direction();
    }
    d
}
