//! Microscopic state: placement, inflow and outflow, Euler stepping and
//! minimum-distance bookkeeping.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Rect, Vec2};
use crate::rng::RngState;
use crate::scene::{Entrance, SceneSpec};
use crate::sph::CellBins;

/// Structure-of-arrays particle storage. Indices are stable: particles that
/// leave the domain are only deactivated.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParticleSet {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub max_speeds: Vec<f64>,
    pub masses: Vec<f64>,
    pub active: Vec<bool>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Appends an active particle and returns its index.
    pub fn push(&mut self, position: Vec2, velocity: Vec2, max_speed: f64, mass: f64) -> usize {
        self.positions.push(position);
        self.velocities.push(velocity);
        self.max_speeds.push(max_speed);
        self.masses.push(mass);
        self.active.push(true);
        self.positions.len() - 1
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.active[i])
    }

    pub fn active_positions(&self) -> impl Iterator<Item = (usize, Vec2)> + '_ {
        self.active_indices().map(|i| (i, self.positions[i]))
    }

    pub fn deactivate(&mut self, i: usize) {
        self.active[i] = false;
        self.velocities[i] = Vec2::ZERO;
    }
}

/// Distribution of individual maximum speeds; draws are floored at a small
/// positive speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpeedDistribution {
    Constant { value: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

pub const MIN_MAX_SPEED: f64 = 0.05;

impl SpeedDistribution {
    pub fn sample(&self, rng: &mut RngState) -> f64 {
        let v = match *self {
            SpeedDistribution::Constant { value } => value,
            SpeedDistribution::Normal { mean, sd } => {
                if sd > 0.0 {
                    Normal::new(mean, sd).expect("finite sd").sample(rng.gen())
                } else {
                    mean
                }
            }
            SpeedDistribution::Uniform { lo, hi } => rng.uniform_range(lo, hi),
        };
        v.max(MIN_MAX_SPEED)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SpeedDistribution::Constant { value } => value > 0.0 && value.is_finite(),
            SpeedDistribution::Normal { mean, sd } => mean > 0.0 && sd >= 0.0 && sd.is_finite(),
            SpeedDistribution::Uniform { lo, hi } => lo > 0.0 && hi >= lo && hi.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid speed distribution {self:?}")))
        }
    }
}

const MAX_REJECTIONS: usize = 10_000_000;

fn sample_in(rect: &Rect, rng: &mut RngState) -> Vec2 {
    Vec2::new(
        rng.uniform_range(rect.min.x, rect.max.x),
        rng.uniform_range(rect.min.y, rect.max.y),
    )
}

fn rejection_sample(
    n: usize,
    bounds: &Rect,
    accept: impl Fn(Vec2) -> bool,
    speeds: &SpeedDistribution,
    rng: &mut RngState,
) -> Result<ParticleSet> {
    let mut out = ParticleSet::default();
    for _ in 0..n {
        let mut tries = 0;
        let p = loop {
            let p = sample_in(bounds, rng);
            if accept(p) {
                break p;
            }
            tries += 1;
            if tries >= MAX_REJECTIONS {
                return Err(Error::EmptyFreeArea);
            }
        };
        let vmax = speeds.sample(rng);
        out.push(p, Vec2::ZERO, vmax, 1.0);
    }
    Ok(out)
}

/// `n` particles i.i.d. uniform over the domain minus obstacles, entrances and exits.
pub fn spawn_uniform(
    n: usize,
    scene: &SceneSpec,
    speeds: &SpeedDistribution,
    rng: &mut RngState,
) -> Result<ParticleSet> {
    if n == 0 {
        return Ok(ParticleSet::default());
    }
    if scene.free_area() <= 0.0 {
        return Err(Error::EmptyFreeArea);
    }
    rejection_sample(n, &scene.domain(), |p| scene.is_free_for_spawn(p), speeds, rng)
}

/// `n` particles uniform over the free part of `rect`.
pub fn spawn_in_rect(
    n: usize,
    rect: &Rect,
    scene: &SceneSpec,
    speeds: &SpeedDistribution,
    rng: &mut RngState,
) -> Result<ParticleSet> {
    let Some(bounds) = rect.intersection(&scene.domain()) else {
        return Err(Error::EmptyFreeArea);
    };
    rejection_sample(n, &bounds, |p| scene.is_free_for_spawn(p), speeds, rng)
}

/// `n` particles uniform over the free part of a disc.
pub fn spawn_in_disc(
    n: usize,
    center: Vec2,
    radius: f64,
    scene: &SceneSpec,
    speeds: &SpeedDistribution,
    rng: &mut RngState,
) -> Result<ParticleSet> {
    let square = Rect::new(center.x - radius, center.y - radius, center.x + radius, center.y + radius);
    let Some(bounds) = square.intersection(&scene.domain()) else {
        return Err(Error::EmptyFreeArea);
    };
    rejection_sample(
        n,
        &bounds,
        |p| p.distance(center) <= radius && scene.is_free_for_spawn(p),
        speeds,
        rng,
    )
}

/// Draw from Poisson(`mean`) by sequential inversion of the cumulative
/// distribution, using `p_n = p_{n-1}·mean/n`.
pub fn poisson_sample(mean: f64, rng: &mut RngState) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let u = rng.uniform();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut n = 0u64;
    while u > cdf {
        n += 1;
        p *= mean / n as f64;
        cdf += p;
        if p == 0.0 && n as f64 > mean {
            break;
        }
    }
    n
}

/// Number of arrivals at an entrance during `dt`, truncated by its remaining capacity.
pub fn poisson_inflow(entrance: &Entrance, dt: f64, already_spawned: u64, rng: &mut RngState) -> u64 {
    let n = poisson_sample(entrance.rate * dt, rng);
    match entrance.capacity {
        Some(cap) => n.min(cap.saturating_sub(already_spawned)),
        None => n,
    }
}

/// Places `count` new particles uniformly in the entrance at rest.
pub fn spawn_at_entrance(
    particles: &mut ParticleSet,
    entrance: &Entrance,
    count: u64,
    speeds: &SpeedDistribution,
    rng: &mut RngState,
) -> Vec<usize> {
    (0..count)
        .map(|_| {
            let p = sample_in(&entrance.region, rng);
            let vmax = speeds.sample(rng);
            particles.push(p, Vec2::ZERO, vmax, 1.0)
        })
        .collect()
}

/// First entry of the segment `a → b` into the open interior of `r`: the
/// parameter and the axis whose face is crossed (0 = x, 1 = y).
fn segment_entry(a: Vec2, b: Vec2, r: &Rect) -> Option<(f64, usize)> {
    let d = b - a;
    let mut t_in = 0.0f64;
    let mut t_out = 1.0f64;
    let mut axis = usize::MAX;
    for (k, (p, dk, lo, hi)) in [(a.x, d.x, r.min.x, r.max.x), (a.y, d.y, r.min.y, r.max.y)]
        .into_iter()
        .enumerate()
    {
        if dk == 0.0 {
            if p <= lo || p >= hi {
                return None;
            }
            continue;
        }
        let (t0, t1) = if dk > 0.0 {
            ((lo - p) / dk, (hi - p) / dk)
        } else {
            ((hi - p) / dk, (lo - p) / dk)
        };
        if t0 >= t_in {
            t_in = t0;
            axis = k;
        }
        t_out = t_out.min(t1);
    }
    (t_in < t_out && axis != usize::MAX).then_some((t_in, axis))
}

/// Moves `p` out of any obstacle interior onto the nearest face.
fn push_out_of_obstacles(p: Vec2, scene: &SceneSpec) -> Vec2 {
    let mut p = p;
    for _ in 0..8 {
        let Some(o) = scene.obstacles.iter().find(|o| o.contains_strict(p)) else {
            break;
        };
        let cands = [
            (p.x - o.min.x, Vec2::new(o.min.x, p.y)),
            (o.max.x - p.x, Vec2::new(o.max.x, p.y)),
            (p.y - o.min.y, Vec2::new(p.x, o.min.y)),
            (o.max.y - p.y, Vec2::new(p.x, o.max.y)),
        ];
        let mut best = cands[0];
        for c in &cands[1..] {
            if c.0 < best.0 {
                best = *c;
            }
        }
        p = scene.domain().clamp_point(best.1);
    }
    p
}

/// Resolves the move `from → to` against the obstacles: whenever the
/// segment enters an obstacle, the crossed coordinate is clamped to the face.
fn resolve_move(from: Vec2, to: Vec2, scene: &SceneSpec) -> Vec2 {
    let mut target = to;
    for _ in 0..4 {
        let mut first: Option<(f64, usize, &Rect)> = None;
        for o in &scene.obstacles {
            if let Some((t, axis)) = segment_entry(from, target, o) {
                if first.is_none_or(|(tb, _, _)| t < tb) {
                    first = Some((t, axis, o));
                }
            }
        }
        let Some((_, axis, o)) = first else {
            return target;
        };
        let d = target - from;
        if axis == 0 {
            target.x = if d.x > 0.0 { o.min.x } else { o.max.x };
        } else {
            target.y = if d.y > 0.0 { o.min.y } else { o.max.y };
        }
    }
    // still blocked after sliding: stop at the first face hit
    let mut t_hit = 1.0f64;
    for o in &scene.obstacles {
        if let Some((t, _)) = segment_entry(from, to, o) {
            t_hit = t_hit.min(t);
        }
    }
    let stop = from + (to - from) * t_hit;
    push_out_of_obstacles(stop, scene)
}

/// Explicit Euler step. Moves clamp to the domain and to obstacle faces.
/// Returns, per exit, the active particles now inside it.
pub fn step_positions(particles: &mut ParticleSet, dt: f64, scene: &SceneSpec) -> Vec<Vec<usize>> {
    let domain = scene.domain();
    let mut candidates = vec![Vec::new(); scene.exits.len()];
    for i in 0..particles.len() {
        if !particles.active[i] {
            continue;
        }
        let from = particles.positions[i];
        let to = domain.clamp_point(from + particles.velocities[i] * dt);
        let to = if scene.obstacles.is_empty() { to } else { resolve_move(from, to, scene) };
        particles.positions[i] = to;
        if let Some(x) = scene.exit_containing(to) {
            candidates[x].push(i);
        }
    }
    candidates
}

/// Outflow limiter for one exit, carrying the fractional allowance between steps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExitGate {
    pub cap: Option<f64>,
    pub carry: f64,
}

impl ExitGate {
    pub fn new(cap: Option<f64>) -> Self {
        ExitGate { cap, carry: 0.0 }
    }

    /// Chooses which candidates leave this step (lowest index first).
    pub fn apply_exit_cap(&mut self, candidates: &[usize], dt: f64) -> Vec<usize> {
        let Some(c) = self.cap else {
            return candidates.to_vec();
        };
        self.carry += c * dt;
        let allowed = (self.carry + 1e-9).floor().max(0.0) as usize;
        let removed = allowed.min(candidates.len());
        self.carry = (self.carry - removed as f64).clamp(0.0, 1.0);
        let mut sorted = candidates.to_vec();
        sorted.sort_unstable();
        sorted.truncate(removed);
        sorted
    }
}

/// Adds independent N(0, σ²) noise to each velocity component of the active
/// particles, then clamps speeds.
pub fn add_velocity_noise(particles: &mut ParticleSet, sigma: f64, rng: &mut RngState) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sd must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).expect("valid sd");
    for i in 0..particles.len() {
        if !particles.active[i] {
            continue;
        }
        let n = Vec2::new(normal.sample(rng.gen()), normal.sample(rng.gen()));
        particles.velocities[i] = (particles.velocities[i] + n).clamp_length(particles.max_speeds[i]);
    }
    Ok(())
}

/// Density of the closest packing of discs of radius `r` kept `d_min` apart.
pub fn max_density_from_min_distance(d_min: f64, r: f64) -> Result<f64> {
    let s = d_min + 2.0 * r;
    if d_min < 0.0 || r < 0.0 || s <= 0.0 || !s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need d_min >= 0, r >= 0 and d_min + 2r > 0, got d_min={d_min}, r={r}"
        )));
    }
    Ok(2.0 / (s * s * 3f64.sqrt()))
}

fn bins_around_active(particles: &ParticleSet, side: f64) -> Option<(CellBins, Vec2)> {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (_, p) in particles.active_positions() {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    if !lo.is_finite() {
        return None;
    }
    let bins = CellBins::build(
        (hi.x - lo.x).max(side),
        (hi.y - lo.y).max(side),
        side,
        particles.active_positions().map(|(i, p)| (i, p - lo)),
    );
    Some((bins, lo))
}

/// For each radius, the number of active particles whose nearest neighbour
/// is closer than that radius.
pub fn min_distance_report(particles: &ParticleSet, radii: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; radii.len()];
    let r_max = radii.iter().copied().fold(0.0, f64::max);
    if r_max <= 0.0 {
        return counts;
    }
    let Some((bins, origin)) = bins_around_active(particles, r_max) else {
        return counts;
    };
    for (i, p) in particles.active_positions() {
        let mut nearest = f64::INFINITY;
        for j in bins.neighbours(p - origin) {
            if j != i {
                nearest = nearest.min(p.distance(particles.positions[j]));
            }
        }
        for (c, &r) in counts.iter_mut().zip(radii) {
            if nearest < r {
                *c += 1;
            }
        }
    }
    counts
}

/// One sweep over pairs `i < j` closer than `d_min`, pushing both apart
/// symmetrically to distance `d_min`. Coincident pairs separate along a random
/// direction. Results are clamped to the domain and out of obstacles.
pub fn correct_min_distance(
    particles: &mut ParticleSet,
    d_min: f64,
    scene: &SceneSpec,
    rng: &mut RngState,
) -> Result<()> {
    if !(d_min > 0.0) {
        return Err(Error::InvalidArgument(format!("d_min must be > 0, got {d_min}")));
    }
    let Some((bins, origin)) = bins_around_active(particles, d_min) else {
        return Ok(());
    };
    let domain = scene.domain();
    let active: Vec<usize> = particles.active_indices().collect();
    let mut near = Vec::new();
    for &i in &active {
        near.clear();
        near.extend(bins.neighbours(particles.positions[i] - origin).filter(|&j| j > i));
        near.sort_unstable();
        for &j in &near {
            let (a, b) = (particles.positions[i], particles.positions[j]);
            let d = b - a;
            let dist = d.norm();
            if dist >= d_min {
                continue;
            }
            let dir = match d.normalized() {
                Some(u) if dist > 0.0 => u,
                _ => rng.unit_direction(),
            };
            let half = 0.5 * (d_min - dist);
            particles.positions[i] = a - dir * half;
            particles.positions[j] = b + dir * half;
        }
    }
    for &i in &active {
        let p = domain.clamp_point(particles.positions[i]);
        particles.positions[i] = push_out_of_obstacles(p, scene);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEED: SpeedDistribution = SpeedDistribution::Constant { value: 1.0 };

    #[test]
    fn spawn_counts_and_errors() {
        let s = SceneSpec::empty(10.0, 10.0);
        let mut rng = RngState::new(1);
        assert!(spawn_uniform(0, &s, &SPEED, &mut rng).unwrap().is_empty());
        let p = spawn_uniform(50, &s, &SPEED, &mut rng).unwrap();
        assert_eq!(p.n_active(), 50);
        let mut blocked = SceneSpec::empty(10.0, 10.0);
        blocked.obstacles.push(Rect::new(0.0, 0.0, 10.0, 10.0));
        assert!(matches!(
            spawn_uniform(3, &blocked, &SPEED, &mut rng),
            Err(Error::EmptyFreeArea)
        ));
    }

    #[test]
    fn spawn_uniform_passes_chi_square() {
        let s = SceneSpec::empty(10.0, 10.0);
        let mut rng = RngState::new(2024);
        let p = spawn_uniform(1000, &s, &SPEED, &mut rng).unwrap();
        let mut bins = [0usize; 16];
        for x in &p.positions {
            let i = ((x.x / 2.5) as usize).min(3);
            let j = ((x.y / 2.5) as usize).min(3);
            bins[i + 4 * j] += 1;
        }
        let expected = 1000.0 / 16.0;
        let chi2: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // 99th percentile of χ² with 15 degrees of freedom
        assert!(chi2 < 30.578, "chi2 = {chi2}");
    }

    #[test]
    fn spawn_avoids_obstacles_and_respects_disc() {
        let mut s = SceneSpec::empty(20.0, 20.0);
        s.obstacles.push(Rect::new(8.0, 8.0, 12.0, 12.0));
        let mut rng = RngState::new(3);
        let p = spawn_in_disc(300, Vec2::new(10.0, 10.0), 5.0, &s, &SPEED, &mut rng).unwrap();
        for x in &p.positions {
            assert!(x.distance(Vec2::new(10.0, 10.0)) <= 5.0);
            assert!(!s.in_obstacle(*x));
        }
    }

    #[test]
    fn poisson_zero_rate() {
        let e = Entrance { region: Rect::new(0.0, 0.0, 1.0, 1.0), rate: 0.0, capacity: None };
        let mut rng = RngState::new(1);
        assert!((0..1000).all(|_| poisson_inflow(&e, 0.05, 0, &mut rng) == 0));
    }

    #[test]
    fn poisson_capacity_truncates() {
        let e = Entrance { region: Rect::new(0.0, 0.0, 1.0, 1.0), rate: 1000.0, capacity: Some(5) };
        let mut rng = RngState::new(1);
        assert_eq!(poisson_inflow(&e, 1.0, 3, &mut rng), 2);
        assert_eq!(poisson_inflow(&e, 1.0, 5, &mut rng), 0);
    }

    #[test]
    fn euler_step_and_face_clamp() {
        let mut s = SceneSpec::empty(10.0, 10.0);
        s.obstacles.push(Rect::new(5.0, 2.0, 7.0, 8.0));
        let mut p = ParticleSet::default();
        p.push(Vec2::new(1.0, 1.0), Vec2::new(1.0, 0.0), 1.0, 1.0);
        p.push(Vec2::new(4.99, 5.0), Vec2::new(1.0, 0.0), 1.0, 1.0);
        step_positions(&mut p, 0.05, &s);
        assert!((p.positions[0] - Vec2::new(1.05, 1.0)).norm() < 1e-15);
        assert_eq!(p.positions[1], Vec2::new(5.0, 5.0));
        assert!(!s.in_obstacle(p.positions[1]));
        // sliding along the face keeps the tangential component
        p.velocities[1] = Vec2::new(1.0, 1.0);
        step_positions(&mut p, 0.5, &s);
        assert_eq!(p.positions[1], Vec2::new(5.0, 5.5));
    }

    #[test]
    fn corner_hit_stays_outside() {
        let mut s = SceneSpec::empty(10.0, 10.0);
        s.obstacles.push(Rect::new(4.0, 4.0, 6.0, 6.0));
        let mut p = ParticleSet::default();
        p.push(Vec2::new(3.0, 3.0), Vec2::new(2.0, 2.0), 3.0, 1.0);
        step_positions(&mut p, 1.0, &s);
        assert!(!s.in_obstacle(p.positions[0]), "{:?}", p.positions[0]);
    }

    #[test]
    fn exits_are_reported() {
        let mut s = SceneSpec::empty(10.0, 10.0);
        s.exits.push(crate::scene::Exit { region: Rect::new(9.0, 0.0, 10.0, 10.0), cap: None });
        let mut p = ParticleSet::default();
        p.push(Vec2::new(8.98, 5.0), Vec2::new(1.0, 0.0), 1.0, 1.0);
        p.push(Vec2::new(1.0, 5.0), Vec2::new(1.0, 0.0), 1.0, 1.0);
        let c = step_positions(&mut p, 0.05, &s);
        assert_eq!(c, vec![vec![0]]);
    }

    #[test]
    fn exit_cap_examples() {
        let mut free = ExitGate::new(None);
        assert_eq!(free.apply_exit_cap(&[4, 1, 2, 3, 0], 0.05).len(), 5);

        let mut g = ExitGate::new(Some(2.0));
        assert!(g.apply_exit_cap(&[0, 1, 2], 0.05).is_empty());
        assert!((g.carry - 0.1).abs() < 1e-12);

        let mut g = ExitGate::new(Some(2.0));
        let total: usize = (0..200).map(|_| g.apply_exit_cap(&[0, 1, 2, 3], 0.05).len()).sum();
        assert!((19..=21).contains(&total), "{total}");
    }

    #[test]
    fn noise_zero_and_clamp() {
        let mut rng = RngState::new(4);
        let mut p = ParticleSet::default();
        p.push(Vec2::ZERO, Vec2::new(0.3, 0.4), 1.0, 1.0);
        let before = p.clone();
        add_velocity_noise(&mut p, 0.0, &mut rng).unwrap();
        assert_eq!(p, before);
        add_velocity_noise(&mut p, 5.0, &mut rng).unwrap();
        assert!(p.velocities[0].norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn max_density_examples() {
        assert!((max_density_from_min_distance(1.0, 0.0).unwrap() - 1.1547).abs() < 1e-4);
        let s = 0.65f64;
        assert!((max_density_from_min_distance(0.25, 0.2).unwrap() - 2.0 / (s * s * 3f64.sqrt())).abs() < 1e-12);
        assert!((max_density_from_min_distance(0.25, 0.2).unwrap() - 2.7327).abs() < 1e-3);
        assert!(max_density_from_min_distance(0.0, 0.0).is_err());
    }

    #[test]
    fn min_distance_pairs() {
        let mut p = ParticleSet::default();
        p.push(Vec2::new(1.0, 1.0), Vec2::ZERO, 1.0, 1.0);
        p.push(Vec2::new(1.5, 1.0), Vec2::ZERO, 1.0, 1.0);
        assert_eq!(min_distance_report(&p, &[0.3]), vec![0]);
        p.positions[1] = Vec2::new(1.2, 1.0);
        assert_eq!(min_distance_report(&p, &[0.3]), vec![2]);
    }

    #[test]
    fn correction_examples() {
        let s = SceneSpec::empty(10.0, 10.0);
        let mut rng = RngState::new(8);
        let mut p = ParticleSet::default();
        p.push(Vec2::new(5.0, 5.0), Vec2::ZERO, 1.0, 1.0);
        p.push(Vec2::new(5.1, 5.0), Vec2::ZERO, 1.0, 1.0);
        correct_min_distance(&mut p, 0.3, &s, &mut rng).unwrap();
        let d = p.positions[0].distance(p.positions[1]);
        assert!((d - 0.3).abs() < 1e-9);
        let mid = (p.positions[0] + p.positions[1]) * 0.5;
        assert!((mid - Vec2::new(5.05, 5.0)).norm() < 1e-12);

        let before = p.clone();
        correct_min_distance(&mut p, 0.2, &s, &mut rng).unwrap();
        assert_eq!(p, before);

        let mut q = ParticleSet::default();
        q.push(Vec2::new(3.0, 3.0), Vec2::ZERO, 1.0, 1.0);
        q.push(Vec2::new(3.0, 3.0), Vec2::ZERO, 1.0, 1.0);
        correct_min_distance(&mut q, 0.3, &s, &mut rng).unwrap();
        assert!((q.positions[0].distance(q.positions[1]) - 0.3).abs() < 1e-9);
    }
}
