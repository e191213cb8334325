//! Kernel interpolants and the particle-to-grid conversion.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::geom::Vec2;
use crate::particles::ParticleSet;
use crate::scene::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Wendland,
    Gaussian,
    Bspline4,
}

/// Normalisation of the quartic B-spline, obtained from
/// `2π ∫ f r dr = 1`. Equals `96 / (1199 π)`.
pub const BSPLINE4_NORM: f64 = 96.0 / (1199.0 * PI);

/// Mass of the unit Gaussian inside the truncation radius `3h`.
fn gaussian_truncated_mass() -> f64 {
    1.0 - (-4.5f64).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub h: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("smoothing length must be positive, got {h}")));
        }
        Ok(KernelSpec { kind, h })
    }

    pub fn wendland(h: f64) -> Self {
        KernelSpec { kind: KernelKind::Wendland, h }
    }

    /// Support radius as a multiple of `h`.
    pub fn support_factor(kind: KernelKind) -> f64 {
        match kind {
            KernelKind::Wendland => 2.0,
            KernelKind::Gaussian => 3.0,
            KernelKind::Bspline4 => 2.5,
        }
    }

    pub fn support(&self) -> f64 {
        Self::support_factor(self.kind) * self.h
    }

    /// Density contribution of a unit mass at distance `r`.
    pub fn eval(&self, r: f64) -> f64 {
        kernel_value(self.kind, self.h, r)
    }
}

pub fn kernel_value(kind: KernelKind, h: f64, r: f64) -> f64 {
    let q = r / h;
    let h2 = h * h;
    match kind {
        KernelKind::Wendland => {
            let t = (1.0 - 0.5 * q).max(0.0);
            7.0 / (4.0 * PI * h2) * t.powi(4) * (1.0 + 2.0 * q)
        }
        KernelKind::Gaussian => {
            if q > 3.0 {
                0.0
            } else {
                (-0.5 * q * q).exp() / (2.0 * PI * h2 * gaussian_truncated_mass())
            }
        }
        KernelKind::Bspline4 => {
            let p = |a: f64| (a - q).max(0.0).powi(4);
            let v = if q >= 2.5 {
                0.0
            } else if q >= 1.5 {
                p(2.5)
            } else if q >= 0.5 {
                p(2.5) - 5.0 * p(1.5)
            } else {
                p(2.5) - 5.0 * p(1.5) + 10.0 * p(0.5)
            };
            BSPLINE4_NORM / h2 * v
        }
    }
}

/// Square bins over the domain holding particle indices in ascending order.
#[derive(Clone, Debug)]
pub struct CellBins {
    pub side: f64,
    pub nbx: usize,
    pub nby: usize,
    bins: Vec<Vec<usize>>,
}

impl CellBins {
    /// Bins the given `(index, position)` pairs. Positions are clamped onto
    /// the bin range so points on the far boundary land in the last bin.
    pub fn build(
        width: f64,
        height: f64,
        side: f64,
        points: impl IntoIterator<Item = (usize, Vec2)>,
    ) -> Self {
        assert!(side > 0.0);
        let nbx = ((width / side).ceil() as usize).max(1);
        let nby = ((height / side).ceil() as usize).max(1);
        let mut bins = vec![Vec::new(); nbx * nby];
        for (idx, p) in points {
            let (bi, bj) = Self::coords(side, nbx, nby, p);
            bins[bi + bj * nbx].push(idx);
        }
        CellBins { side, nbx, nby, bins }
    }

    /// Bin side used for a kernel: at least `4h/3` and never below the support.
    pub fn side_for(kernel: &KernelSpec) -> f64 {
        (4.0 / 3.0 * kernel.h).max(kernel.support())
    }

    pub fn for_particles(particles: &ParticleSet, width: f64, height: f64, side: f64) -> Self {
        Self::build(width, height, side, particles.active_positions())
    }

    fn coords(side: f64, nbx: usize, nby: usize, p: Vec2) -> (usize, usize) {
        let bi = ((p.x / side).floor().max(0.0) as usize).min(nbx - 1);
        let bj = ((p.y / side).floor().max(0.0) as usize).min(nby - 1);
        (bi, bj)
    }

    pub fn bin_of(&self, p: Vec2) -> (usize, usize) {
        Self::coords(self.side, self.nbx, self.nby, p)
    }

    pub fn bin(&self, bi: usize, bj: usize) -> &[usize] {
        &self.bins[bi + bj * self.nbx]
    }

    /// Particle indices in the 3×3 block of bins around `p`, in ascending bin
    /// order and ascending index within each bin.
    pub fn neighbours(&self, p: Vec2) -> impl Iterator<Item = usize> + '_ {
        let (bi, bj) = self.bin_of(p);
        let j0 = bj.saturating_sub(1);
        let j1 = (bj + 1).min(self.nby - 1);
        let i0 = bi.saturating_sub(1);
        let i1 = (bi + 1).min(self.nbx - 1);
        (j0..=j1).flat_map(move |j| (i0..=i1).flat_map(move |i| self.bin(i, j).iter().copied()))
    }
}

/// Density and mass-weighted velocity at every cell centre.
pub fn interpolate_fields(
    particles: &ParticleSet,
    kernel: &KernelSpec,
    grid: &Grid,
) -> (ScalarField, VectorField) {
    let bins = CellBins::for_particles(
        particles,
        grid.width(),
        grid.height(),
        CellBins::side_for(kernel),
    );
    let support = kernel.support();
    let mut rho = ScalarField::zeros(*grid);
    let mut vel = VectorField::zeros(*grid);
    for k in 0..grid.len() {
        let c = grid.center_flat(k);
        let mut dens = 0.0;
        let mut mom = Vec2::ZERO;
        for idx in bins.neighbours(c) {
            let r = particles.positions[idx].distance(c);
            if r >= support {
                continue;
            }
            let w = particles.masses[idx] * kernel.eval(r);
            dens += w;
            mom += particles.velocities[idx] * w;
        }
        rho.values[k] = dens;
        if dens > 0.0 {
            vel.set(k, mom / dens);
        }
    }
    (rho, vel)
}

/// Where the probe sits relative to a triangular lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatticeAlignment {
    /// Probe on a particle.
    ParticleCentered,
    /// Probe at the centroid of a lattice triangle.
    CentroidCentered,
}

/// Density seen at a probe inside an infinite triangular lattice of unit
/// masses with spacing `d`.
pub fn lattice_density_probe(d: f64, kernel: &KernelSpec, alignment: LatticeAlignment) -> f64 {
    let probe = match alignment {
        LatticeAlignment::ParticleCentered => Vec2::ZERO,
        LatticeAlignment::CentroidCentered => Vec2::new(0.5 * d, d / (2.0 * 3f64.sqrt())),
    };
    let support = kernel.support();
    let row = d * 3f64.sqrt() / 2.0;
    let reach = (support / row).ceil() as i64 + 2;
    let mut total = 0.0;
    for b in -reach..=reach {
        for a in -reach..=reach {
            let p = Vec2::new(a as f64 * d + b as f64 * 0.5 * d, b as f64 * row);
            let r = p.distance(probe);
            if r < support {
                total += kernel.eval(r);
            }
        }
    }
    total
}

/// Smoothing length for the planner grid: the smallest `h` on the decaying
/// branch of `h ↦ ψ(√2Δx/2; h)` where a single particle contributes at most
/// `rho_min` to a neighbouring cell centre.
pub fn planner_smoothing_length(kind: KernelKind, dx: f64, rho_min: f64) -> Result<f64> {
    if !(dx > 0.0 && rho_min > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need dx > 0 and rho_min > 0, got dx={dx}, rho_min={rho_min}"
        )));
    }
    let r = 0.5 * 2f64.sqrt() * dx;
    let f = |h: f64| kernel_value(kind, h, r);
    // ψ(r; h) ≤ ψ(0; h) = c0 / h², so h0 bounds the answer from above.
    let c0 = kernel_value(kind, 1.0, 0.0);
    let h_hi = (c0 / rho_min).sqrt();
    let h_lo = r / KernelSpec::support_factor(kind);

    // The profile in h is unimodal; locate its peak.
    let (mut a, mut b) = (h_lo, h_hi.max(h_lo * 4.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let e = a + g * (b - a);
        if f(c) > f(e) {
            b = e;
        } else {
            a = c;
        }
        if b - a < 1e-12 * b {
            break;
        }
    }
    let h_peak = 0.5 * (a + b);
    if f(h_peak) <= rho_min || h_peak >= h_hi {
        return Err(Error::NoRoot { lo: h_peak, hi: h_hi });
    }
    let (mut lo, mut hi) = (h_peak, h_hi);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= rho_min {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn radial_integral(kind: KernelKind, h: f64) -> f64 {
        // composite Simpson on [0, support]
        let s = KernelSpec::support_factor(kind) * h;
        let n = 20_000;
        let step = s / n as f64;
        let g = |r: f64| 2.0 * PI * r * kernel_value(kind, h, r);
        let mut acc = g(0.0) + g(s);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * g(i as f64 * step);
        }
        acc * step / 3.0
    }

    #[test]
    fn kernels_are_normalised() {
        for kind in [KernelKind::Wendland, KernelKind::Gaussian, KernelKind::Bspline4] {
            for h in [0.5, 1.0, 1.75] {
                let m = radial_integral(kind, h);
                assert!((m - 1.0).abs() < 1e-6, "{kind:?} h={h}: {m}");
            }
        }
    }

    #[test]
    fn bspline_constant_from_quadrature() {
        // integrate the unnormalised piecewise polynomial independently
        let raw = |q: f64| {
            let p = |a: f64| (a - q).max(0.0).powi(4);
            if q >= 2.5 {
                0.0
            } else if q >= 1.5 {
                p(2.5)
            } else if q >= 0.5 {
                p(2.5) - 5.0 * p(1.5)
            } else {
                p(2.5) - 5.0 * p(1.5) + 10.0 * p(0.5)
            }
        };
        let n = 50_000;
        let step = 2.5 / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let q = (i as f64 + 0.5) * step;
            acc += 2.0 * PI * q * raw(q) * step;
        }
        assert!((1.0 / acc - BSPLINE4_NORM).abs() < 1e-8);
        assert!((BSPLINE4_NORM - 0.025486).abs() < 1e-6);
    }

    #[test]
    fn wendland_examples() {
        let k = KernelSpec::wendland(1.0);
        assert!((k.eval(0.0) - 0.55704).abs() < 1e-5);
        assert_eq!(k.eval(2.0), 0.0);
        assert!((k.eval(1.0) - 0.10444).abs() < 1e-5);
        assert_eq!(k.eval(2.5), 0.0);
    }

    #[test]
    fn wendland_monotone_and_flat_at_origin() {
        let k = KernelSpec::wendland(1.3);
        let mut prev = f64::INFINITY;
        for i in 0..300 {
            let v = k.eval(i as f64 * 0.01);
            assert!(v <= prev);
            prev = v;
        }
        for kind in [KernelKind::Wendland, KernelKind::Gaussian, KernelKind::Bspline4] {
            let eps = 1e-7;
            let slope = (kernel_value(kind, 1.0, eps) - kernel_value(kind, 1.0, 0.0)) / eps;
            assert!(slope.abs() <= 1e-6, "{kind:?}: {slope}");
        }
    }

    #[test]
    fn rejects_bad_smoothing_length() {
        assert!(KernelSpec::new(KernelKind::Wendland, 0.0).is_err());
        assert!(KernelSpec::new(KernelKind::Wendland, -1.0).is_err());
    }

    #[test]
    fn lattice_probes_unit_spacing() {
        let k = KernelSpec::wendland(1.0);
        let hi = lattice_density_probe(1.0, &k, LatticeAlignment::ParticleCentered);
        let lo = lattice_density_probe(1.0, &k, LatticeAlignment::CentroidCentered);
        let s3 = 3f64.sqrt();
        let hi_ref = k.eval(0.0) + 6.0 * k.eval(1.0) + 6.0 * k.eval(s3);
        let lo_ref = 3.0 * k.eval(1.0 / s3) + 3.0 * k.eval(2.0 / s3) + 6.0 * k.eval((7.0f64 / 3.0).sqrt());
        assert!((hi - hi_ref).abs() < 1e-12);
        assert!((lo - lo_ref).abs() < 1e-12);
        assert!(lo < 2.0 / s3 && 2.0 / s3 < hi);
    }

    #[test]
    fn empty_and_single_particle_fields() {
        let g = Grid::new(5, 5, 1.0, 1.0);
        let k = KernelSpec::wendland(1.0);
        let (rho, v) = interpolate_fields(&ParticleSet::default(), &k, &g);
        assert!(rho.values.iter().all(|&x| x == 0.0));
        assert!(v.x.values.iter().all(|&x| x == 0.0));

        let mut p = ParticleSet::default();
        p.push(g.center(2, 2), Vec2::new(1.0, 0.0), 1.0, 1.0);
        let (rho, v) = interpolate_fields(&p, &k, &g);
        assert!((rho.at(2, 2) - 0.55704).abs() < 1e-5);
        assert!((v.x.at(2, 2) - 1.0).abs() < 1e-15);
        assert_eq!(rho.at(0, 0), 0.0);
    }

    fn all_pairs(p: &ParticleSet, k: &KernelSpec, g: &Grid) -> (Vec<f64>, Vec<Vec2>) {
        let mut rho = vec![0.0; g.len()];
        let mut vel = vec![Vec2::ZERO; g.len()];
        for c in 0..g.len() {
            let x = g.center_flat(c);
            let mut m = Vec2::ZERO;
            for i in 0..p.len() {
                if !p.active[i] {
                    continue;
                }
                let w = p.masses[i] * k.eval(p.positions[i].distance(x));
                rho[c] += w;
                m += p.velocities[i] * w;
            }
            if rho[c] > 0.0 {
                vel[c] = m / rho[c];
            }
        }
        (rho, vel)
    }

    #[test]
    fn binned_matches_all_pairs() {
        let g = Grid::new(20, 15, 0.5, 0.5);
        let mut rng = RngState::new(5);
        for kind in [KernelKind::Wendland, KernelKind::Gaussian, KernelKind::Bspline4] {
            let k = KernelSpec::new(kind, 0.7).unwrap();
            let mut p = ParticleSet::default();
            for _ in 0..200 {
                let x = Vec2::new(rng.uniform_range(0.0, 10.0), rng.uniform_range(0.0, 7.5));
                let v = Vec2::new(rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0));
                p.push(x, v, 2.0, 1.0);
            }
            p.active[7] = false;
            let (rho, vel) = interpolate_fields(&p, &k, &g);
            let (r2, v2) = all_pairs(&p, &k, &g);
            for c in 0..g.len() {
                assert!((rho.values[c] - r2[c]).abs() < 1e-12);
                assert!((vel.get(c) - v2[c]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn mass_is_conserved_away_from_boundary() {
        let g = Grid::new(60, 60, 0.25, 0.25);
        let k = KernelSpec::wendland(0.8);
        let mut rng = RngState::new(9);
        let mut p = ParticleSet::default();
        for _ in 0..150 {
            let x = Vec2::new(rng.uniform_range(2.0, 13.0), rng.uniform_range(2.0, 13.0));
            p.push(x, Vec2::ZERO, 1.0, 1.0);
        }
        let (rho, _) = interpolate_fields(&p, &k, &g);
        let mass = rho.sum() * g.cell_area();
        assert!((mass - 150.0).abs() / 150.0 < 0.02, "{mass}");
    }

    #[test]
    fn planner_length_properties() {
        let dx = 1.0;
        let h = planner_smoothing_length(KernelKind::Wendland, dx, 0.05).unwrap();
        let r = 0.5 * 2f64.sqrt() * dx;
        assert!(kernel_value(KernelKind::Wendland, h, r) <= 0.05);
        assert!(kernel_value(KernelKind::Wendland, h / 1.001, r) > 0.05);
        let h2 = planner_smoothing_length(KernelKind::Wendland, dx, 0.1).unwrap();
        assert!(h2 <= h);
        let bound = (kernel_value(KernelKind::Wendland, 1.0, 0.0) / 0.05).sqrt();
        let tiny = planner_smoothing_length(KernelKind::Wendland, 1e-4, 0.05).unwrap();
        assert!(tiny <= bound + 1e-6);
        assert!(planner_smoothing_length(KernelKind::Wendland, 1.0, 1e3).is_err());
    }
}
