//! Time stepping drivers composing the planners, the pressure projection and
//! the particle integrator, plus run metrics and their export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eikonal::{
    compute_discomfort, compute_speed_field, compute_unit_cost, fast_march, potential_velocity,
    uniform_unit_cost, PlannerParams, PotentialField, SpeedField,
};
use crate::error::{Error, Result};
use crate::fields::{bilinear_sample, bilinear_sample_vector, ScalarField};
use crate::geom::{Rect, Vec2};
use crate::particles::{
    add_velocity_noise, correct_min_distance, max_density_from_min_distance, min_distance_report,
    poisson_inflow, spawn_at_entrance, spawn_in_disc, spawn_in_rect, spawn_uniform, step_positions, ExitGate,
    ParticleSet, SpeedDistribution,
};
use crate::rng::RngState;
use crate::scene::{obstacle_cell_mask, region_cell_mask, Grid, SceneSpec};
use crate::sph::{interpolate_fields, planner_smoothing_length, KernelKind, KernelSpec};
use crate::uic::{apply_pressure, build_lcp, default_max_iter, pgs_solve, swarm_blend, PressureParams};
use crate::visgraph::{build_graph, shortest_path, PathFollower, VisibilityGraph};

/// Which planner steers the particles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Density-dependent domain potential, re-marched every step.
    Eikonal,
    /// Visibility-graph waypoints with the pressure projection.
    #[default]
    VisgraphUic,
    /// Density-independent domain potential marched once, pressure every step.
    Combined,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphParams {
    /// Obstacle inflation (m).
    pub margin: f64,
    /// Waypoint spacing along a route (m).
    pub waypoint_spacing: f64,
    /// Number of upcoming waypoints averaged into the heading.
    pub lookahead: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams { margin: 0.5, waypoint_spacing: 1.0, lookahead: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UicParams {
    /// `false` runs the same planner with the pressure suppressed.
    pub enabled: bool,
    /// Minimum distance defining the maximum density (m).
    pub d_min: f64,
    /// Overrides the maximum density derived from `d_min`.
    pub rho_max: Option<f64>,
    pub p0: f64,
    pub eps_rho: f64,
    pub tol: f64,
    pub max_iter: Option<usize>,
    /// Crowd speed after projection; `None` uses the nominal speed of the distribution.
    pub v_max: Option<f64>,
}

impl Default for UicParams {
    fn default() -> Self {
        UicParams {
            enabled: true,
            d_min: 0.7,
            rho_max: None,
            p0: 1.0,
            eps_rho: 0.01,
            tol: 1e-6,
            max_iter: None,
            v_max: None,
        }
    }
}

impl UicParams {
    pub fn rho_max(&self) -> Result<f64> {
        match self.rho_max {
            Some(r) => Ok(r),
            None => max_density_from_min_distance(self.d_min, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Time step (s).
    pub dt: f64,
    /// Simulated time (s).
    pub t_max: f64,
    /// Edge length of the planner and pressure grid cells (m).
    pub cell_size: f64,
    pub kernel: KernelKind,
    /// `None` picks the smallest length that keeps one particle below
    /// `planner.rho_min` at the neighbouring cell centres.
    pub smoothing_length: Option<f64>,
    pub speed: SpeedDistribution,
    /// Particles placed at `t = 0`.
    pub initial_count: usize,
    /// `[x0, y0, x1, y1]` for the initial placement; whole free domain when absent.
    pub initial_region: Option<[f64; 4]>,
    /// `[cx, cy, r]`; takes precedence over `initial_region`.
    pub initial_disc: Option<[f64; 3]>,
    /// Standard deviation of per-step velocity noise (m/s).
    pub noise_sd: f64,
    /// When set, one pairwise push-apart sweep per step at this distance (m).
    pub min_distance_correction: Option<f64>,
    /// Radii reported in the minimum-distance table (m).
    pub mde_radii: Vec<f64>,
    pub planner: PlannerParams,
    pub graph: GraphParams,
    pub uic: UicParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: Mode::default(),
            seed: 0,
            dt: 0.05,
            t_max: 60.0,
            cell_size: 0.5,
            kernel: KernelKind::default(),
            smoothing_length: None,
            speed: SpeedDistribution::Normal { mean: 1.44, sd: 0.15 },
            initial_count: 0,
            initial_region: None,
            initial_disc: None,
            noise_sd: 0.0,
            min_distance_correction: None,
            mde_radii: vec![0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
            planner: PlannerParams::default(),
            graph: GraphParams::default(),
            uic: UicParams::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be a positive number, got {v}")))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        positive("dt", self.dt)?;
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("t_max must be >= 0, got {}", self.t_max)));
        }
        positive("cell_size", self.cell_size)?;
        if let Some(h) = self.smoothing_length {
            positive("smoothing_length", h)?;
        }
        self.speed.validate()?;
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        if let Some(d) = self.min_distance_correction {
            positive("min_distance_correction", d)?;
        }
        for &r in &self.mde_radii {
            positive("mde_radii entry", r)?;
        }
        if let Some(r) = self.initial_region {
            if r.iter().any(|v| !v.is_finite()) || r[0] >= r[2] || r[1] >= r[3] {
                return Err(Error::InvalidArgument(format!("initial_region must be [x0, y0, x1, y1], got {r:?}")));
            }
        }
        if let Some([cx, cy, r]) = self.initial_disc {
            if !(cx.is_finite() && cy.is_finite()) {
                return Err(Error::InvalidArgument("initial_disc centre must be finite".into()));
            }
            positive("initial_disc radius", r)?;
        }
        self.planner.validate()?;
        positive("graph.margin", self.graph.margin)?;
        positive("graph.waypoint_spacing", self.graph.waypoint_spacing)?;
        if self.graph.lookahead == 0 {
            return Err(Error::InvalidArgument("graph.lookahead must be >= 1".into()));
        }
        self.pressure_params()?.validate()
    }

    pub fn pressure_params(&self) -> Result<PressureParams> {
        positive("uic.d_min", self.uic.d_min)?;
        Ok(PressureParams {
            rho_max: self.uic.rho_max()?,
            p0: self.uic.p0,
            eps_rho: self.uic.eps_rho,
            tol: self.uic.tol,
            max_iter: self.uic.max_iter,
            v_max: self.uic.v_max.unwrap_or_else(|| nominal_speed(&self.speed)),
        })
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let h = match self.smoothing_length {
            Some(h) => h,
            None => planner_smoothing_length(self.kernel, self.cell_size, self.planner.rho_min)?,
        };
        KernelSpec::new(self.kernel, h)
    }
}

/// Central value of a speed distribution.
pub fn nominal_speed(d: &SpeedDistribution) -> f64 {
    match *d {
        SpeedDistribution::Constant { value } => value,
        SpeedDistribution::Normal { mean, .. } => mean,
        SpeedDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
    }
}

/// `1 − t_p/t_o`, clipped to `[−0.5, 1]`. Negative when a particle arrives
/// earlier than planned.
pub fn relative_delay(planned: f64, observed: f64) -> f64 {
    (1.0 - planned / observed).clamp(-0.5, 1.0)
}

/// `R ← R + log(1 + ρ)·Δt` per cell.
pub fn density_heatmap_accumulate(acc: &mut ScalarField, rho: &ScalarField, dt: f64) {
    for (a, &r) in acc.values.iter_mut().zip(&rho.values) {
        *a += (1.0 + r.max(0.0)).ln() * dt;
    }
}

/// `F = Σ ρ·Φ·Δx·Δy`.
pub fn lyapunov_value(rho: &ScalarField, phi: &ScalarField) -> f64 {
    let area = rho.grid.cell_area();
    rho.values.iter().zip(&phi.values).map(|(r, p)| r * p).sum::<f64>() * area
}

/// One explicit step of `ρ_t = ∇·(ρ∇ρ)` in flux form with no flux through the
/// domain boundary; face coefficients are the mean of the two cells.
pub fn diffusion_step(rho: &ScalarField, dt: f64) -> ScalarField {
    let g = rho.grid;
    let mut next = rho.clone();
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.flat(i, j);
            for (di, dj, h) in [(1, 0, g.dx), (0, 1, g.dy)] {
                let Some((a, b)) = g.offset(i, j, di, dj) else { continue };
                let n = g.flat(a, b);
                let flux = 0.5 * (rho.values[k] + rho.values[n]) * (rho.values[n] - rho.values[k]) / (h * h);
                next.values[k] += dt * flux;
                next.values[n] -= dt * flux;
            }
        }
    }
    next
}

/// Largest step for which [`diffusion_step`] is monotone and `F = Σρ²ΔxΔy`
/// cannot increase, with a safety factor.
pub fn stable_diffusion_dt(rho: &ScalarField) -> f64 {
    let g = rho.grid;
    let m = rho.max().max(1e-12);
    0.2 * g.dx.min(g.dy).powi(2) / m
}

/// Runs `steps` diffusion steps and returns the final density with the
/// functional `F(ρ, ρ)` before the first and after every step.
pub fn diffusion_run(rho0: &ScalarField, dt: f64, steps: usize) -> Result<(ScalarField, Vec<f64>)> {
    positive("dt", dt)?;
    if rho0.values.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
        return Err(Error::InvalidArgument("diffusion needs a finite non-negative density".into()));
    }
    let mut rho = rho0.clone();
    let mut series = Vec::with_capacity(steps + 1);
    series.push(lyapunov_value(&rho, &rho));
    for _ in 0..steps {
        rho = diffusion_step(&rho, dt);
        series.push(lyapunov_value(&rho, &rho));
    }
    Ok((rho, series))
}

/// Life-cycle of one particle.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleRecord {
    pub spawn: Vec2,
    pub spawn_t: f64,
    pub exit_t: Option<f64>,
    /// Planned path length over the particle's maximum speed (s).
    pub planned_t: f64,
    /// Distance covered while active (m).
    pub travelled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleRow {
    pub id: usize,
    pub spawn_x: f64,
    pub spawn_y: f64,
    pub spawn_t: f64,
    pub exit_t: Option<f64>,
    pub planned_t: f64,
    pub delay: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub n_active: usize,
    pub max_density: f64,
    /// Absent when no pressure was solved in the step.
    pub fb_residual: Option<f64>,
    pub lyapunov: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MdeRow {
    radius: f64,
    count: usize,
}

#[derive(Clone, Debug)]
pub struct Metrics {
    pub config: SimConfig,
    pub scene: SceneSpec,
    pub records: Vec<ParticleRecord>,
    pub heatmap: ScalarField,
    pub series: Vec<SeriesRow>,
    /// Per recorded step, active particles whose nearest neighbour is closer
    /// than each of `config.mde_radii`.
    pub mde_series: Vec<Vec<usize>>,
    /// The same counts after the last step.
    pub mde_final: Vec<usize>,
    pub lcp_iterations: usize,
    pub lcp_unconverged: usize,
}

impl Metrics {
    pub fn particle_rows(&self) -> Vec<ParticleRow> {
        self.records
            .iter()
            .enumerate()
            .map(|(id, r)| ParticleRow {
                id,
                spawn_x: r.spawn.x,
                spawn_y: r.spawn.y,
                spawn_t: r.spawn_t,
                exit_t: r.exit_t,
                planned_t: r.planned_t,
                delay: r.exit_t.map(|t| relative_delay(r.planned_t, t - r.spawn_t)),
            })
            .collect()
    }

    /// Total distance over total active time of all particles.
    pub fn mean_realized_speed(&self, end_time: f64) -> f64 {
        let (d, t) = self.records.iter().fold((0.0, 0.0), |(d, t), r| {
            (d + r.travelled, t + (r.exit_t.unwrap_or(end_time) - r.spawn_t))
        });
        if t > 0.0 {
            d / t
        } else {
            0.0
        }
    }

    pub fn first_exit_time(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.exit_t).min_by(f64::total_cmp)
    }

    /// Time of the last exit, if every particle has left.
    pub fn clear_time(&self) -> Option<f64> {
        if self.records.is_empty() || self.records.iter().any(|r| r.exit_t.is_none()) {
            return None;
        }
        self.records.iter().filter_map(|r| r.exit_t).max_by(f64::total_cmp)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub particles: ParticleSet,
    /// Density interpolated at the last recorded step.
    pub density: ScalarField,
    pub time: f64,
    pub steps: usize,
}

/// Route data for one particle.
enum Guide {
    None,
    Follower(PathFollower),
}

struct Driver<'a> {
    config: &'a SimConfig,
    scene: &'a SceneSpec,
    grid: Grid,
    mask: Vec<bool>,
    kernel: KernelSpec,
    pressure: PressureParams,
    rng: RngState,
    graph: Option<VisibilityGraph>,
    /// Once-marched potential (combined mode) and its uniform speed field.
    static_potential: Option<(PotentialField, SpeedField)>,
    goal: Vec<bool>,
    /// Unit-cost distance to the exits, for planned times of grid planners.
    distance: Option<ScalarField>,
    guides: Vec<Guide>,
    warm: Option<Vec<f64>>,
    stalled: Vec<bool>,
    last_iterations: usize,
    last_converged: bool,
}

impl<'a> Driver<'a> {
    fn new(config: &'a SimConfig, scene: &'a SceneSpec) -> Result<Self> {
        config.validate()?;
        scene.validate()?;
        let grid = Grid::for_scene(scene, config.cell_size);
        let mask = obstacle_cell_mask(scene, &grid);
        let exits: Vec<Rect> = scene.exits.iter().map(|e| e.region).collect();
        let goal = region_cell_mask(&exits, &grid);
        let mut d = Driver {
            config,
            scene,
            grid,
            kernel: config.kernel_spec()?,
            pressure: config.pressure_params()?,
            rng: RngState::new(config.seed),
            graph: None,
            static_potential: None,
            goal,
            distance: None,
            guides: Vec::new(),
            warm: None,
            stalled: Vec::new(),
            last_iterations: 0,
            last_converged: true,
            mask,
        };
        match config.mode {
            Mode::VisgraphUic => {
                d.graph = Some(build_graph(scene.domain(), &scene.obstacles, config.graph.margin, &exits)?);
            }
            Mode::Eikonal | Mode::Combined => {
                let unit = uniform_unit_cost(grid, &d.mask, 1.0);
                d.distance = Some(fast_march(&d.mask, &d.goal, &unit)?.phi);
                if config.mode == Mode::Combined {
                    let empty = ScalarField::zeros(grid);
                    let speed = compute_speed_field(&empty, &config.planner)?;
                    let disc = compute_discomfort(&empty, &d.mask, &config.planner)?;
                    let p = &config.planner;
                    let u = compute_unit_cost(&speed, &disc, &d.mask, p.alpha, p.beta, p.gamma);
                    d.static_potential = Some((fast_march(&d.mask, &d.goal, &u)?, speed));
                }
            }
        }
        Ok(d)
    }

    fn planned_length(&mut self, x: Vec2) -> Result<(f64, Guide)> {
        if let Some(graph) = &self.graph {
            let path = shortest_path(graph, x, self.config.graph.waypoint_spacing)?;
            let len = path.length;
            return Ok((len, Guide::Follower(PathFollower::new(path, self.config.graph.lookahead))));
        }
        let phi = self.distance.as_ref().expect("grid planners keep a distance field");
        Ok((sample_finite(phi, x)?, Guide::None))
    }

    fn register(&mut self, particles: &ParticleSet, ids: &[usize], t: f64, records: &mut Vec<ParticleRecord>) -> Result<()> {
        for &i in ids {
            let x = particles.positions[i];
            let (len, guide) = self.planned_length(x)?;
            debug_assert_eq!(records.len(), i);
            records.push(ParticleRecord {
                spawn: x,
                spawn_t: t,
                exit_t: None,
                planned_t: len / particles.max_speeds[i],
                travelled: 0.0,
            });
            self.guides.push(guide);
            self.stalled.push(false);
        }
        Ok(())
    }

    fn initial_particles(&mut self) -> Result<ParticleSet> {
        let c = self.config;
        if c.initial_count == 0 {
            return Ok(ParticleSet::default());
        }
        if let Some([cx, cy, r]) = c.initial_disc {
            spawn_in_disc(c.initial_count, Vec2::new(cx, cy), r, self.scene, &c.speed, &mut self.rng)
        } else if let Some([x0, y0, x1, y1]) = c.initial_region {
            spawn_in_rect(c.initial_count, &Rect::new(x0, y0, x1, y1), self.scene, &c.speed, &mut self.rng)
        } else {
            spawn_uniform(c.initial_count, self.scene, &c.speed, &mut self.rng)
        }
    }

    /// Sets particle velocities for the coming step; returns the density used
    /// and the residual of the pressure solve, if any.
    fn steer(&mut self, particles: &mut ParticleSet) -> Result<(ScalarField, Option<f64>)> {
        let c = self.config;
        match c.mode {
            Mode::Eikonal => {
                let (rho, _) = interpolate_fields(particles, &self.kernel, &self.grid);
                let speed = compute_speed_field(&rho, &c.planner)?;
                let disc = compute_discomfort(&rho, &self.mask, &c.planner)?;
                let p = &c.planner;
                let u = compute_unit_cost(&speed, &disc, &self.mask, p.alpha, p.beta, p.gamma);
                let pot = fast_march(&self.mask, &self.goal, &u)?;
                let v = potential_velocity(particles, &pot, &speed, &self.stalled, &mut self.rng)?;
                particles.velocities = v;
                add_velocity_noise(particles, c.noise_sd, &mut self.rng)?;
                Ok((rho, None))
            }
            Mode::VisgraphUic | Mode::Combined => {
                let desired = self.desired_velocities(particles)?;
                particles.velocities.clone_from(&desired);
                add_velocity_noise(particles, c.noise_sd, &mut self.rng)?;
                let (rho, v) = interpolate_fields(particles, &self.kernel, &self.grid);
                if !c.uic.enabled {
                    return Ok((rho, None));
                }
                let prob = build_lcp(&rho, &v, Some(&self.mask), &self.pressure, c.dt)?;
                let n_max = self.pressure.max_iter.unwrap_or_else(|| default_max_iter(prob.q.len()));
                let sol = pgs_solve(&prob, self.warm.as_deref(), self.pressure.tol, n_max)?;
                let crowd = apply_pressure(&v, &sol.z, self.pressure.v_max);
                for i in particles.active_indices().collect::<Vec<_>>() {
                    let x = particles.positions[i];
                    let r = bilinear_sample(&rho, x)?;
                    let vt = bilinear_sample_vector(&crowd, x)?;
                    let blended = swarm_blend(particles.velocities[i], vt, r, self.pressure.rho_max);
                    particles.velocities[i] = blended.clamp_length(particles.max_speeds[i]);
                }
                self.last_iterations = sol.iterations;
                self.last_converged = sol.converged;
                let fb = sol.fb_residual;
                self.warm = Some(sol.z);
                Ok((rho, Some(fb)))
            }
        }
    }

    fn desired_velocities(&mut self, particles: &ParticleSet) -> Result<Vec<Vec2>> {
        if let Some((pot, speed)) = &self.static_potential {
            return potential_velocity(particles, pot, speed, &self.stalled, &mut self.rng);
        }
        let mut out = vec![Vec2::ZERO; particles.len()];
        for i in particles.active_indices() {
            if let Guide::Follower(f) = &mut self.guides[i] {
                out[i] = f.waypoint_direction(particles.positions[i]) * particles.max_speeds[i];
            }
        }
        Ok(out)
    }
}

/// Potential at `x` from the finite cell values around it.
fn sample_finite(phi: &ScalarField, x: Vec2) -> Result<f64> {
    let v = bilinear_sample(phi, x)?;
    if v.is_finite() {
        return Ok(v);
    }
    let g = phi.grid;
    let (i, j) = g.cell_of_point(x)?;
    let mut best = f64::INFINITY;
    for dj in -1..=1 {
        for di in -1..=1 {
            if let Some((a, b)) = g.offset(i, j, di, dj) {
                let p = phi.at(a, b);
                if p.is_finite() {
                    best = best.min(p + g.center(a, b).distance(x));
                }
            }
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Unreachable { x: x.x, y: x.y })
    }
}

/// Runs a scenario from the configured initial population.
pub fn run(config: &SimConfig, scene: &SceneSpec) -> Result<RunOutput> {
    run_inner(config, scene, None)
}

/// Runs a scenario from an explicit initial population (placed at `t = 0`).
pub fn run_with_particles(config: &SimConfig, scene: &SceneSpec, initial: ParticleSet) -> Result<RunOutput> {
    run_inner(config, scene, Some(initial))
}

fn run_inner(config: &SimConfig, scene: &SceneSpec, initial: Option<ParticleSet>) -> Result<RunOutput> {
    let mut d = Driver::new(config, scene)?;
    let mut particles = match initial {
        Some(p) => p,
        None => d.initial_particles()?,
    };
    let grid = d.grid;
    let mut metrics = Metrics {
        config: config.clone(),
        scene: scene.clone(),
        records: Vec::new(),
        heatmap: ScalarField::zeros(grid),
        series: Vec::new(),
        mde_series: Vec::new(),
        mde_final: Vec::new(),
        lcp_iterations: 0,
        lcp_unconverged: 0,
    };
    let ids: Vec<usize> = (0..particles.len()).collect();
    d.register(&particles, &ids, 0.0, &mut metrics.records)?;

    let n_steps = ((config.t_max / config.dt) - 1e-9).ceil().max(0.0) as usize;
    let mut gates: Vec<ExitGate> = scene.exits.iter().map(|e| ExitGate::new(e.cap)).collect();
    let mut emitted = vec![0u64; scene.entrances.len()];
    let mut density = ScalarField::zeros(grid);
    let mut t = 0.0;
    let mut steps = 0;
    for step in 0..n_steps {
        let wrap = |e: Error| Error::Step { step, time: t, source: Box::new(e) };
        for (e, entrance) in scene.entrances.iter().enumerate() {
            let n = poisson_inflow(entrance, config.dt, emitted[e], &mut d.rng);
            emitted[e] += n;
            let ids = spawn_at_entrance(&mut particles, entrance, n, &config.speed, &mut d.rng);
            d.register(&particles, &ids, t, &mut metrics.records).map_err(wrap)?;
        }
        let pending = scene.entrances.iter().zip(&emitted).any(|(e, &n)| {
            e.rate > 0.0 && e.capacity.is_none_or(|c| n < c)
        });
        if particles.n_active() == 0 && !pending {
            break;
        }

        let (rho, fb) = d.steer(&mut particles).map_err(wrap)?;
        if fb.is_some() {
            metrics.lcp_iterations += d.last_iterations;
            metrics.lcp_unconverged += usize::from(!d.last_converged);
        }
        density_heatmap_accumulate(&mut metrics.heatmap, &rho, config.dt);
        metrics.series.push(SeriesRow {
            t,
            n_active: particles.n_active(),
            max_density: rho.max(),
            fb_residual: fb,
            lyapunov: lyapunov_value(&rho, &rho),
        });
        metrics.mde_series.push(min_distance_report(&particles, &config.mde_radii));
        density = rho;

        let before = particles.positions.clone();
        let candidates = step_positions(&mut particles, config.dt, scene);
        if let Some(dmin) = config.min_distance_correction {
            correct_min_distance(&mut particles, dmin, scene, &mut d.rng).map_err(wrap)?;
        }
        t = (step + 1) as f64 * config.dt;
        for i in particles.active_indices().collect::<Vec<_>>() {
            let moved = before[i].distance(particles.positions[i]);
            metrics.records[i].travelled += moved;
            let intended = particles.velocities[i].norm() * config.dt;
            d.stalled[i] = intended > 0.0 && moved < 0.1 * intended;
        }
        for (x, cand) in candidates.iter().enumerate() {
            for i in gates[x].apply_exit_cap(cand, config.dt) {
                particles.deactivate(i);
                metrics.records[i].exit_t = Some(t);
            }
        }
        steps = step + 1;
    }
    metrics.mde_final = min_distance_report(&particles, &config.mde_radii);
    Ok(RunOutput { metrics, particles, density, time: t, steps })
}

/// Writes `particles.csv`, `heatmap.csv`, `series.csv`, `mde.csv` and
/// `manifest.json` into `dir`, creating it if needed.
pub fn export_metrics(m: &Metrics, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut w = csv_writer(&dir.join("particles.csv"))?;
    w.write_record(["id", "spawn_x", "spawn_y", "spawn_t", "exit_t", "planned_t", "delay"])?;
    for row in m.particle_rows() {
        w.serialize(row)?;
    }
    finish(w, &dir.join("particles.csv"))?;

    m.heatmap.write_csv(dir.join("heatmap.csv"))?;

    let mut w = csv_writer(&dir.join("series.csv"))?;
    w.write_record(["t", "n_active", "max_density", "fb_residual", "lyapunov"])?;
    for row in &m.series {
        w.serialize(row)?;
    }
    finish(w, &dir.join("series.csv"))?;

    let mut w = csv_writer(&dir.join("mde.csv"))?;
    w.write_record(["radius", "count"])?;
    let counts = if m.mde_final.is_empty() { vec![0; m.config.mde_radii.len()] } else { m.mde_final.clone() };
    for (&radius, &count) in m.config.mde_radii.iter().zip(&counts) {
        w.serialize(MdeRow { radius, count })?;
    }
    finish(w, &dir.join("mde.csv"))?;

    let scene: serde_json::Value = serde_json::from_str(&m.scene.to_json())?;
    let manifest = serde_json::json!({
        "seed": m.config.seed,
        "config": m.config,
        "scene": scene,
    });
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads back a `particles.csv` written by [`export_metrics`].
pub fn read_particle_rows(path: impl AsRef<Path>) -> Result<Vec<ParticleRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
