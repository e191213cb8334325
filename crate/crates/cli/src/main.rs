//! `crowdsim`: run scenarios and the numerical self-checks from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crowdsim_core::eikonal::{fast_march, uniform_unit_cost};
use crowdsim_core::rng::RngState;
use crowdsim_core::scene::load_scenario;
use crowdsim_core::sim::{export_metrics, run, Mode, SimConfig};
use crowdsim_core::sph::{lattice_density_probe, KernelSpec, LatticeAlignment};
use crowdsim_core::uic::{fb_residual, lcp_active_set_oracle, pgs_solve, random_spd_lcp};
use crowdsim_core::{Error, Grid};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "crowdsim", version, about = "Multiscale crowd simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write the metric files.
    Run {
        /// TOML configuration; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON scenario file.
        #[arg(long)]
        scene: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// eikonal, visgraph_uic or combined.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
    },
    /// Print kernel density probes on triangular lattices.
    ProbeKernel,
    /// Print the error of a marched distance field against the Euclidean distance.
    ProbeEikonal {
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    /// Compare projected Gauss-Seidel with exhaustive active-set enumeration.
    ProbeLcp {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Check a scenario file and report its geometry.
    ValidateScene {
        #[arg(long)]
        scene: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "eikonal" => Ok(Mode::Eikonal),
        "visgraph_uic" => Ok(Mode::VisgraphUic),
        "combined" => Ok(Mode::Combined),
        _ => Err(format!("unknown mode {s:?}; expected eikonal, visgraph_uic or combined")),
    }
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure { code: EXIT_VALIDATION, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure { code: EXIT_RUNTIME, message: message.into() }
    }
}

fn input_error(e: Error) -> Failure {
    Failure::validation(e.to_string())
}

fn quiet() -> bool {
    std::env::var("CROWDSIM_LOG").is_ok_and(|v| v.eq_ignore_ascii_case("quiet"))
}

fn load_config(path: Option<&Path>) -> Result<SimConfig, Failure> {
    let Some(path) = path else {
        return Ok(SimConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::validation(format!("failed to read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::validation(format!("invalid config {}: {e}", path.display())))
}

fn cmd_run(
    config: Option<&Path>,
    scene: &Path,
    out: &Path,
    seed: Option<u64>,
    mode: Option<Mode>,
) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    cfg.validate().map_err(input_error)?;
    let scene = load_scenario(scene).map_err(input_error)?;
    let result = run(&cfg, &scene).map_err(|e| Failure::runtime(e.to_string()))?;
    export_metrics(&result.metrics, out).map_err(|e| Failure::runtime(e.to_string()))?;
    if !quiet() {
        let m = &result.metrics;
        let exited = m.records.iter().filter(|r| r.exit_t.is_some()).count();
        println!(
            "t = {:.2} s, {} steps, {} particles, {} exited, {} still active; metrics in {}",
            result.time,
            result.steps,
            m.records.len(),
            exited,
            result.particles.n_active(),
            out.display()
        );
    }
    Ok(())
}

fn cmd_probe_kernel() -> Result<(), Failure> {
    let mut ok = true;
    for d in [0.5, 1.0, 2.0] {
        let k = KernelSpec::wendland(d);
        let upper = lattice_density_probe(d, &k, LatticeAlignment::ParticleCentered);
        let lower = lattice_density_probe(d, &k, LatticeAlignment::CentroidCentered);
        let exact = 2.0 / (3f64.sqrt() * d * d);
        let up_ok = (upper * d * d / 1.19 - 1.0).abs() <= 0.01;
        let lo_ok = (lower * d * d / 1.14 - 1.0).abs() <= 0.01;
        let bracket = lower <= exact && exact <= upper;
        ok &= up_ok && lo_ok && bracket;
        println!(
            "d = {d}: particle-centred {:.4}/d^2 [{}], centroid-centred {:.4}/d^2 [{}], exact {:.4}/d^2 bracketed [{}]",
            upper * d * d,
            verdict(up_ok),
            lower * d * d,
            verdict(lo_ok),
            exact * d * d,
            verdict(bracket)
        );
    }
    finish(ok, "kernel lattice bounds")
}

fn cmd_probe_eikonal(n: usize) -> Result<(), Failure> {
    if n < 3 {
        return Err(Failure::validation("--n must be at least 3"));
    }
    let dx = 1.0 / n as f64;
    let g = Grid::new(n, n, dx, dx);
    let mask = vec![false; g.len()];
    let mut goal = vec![false; g.len()];
    let c = g.flat(n / 2, n / 2);
    goal[c] = true;
    let start = std::time::Instant::now();
    let pot = fast_march(&mask, &goal, &uniform_unit_cost(g, &mask, 1.0)).map_err(|e| Failure::runtime(e.to_string()))?;
    let elapsed = start.elapsed();
    let centre = g.center_flat(c);
    let err = (0..g.len())
        .map(|k| (pot.phi.values[k] - g.center_flat(k).distance(centre)).abs())
        .fold(0.0, f64::max);
    let ok = err <= 2.0 * dx;
    println!(
        "{n}x{n} grid: max |phi - distance| = {err:.6} ({:.3} cells), bound 2 cells [{}], {:.1} ms",
        err / dx,
        verdict(ok),
        elapsed.as_secs_f64() * 1e3
    );
    finish(ok, "eikonal accuracy")
}

fn cmd_probe_lcp(n: usize, trials: usize, seed: u64) -> Result<(), Failure> {
    if n == 0 || n > 12 {
        return Err(Failure::validation("--n must be between 1 and 12"));
    }
    let mut rng = RngState::new(seed);
    let mut max_dev = 0.0f64;
    let mut max_fb = 0.0f64;
    for _ in 0..trials {
        let prob = random_spd_lcp(n, &mut rng);
        let exact = lcp_active_set_oracle(&prob.m, &prob.q).map_err(|e| Failure::runtime(e.to_string()))?;
        let sol = pgs_solve(&prob, None, 1e-13, 1_000_000).map_err(|e| Failure::runtime(e.to_string()))?;
        let dev = sol.z.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        max_dev = max_dev.max(dev);
        max_fb = max_fb.max(fb_residual(&sol.w, &sol.z));
    }
    let ok = max_dev <= 1e-6;
    println!(
        "max deviation {} 1e-6 (observed {max_dev:.3e} over {trials} trials, n = {n}); max fb_residual {max_fb:.3e}",
        if ok { "≤" } else { ">" }
    );
    finish(ok, "lcp oracle agreement")
}

fn cmd_validate_scene(path: &Path) -> Result<(), Failure> {
    let scene = load_scenario(path).map_err(input_error)?;
    println!(
        "{}: valid; {} x {} m, {} obstacles ({:.1}% of the area), {} entrances, {} exits, free area {:.1} m^2",
        path.display(),
        scene.width,
        scene.height,
        scene.obstacles.len(),
        100.0 * scene.obstacle_fraction(),
        scene.entrances.len(),
        scene.exits.len(),
        scene.free_area()
    );
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn finish(ok: bool, what: &str) -> Result<(), Failure> {
    if ok {
        Ok(())
    } else {
        Err(Failure::runtime(format!("{what} check failed")))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run { config, scene, out, seed, mode } => cmd_run(config.as_deref(), scene, out, *seed, *mode),
        Command::ProbeKernel => cmd_probe_kernel(),
        Command::ProbeEikonal { n } => cmd_probe_eikonal(*n),
        Command::ProbeLcp { n, trials, seed } => cmd_probe_lcp(*n, *trials, *seed),
        Command::ValidateScene { scene } => cmd_validate_scene(scene),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
