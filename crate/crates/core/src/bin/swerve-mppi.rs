use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use swerve_mppi::harness::{episode_world, run_batch, ControllerKind, RunConfig};
use swerve_mppi::kinematics::{
    jacobian_of_projection, operating_point, ControlSpace, VehicleCommand8, JACOBIAN_STEP,
};

#[derive(Parser)]
#[command(version, about = "MPPI navigation for four-wheel independent drive and steering vehicles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of navigation episodes and write the results table.
    Run(RunArgs),
    /// Plan the global path of one episode leg and dump it as CSV.
    PlanDebug(PlanArgs),
    /// Print normalized projection Jacobians of both sampling spaces.
    Jacobian(JacobianArgs),
}

#[derive(Args)]
struct Common {
    /// Builtin scenario name (cylinder_garden, maze) or scenario file.
    #[arg(long)]
    scenario: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)
                .with_context(|| format!("reading config {}", path.display()))?;
        }
        if let Some(s) = &self.scenario {
            cfg.set_scenario(s)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// mppi3a, mppi3b, mppi4 or hybrid.
    #[arg(long)]
    controller: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Results CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-episode trace CSVs.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,
    /// Episode whose world is used.
    #[arg(long, default_value_t = 0)]
    episode: usize,
    /// Leg to plan: 0 is start to the first goal.
    #[arg(long, default_value_t = 0)]
    leg: usize,
    /// Path CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also save the occupancy map here.
    #[arg(long)]
    map_out: Option<PathBuf>,
}

#[derive(Args)]
struct JacobianArgs {
    /// Steering angle of every wheel [rad].
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_4, allow_negative_numbers = true)]
    steer: f64,
    /// Speed of every wheel [m/s].
    #[arg(long, default_value_t = 0.7, allow_negative_numbers = true)]
    speed: f64,
    /// Magnitude below which a normalized entry counts as zero.
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(c) = &args.controller {
        cfg.controller = c.parse::<ControllerKind>()?;
    }
    if let Some(n) = args.episodes {
        cfg.episodes = n;
    }
    let result = run_batch(&cfg, args.trace_dir.as_deref())?;
    result.write_csv(output(&args.out)?)?;
    let s = &result.summary;
    eprintln!(
        "{}: {}/{} succeeded ({:.1}%), episode time {:.2} s, solve {:.1} ms",
        cfg.controller.name(),
        s.successes,
        s.episodes,
        s.success_rate,
        s.episode_time_s,
        s.calc_time_ms
    );
    Ok(())
}

fn plan_debug(args: PlanArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let (world, grids) = episode_world(&cfg, args.episode)?;
    if args.leg >= world.goals.len() {
        bail!("leg {} out of range: the episode has {} goals", args.leg, world.goals.len());
    }
    let from = if args.leg == 0 { world.start } else { world.goals[args.leg - 1] };
    let path = grids.plan(&from, &world.goals[args.leg], cfg.path_spacing)?;
    if let Some(p) = &args.map_out {
        world.grid.save(p)?;
    }
    path.write_csv(output(&args.out)?)?;
    eprintln!("{} waypoints, {:.2} m", path.len(), path.length());
    Ok(())
}

fn jacobian(args: JacobianArgs) -> Result<()> {
    let geom = Default::default();
    let cmd = VehicleCommand8 {
        steer: [args.steer; 4],
        speed: [args.speed; 4],
    };
    let mut out = io::stdout().lock();
    writeln!(out, "operating point: steer {} rad, speed {} m/s on every wheel", args.steer, args.speed)?;
    let labels = ["steer_fl", "steer_fr", "steer_rl", "steer_rr", "speed_fl", "speed_fr", "speed_rl", "speed_rr"];
    for space in [ControlSpace::ThreeDof, ControlSpace::FourDof] {
        let point = operating_point(space, &cmd, &geom);
        let j = jacobian_of_projection(space, &point, &geom, JACOBIAN_STEP)?;
        let norm = j.normalized();
        writeln!(out, "\n{} at {:?}", space.label(), point)?;
        for (i, label) in labels.iter().enumerate() {
            let row: Vec<String> = (0..norm.ncols()).map(|c| format!("{:>7.3}", norm[(i, c)])).collect();
            writeln!(out, "  {label:<9}{}", row.join(" "))?;
        }
        writeln!(
            out,
            "  near-zero (|v| < {}): {} of {}",
            args.threshold,
            j.near_zero_count(args.threshold),
            norm.len()
        )?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::PlanDebug(a) => plan_debug(a),
        Command::Jacobian(a) => jacobian(a),
    }
}
