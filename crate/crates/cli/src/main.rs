use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trajsync::bench::{run_monte_carlo, write_outputs, BenchSpec};
use trajsync::estimators::{reconstruct, LiOptions, Method, MethodOptions};
use trajsync::io::{estimate_file, format_sig9, read_dataset, read_json, write_dataset, write_json, Dataset, EstimateFile};
use trajsync::nlls::SolveOptions;
use trajsync::simulator::{apply_noise, localization_error, observation_times, synthesize_scene, NoiseConfig, SimulationConfig};
use trajsync::Error;

#[derive(Parser)]
#[command(name = "trajsync", version, about = "Trajectory reconstruction from unsynchronized cameras")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a noisy dataset with ground truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Noise seed; overrides the seed in the config.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct target trajectories from a dataset.
    Solve {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// One polynomial order for all targets, or one per target.
        #[arg(long, value_delimiter = ',', required = true)]
        order: Vec<usize>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also estimate the frame rate of every non-gauge camera.
        #[arg(long)]
        optimize_fps: bool,
        /// Weight pulling refined rotations towards the measured ones (alg2).
        #[arg(long, default_value_t = 0.0)]
        rotation_prior: f64,
    },
    /// Compare an estimate against a dataset's ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        /// Dataset carrying ground truth.
        #[arg(long)]
        truth: PathBuf,
        /// Samples per target over its observed time window.
        #[arg(long)]
        grid: usize,
    },
    /// Run a Monte Carlo sweep and write the CSV tables.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(err: &Error) -> u8 {
    if err.is_geometric() {
        3
    } else if err.is_solver_failure() {
        4
    } else {
        2
    }
}

fn simulate(config: &PathBuf, seed: u64, out: &PathBuf) -> Result<String, Error> {
    let cfg: SimulationConfig = read_json(config)?;
    let scene = synthesize_scene(&cfg.scene.build())?;
    let noise = cfg.noise.unwrap_or_else(|| NoiseConfig::none(seed)).with_seed(seed);
    let observations = apply_noise(&scene.observations, &noise)?;
    let n = observations.observations.len();
    write_dataset(out, &Dataset { observations, truth: Some(scene.truth) })?;
    Ok(format!("wrote {n} observations to {}", out.display()))
}

fn solve(
    method: Method,
    orders: &[usize],
    data: &PathBuf,
    out: &PathBuf,
    optimize_fps: bool,
    rotation_prior: f64,
) -> Result<String, Error> {
    let dataset = read_dataset(data)?;
    let options = MethodOptions {
        optimize_fps,
        rotation_prior_weight: rotation_prior,
        solve: SolveOptions::default(),
        li: LiOptions::default(),
    };
    let result = reconstruct(method, &dataset.observations, orders, &options)?;
    write_json(out, &estimate_file(method, &result))?;
    let mut lines = vec![format!(
        "{method}: {} iterations, cost {} -> {}",
        result.report.iterations,
        format_sig9(result.report.initial_cost),
        format_sig9(result.report.final_cost)
    )];
    for (c, tm) in result.time_models.iter().enumerate() {
        lines.push(format!("camera {c}: fps {} offset {} s", format_sig9(tm.alpha), format_sig9(tm.beta)));
    }
    Ok(lines.join("\n"))
}

fn eval(est: &PathBuf, truth: &PathBuf, grid: usize) -> Result<String, Error> {
    if grid < 2 {
        return Err(Error::InvalidInput("grid needs at least 2 samples".into()));
    }
    let estimate: EstimateFile = read_json(est)?;
    let dataset = read_dataset(truth)?;
    let gt = dataset
        .truth
        .ok_or_else(|| Error::InvalidInput(format!("{} has no ground truth", truth.display())))?;
    let trajectories = estimate.trajectories()?;
    let mut out = vec!["target,sigma_x_m,sigma_y_m,sigma_z_m,sigma_3d_m".to_string()];
    for (target, est_traj) in &trajectories {
        let truth_traj = gt
            .trajectories
            .get(target)
            .ok_or_else(|| Error::InvalidInput(format!("no ground truth for target {target}")))?;
        let times = observation_times(&dataset.observations, &gt, *target);
        let (lo, hi) = times
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
        if !lo.is_finite() {
            return Err(Error::InvalidInput(format!("target {target} has no observations")));
        }
        let samples: Vec<f64> = (0..grid).map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64).collect();
        let e = localization_error(est_traj, truth_traj, &samples)?;
        out.push(format!(
            "{target},{},{},{},{}",
            format_sig9(e.sigma_x),
            format_sig9(e.sigma_y),
            format_sig9(e.sigma_z),
            format_sig9(e.sigma_3d)
        ));
    }
    out.push(String::new());
    out.push("camera,fps_est,fps_true,offset_err_s".into());
    for rec in &estimate.time_models {
        let truth_tm = gt
            .time_models
            .get(rec.camera)
            .ok_or_else(|| Error::InvalidInput(format!("no ground truth clock for camera {}", rec.camera)))?;
        out.push(format!(
            "{},{},{},{}",
            rec.camera,
            format_sig9(rec.time_model.alpha),
            format_sig9(truth_tm.alpha),
            format_sig9(rec.time_model.beta - truth_tm.beta)
        ));
    }
    Ok(out.join("\n"))
}

fn bench(spec: &PathBuf, out_dir: &PathBuf, parallel: usize) -> Result<String, Error> {
    let resolved = BenchSpec::load(spec)?;
    let result = run_monte_carlo(&resolved, parallel.max(1))?;
    let written = write_outputs(&result, &resolved.outputs, out_dir)?;
    let mut lines = vec!["offset_frames,estimator,mean_err_m,std_err_m,failures".to_string()];
    for c in &result.cells {
        lines.push(format!(
            "{},{},{},{},{}{}",
            format_sig9(c.offset_frames),
            c.estimator,
            format_sig9(c.mean_err_m),
            format_sig9(c.std_err_m),
            c.failures,
            if c.flagged { ",FLAGGED" } else { "" }
        ));
    }
    for path in written {
        lines.push(format!("wrote {}", path.display()));
    }
    Ok(lines.join("\n"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate { config, seed, out } => simulate(config, *seed, out),
        Command::Solve { method, order, data, out, optimize_fps, rotation_prior } => {
            solve(*method, order, data, out, *optimize_fps, *rotation_prior)
        }
        Command::Eval { est, truth, grid } => eval(est, truth, *grid),
        Command::Bench { spec, out_dir, parallel } => bench(spec, out_dir, *parallel),
    };
    match outcome {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
