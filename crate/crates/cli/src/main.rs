//! `flownav` command-line tool.
//!
//! Exit codes: 0 success, 1 usage, 2 runtime failure, 3 a requested check
//! (gradient tolerance, fps floor, success threshold) did not pass.

use clap::{Parser, Subcommand};
use flownav::bench::{run_benchmark, BenchConfig};
use flownav::camera::CameraPose;
use flownav::checkpoint::Checkpoint;
use flownav::config::Config;
use flownav::eval::{evaluate, EvalRequest};
use flownav::flow::{reprojection_flow, FlowImage, FlowNoiseConfig};
use flownav::gradcheck::{grad_check, GradCheckConfig};
use flownav::io;
use flownav::render::ray_depth;
use flownav::rollout::CameraConfig;
use flownav::train::{train, Trainer};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "flownav", version, about = "Flow-based navigation policies trained through a differentiable simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes metrics.jsonl and checkpoints under --out.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override train.iterations.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate a checkpoint on held-out scenes.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        /// Flow noise: a TOML file, inline `key=value,...`, or `none`.
        #[arg(long)]
        noise: Option<String>,
        /// Reference speed (m/s).
        #[arg(long)]
        speed: Option<f64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Write report.json and one trajectory CSV per episode here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with 3 if the success rate is below this.
        #[arg(long)]
        min_success: Option<f64>,
    },
    /// Render depth (.pgm + .dpth) and flow (.flo) along a trajectory.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Camera settings are read from `env.camera` of this config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare BPTT gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long)]
        collision: bool,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximum relative error; defaults to 1e-5, or 1e-4 with --collision.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Depth + flow rendering throughput.
    Benchmark {
        /// HxW, e.g. 48x64.
        #[arg(long, default_value = "48x64")]
        resolution: String,
        #[arg(long, default_value_t = 8)]
        threads: usize,
        #[arg(long, default_value_t = 100)]
        primitives: usize,
        #[arg(long, default_value_t = 2000)]
        frames_per_thread: usize,
        /// Exit with 3 if the aggregate rate is below this.
        #[arg(long)]
        min_fps: Option<f64>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] flownav::Error),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Train {
            config,
            out,
            resume,
            iterations,
        } => cmd_train(config.as_deref(), &out, resume.as_deref(), iterations),
        Command::Eval {
            ckpt,
            episodes,
            noise,
            speed,
            threads,
            out,
            min_success,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let mut req = EvalRequest::from_config(&ckpt.config);
            if let Some(n) = episodes {
                req.episodes = n;
            }
            if let Some(s) = noise {
                req.noise = parse_noise(&s)?;
            }
            if let Some(v) = speed {
                req.speed = v;
            }
            if let Some(t) = threads {
                req.threads = t;
            }
            let m = evaluate(&ckpt.params, &ckpt.config, &req)?;
            println!(
                "episodes={} success_rate={:.3} collision_rate={:.3} mean_speed={:.3} tracking_error={:.3}",
                m.episodes.len(),
                m.success_rate,
                m.collision_rate,
                m.mean_speed,
                m.tracking_error
            );
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(flownav::Error::from)?;
                std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&m).map_err(flownav::Error::from)?)
                    .map_err(flownav::Error::from)?;
                for e in &m.episodes {
                    let f = std::fs::File::create(dir.join(format!("episode_{:03}.csv", e.index)))
                        .map_err(flownav::Error::from)?;
                    io::write_trajectory(f, &e.trajectory)?;
                }
            }
            match min_success {
                Some(t) if m.success_rate < t => Err(CliError::Check(format!("success rate {} < {t}", m.success_rate))),
                _ => Ok(()),
            }
        }
        Command::Render {
            scene,
            trajectory,
            out,
            config,
        } => cmd_render(&scene, &trajectory, &out, config.as_deref()),
        Command::Gradcheck {
            steps,
            collision,
            alpha,
            seed,
            tol,
        } => {
            let cfg = GradCheckConfig {
                steps,
                collision,
                alpha,
                seed,
                ..GradCheckConfig::default()
            };
            let report = grad_check(&cfg)?;
            println!("{}", report.to_text()?);
            let tol = tol.unwrap_or(if collision { 1e-4 } else { 1e-5 });
            if report.max_rel_error < tol {
                Ok(())
            } else {
                Err(CliError::Check(format!("max relative error {:e} >= {tol:e}", report.max_rel_error)))
            }
        }
        Command::Benchmark {
            resolution,
            threads,
            primitives,
            frames_per_thread,
            min_fps,
        } => {
            let (height, width) = parse_resolution(&resolution)?;
            let report = run_benchmark(&BenchConfig {
                height,
                width,
                threads,
                primitives,
                frames_per_thread,
                ..BenchConfig::default()
            })?;
            println!(
                "resolution={height}x{width} threads={threads} cores={} primitives={primitives} frames={} seconds={:.3} fps={:.0}",
                report.available_cores, report.frames, report.seconds, report.frames_per_sec
            );
            match min_fps {
                Some(f) if report.frames_per_sec < f => {
                    Err(CliError::Check(format!("{:.0} fps < {f}", report.frames_per_sec)))
                }
                _ => Ok(()),
            }
        }
    }
}

fn cmd_train(config: Option<&Path>, out: &Path, resume: Option<&Path>, iterations: Option<usize>) -> CliResult<()> {
    let mut trainer = match resume {
        Some(p) => Trainer::from_checkpoint(Checkpoint::load(p)?)?,
        None => Trainer::new(match config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        })?,
    };
    if let Some(n) = iterations {
        trainer.config.train.iterations = n;
    }
    std::fs::create_dir_all(out).map_err(flownav::Error::from)?;
    std::fs::write(out.join("config.toml"), trainer.config.to_toml_string()?).map_err(flownav::Error::from)?;
    let summary = train(&mut trainer, out)?;
    if let Some(last) = summary.records.last() {
        println!(
            "iteration={} loss={:.4} mean_speed={:.3} collision_rate={:.3} wall_time={:.1}s",
            last.iteration, last.loss.total, last.mean_speed, last.collision_rate, last.wall_time_secs
        );
    }
    println!("checkpoint={}", summary.checkpoint.display());
    Ok(())
}

fn cmd_render(scene: &Path, trajectory: &Path, out: &Path, config: Option<&Path>) -> CliResult<()> {
    let camera = match config {
        Some(p) => Config::load(p)?.env.camera,
        None => CameraConfig::default(),
    };
    let intr = camera.intrinsics()?;
    let scene = io::read_scene(scene)?;
    let f = std::fs::File::open(trajectory).map_err(flownav::Error::from)?;
    let steps = io::read_trajectory(f)?;
    std::fs::create_dir_all(out).map_err(flownav::Error::from)?;
    let mut prev = None;
    for (k, s) in steps.iter().enumerate() {
        let pose = CameraPose::new(s.position, s.yaw);
        let depth = ray_depth(&scene, pose, &intr)?;
        let flow = match &prev {
            Some(d) => reprojection_flow(d, d.pose, pose, &intr)?,
            None => FlowImage::zeros(intr),
        };
        io::write_depth(&out.join(format!("depth_{k:05}.pgm")), &depth)?;
        io::write_flo(&out.join(format!("flow_{k:05}.flo")), &flow)?;
        prev = Some(depth);
    }
    println!("frames={} out={}", steps.len(), out.display());
    Ok(())
}

fn parse_resolution(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("resolution must look like 48x64, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h = h.trim().parse().map_err(|_| bad())?;
    let w = w.trim().parse().map_err(|_| bad())?;
    Ok((h, w))
}

/// `none`, a TOML file, or inline `key=value` pairs separated by commas.
fn parse_noise(s: &str) -> CliResult<FlowNoiseConfig> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(FlowNoiseConfig::default());
    }
    let path = Path::new(s);
    let text = if path.is_file() {
        std::fs::read_to_string(path).map_err(flownav::Error::from)?
    } else {
        s.replace(',', "\n")
    };
    let cfg: FlowNoiseConfig = toml::from_str(&text).map_err(|e| CliError::Usage(format!("noise config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_parses() {
        assert_eq!(parse_resolution("48x64").unwrap(), (48, 64));
        assert!(parse_resolution("48*64").is_err());
    }

    #[test]
    fn inline_noise_parses() {
        let n = parse_noise("gaussian_sigma=0.5,dropout_prob=0.1").unwrap();
        assert_eq!(n.gaussian_sigma, 0.5);
        assert_eq!(n.dropout_prob, 0.1);
        assert!(parse_noise("sigma=1").is_err());
        assert!(parse_noise("none").unwrap().is_zero());
    }
}
