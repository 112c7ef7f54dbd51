//! Batched BPTT training with a uniform reference-speed curriculum.

use crate::autodiff::{adam_step, OptimizerState, Real, StepOutcome};
use crate::checkpoint::{Checkpoint, TrainingMeta};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::loss::{record_total_loss, LossBreakdown};
use crate::math::Vec3;
use crate::policy::{init_params, PolicyParams};
use crate::rollout::{rollout_recorded, start_state, Episode, EpisodeContext, Outcome, Recorder, RolloutOptions};
use crate::scene::{generate_scene, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Mixes run seed, iteration and environment index into an episode seed.
pub fn episode_seed(seed: u64, iteration: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(iteration.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index.wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(0x2545_F491_4F6C_DD1D);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scene plus start/goal for one episode. `speed` overrides the curriculum
/// draw when given.
pub fn sample_episode(cfg: &Config, seed: u64, speed: Option<f64>) -> Result<(Scene, Episode)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = cfg.curriculum.speed_range;
    let drawn = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let lat = cfg.curriculum.lateral_range;
    let mut lateral = || if lat > 0.0 { rng.random_range(-lat..lat) } else { 0.0 };
    let mut gen = cfg.scene;
    gen.start = Vec3::new(gen.start.x, gen.start.y + lateral(), gen.start.z);
    gen.goal = Vec3::new(gen.goal.x, gen.goal.y + lateral(), gen.goal.z);
    let scene = generate_scene(seed, &gen)?;
    Ok((
        scene,
        Episode {
            start: gen.start,
            goal: gen.goal,
            speed: speed.unwrap_or(drawn),
        },
    ))
}

/// Loss, parameter gradient and summary of one recorded episode.
#[derive(Clone, Debug)]
pub struct EpisodeGradient {
    pub loss: LossBreakdown,
    pub grads: Vec<f32>,
    pub steps: usize,
    pub mean_speed: f64,
    pub outcome: Outcome,
    pub speed: f64,
}

pub fn episode_gradient<F: Real>(
    params: &PolicyParams,
    cfg: &Config,
    scene: &Scene,
    episode: Episode,
    horizon: usize,
) -> Result<EpisodeGradient> {
    let env = &cfg.env;
    let decay = cfg.decay.factor(env.dynamics.dt);
    let mut rec = Recorder::<F>::new(params, &start_state(&episode, &env.dynamics), &env.dynamics, decay);
    let ctx = EpisodeContext { scene, env, episode };
    let opts = RolloutOptions {
        steps: horizon,
        ..Default::default()
    };
    let trace = rollout_recorded(params, &ctx, &opts, &mut rec)?;
    let steps = std::mem::take(&mut rec.steps);
    let (loss_node, loss) = record_total_loss(&mut rec.tape, &steps, env.dynamics.quad_radius, env.dynamics.dt, &cfg.loss);
    let grads = rec.tape.backward(loss_node, params.len())?.params;
    Ok(EpisodeGradient {
        loss,
        grads: grads.into_iter().map(|g| g.real() as f32).collect(),
        steps: trace.len(),
        mean_speed: trace.mean_speed(),
        outcome: trace.outcome,
        speed: episode.speed,
    })
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub loss: LossBreakdown,
    pub mean_speed: f64,
    pub collision_rate: f64,
    pub mean_steps: f64,
    /// Reference speeds drawn for this batch.
    pub speeds: Vec<f64>,
    pub skipped: bool,
    pub wall_time_secs: f64,
}

pub struct Trainer {
    pub config: Config,
    pub params: PolicyParams,
    pub optimizer: OptimizerState,
    pub meta: TrainingMeta,
    consecutive_skips: u32,
    pool: rayon::ThreadPool,
}

impl Trainer {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.arch, config.seed)?;
        let optimizer = OptimizerState::new(params.len(), config.optimizer);
        Self::assemble(config, params, optimizer, TrainingMeta::default())
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        Self::assemble(ckpt.config, ckpt.params, ckpt.optimizer, ckpt.meta)
    }

    fn assemble(config: Config, params: PolicyParams, optimizer: OptimizerState, meta: TrainingMeta) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.train.threads)
            .build()
            .map_err(|e| Error::Training(format!("thread pool: {e}")))?;
        Ok(Trainer {
            config,
            params,
            optimizer,
            meta,
            consecutive_skips: 0,
            pool,
        })
    }

    /// Batch-mean gradient and metrics for `iteration` at the current
    /// parameters. Episodes run in parallel; results are reduced in
    /// environment order so the sum is reproducible.
    pub fn batch_gradient(&self, iteration: u64) -> Result<(Vec<f32>, IterationRecord)> {
        let cfg = &self.config;
        let b = cfg.train.batch_size;
        let results: Vec<Result<EpisodeGradient>> = self.pool.install(|| {
            (0..b)
                .into_par_iter()
                .map(|i| {
                    let seed = episode_seed(cfg.seed, iteration, i as u64);
                    let (scene, ep) = sample_episode(cfg, seed, None)?;
                    episode_gradient::<f32>(&self.params, cfg, &scene, ep, cfg.train.horizon)
                })
                .collect()
        });
        let mut acc = vec![0.0f64; self.params.len()];
        let mut loss = LossBreakdown::default();
        let (mut speed, mut collisions, mut steps) = (0.0, 0usize, 0usize);
        let mut speeds = Vec::with_capacity(b);
        for r in results {
            let r = r?;
            for (a, g) in acc.iter_mut().zip(&r.grads) {
                *a += *g as f64;
            }
            loss.velocity += r.loss.velocity;
            loss.collision += r.loss.collision;
            loss.acceleration += r.loss.acceleration;
            loss.jerk += r.loss.jerk;
            loss.total += r.loss.total;
            speed += r.mean_speed;
            collisions += (r.outcome == Outcome::Collided) as usize;
            steps += r.steps;
            speeds.push(r.speed);
        }
        let n = b as f64;
        let grads = acc.iter().map(|a| (a / n) as f32).collect();
        let mean = |x: f64| x / n;
        let record = IterationRecord {
            iteration,
            loss: LossBreakdown {
                velocity: mean(loss.velocity),
                collision: mean(loss.collision),
                acceleration: mean(loss.acceleration),
                jerk: mean(loss.jerk),
                total: mean(loss.total),
            },
            mean_speed: mean(speed),
            collision_rate: collisions as f64 / n,
            mean_steps: steps as f64 / n,
            speeds,
            skipped: false,
            wall_time_secs: self.meta.wall_time_secs,
        };
        Ok((grads, record))
    }

    /// Runs one iteration. Non-finite losses or gradients skip the update;
    /// three in a row abort.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let t0 = Instant::now();
        let iteration = self.meta.iteration;
        let (grads, mut record) = self.batch_gradient(iteration)?;
        let finite = record.loss.total.is_finite();
        let outcome = if finite {
            adam_step(&mut self.params.values, &grads, &mut self.optimizer)
        } else {
            self.optimizer.warnings += 1;
            StepOutcome::Skipped
        };
        self.meta.iteration += 1;
        self.meta.wall_time_secs += t0.elapsed().as_secs_f64();
        record.wall_time_secs = self.meta.wall_time_secs;
        if outcome == StepOutcome::Skipped {
            record.skipped = true;
            self.meta.skipped_iterations += 1;
            self.consecutive_skips += 1;
            if self.consecutive_skips >= 3 {
                return Err(Error::Training(format!(
                    "three consecutive non-finite iterations ending at {iteration} (loss {})",
                    record.loss.total
                )));
            }
        } else {
            self.consecutive_skips = 0;
        }
        Ok(record)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            config: self.config.clone(),
            optimizer: self.optimizer.clone(),
            meta: self.meta.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub records: Vec<IterationRecord>,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Trains until `train.iterations` or the wall-clock limit, appending one
/// JSON line per iteration to `out/metrics.jsonl` and writing periodic and
/// final checkpoints.
pub fn train(trainer: &mut Trainer, out: &Path) -> Result<TrainSummary> {
    std::fs::create_dir_all(out).map_err(Error::at(out))?;
    let metrics_path = out.join(METRICS_FILE);
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(Error::at(&metrics_path))?;
    let limit = trainer.config.train.time_limit_secs;
    let every = trainer.config.train.checkpoint_every as u64;
    let start_wall = trainer.meta.wall_time_secs;
    let mut records = Vec::new();
    while (trainer.meta.iteration as usize) < trainer.config.train.iterations {
        if limit > 0.0 && trainer.meta.wall_time_secs - start_wall >= limit {
            break;
        }
        let rec = trainer.step()?;
        serde_json::to_writer(&mut log, &rec)?;
        writeln!(log).map_err(Error::at(&metrics_path))?;
        records.push(rec);
        if every > 0 && trainer.meta.iteration % every == 0 {
            let p = out.join(format!("iter_{:06}.ckpt", trainer.meta.iteration));
            trainer.checkpoint().save(&p)?;
        }
    }
    let ckpt = out.join(FINAL_CHECKPOINT);
    trainer.checkpoint().save(&ckpt)?;
    Ok(TrainSummary {
        checkpoint: ckpt,
        metrics: metrics_path,
        records,
    })
}
