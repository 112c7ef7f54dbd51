//! Held-out evaluation: success rate, speed and velocity tracking.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::flow::FlowNoiseConfig;
use crate::policy::PolicyParams;
use crate::rollout::{rollout, EpisodeContext, Outcome, RolloutOptions, StepLog};
use crate::train::{episode_seed, sample_episode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Keeps held-out scenes disjoint from the training stream.
const EVAL_DOMAIN: u64 = 0xE7A1_0000_0000_0001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub index: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: usize,
    pub mean_speed: f64,
    pub tracking_error: f64,
    pub min_distance: f64,
    #[serde(skip)]
    pub trajectory: Vec<StepLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub success_rate: f64,
    pub collision_rate: f64,
    pub mean_speed: f64,
    /// Mean `|v_ref - v_smoothed|` (m/s).
    pub tracking_error: f64,
    pub episodes: Vec<EpisodeReport>,
}

/// What to evaluate: count, speed, held-out seed base and optional flow
/// noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRequest {
    pub episodes: usize,
    pub speed: f64,
    pub seed: u64,
    pub noise: FlowNoiseConfig,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
}

impl EvalRequest {
    pub fn from_config(cfg: &Config) -> Self {
        EvalRequest {
            episodes: cfg.eval.episodes,
            speed: cfg.eval.speed,
            seed: cfg.eval.seed,
            noise: cfg.eval.noise,
            threads: cfg.train.threads,
        }
    }
}

pub fn eval_seed(base: u64, index: usize) -> u64 {
    episode_seed(base ^ EVAL_DOMAIN, u64::MAX, index as u64)
}

/// Runs every episode for the full time budget (or until goal / crash).
/// Metrics are a pure function of the parameters, config and request.
pub fn evaluate(params: &PolicyParams, cfg: &Config, req: &EvalRequest) -> Result<EvalMetrics> {
    if !(req.speed > 0.0) {
        return Err(Error::contract("evaluation speed must be positive"));
    }
    req.noise.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(req.threads)
        .build()
        .map_err(|e| Error::Training(format!("thread pool: {e}")))?;
    let reports: Vec<Result<EpisodeReport>> = pool.install(|| {
        (0..req.episodes)
            .into_par_iter()
            .map(|i| {
                let seed = eval_seed(req.seed, i);
                let (scene, episode) = sample_episode(cfg, seed, Some(req.speed))?;
                let ctx = EpisodeContext {
                    scene: &scene,
                    env: &cfg.env,
                    episode,
                };
                let opts = RolloutOptions {
                    steps: cfg.env.step_budget(&episode),
                    noise: (!req.noise.is_zero()).then_some((req.noise, seed)),
                    record_observations: false,
                };
                let trace = rollout(params, &ctx, &opts)?;
                Ok(EpisodeReport {
                    index: i,
                    seed,
                    outcome: trace.outcome,
                    steps: trace.len(),
                    mean_speed: trace.mean_speed(),
                    tracking_error: trace.tracking_error(),
                    min_distance: trace.steps.iter().map(|s| s.distance).fold(f64::INFINITY, f64::min),
                    trajectory: trace.steps,
                })
            })
            .collect()
    });
    let episodes = reports.into_iter().collect::<Result<Vec<_>>>()?;
    let n = episodes.len().max(1) as f64;
    let count = |o: Outcome| episodes.iter().filter(|e| e.outcome == o).count() as f64 / n;
    Ok(EvalMetrics {
        success_rate: count(Outcome::ReachedGoal),
        collision_rate: count(Outcome::Collided),
        mean_speed: episodes.iter().map(|e| e.mean_speed).sum::<f64>() / n,
        tracking_error: episodes.iter().map(|e| e.tracking_error).sum::<f64>() / n,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{init_params, ArchConfig};

    #[test]
    fn zero_policy_never_reaches_goal() {
        let mut cfg = Config::default();
        cfg.scene.density = 0.0;
        cfg.curriculum.lateral_range = 0.0;
        let p = init_params(&ArchConfig::default(), 0).unwrap();
        let zero = PolicyParams::from_values(&p.arch, vec![0.0; p.len()]).unwrap();
        let req = EvalRequest {
            episodes: 3,
            ..EvalRequest::from_config(&cfg)
        };
        let m = evaluate(&zero, &cfg, &req).unwrap();
        assert_eq!(m.success_rate, 0.0);
        assert_eq!(m.collision_rate, 0.0);
        assert!(m.episodes.iter().all(|e| e.outcome == Outcome::TimedOut));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let cfg = Config::default();
        let p = init_params(&cfg.arch, 4).unwrap();
        let req = EvalRequest {
            episodes: 3,
            ..EvalRequest::from_config(&cfg)
        };
        assert_eq!(evaluate(&p, &cfg, &req).unwrap(), evaluate(&p, &cfg, &req).unwrap());
    }
}
