//! Run configuration, read from TOML with unknown keys rejected at every
//! level.

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::flow::FlowNoiseConfig;
use crate::loss::LossConfig;
use crate::policy::ArchConfig;
use crate::rollout::EnvConfig;
use crate::scene::GenConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub env: EnvConfig,
    pub scene: GenConfig,
    pub arch: ArchConfig,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    pub decay: DecayConfig,
    pub curriculum: CurriculumConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayConfig {
    /// Gradient decay rate alpha (1/s); each state-to-state Jacobian is
    /// scaled by `exp(-alpha * dt)` on the backward sweep.
    pub alpha: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig { alpha: 10.0 }
    }
}

impl DecayConfig {
    pub fn factor(&self, dt: f64) -> f64 {
        (-self.alpha * dt).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    /// Reference speeds are drawn uniformly from this range (m/s).
    pub speed_range: [f64; 2],
    /// Lateral range of start and goal positions (m) around the scene
    /// generator's start/goal line.
    pub lateral_range: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            speed_range: [1.5, 12.0],
            lateral_range: 12.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Episodes per iteration.
    pub batch_size: usize,
    /// Steps per training episode.
    pub horizon: usize,
    /// Wall-clock cap in seconds; 0 means none.
    pub time_limit_secs: f64,
    /// Write a checkpoint every this many iterations; 0 writes only the last.
    pub checkpoint_every: usize,
    /// Worker threads for batched rollouts; 0 uses all cores.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 300,
            batch_size: 8,
            horizon: 90,
            time_limit_secs: 0.0,
            checkpoint_every: 50,
            threads: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub speed: f64,
    /// Base of the held-out scene seeds.
    pub seed: u64,
    pub noise: FlowNoiseConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 20,
            speed: 3.0,
            seed: 1_000_000,
            noise: FlowNoiseConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::at(path))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.scene.validate()?;
        self.arch.validate()?;
        self.loss.validate()?;
        self.eval.noise.validate()?;
        if (self.arch.a_max - self.env.dynamics.a_max).abs() > 0.0 {
            return Err(Error::Config("arch.a_max must equal env.dynamics.a_max".into()));
        }
        if !(self.decay.alpha >= 0.0) {
            return Err(Error::Config("decay.alpha must be >= 0".into()));
        }
        let [lo, hi] = self.curriculum.speed_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config("curriculum.speed_range must satisfy 0 <= lo <= hi".into()));
        }
        if !(self.curriculum.lateral_range >= 0.0) {
            return Err(Error::Config("curriculum.lateral_range must be >= 0".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.eval.speed > 0.0) {
            return Err(Error::Config("eval.speed must be positive".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config("optimizer needs learning_rate > 0 and betas in [0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = Config::default();
        let text = c.to_toml_string().unwrap();
        assert_eq!(Config::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = Config::from_toml_str("seed = 5\n[train]\nbatch_size = 2\n").unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.train.batch_size, 2);
        assert_eq!(c.train.horizon, TrainConfig::default().horizon);
        assert_eq!(c.loss, LossConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml_str("sed = 5\n").is_err());
        assert!(Config::from_toml_str("[train]\nbatchsize = 2\n").is_err());
        assert!(Config::from_toml_str("[env.dynamics]\nlambda = 2.0\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Config::from_toml_str("[decay]\nalpha = -1.0\n").is_err());
        assert!(Config::from_toml_str("[curriculum]\nspeed_range = [3.0, 1.0]\n").is_err());
        assert!(Config::from_toml_str("[env.camera]\nwidth = 60\n").is_err());
    }
}
