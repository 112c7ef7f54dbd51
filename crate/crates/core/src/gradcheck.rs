//! Finite-difference validation of the BPTT gradient on a short rollout with
//! a linear policy and a fixed observation stream.

use crate::autodiff::{Tape, Var};
use crate::dynamics::{DynamicsConfig, QuadState, TransitionMatrices, STATE_DIM};
use crate::error::{Error, Result};
use crate::loss::{record_total_loss, LossConfig, TapeStep};
use crate::math::Vec3;
use crate::policy::{init_params, ArchConfig, PolicyParams};
use crate::scene::{Aabb, Primitive, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub steps: usize,
    /// Put an obstacle near the path and weight the collision loss.
    pub collision: bool,
    /// Gradient decay rate (1/s).
    pub alpha: f64,
    /// Central-difference step.
    pub h: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            steps: 20,
            collision: false,
            alpha: 0.0,
            h: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub n_params: usize,
    pub loss: f64,
    pub max_rel_error: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn to_text(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// How the state chain is treated on the backward sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Chain {
    /// Scale each state-to-state Jacobian by the factor.
    Decay(f64),
    /// Cut the chain: each step sees the previous state as a constant.
    Detached,
}

/// The fixed problem: linear policy, observation stream, start state,
/// scene and loss weights.
#[derive(Clone, Debug)]
pub struct Problem {
    pub params: PolicyParams,
    pub inputs: Vec<Vec<f64>>,
    pub start: QuadState,
    pub scene: Scene,
    pub dynamics: DynamicsConfig,
    pub loss: LossConfig,
    pub v_ref: Vec3,
}

impl Problem {
    pub fn new(cfg: &GradCheckConfig) -> Result<Self> {
        if cfg.steps == 0 || cfg.steps > 20 {
            return Err(Error::contract("gradient check horizon must be in 1..=20"));
        }
        let arch = ArchConfig {
            use_flow: false,
            encoder: vec![],
            hidden: 0,
            head: vec![],
            a_max: 4.0,
            proprio_scale: 1.0,
        };
        let dynamics = DynamicsConfig {
            a_max: arch.a_max,
            ..DynamicsConfig::default()
        };
        let mut params = init_params(&arch, cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED);
        let out = params.slot("output").unwrap().clone();
        for v in &mut params.values[out.bias_range()] {
            *v = rng.random_range(-0.3..0.3);
        }
        let inputs = (0..cfg.steps)
            .map(|_| (0..arch.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let bounds = Aabb::new(Vec3::new(-10.0, -10.0, -10.0), Vec3::new(10.0, 10.0, 10.0));
        let scene = if cfg.collision {
            Scene::new(
                vec![Primitive::Sphere {
                    center: Vec3::new(2.6, 0.5, 1.0),
                    radius: 0.5,
                }],
                bounds,
                None,
            )?
        } else {
            Scene::empty(bounds)
        };
        let loss = LossConfig {
            lambda_c: if cfg.collision { 2.0 } else { 0.0 },
            ..LossConfig::default()
        };
        Ok(Problem {
            params,
            inputs,
            start: QuadState::with_velocity(Vec3::new(0.0, 0.0, 1.5), Vec3::new(2.0, 0.0, 0.0), 0.0, &dynamics),
            scene,
            dynamics,
            loss,
            v_ref: Vec3::new(3.0, 0.5, 0.0),
        })
    }

    /// Loss and its gradient with respect to `theta` in wide precision.
    pub fn evaluate(&self, theta: &[f64], chain: Chain) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::<f64>::new();
        let loss = self.record(&mut tape, theta, chain)?;
        let value = tape.scalar(loss);
        let g = tape.backward(loss, theta.len())?.params;
        Ok((value, g))
    }

    pub fn loss_value(&self, theta: &[f64]) -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let loss = self.record(&mut tape, theta, Chain::Decay(1.0))?;
        Ok(tape.scalar(loss))
    }

    fn record(&self, tape: &mut Tape<f64>, theta: &[f64], chain: Chain) -> Result<Var> {
        if theta.len() != self.params.len() {
            return Err(Error::contract("parameter vector has the wrong length"));
        }
        let leaves = self.register_exact(tape, theta);
        let m = TransitionMatrices::<f64>::new(&self.dynamics);
        let mut state = tape.constant(&self.start.to_vector());
        let mut pending: VecDeque<Var> = self.start.pending.iter().map(|c| tape.constant(&c.to_array())).collect();
        let mut steps = Vec::with_capacity(self.inputs.len());
        for x in &self.inputs {
            let xv = tape.constant(x);
            let cmd = leaves.step(tape, xv, self.params.arch.a_max);
            pending.push_back(cmd);
            let applied = pending.pop_front().unwrap();
            let prev = match chain {
                Chain::Decay(f) => tape.decay(state, f),
                Chain::Detached => {
                    let v = tape.value(state).to_vec();
                    tape.constant(&v)
                }
            };
            state = m.record(tape, prev, applied);
            let s = tape.value(state);
            let pos = Vec3::new(s[0], s[1], s[2]);
            steps.push(TapeStep {
                state,
                command: cmd,
                v_ref: self.v_ref,
                query: self.scene.query_primitives(pos),
                ground: self.scene.query_ground(pos),
            });
        }
        debug_assert_eq!(tape.dim(state), STATE_DIM);
        let (loss, _) = record_total_loss(tape, &steps, self.dynamics.quad_radius, self.dynamics.dt, &self.loss);
        Ok(loss)
    }

    fn register_exact(&self, tape: &mut Tape<f64>, theta: &[f64]) -> LinearLeaves {
        let s = self.params.slot("output").unwrap();
        LinearLeaves {
            w: tape.param(&theta[s.weight_range()], s.weight_range().start),
            b: tape.param(&theta[s.bias_range()], s.bias_range().start),
        }
    }

    pub fn theta(&self) -> Vec<f64> {
        self.params.values.iter().map(|&v| v as f64).collect()
    }
}

/// Weight and bias leaves of the linear policy, registered in f64 so the
/// finite differences see exactly the perturbed values.
struct LinearLeaves {
    w: Var,
    b: Var,
}

impl LinearLeaves {
    fn step(&self, tape: &mut Tape<f64>, x: Var, a_max: f64) -> Var {
        let y = tape.affine(self.w, x, Some(self.b));
        let yv = tape.value(y);
        let (u, jac) = crate::policy::squash([yv[0], yv[1], yv[2]], a_max);
        let jac: Vec<f64> = jac.iter().flatten().copied().collect();
        tape.custom(&u.to_array(), &[(y, &jac)])
    }
}

/// Compares the tape gradient against central differences on every
/// parameter.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let problem = Problem::new(cfg)?;
    let theta = problem.theta();
    let factor = (-cfg.alpha * problem.dynamics.dt).exp();
    let (loss, analytic) = problem.evaluate(&theta, Chain::Decay(factor))?;
    let mut params = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let mut tp = theta.clone();
        tp[i] += cfg.h;
        let up = problem.loss_value(&tp)?;
        tp[i] = theta[i] - cfg.h;
        let down = problem.loss_value(&tp)?;
        let numeric = (up - down) / (2.0 * cfg.h);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs()).max(1e-8);
        params.push(ParamCheck {
            index: i,
            analytic: a,
            numeric,
            rel_error: (a - numeric).abs() / scale,
        });
    }
    let max_rel_error = params.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        config: *cfg,
        n_params: theta.len(),
        loss,
        max_rel_error,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_losses_match_finite_differences() {
        let r = grad_check(&GradCheckConfig::default()).unwrap();
        assert!(r.n_params <= 64);
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
    }

    #[test]
    fn collision_loss_matches_finite_differences() {
        let cfg = GradCheckConfig {
            collision: true,
            ..GradCheckConfig::default()
        };
        // the obstacle must actually contribute
        let with = Problem::new(&cfg).unwrap();
        let without = Problem::new(&GradCheckConfig::default()).unwrap();
        let extra = with.loss_value(&with.theta()).unwrap() - without.loss_value(&without.theta()).unwrap();
        assert!(extra > 0.1, "{extra}");
        let r = grad_check(&cfg).unwrap();
        assert!(r.max_rel_error < 1e-4, "{}", r.max_rel_error);
    }

    #[test]
    fn decay_changes_two_step_gradient() {
        let base = GradCheckConfig {
            steps: 4,
            ..GradCheckConfig::default()
        };
        let p = Problem::new(&base).unwrap();
        let (_, g0) = p.evaluate(&p.theta(), Chain::Decay(1.0)).unwrap();
        let (_, g10) = p.evaluate(&p.theta(), Chain::Decay((-10.0 * p.dynamics.dt).exp())).unwrap();
        assert_ne!(g0, g10);
    }

    #[test]
    fn huge_decay_equals_truncated_oracle() {
        let p = Problem::new(&GradCheckConfig::default()).unwrap();
        let factor = (-500.0 * p.dynamics.dt).exp();
        assert!(factor < 1e-12);
        let (_, decayed) = p.evaluate(&p.theta(), Chain::Decay(factor)).unwrap();
        let (_, cut) = p.evaluate(&p.theta(), Chain::Detached).unwrap();
        for (a, b) in decayed.iter().zip(&cut) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}
