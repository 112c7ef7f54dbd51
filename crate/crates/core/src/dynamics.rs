//! Point-mass quadrotor dynamics with a delayed first-order acceleration
//! response, camera yaw control and episode termination.

use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};
use crate::math::{wrap_angle, Vec3};
use crate::scene::{closest_distance, Scene};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    /// Control period (s).
    pub dt: f64,
    /// First-order response rate of the realized acceleration (1/s).
    pub lambda_ctrl: f64,
    /// Command latency (s); realized as `round(tau / dt)` steps of delay.
    pub tau: f64,
    /// Bound on the command norm (m/s^2).
    pub a_max: f64,
    /// Vehicle radius used for collisions (m).
    pub quad_radius: f64,
    /// Moving-average weight of the smoothed velocity.
    pub smoothing: f64,
    pub yaw_rate_max: f64,
    /// Below this horizontal speed velocity-aligned yaw holds its heading.
    pub yaw_hold_speed: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            dt: 1.0 / 15.0,
            lambda_ctrl: 15.0,
            tau: 2.0 / 15.0,
            a_max: 10.0,
            quad_radius: 0.2,
            smoothing: 0.2,
            yaw_rate_max: 3.0,
            yaw_hold_speed: 0.3,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.lambda_ctrl > 0.0) || !(self.tau >= 0.0) {
            return Err(Error::Config("dynamics needs dt > 0, lambda_ctrl > 0, tau >= 0".into()));
        }
        if !(self.a_max > 0.0) || !(self.quad_radius > 0.0) {
            return Err(Error::Config("a_max and quad_radius must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.smoothing) || !(self.yaw_rate_max >= 0.0) {
            return Err(Error::Config("smoothing must be in [0, 1] and yaw_rate_max >= 0".into()));
        }
        Ok(())
    }

    pub fn delay_steps(&self) -> usize {
        (self.tau / self.dt).round() as usize
    }

    /// Fraction of the remaining command gap closed per step.
    pub fn response_gain(&self) -> f64 {
        1.0 - (-self.lambda_ctrl * self.dt).exp()
    }
}

/// Commanded acceleration (m/s^2, world frame, gravity compensated).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand(pub Vec3);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    pub position: Vec3,
    pub velocity: Vec3,
    /// Realized acceleration.
    pub acceleration: Vec3,
    /// Heading in (-pi, pi].
    pub yaw: f64,
    pub smoothed_velocity: Vec3,
    /// Commands issued but not yet applied, oldest first.
    pub pending: VecDeque<Vec3>,
    pub time: f64,
}

impl QuadState {
    /// Hovering vehicle with an empty (zero-filled) command delay line.
    pub fn at_rest(position: Vec3, yaw: f64, cfg: &DynamicsConfig) -> Self {
        Self::with_velocity(position, Vec3::ZERO, yaw, cfg)
    }

    pub fn with_velocity(position: Vec3, velocity: Vec3, yaw: f64, cfg: &DynamicsConfig) -> Self {
        QuadState {
            position,
            velocity,
            acceleration: Vec3::ZERO,
            yaw: wrap_angle(yaw),
            smoothed_velocity: velocity,
            pending: std::iter::repeat_n(Vec3::ZERO, cfg.delay_steps()).collect(),
            time: 0.0,
        }
    }

    /// `[p, v, a, v_smoothed]` as used on the tape.
    pub fn to_vector(&self) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        for (i, v) in [self.position, self.velocity, self.acceleration, self.smoothed_velocity]
            .into_iter()
            .enumerate()
        {
            out[3 * i..3 * i + 3].copy_from_slice(&v.to_array());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.velocity.is_finite()
            && self.acceleration.is_finite()
            && self.smoothed_velocity.is_finite()
            && self.yaw.is_finite()
    }
}

/// Length of the differentiable state `[p, v, a, v_smoothed]`.
pub const STATE_DIM: usize = 12;
pub const POS: usize = 0;
pub const VEL: usize = 3;
pub const ACC: usize = 6;
pub const VBAR: usize = 9;

fn check_command(cmd: &ControlCommand, cfg: &DynamicsConfig) -> Result<()> {
    let c = cmd.0;
    if !c.is_finite() || c.norm() > cfg.a_max * (1.0 + 1e-12) {
        return Err(Error::contract(format!(
            "command {c:?} exceeds the bound {}",
            cfg.a_max
        )));
    }
    Ok(())
}

/// Advances one control period: the command enters the delay line, the
/// oldest pending command drives a first-order lag of the realized
/// acceleration, and position/velocity integrate that acceleration exactly.
pub fn step(state: &QuadState, cmd: ControlCommand, cfg: &DynamicsConfig) -> Result<QuadState> {
    check_command(&cmd, cfg)?;
    if !state.is_finite() {
        return Err(Error::contract("non-finite state"));
    }
    let dt = cfg.dt;
    let mut pending = state.pending.clone();
    pending.push_back(cmd.0);
    let applied = pending.pop_front().unwrap_or(cmd.0);
    let k = cfg.response_gain();
    let a = state.acceleration + (applied - state.acceleration) * k;
    let v = state.velocity + a * dt;
    let p = state.position + state.velocity * dt + a * (0.5 * dt * dt);
    let w = cfg.smoothing;
    let vbar = state.smoothed_velocity * (1.0 - w) + v * w;
    Ok(QuadState {
        position: p,
        velocity: v,
        acceleration: a,
        yaw: state.yaw,
        smoothed_velocity: vbar,
        pending,
        time: state.time + dt,
    })
}

/// The step is linear: `x+ = A x + B u_applied`. Matrices are row-major.
#[derive(Clone, Debug)]
pub struct TransitionMatrices<F> {
    pub a: Vec<F>,
    pub b: Vec<F>,
}

impl<F: Real> TransitionMatrices<F> {
    pub fn new(cfg: &DynamicsConfig) -> Self {
        let dt = cfg.dt;
        let k = cfg.response_gain();
        let w = cfg.smoothing;
        let mut a = vec![0.0f64; STATE_DIM * STATE_DIM];
        let mut b = vec![0.0f64; STATE_DIM * 3];
        let set = |m: &mut Vec<f64>, cols: usize, r0: usize, c0: usize, val: f64| {
            for i in 0..3 {
                m[(r0 + i) * cols + c0 + i] += val;
            }
        };
        // a+ = (1-k) a + k u
        set(&mut a, STATE_DIM, ACC, ACC, 1.0 - k);
        set(&mut b, 3, ACC, 0, k);
        // v+ = v + dt a+
        set(&mut a, STATE_DIM, VEL, VEL, 1.0);
        set(&mut a, STATE_DIM, VEL, ACC, dt * (1.0 - k));
        set(&mut b, 3, VEL, 0, dt * k);
        // p+ = p + dt v + dt^2/2 a+
        set(&mut a, STATE_DIM, POS, POS, 1.0);
        set(&mut a, STATE_DIM, POS, VEL, dt);
        set(&mut a, STATE_DIM, POS, ACC, 0.5 * dt * dt * (1.0 - k));
        set(&mut b, 3, POS, 0, 0.5 * dt * dt * k);
        // vbar+ = (1-w) vbar + w v+
        set(&mut a, STATE_DIM, VBAR, VBAR, 1.0 - w);
        set(&mut a, STATE_DIM, VBAR, VEL, w);
        set(&mut a, STATE_DIM, VBAR, ACC, w * dt * (1.0 - k));
        set(&mut b, 3, VBAR, 0, w * dt * k);
        TransitionMatrices {
            a: a.into_iter().map(F::lit).collect(),
            b: b.into_iter().map(F::lit).collect(),
        }
    }

    /// Records one transition. `state` should already carry any gradient
    /// decay; `applied` is the delayed command node.
    pub fn record(&self, tape: &mut Tape<F>, state: Var, applied: Var) -> Var {
        let x = tape.value(state).to_vec();
        let u = tape.value(applied).to_vec();
        let mut out = [F::zero(); STATE_DIM];
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = F::zero();
            for c in 0..STATE_DIM {
                acc = acc + self.a[r * STATE_DIM + c] * x[c];
            }
            for c in 0..3 {
                acc = acc + self.b[r * 3 + c] * u[c];
            }
            *o = acc;
        }
        tape.custom(&out, &[(state, &self.a), (applied, &self.b)])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawMode {
    /// Face the direction of horizontal motion (active sensing).
    #[default]
    VelocityAligned,
    GoalAligned,
    Fixed,
}

/// Next heading after one control period, slewing toward the mode's target
/// along the shortest arc at no more than `yaw_rate_max`.
pub fn update_yaw(state: &QuadState, mode: YawMode, goal_dir: [f64; 2], cfg: &DynamicsConfig) -> Result<f64> {
    let target = match mode {
        YawMode::Fixed => return Ok(state.yaw),
        YawMode::VelocityAligned => {
            let v = state.velocity;
            if v.norm_xy() < cfg.yaw_hold_speed {
                return Ok(state.yaw);
            }
            v.y.atan2(v.x)
        }
        YawMode::GoalAligned => {
            if goal_dir[0] == 0.0 && goal_dir[1] == 0.0 {
                return Err(Error::contract("goal-aligned yaw needs a nonzero goal direction"));
            }
            goal_dir[1].atan2(goal_dir[0])
        }
    };
    let max_step = cfg.yaw_rate_max * cfg.dt;
    let diff = wrap_angle(target - state.yaw);
    Ok(wrap_angle(state.yaw + diff.clamp(-max_step, max_step)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Running,
    Collided,
    OutOfBounds,
}

pub fn check_termination(state: &QuadState, scene: &Scene, cfg: &DynamicsConfig) -> Termination {
    let (d, _) = closest_distance(scene, state.position);
    if d < cfg.quad_radius {
        Termination::Collided
    } else if !scene.bounds.inflate(1.0).contains(state.position) {
        Termination::OutOfBounds
    } else {
        Termination::Running
    }
}
