//! Velocity tracking, collision, acceleration and jerk losses, both as plain
//! functions of a recorded trajectory and as tape nodes for BPTT.

use crate::autodiff::{Real, Tape, Var};
use crate::dynamics::{POS, STATE_DIM, VBAR, VEL};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene::SurfaceQuery;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_v: f64,
    pub lambda_c: f64,
    pub lambda_a: f64,
    pub lambda_j: f64,
    /// Softplus weight.
    pub beta1: f64,
    /// Softplus slope; negative so the term fades with distance.
    pub beta2: f64,
    /// Smooth-L1 switch point (m/s).
    pub smooth_l1_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_v: 1.0,
            lambda_c: 2.0,
            lambda_a: 0.015,
            lambda_j: 0.003,
            beta1: 0.1,
            beta2: -5.0,
            smooth_l1_threshold: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_v, self.lambda_c, self.lambda_a, self.lambda_j, self.beta1];
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config("loss weights and beta1 must be finite and >= 0".into()));
        }
        if !self.beta2.is_finite() || !(self.smooth_l1_threshold > 0.0) {
            return Err(Error::Config("beta2 must be finite and the smooth-L1 threshold positive".into()));
        }
        Ok(())
    }
}

/// Quantities of one simulated step that the losses read.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossStep {
    pub velocity: Vec3,
    pub smoothed_velocity: Vec3,
    pub v_ref: Vec3,
    /// Signed distance to the closest obstacle primitive (`inf` if none).
    pub distance: f64,
    /// Unit direction toward that obstacle.
    pub direction: Vec3,
    /// Height above the ground plane (`inf` without one). The ground is
    /// penalised as a second obstacle so it never hides the nearest one.
    pub ground_distance: f64,
    pub command: Vec3,
}

impl LossStep {
    /// `(distance, direction)` of each surface the collision loss sees.
    pub fn surfaces(&self) -> [(f64, Vec3); 2] {
        let down = if self.ground_distance >= 0.0 { -1.0 } else { 1.0 };
        [
            (self.distance, self.direction),
            (self.ground_distance, Vec3::new(0.0, 0.0, down)),
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub velocity: f64,
    pub collision: f64,
    pub acceleration: f64,
    pub jerk: f64,
    pub total: f64,
}

/// Smooth-L1 of a non-negative error norm and its derivative.
pub fn smooth_l1(e: f64, threshold: f64) -> (f64, f64) {
    if e < threshold {
        (0.5 * e * e / threshold, e / threshold)
    } else {
        (e - 0.5 * threshold, 1.0)
    }
}

/// `ln(1 + e^x)` without overflow, and its derivative.
pub fn softplus(x: f64) -> (f64, f64) {
    let s = 1.0 / (1.0 + (-x).exp());
    if x > 0.0 {
        (x + (-x).exp().ln_1p(), s)
    } else {
        (x.exp().ln_1p(), s)
    }
}

/// Speed toward the obstacle, zero when receding.
pub fn approach_speed(velocity: Vec3, direction: Vec3) -> f64 {
    velocity.dot(direction).max(0.0)
}

/// Per-step collision penalty with its partials in `(distance, approach
/// speed)`.
pub fn collision_term(distance: f64, approach: f64, r_q: f64, cfg: &LossConfig) -> (f64, f64, f64) {
    if distance == f64::INFINITY {
        return (0.0, 0.0, 0.0);
    }
    let gap = distance - r_q;
    let m = (1.0 - gap).max(0.0);
    let (sp, dsp) = softplus(cfg.beta2 * gap);
    let value = approach * m * m + cfg.beta1 * sp;
    let d_dist = -2.0 * approach * m + cfg.beta1 * cfg.beta2 * dsp;
    (value, d_dist, m * m)
}

pub fn velocity_loss(steps: &[LossStep], cfg: &LossConfig) -> f64 {
    mean(steps.iter().map(|s| {
        smooth_l1((s.smoothed_velocity - s.v_ref).norm(), cfg.smooth_l1_threshold).0
    }))
}

pub fn collision_loss(steps: &[LossStep], r_q: f64, cfg: &LossConfig) -> f64 {
    mean(steps.iter().map(|s| {
        s.surfaces()
            .iter()
            .map(|&(d, dir)| collision_term(d, approach_speed(s.velocity, dir), r_q, cfg).0)
            .sum::<f64>()
    }))
}

/// `(L_a, L_j)`: mean squared command and mean squared command jerk.
pub fn smoothness_losses(steps: &[LossStep], dt: f64) -> (f64, f64) {
    let la = mean(steps.iter().map(|s| s.command.dot(s.command)));
    let lj = mean(steps.windows(2).map(|w| {
        let j = (w[0].command - w[1].command) * (1.0 / dt);
        j.dot(j)
    }));
    (la, lj)
}

pub fn weighted_total(parts: [f64; 4], cfg: &LossConfig) -> LossBreakdown {
    let [v, c, a, j] = parts;
    LossBreakdown {
        velocity: v,
        collision: c,
        acceleration: a,
        jerk: j,
        total: cfg.lambda_v * v + cfg.lambda_c * c + cfg.lambda_a * a + cfg.lambda_j * j,
    }
}

pub fn total_loss(steps: &[LossStep], r_q: f64, dt: f64, cfg: &LossConfig) -> LossBreakdown {
    let (la, lj) = smoothness_losses(steps, dt);
    weighted_total([velocity_loss(steps, cfg), collision_loss(steps, r_q, cfg), la, lj], cfg)
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in it {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// One step as seen by the tape: the post-step state node
/// (`[p, v, a, v_smoothed]`), the command node issued at this step, the
/// reference velocity and the primitive and ground queries at the step's
/// position.
#[derive(Clone, Copy, Debug)]
pub struct TapeStep {
    pub state: Var,
    pub command: Var,
    pub v_ref: Vec3,
    pub query: SurfaceQuery,
    pub ground: SurfaceQuery,
}

fn state_vec<F: Real>(tape: &Tape<F>, v: Var, at: usize) -> Vec3 {
    let s = tape.value(v);
    Vec3::new(s[at].real(), s[at + 1].real(), s[at + 2].real())
}

fn cmd_vec<F: Real>(tape: &Tape<F>, v: Var) -> Vec3 {
    state_vec(tape, v, 0)
}

/// Reads the plain per-step quantities back from the tape.
pub fn loss_steps<F: Real>(tape: &Tape<F>, steps: &[TapeStep]) -> Vec<LossStep> {
    steps
        .iter()
        .map(|s| LossStep {
            velocity: state_vec(tape, s.state, VEL),
            smoothed_velocity: state_vec(tape, s.state, VBAR),
            v_ref: s.v_ref,
            distance: s.query.distance,
            direction: s.query.direction,
            ground_distance: s.ground.distance,
            command: cmd_vec(tape, s.command),
        })
        .collect()
}

/// Records the four losses and their weighted sum. Returns the scalar total
/// node and the breakdown.
pub fn record_total_loss<F: Real>(
    tape: &mut Tape<F>,
    steps: &[TapeStep],
    r_q: f64,
    dt: f64,
    cfg: &LossConfig,
) -> (Var, LossBreakdown) {
    if steps.is_empty() {
        let z = tape.constant(&[F::zero()]);
        return (z, LossBreakdown::default());
    }
    let n = steps.len() as f64;
    let plain = loss_steps(tape, steps);

    let mut lv = 0.0;
    let mut jac_v: Vec<[F; STATE_DIM]> = Vec::with_capacity(steps.len());
    for s in &plain {
        let e = s.smoothed_velocity - s.v_ref;
        let norm = e.norm();
        let (val, d) = smooth_l1(norm, cfg.smooth_l1_threshold);
        lv += val / n;
        let mut j = [F::zero(); STATE_DIM];
        if norm > 0.0 {
            for k in 0..3 {
                j[VBAR + k] = F::lit(d * e[k] / norm / n);
            }
        }
        jac_v.push(j);
    }
    let links: Vec<(Var, &[F])> = steps.iter().zip(&jac_v).map(|(s, j)| (s.state, &j[..])).collect();
    let lv_node = tape.custom(&[F::lit(lv)], &links);

    let mut lc = 0.0;
    let mut jac_c: Vec<[F; STATE_DIM]> = Vec::with_capacity(steps.len());
    for (s, st) in plain.iter().zip(steps) {
        let mut jp = [0.0; 3];
        let mut jv = [0.0; 3];
        for q in [&st.query, &st.ground] {
            if !q.distance.is_finite() {
                continue;
            }
            let dot = s.velocity.dot(q.direction);
            let approach = dot.max(0.0);
            let (val, d_dist, d_app) = collision_term(q.distance, approach, r_q, cfg);
            lc += val / n;
            let gd = q.distance_gradient();
            // d(approach)/dp = J_dir^T v, d(approach)/dv = dir, when approaching
            let jd = q.direction_jacobian;
            for k in 0..3 {
                jp[k] += d_dist * gd[k];
                if dot > 0.0 {
                    jp[k] += d_app * (0..3).map(|i| jd[i][k] * s.velocity[i]).sum::<f64>();
                    jv[k] += d_app * q.direction[k];
                }
            }
        }
        let mut j = [F::zero(); STATE_DIM];
        for k in 0..3 {
            j[POS + k] = F::lit(jp[k] / n);
            j[VEL + k] = F::lit(jv[k] / n);
        }
        jac_c.push(j);
    }
    let links: Vec<(Var, &[F])> = steps.iter().zip(&jac_c).map(|(s, j)| (s.state, &j[..])).collect();
    let lc_node = tape.custom(&[F::lit(lc)], &links);

    let (la, lj) = smoothness_losses(&plain, dt);
    let mut jac_a: Vec<[F; 3]> = Vec::with_capacity(steps.len());
    let mut jac_j: Vec<[F; 3]> = vec![[F::zero(); 3]; steps.len()];
    for s in &plain {
        let c = s.command;
        jac_a.push([F::lit(2.0 * c.x / n), F::lit(2.0 * c.y / n), F::lit(2.0 * c.z / n)]);
    }
    if steps.len() >= 2 {
        let pairs = (steps.len() - 1) as f64;
        let scale = 2.0 / (dt * dt * pairs);
        let mut acc = vec![Vec3::ZERO; steps.len()];
        for k in 0..steps.len() - 1 {
            let diff = plain[k].command - plain[k + 1].command;
            acc[k] = acc[k] + diff * scale;
            acc[k + 1] = acc[k + 1] - diff * scale;
        }
        for (j, a) in jac_j.iter_mut().zip(acc) {
            *j = [F::lit(a.x), F::lit(a.y), F::lit(a.z)];
        }
    }
    let links: Vec<(Var, &[F])> = steps.iter().zip(&jac_a).map(|(s, j)| (s.command, &j[..])).collect();
    let la_node = tape.custom(&[F::lit(la)], &links);
    let links: Vec<(Var, &[F])> = steps.iter().zip(&jac_j).map(|(s, j)| (s.command, &j[..])).collect();
    let lj_node = tape.custom(&[F::lit(lj)], &links);

    let total = tape.weighted_sum(&[
        (lv_node, F::lit(cfg.lambda_v)),
        (lc_node, F::lit(cfg.lambda_c)),
        (la_node, F::lit(cfg.lambda_a)),
        (lj_node, F::lit(cfg.lambda_j)),
    ]);
    (total, weighted_total([lv, lc, la, lj], cfg))
}
