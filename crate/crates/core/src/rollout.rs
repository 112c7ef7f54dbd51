//! Closed-loop episodes: render, flow, observe, act, integrate, repeat.

use crate::autodiff::{Real, Tape, Var};
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::dynamics::{check_termination, step, update_yaw, ControlCommand, DynamicsConfig, QuadState, Termination, TransitionMatrices, YawMode};
use crate::error::{Error, Result};
use crate::flow::{build_observation, perturb_flow, reprojection_flow_into, DualFlowObservation, FlowImage, FlowNoiseConfig, FlowScratch, ObservationConfig, OBS_GRID, PROPRIO_LEN};
use crate::loss::TapeStep;
use crate::math::Vec3;
use crate::policy::{command_value, PolicyParams, TapePolicy};
use crate::render::{ray_depth_into, DepthImage, RenderScratch};
use crate::scene::Scene;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    /// Degrees.
    pub horizontal_fov: f64,
    pub depth_far: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            width: 64,
            height: 48,
            horizontal_fov: 90.0,
            depth_far: 30.0,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.width, self.height, self.horizontal_fov, self.depth_far)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub camera: CameraConfig,
    pub observation: ObservationConfig,
    pub dynamics: DynamicsConfig,
    pub yaw_mode: YawMode,
    pub goal: GoalConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoalConfig {
    /// Success radius around the goal (m).
    pub radius: f64,
    /// Episode budget as a multiple of the straight-line time at v_ref.
    pub time_budget_factor: f64,
}

impl Default for GoalConfig {
    fn default() -> Self {
        GoalConfig {
            radius: 2.0,
            time_budget_factor: 2.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.camera.intrinsics()?;
        self.dynamics.validate()?;
        let (gh, gw) = OBS_GRID;
        if self.camera.height % gh != 0 || self.camera.width % gw != 0 {
            return Err(Error::Config(format!(
                "camera {}x{} must be a multiple of the {gh}x{gw} observation grid",
                self.camera.height, self.camera.width
            )));
        }
        if !(self.goal.radius > 0.0) || !(self.goal.time_budget_factor > 0.0) {
            return Err(Error::Config("goal radius and time budget factor must be positive".into()));
        }
        if !(self.observation.flow_scale > 0.0) {
            return Err(Error::Config("flow_scale must be positive".into()));
        }
        Ok(())
    }

    /// Steps allowed for an episode: the time budget factor times the
    /// straight-line time at the reference speed.
    pub fn step_budget(&self, ep: &Episode) -> usize {
        let dist = (ep.goal - ep.start).norm();
        if ep.speed <= 0.0 {
            return 0;
        }
        (self.goal.time_budget_factor * dist / ep.speed / self.dynamics.dt).ceil() as usize
    }
}

/// Start, goal and reference speed. The vehicle starts at rest facing the
/// goal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start: Vec3,
    pub goal: Vec3,
    pub speed: f64,
}

impl Episode {
    pub fn start_yaw(&self) -> f64 {
        let d = self.goal - self.start;
        if d.norm_xy() == 0.0 {
            0.0
        } else {
            d.y.atan2(d.x)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ReachedGoal,
    Collided,
    OutOfBounds,
    /// Step limit hit without reaching the goal.
    TimedOut,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    /// World-frame command issued at this step.
    pub command: Vec3,
    pub yaw: f64,
    pub v_ref: Vec3,
    pub smoothed_velocity: Vec3,
    /// Closest obstacle distance after the step.
    pub distance: f64,
    /// Speed toward that obstacle, zero when receding.
    pub approach: f64,
    pub status: Termination,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutTrace {
    pub steps: Vec<StepLog>,
    /// Filled only when requested in [`RolloutOptions`].
    pub observations: Vec<DualFlowObservation>,
    pub outcome: Outcome,
}

impl RolloutTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn mean_speed(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.velocity.norm()).sum::<f64>() / self.steps.len() as f64
    }

    /// Mean `|v_ref - v_smoothed|`.
    pub fn tracking_error(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| (s.v_ref - s.smoothed_velocity).norm()).sum::<f64>() / self.steps.len() as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RolloutOptions {
    pub steps: usize,
    /// Flow perturbation and its base seed (eval mode).
    pub noise: Option<(FlowNoiseConfig, u64)>,
    pub record_observations: bool,
}

/// Tape-side state of a training rollout.
pub struct Recorder<F: Real> {
    pub tape: Tape<F>,
    policy: TapePolicy,
    state: Var,
    pending: VecDeque<Var>,
    hidden: Option<Var>,
    matrices: TransitionMatrices<F>,
    decay: F,
    pub steps: Vec<TapeStep>,
}

impl<F: Real> Recorder<F> {
    /// `decay` multiplies every state-to-state Jacobian on the backward sweep.
    pub fn new(params: &PolicyParams, start: &QuadState, cfg: &DynamicsConfig, decay: f64) -> Self {
        let mut tape = Tape::new();
        let policy = TapePolicy::register(params, &mut tape);
        let x0: Vec<F> = start.to_vector().iter().map(|&v| F::lit(v)).collect();
        let state = tape.constant(&x0);
        let pending = start
            .pending
            .iter()
            .map(|c| tape.constant(&[F::lit(c.x), F::lit(c.y), F::lit(c.z)]))
            .collect();
        let hidden = policy.zero_hidden(&mut tape);
        Recorder {
            tape,
            policy,
            state,
            pending,
            hidden,
            matrices: TransitionMatrices::new(cfg),
            decay: F::lit(decay),
            steps: Vec::new(),
        }
    }
}

/// Everything an episode loop needs besides the policy.
pub struct EpisodeContext<'a> {
    pub scene: &'a Scene,
    pub env: &'a EnvConfig,
    pub episode: Episode,
}

fn to_camera_frame(pose: &CameraPose, v: Vec3) -> [f64; 3] {
    pose.rotate_to_camera(v).to_array()
}

fn camera_to_world(pose: &CameraPose, v: Vec3) -> Vec3 {
    let (x, y, z) = pose.axes();
    x * v.x + y * v.y + z * v.z
}

/// Plain rollout with no recording.
pub fn rollout(params: &PolicyParams, ctx: &EpisodeContext, opts: &RolloutOptions) -> Result<RolloutTrace> {
    run::<f32>(params, ctx, opts, None)
}

/// Rollout that records dynamics, policy and loss inputs on `rec`.
pub fn rollout_recorded<F: Real>(
    params: &PolicyParams,
    ctx: &EpisodeContext,
    opts: &RolloutOptions,
    rec: &mut Recorder<F>,
) -> Result<RolloutTrace> {
    run(params, ctx, opts, Some(rec))
}

pub fn start_state(ep: &Episode, cfg: &DynamicsConfig) -> QuadState {
    QuadState::at_rest(ep.start, ep.start_yaw(), cfg)
}

fn run<F: Real>(
    params: &PolicyParams,
    ctx: &EpisodeContext,
    opts: &RolloutOptions,
    mut rec: Option<&mut Recorder<F>>,
) -> Result<RolloutTrace> {
    let env = ctx.env;
    let dyn_cfg = &env.dynamics;
    let ep = ctx.episode;
    let intr = env.camera.intrinsics()?;
    let grid_intr = CameraIntrinsics {
        width: OBS_GRID.1,
        height: OBS_GRID.0,
        ..intr
    };
    let use_flow = params.arch.use_flow;

    let mut state = start_state(&ep, dyn_cfg);
    if check_termination(&state, ctx.scene, dyn_cfg) != Termination::Running {
        return Err(Error::contract("episode starts in collision or out of bounds"));
    }
    let mut hidden = params.zero_hidden();
    let mut last_cmd = Vec3::ZERO;
    let mut render_scratch = RenderScratch::default();
    let mut flow_scratch = FlowScratch::default();
    let mut prev: Option<DepthImage> = None;
    let mut spare: Option<DepthImage> = None;
    let mut flow = FlowImage::zeros(intr);
    let mut trace = RolloutTrace {
        steps: Vec::with_capacity(opts.steps),
        observations: Vec::new(),
        outcome: Outcome::TimedOut,
    };

    for k in 0..opts.steps {
        let pose = CameraPose::new(state.position, state.yaw);
        let horizontal = Vec3::new(ep.goal.x - state.position.x, ep.goal.y - state.position.y, 0.0);
        let goal_dir = if horizontal.norm() > 0.0 {
            horizontal * (1.0 / horizontal.norm())
        } else {
            Vec3::ZERO
        };
        let v_ref = goal_dir * ep.speed;

        let mut proprio = [0.0; PROPRIO_LEN];
        proprio[0..3].copy_from_slice(&to_camera_frame(&pose, v_ref));
        proprio[3..6].copy_from_slice(&to_camera_frame(&pose, state.smoothed_velocity));
        proprio[6..9].copy_from_slice(&to_camera_frame(&pose, last_cmd));

        let obs = if use_flow {
            let mut depth = spare.take().unwrap_or_else(|| DepthImage::uniform(intr, pose, 0.0));
            depth.pose = pose;
            match ray_depth_into(ctx.scene, pose, &intr, &mut render_scratch, &mut depth.values) {
                Ok(()) => {}
                Err(Error::DegeneratePose(_)) => {
                    trace.outcome = Outcome::Collided;
                    break;
                }
                Err(e) => return Err(e),
            }
            match &prev {
                Some(p) => reprojection_flow_into(p, p.pose, pose, &intr, &mut flow_scratch, &mut flow.values)?,
                None => flow.values.fill([0.0; 2]),
            }
            spare = prev.replace(depth);
            match opts.noise {
                Some((cfg, seed)) if !cfg.is_zero() => {
                    let noisy = perturb_flow(&flow, &cfg, seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    build_observation(&noisy, &env.observation, proprio)?
                }
                _ => build_observation(&flow, &env.observation, proprio)?,
            }
        } else {
            DualFlowObservation {
                full_flow: FlowImage::zeros(grid_intr),
                central_flow: FlowImage::zeros(grid_intr),
                proprio,
            }
        };

        let cmd_world = match rec.as_deref_mut() {
            Some(r) => {
                let x = params.input_vector(&obs)?;
                let xv: Vec<F> = x.iter().map(|&v| F::lit(v as f64)).collect();
                let xv = r.tape.constant(&xv);
                let (cmd_cam, h_next) = r.policy.step(&mut r.tape, xv, r.hidden)?;
                r.hidden = h_next;
                // camera -> world rotation, recorded as a linear map
                let (ax, ay, az) = pose.axes();
                let rot = [ax.x, ay.x, az.x, ax.y, ay.y, az.y, ax.z, ay.z, az.z];
                let c = command_value(&r.tape, cmd_cam, params.arch.a_max).0;
                let world = camera_to_world(&pose, c);
                let world = clamp_norm(world, dyn_cfg.a_max);
                let jac: Vec<F> = rot.iter().map(|&v| F::lit(v)).collect();
                let wv = r.tape.custom(&[F::lit(world.x), F::lit(world.y), F::lit(world.z)], &[(cmd_cam, &jac)]);
                r.pending.push_back(wv);
                let applied = r.pending.pop_front().unwrap_or(wv);
                let prev_state = r.tape.decay(r.state, r.decay);
                r.state = r.matrices.record(&mut r.tape, prev_state, applied);
                (world, Some((wv, r.state)))
            }
            None => {
                let (c, h_next) = params.forward(&obs, &hidden)?;
                hidden = h_next;
                (clamp_norm(camera_to_world(&pose, c.0), dyn_cfg.a_max), None)
            }
        };
        let (cmd, tape_ids) = cmd_world;
        if opts.record_observations {
            trace.observations.push(obs);
        }

        let mut next = step(&state, ControlCommand(cmd), dyn_cfg)?;
        next.yaw = update_yaw(&next, env.yaw_mode, [goal_dir.x, goal_dir.y], dyn_cfg).unwrap_or(next.yaw);
        let query = ctx.scene.query(next.position);
        let approach = next.velocity.dot(query.direction).max(0.0);
        let status = check_termination(&next, ctx.scene, dyn_cfg);
        if let (Some(r), Some((wv, sv))) = (rec.as_deref_mut(), tape_ids) {
            r.steps.push(TapeStep {
                state: sv,
                command: wv,
                v_ref,
                query: ctx.scene.query_primitives(next.position),
                ground: ctx.scene.query_ground(next.position),
            });
        }
        trace.steps.push(StepLog {
            t: next.time,
            position: next.position,
            velocity: next.velocity,
            acceleration: next.acceleration,
            command: cmd,
            yaw: next.yaw,
            v_ref,
            smoothed_velocity: next.smoothed_velocity,
            distance: query.distance,
            approach,
            status,
        });
        last_cmd = cmd;
        state = next;
        match status {
            Termination::Collided => {
                trace.outcome = Outcome::Collided;
                break;
            }
            Termination::OutOfBounds => {
                trace.outcome = Outcome::OutOfBounds;
                break;
            }
            Termination::Running => {}
        }
        if (state.position - ep.goal).norm() < env.goal.radius {
            trace.outcome = Outcome::ReachedGoal;
            break;
        }
    }
    Ok(trace)
}

fn clamp_norm(v: Vec3, bound: f64) -> Vec3 {
    let n = v.norm();
    if n > bound {
        v * (bound / n)
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{init_params, ArchConfig};
    use crate::scene::{generate_scene, Aabb, GenConfig};

    fn straight() -> Episode {
        Episode {
            start: Vec3::new(-17.0, 0.0, 1.5),
            goal: Vec3::new(17.0, 0.0, 1.5),
            speed: 3.0,
        }
    }

    fn zero_policy() -> PolicyParams {
        let p = init_params(&ArchConfig::default(), 0).unwrap();
        PolicyParams::from_values(&p.arch, vec![0.0; p.len()]).unwrap()
    }

    #[test]
    fn zero_steps_give_empty_trace() {
        let scene = generate_scene(1, &GenConfig::default()).unwrap();
        let env = EnvConfig::default();
        let ctx = EpisodeContext { scene: &scene, env: &env, episode: straight() };
        let t = rollout(&zero_policy(), &ctx, &RolloutOptions::default()).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.outcome, Outcome::TimedOut);
    }

    #[test]
    fn zero_policy_in_empty_scene_drifts_with_zero_commands() {
        let scene = Scene::empty(Aabb::new(Vec3::new(-20.0, -20.0, 0.0), Vec3::new(20.0, 20.0, 5.0)));
        let env = EnvConfig::default();
        let ctx = EpisodeContext { scene: &scene, env: &env, episode: straight() };
        let opts = RolloutOptions { steps: 30, ..Default::default() };
        let t = rollout(&zero_policy(), &ctx, &opts).unwrap();
        assert_eq!(t.len(), 30);
        assert!(t.steps.iter().all(|s| s.command == Vec3::ZERO && s.position == straight().start));
        let mut rec = Recorder::<f64>::new(&zero_policy(), &start_state(&straight(), &env.dynamics), &env.dynamics, 1.0);
        rollout_recorded(&zero_policy(), &ctx, &opts, &mut rec).unwrap();
        let steps = crate::loss::loss_steps(&rec.tape, &rec.steps);
        let (la, lj) = crate::loss::smoothness_losses(&steps, env.dynamics.dt);
        assert_eq!((la, lj), (0.0, 0.0));
    }

    #[test]
    fn rollouts_are_deterministic_and_recording_matches_plain() {
        let scene = generate_scene(4, &GenConfig::default()).unwrap();
        let env = EnvConfig::default();
        let ctx = EpisodeContext { scene: &scene, env: &env, episode: straight() };
        let params = init_params(&ArchConfig::default(), 7).unwrap();
        let opts = RolloutOptions { steps: 40, record_observations: true, ..Default::default() };
        let a = rollout(&params, &ctx, &opts).unwrap();
        let b = rollout(&params, &ctx, &opts).unwrap();
        assert_eq!(a, b);
        // the first frame has no previous depth
        assert!(a.observations[0].full_flow.values.iter().all(|v| *v == [0.0; 2]));
        assert!(a.observations.iter().skip(1).any(|o| o.full_flow.values.iter().any(|v| *v != [0.0; 2])));
        let mut rec = Recorder::<f32>::new(&params, &start_state(&ctx.episode, &env.dynamics), &env.dynamics, 0.5);
        let c = rollout_recorded(&params, &ctx, &opts, &mut rec).unwrap();
        assert_eq!(c.len(), a.len());
        for (x, y) in a.steps.iter().zip(&c.steps) {
            assert!((x.position - y.position).norm() < 1e-3);
        }
        // tape state values track the f64 simulation
        for (s, log) in rec.steps.iter().zip(&c.steps) {
            let v = rec.tape.value(s.state);
            assert!((v[0] as f64 - log.position.x).abs() < 1e-3);
        }
    }

    #[test]
    fn step_budget_is_twice_straight_line_time() {
        let env = EnvConfig::default();
        // 34 m at 3 m/s, doubled, at 15 Hz
        assert_eq!(env.step_budget(&straight()), (2.0f64 * 34.0 / 3.0 * 15.0).ceil() as usize);
    }
}
