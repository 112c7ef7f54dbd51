//! Optical flow: depth reprojection between poses, the instantaneous
//! flow/motion relation, block downsampling and the dual-resolution
//! policy observation.

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::render::DepthImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Dense 2-vector field `(du, dv)` in pixels, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowImage {
    pub values: Vec<[f32; 2]>,
    pub intrinsics: CameraIntrinsics,
}

impl FlowImage {
    pub fn zeros(intrinsics: CameraIntrinsics) -> Self {
        FlowImage {
            values: vec![[0.0; 2]; intrinsics.pixels()],
            intrinsics,
        }
    }

    pub fn from_fn(intrinsics: CameraIntrinsics, mut f: impl FnMut(usize, usize) -> [f32; 2]) -> Self {
        let mut values = Vec::with_capacity(intrinsics.pixels());
        for r in 0..intrinsics.height {
            for c in 0..intrinsics.width {
                values.push(f(r, c));
            }
        }
        FlowImage { values, intrinsics }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> [f32; 2] {
        self.values[row * self.intrinsics.width + col]
    }

    pub fn scaled(&self, s: f32) -> FlowImage {
        FlowImage {
            values: self.values.iter().map(|v| [v[0] * s, v[1] * s]).collect(),
            intrinsics: self.intrinsics,
        }
    }
}

/// Camera-frame velocity and angular rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyTwist {
    pub v_body: Vec3,
    pub omega_body: Vec3,
}

impl BodyTwist {
    /// Twist of a camera translating with world velocity `v_world` while
    /// yawing at `yaw_rate` (rad/s, counter-clockwise about world up).
    pub fn from_world(pose: &CameraPose, v_world: Vec3, yaw_rate: f64) -> Self {
        BodyTwist {
            v_body: pose.rotate_to_camera(v_world),
            // world up is camera -y
            omega_body: Vec3::new(0.0, -yaw_rate, 0.0),
        }
    }
}

/// Reusable buffers for [`reprojection_flow_into`].
#[derive(Default, Debug)]
pub struct FlowScratch {
    anchored: Vec<[f32; 2]>,
    splat_z: Vec<f64>,
    nx: Vec<f64>,
    ny: Vec<f64>,
}

const Z_NEAR: f64 = 1e-3;

/// Flow from `depth_prev` (rendered at `pose_prev`) to the camera at
/// `pose_curr`. Each previous pixel is lifted with its depth, moved into the
/// current camera and re-projected; the displacement is then gathered onto
/// the current grid by nearest-neighbour splatting, falling back to the
/// anchored value where nothing lands.
pub fn reprojection_flow(
    depth_prev: &DepthImage,
    pose_prev: CameraPose,
    pose_curr: CameraPose,
    intrinsics: &CameraIntrinsics,
) -> Result<FlowImage> {
    let mut out = FlowImage::zeros(*intrinsics);
    let mut scratch = FlowScratch::default();
    reprojection_flow_into(depth_prev, pose_prev, pose_curr, intrinsics, &mut scratch, &mut out.values)?;
    Ok(out)
}

pub fn reprojection_flow_into(
    depth_prev: &DepthImage,
    pose_prev: CameraPose,
    pose_curr: CameraPose,
    intr: &CameraIntrinsics,
    scratch: &mut FlowScratch,
    out: &mut [[f32; 2]],
) -> Result<()> {
    if depth_prev.intrinsics != *intr {
        return Err(Error::contract("depth image intrinsics differ from requested intrinsics"));
    }
    if out.len() != intr.pixels() {
        return Err(Error::contract("flow buffer size does not match intrinsics"));
    }
    let (w, h) = (intr.width, intr.height);
    let f = intr.focal();

    // relative transform prev-camera -> curr-camera: p' = (I + m) p + t
    let dyaw = pose_curr.yaw - pose_prev.yaw;
    let (s, _) = dyaw.sin_cos();
    let cm1 = -2.0 * (0.5 * dyaw).sin().powi(2);
    // rotation about the camera y axis (world down); yaw +dψ turns the
    // camera left, so scene points move right: x' = c x + s z, z' = -s x + c z
    let m = [[cm1, 0.0, s], [0.0, 0.0, 0.0], [-s, 0.0, cm1]];
    let t = pose_curr.to_camera(pose_prev.position);

    let anchored = &mut scratch.anchored;
    anchored.clear();
    anchored.resize(w * h, [0.0; 2]);
    let splat_z = &mut scratch.splat_z;
    splat_z.clear();
    splat_z.resize(w * h, f64::INFINITY);
    out.fill([f32::NAN; 2]);

    scratch.nx.clear();
    scratch.nx.extend((0..w).map(|c| intr.norm_x(c)));
    scratch.ny.clear();
    scratch.ny.extend((0..h).map(|r| intr.norm_y(r)));
    let umax = w as f64;
    let vmax = h as f64;
    for r in 0..h {
        let yn = scratch.ny[r];
        let v0 = r as f64 + 0.5;
        for c in 0..w {
            let xn = scratch.nx[c];
            let z = depth_prev.values[r * w + c] as f64;
            let (px, py) = (xn * z, yn * z);
            let dx = m[0][0] * px + m[0][2] * z + t.x;
            let dy = t.y;
            let dz = m[2][0] * px + m[2][2] * z + t.z;
            let mut z1 = z + dz;
            let (du, dv) = if z1 > Z_NEAR {
                // (x'/z' - x/z) without cancellation
                let k = f / z1;
                (k * (dx - xn * dz), k * (dy - yn * dz))
            } else {
                z1 = Z_NEAR;
                (f * ((px + dx) / z1 - xn), f * ((py + dy) / z1 - yn))
            };
            // u1, v1 >= 0 so truncation is floor
            let u0 = c as f64 + 0.5;
            let u1 = (u0 + du).clamp(0.0, umax);
            let v1 = (v0 + dv).clamp(0.0, vmax);
            let flow = [(u1 - u0) as f32, (v1 - v0) as f32];
            anchored[r * w + c] = flow;
            let tc = (u1 as usize).min(w - 1);
            let tr = (v1 as usize).min(h - 1);
            let k = tr * w + tc;
            if z1 < splat_z[k] {
                splat_z[k] = z1;
                out[k] = flow;
            }
        }
    }
    for (o, a) in out.iter_mut().zip(anchored.iter()) {
        if o[0].is_nan() {
            *o = *a;
        }
    }
    Ok(())
}

/// Instantaneous flow rate in pixels per second:
/// translational part `(1/z) [[-1,0,x],[0,-1,y]] v` plus rotational part
/// `[[xy, -(1+x^2), y],[1+y^2, -xy, -x]] w`, scaled by the focal length.
pub fn analytic_flow(depth: &DepthImage, twist: &BodyTwist, intrinsics: &CameraIntrinsics) -> Result<FlowImage> {
    if depth.intrinsics != *intrinsics {
        return Err(Error::contract("depth image intrinsics differ from requested intrinsics"));
    }
    if let Some(bad) = depth.values.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::contract(format!("analytic flow needs positive depth, found {bad}")));
    }
    let f = intrinsics.focal();
    let v = twist.v_body;
    let om = twist.omega_body;
    Ok(FlowImage::from_fn(*intrinsics, |r, c| {
        let x = intrinsics.norm_x(c);
        let y = intrinsics.norm_y(r);
        let inv_z = 1.0 / depth.at(r, c) as f64;
        let tx = inv_z * (-v.x + x * v.z);
        let ty = inv_z * (-v.y + y * v.z);
        let rx = x * y * om.x - (1.0 + x * x) * om.y + y * om.z;
        let ry = (1.0 + y * y) * om.x - x * y * om.y - x * om.z;
        [(f * (tx + rx)) as f32, (f * (ty + ry)) as f32]
    }))
}

/// Area-average downsampling to `(height, width)`.
pub fn downsample_flow(flow: &FlowImage, target: (usize, usize)) -> Result<FlowImage> {
    let (th, tw) = target;
    let (h, w) = (flow.height(), flow.width());
    if th == 0 || tw == 0 || h % th != 0 || w % tw != 0 {
        return Err(Error::contract(format!(
            "cannot block-average {h}x{w} down to {th}x{tw}"
        )));
    }
    let mut intr = flow.intrinsics;
    intr.width = tw;
    intr.height = th;
    Ok(FlowImage {
        values: block_mean(&flow.values, w, (0, 0), (h, w), target),
        intrinsics: intr,
    })
}

/// Block mean of the `size` window at `origin` inside a row-major grid.
fn block_mean(
    values: &[[f32; 2]],
    stride: usize,
    origin: (usize, usize),
    size: (usize, usize),
    target: (usize, usize),
) -> Vec<[f32; 2]> {
    let (bh, bw) = (size.0 / target.0, size.1 / target.1);
    let norm = 1.0 / (bh * bw) as f64;
    let mut out = Vec::with_capacity(target.0 * target.1);
    for tr in 0..target.0 {
        for tc in 0..target.1 {
            let (mut su, mut sv) = (0.0f64, 0.0f64);
            for r in 0..bh {
                let row = origin.0 + tr * bh + r;
                let start = row * stride + origin.1 + tc * bw;
                for v in &values[start..start + bw] {
                    su += v[0] as f64;
                    sv += v[1] as f64;
                }
            }
            out.push([(su * norm) as f32, (sv * norm) as f32]);
        }
    }
    out
}

/// Policy observation grid size (rows, cols).
pub const OBS_GRID: (usize, usize) = (12, 16);
/// Proprioceptive vector length: reference velocity, smoothed velocity and
/// last command, each a camera-frame 3-vector.
pub const PROPRIO_LEN: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    /// Fraction of each image dimension kept by the central crop.
    pub crop_fraction: f64,
    /// Flows are divided by this many pixels before entering the policy.
    pub flow_scale: f64,
    /// When false the central channel is zeroed (full-FOV input only).
    pub central_attention: bool,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig {
            crop_fraction: 0.5,
            flow_scale: 20.0,
            central_attention: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualFlowObservation {
    /// Normalized 12x16 downsample of the whole image.
    pub full_flow: FlowImage,
    /// Normalized 12x16 downsample of the central crop.
    pub central_flow: FlowImage,
    /// `[v_ref (3), smoothed velocity (3), last command (3)]`, camera frame,
    /// physical units.
    pub proprio: [f64; PROPRIO_LEN],
}

impl DualFlowObservation {
    /// Length of [`DualFlowObservation::flow_features`].
    pub const FLOW_LEN: usize = 2 * 2 * OBS_GRID.0 * OBS_GRID.1;

    /// Flattened flow channels: full grid then central grid, `(u, v)`
    /// interleaved per cell.
    pub fn flow_features(&self) -> impl Iterator<Item = f32> + '_ {
        self.full_flow
            .values
            .iter()
            .chain(self.central_flow.values.iter())
            .flat_map(|v| [v[0], v[1]])
    }
}

/// Pixel window `(row0, col0, rows, cols)` of the central crop.
pub fn crop_window(height: usize, width: usize, crop_fraction: f64) -> Result<(usize, usize, usize, usize)> {
    if !(crop_fraction > 0.0 && crop_fraction <= 1.0) {
        return Err(Error::contract(format!("crop_fraction {crop_fraction} outside (0, 1]")));
    }
    let (gh, gw) = OBS_GRID;
    // round the crop to whole multiples of the observation grid
    let ch = (((crop_fraction * height as f64) / gh as f64).round() as usize).max(1) * gh;
    let cw = (((crop_fraction * width as f64) / gw as f64).round() as usize).max(1) * gw;
    if ch > height || cw > width {
        return Err(Error::contract(format!(
            "{height}x{width} image too small for a {ch}x{cw} crop"
        )));
    }
    Ok(((height - ch) / 2, (width - cw) / 2, ch, cw))
}

pub fn build_observation(
    flow_highres: &FlowImage,
    cfg: &ObservationConfig,
    proprio: [f64; PROPRIO_LEN],
) -> Result<DualFlowObservation> {
    let (h, w) = (flow_highres.height(), flow_highres.width());
    let (gh, gw) = OBS_GRID;
    if h % gh != 0 || w % gw != 0 {
        return Err(Error::contract(format!("{h}x{w} flow is not a multiple of {gh}x{gw}")));
    }
    if !(cfg.flow_scale > 0.0) {
        return Err(Error::contract("flow_scale must be positive"));
    }
    let (r0, c0, ch, cw) = crop_window(h, w, cfg.crop_fraction)?;
    let s = (1.0 / cfg.flow_scale) as f32;
    let mut intr = flow_highres.intrinsics;
    intr.height = gh;
    intr.width = gw;
    let norm = |mut v: Vec<[f32; 2]>| {
        for x in &mut v {
            x[0] *= s;
            x[1] *= s;
        }
        v
    };
    let full = norm(block_mean(&flow_highres.values, w, (0, 0), (h, w), OBS_GRID));
    let central = if cfg.central_attention {
        norm(block_mean(&flow_highres.values, w, (r0, c0), (ch, cw), OBS_GRID))
    } else {
        vec![[0.0; 2]; gh * gw]
    };
    let mut central_intr = intr;
    // the crop covers a narrower field of view
    central_intr.horizontal_fov =
        2.0 * ((cw as f64 / w as f64) * (0.5 * intr.horizontal_fov.to_radians()).tan()).atan().to_degrees();
    Ok(DualFlowObservation {
        full_flow: FlowImage {
            values: full,
            intrinsics: intr,
        },
        central_flow: FlowImage {
            values: central,
            intrinsics: central_intr,
        },
        proprio,
    })
}

/// Stand-in for flow-estimator error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowNoiseConfig {
    /// Per-pixel Gaussian noise (pixels).
    pub gaussian_sigma: f64,
    /// Probability that a block is zeroed.
    pub dropout_prob: f64,
    /// Side of the square dropout blocks (pixels); 0 means 4.
    pub dropout_block: usize,
    /// Probability a pixel is replaced by a gross error.
    pub outlier_prob: f64,
    /// Magnitude of gross errors (pixels).
    pub outlier_scale: f64,
}

impl FlowNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let p = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.gaussian_sigma >= 0.0) || !p(self.dropout_prob) || !p(self.outlier_prob) || !(self.outlier_scale >= 0.0) {
            return Err(Error::Config(format!("invalid flow noise config {self:?}")));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.gaussian_sigma == 0.0 && self.dropout_prob == 0.0 && self.outlier_prob == 0.0
    }
}

pub fn perturb_flow(flow: &FlowImage, cfg: &FlowNoiseConfig, seed: u64) -> FlowImage {
    let mut out = flow.clone();
    if cfg.is_zero() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = cfg.gaussian_sigma;
    if sigma > 0.0 {
        for v in &mut out.values {
            let nu: f64 = StandardNormal.sample(&mut rng);
            let nv: f64 = StandardNormal.sample(&mut rng);
            v[0] += (sigma * nu) as f32;
            v[1] += (sigma * nv) as f32;
        }
    }
    let (h, w) = (flow.height(), flow.width());
    if cfg.dropout_prob > 0.0 {
        let b = if cfg.dropout_block == 0 { 4 } else { cfg.dropout_block };
        for br in (0..h).step_by(b) {
            for bc in (0..w).step_by(b) {
                if rng.random::<f64>() < cfg.dropout_prob {
                    for r in br..(br + b).min(h) {
                        for c in bc..(bc + b).min(w) {
                            out.values[r * w + c] = [0.0; 2];
                        }
                    }
                }
            }
        }
    }
    if cfg.outlier_prob > 0.0 {
        for v in &mut out.values {
            if rng.random::<f64>() < cfg.outlier_prob {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                *v = [(cfg.outlier_scale * a.cos()) as f32, (cfg.outlier_scale * a.sin()) as f32];
            }
        }
    }
    out
}
