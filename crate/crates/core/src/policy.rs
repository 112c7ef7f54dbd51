//! Recurrent control policy: dense encoder, gated recurrent cell, dense head
//! and radial `a_max * tanh` output squashing.

use crate::autodiff::{Real, Tape, Var};
use crate::dynamics::ControlCommand;
use crate::error::{Error, Result};
use crate::flow::{DualFlowObservation, PROPRIO_LEN};
use crate::math::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Feed the flow channels; when false only the proprio vector is used.
    pub use_flow: bool,
    pub encoder: Vec<usize>,
    /// Width of the gated recurrent cell; 0 removes the cell.
    pub hidden: usize,
    pub head: Vec<usize>,
    pub a_max: f64,
    /// Proprio entries are multiplied by this before entering the network.
    pub proprio_scale: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            use_flow: true,
            encoder: vec![128],
            hidden: 64,
            head: vec![64],
            a_max: 10.0,
            proprio_scale: 0.1,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder.iter().chain(&self.head).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be at least 1".into()));
        }
        if !(self.a_max > 0.0) || !self.proprio_scale.is_finite() {
            return Err(Error::Config("a_max must be positive and proprio_scale finite".into()));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        PROPRIO_LEN + if self.use_flow { DualFlowObservation::FLOW_LEN } else { 0 }
    }

    /// Dense layers as `(name, rows, cols, zero_bias)`, recurrent blocks
    /// included, in parameter order.
    fn shapes(&self) -> Vec<(String, usize, usize, bool)> {
        let mut out = Vec::new();
        let mut width = self.input_len();
        for (i, &w) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}"), w, width, false));
            width = w;
        }
        if self.hidden > 0 {
            let h = self.hidden;
            out.push(("gru.input".into(), 3 * h, width, true));
            out.push(("gru.hidden".into(), 3 * h, h, true));
            width = h;
        }
        for (i, &w) in self.head.iter().enumerate() {
            out.push((format!("head.{i}"), w, width, false));
            width = w;
        }
        out.push(("output".into(), 3, width, true));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset of the row-major weight block; the bias follows it.
    pub offset: usize,
}

impl LayerSlot {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let b = self.offset + self.rows * self.cols;
        b..b + self.rows
    }

    pub fn len(&self) -> usize {
        self.rows * (self.cols + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub arch: ArchConfig,
    pub layout: Vec<LayerSlot>,
    pub values: Vec<f32>,
}

pub fn layout(arch: &ArchConfig) -> Vec<LayerSlot> {
    let mut offset = 0;
    arch.shapes()
        .into_iter()
        .map(|(name, rows, cols, _)| {
            let slot = LayerSlot {
                name,
                rows,
                cols,
                offset,
            };
            offset += slot.len();
            slot
        })
        .collect()
}

/// Fan-in scaled uniform weights. Encoder and head biases are drawn the same
/// way; recurrent and output biases start at zero.
pub fn init_params(arch: &ArchConfig, seed: u64) -> Result<PolicyParams> {
    arch.validate()?;
    let layout = layout(arch);
    let total = layout.last().map_or(0, |s| s.offset + s.len());
    let mut values = vec![0.0f32; total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (slot, (_, _, _, zero_bias)) in layout.iter().zip(arch.shapes()) {
        let bound = 1.0 / (slot.cols as f32).sqrt();
        for v in &mut values[slot.weight_range()] {
            *v = rng.random_range(-bound..bound);
        }
        if !zero_bias {
            for v in &mut values[slot.bias_range()] {
                *v = rng.random_range(-bound..bound);
            }
        }
    }
    Ok(PolicyParams {
        arch: arch.clone(),
        layout,
        values,
    })
}

impl PolicyParams {
    pub fn from_values(arch: &ArchConfig, values: Vec<f32>) -> Result<Self> {
        arch.validate()?;
        let layout = layout(arch);
        let total = layout.last().map_or(0, |s| s.offset + s.len());
        if values.len() != total {
            return Err(Error::contract(format!(
                "architecture needs {total} parameters, got {}",
                values.len()
            )));
        }
        Ok(PolicyParams {
            arch: arch.clone(),
            layout,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<&LayerSlot> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub fn zero_hidden(&self) -> HiddenState {
        HiddenState(vec![0.0; self.arch.hidden])
    }

    /// Network input: flow features followed by scaled proprio.
    pub fn input_vector(&self, obs: &DualFlowObservation) -> Result<Vec<f32>> {
        let mut x = Vec::with_capacity(self.arch.input_len());
        if self.arch.use_flow {
            x.extend(obs.flow_features());
            if x.len() != DualFlowObservation::FLOW_LEN {
                return Err(Error::contract(format!(
                    "observation has {} flow features, expected {}",
                    x.len(),
                    DualFlowObservation::FLOW_LEN
                )));
            }
        }
        let s = self.arch.proprio_scale;
        x.extend(obs.proprio.iter().map(|p| (p * s) as f32));
        Ok(x)
    }

    /// Forward pass without recording.
    pub fn forward(&self, obs: &DualFlowObservation, h: &HiddenState) -> Result<(ControlCommand, HiddenState)> {
        let x = self.input_vector(obs)?;
        self.forward_input(&x, h)
    }

    pub fn forward_input(&self, x: &[f32], h: &HiddenState) -> Result<(ControlCommand, HiddenState)> {
        self.check_shapes(x.len(), h.0.len())?;
        let dense = |slot: &LayerSlot, input: &[f32]| -> Vec<f32> {
            let w = &self.values[slot.weight_range()];
            let b = &self.values[slot.bias_range()];
            (0..slot.rows)
                .map(|r| crate::autodiff::dot(&w[r * slot.cols..(r + 1) * slot.cols], input) + b[r])
                .collect()
        };
        let mut slots = self.layout.iter();
        let mut act = x.to_vec();
        for _ in &self.arch.encoder {
            act = dense(slots.next().unwrap(), &act);
            act.iter_mut().for_each(|v| *v = v.tanh());
        }
        let mut h_next = Vec::new();
        if self.arch.hidden > 0 {
            let hs = self.arch.hidden;
            let gx = dense(slots.next().unwrap(), &act);
            let gh = dense(slots.next().unwrap(), &h.0);
            h_next = (0..hs)
                .map(|i| {
                    let r = crate::autodiff::sigmoid(gx[i] + gh[i]);
                    let z = crate::autodiff::sigmoid(gx[hs + i] + gh[hs + i]);
                    let n = (gx[2 * hs + i] + r * gh[2 * hs + i]).tanh();
                    n + z * (h.0[i] - n)
                })
                .collect();
            act = h_next.clone();
        }
        for _ in &self.arch.head {
            act = dense(slots.next().unwrap(), &act);
            act.iter_mut().for_each(|v| *v = v.tanh());
        }
        let out = dense(slots.next().unwrap(), &act);
        let (cmd, _) = squash([out[0] as f64, out[1] as f64, out[2] as f64], self.arch.a_max);
        Ok((ControlCommand(cmd), HiddenState(h_next)))
    }

    fn check_shapes(&self, input: usize, hidden: usize) -> Result<()> {
        if input != self.arch.input_len() || hidden != self.arch.hidden {
            return Err(Error::contract(format!(
                "policy expects input {} / hidden {}, got {input} / {hidden}",
                self.arch.input_len(),
                self.arch.hidden
            )));
        }
        Ok(())
    }
}

/// Radial squashing `a_max * tanh(|y|) * y / |y|` and its Jacobian. The
/// norm bound holds in every frame, so the command can be rotated freely.
pub fn squash(y: [f64; 3], a_max: f64) -> (Vec3, [[f64; 3]; 3]) {
    let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
    // u = s(r) y, du/dy = s I + (s'(r) / r) y y^T
    let (s, g) = if r < 1e-4 {
        let r2 = r * r;
        (a_max * (1.0 - r2 / 3.0), a_max * (-2.0 / 3.0 + 0.8 * r2))
    } else {
        let t = r.tanh();
        let sech2 = 1.0 - t * t;
        (a_max * t / r, a_max * (sech2 * r - t) / (r * r * r))
    };
    let mut jac = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            jac[i][j] = g * y[i] * y[j] + if i == j { s } else { 0.0 };
        }
    }
    let u = Vec3::new(s * y[0], s * y[1], s * y[2]);
    let (mut u, mut n) = (u, u.norm());
    // rounding can put the norm one ulp past the bound
    while n > a_max {
        u = u * ((a_max / n) * (1.0 - f64::EPSILON));
        n = u.norm();
    }
    (u, jac)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState(pub Vec<f32>);

/// Parameter leaves of one policy registered on a tape.
#[derive(Clone, Debug)]
pub struct TapePolicy {
    arch: ArchConfig,
    layers: Vec<(Var, Var)>,
}

impl TapePolicy {
    /// Registers every weight and bias once; later steps reuse the leaves.
    pub fn register<F: Real>(params: &PolicyParams, tape: &mut Tape<F>) -> Self {
        let layers = params
            .layout
            .iter()
            .map(|s| {
                let w: Vec<F> = params.values[s.weight_range()].iter().map(|&v| F::lit(v as f64)).collect();
                let b: Vec<F> = params.values[s.bias_range()].iter().map(|&v| F::lit(v as f64)).collect();
                (tape.param(&w, s.weight_range().start), tape.param(&b, s.bias_range().start))
            })
            .collect();
        TapePolicy {
            arch: params.arch.clone(),
            layers,
        }
    }

    pub fn zero_hidden<F: Real>(&self, tape: &mut Tape<F>) -> Option<Var> {
        (self.arch.hidden > 0).then(|| tape.constant(&vec![F::zero(); self.arch.hidden]))
    }

    /// Records one step. `x` is the network input (see
    /// [`PolicyParams::input_vector`]); returns the squashed command node and
    /// the next hidden node.
    pub fn step<F: Real>(&self, tape: &mut Tape<F>, x: Var, h: Option<Var>) -> Result<(Var, Option<Var>)> {
        if tape.dim(x) != self.arch.input_len() || h.map(|h| tape.dim(h)) != (self.arch.hidden > 0).then_some(self.arch.hidden) {
            return Err(Error::contract("tape policy input or hidden size mismatch"));
        }
        let mut layers = self.layers.iter();
        let mut act = x;
        for _ in &self.arch.encoder {
            let (w, b) = *layers.next().unwrap();
            let y = tape.affine(w, act, Some(b));
            act = tape.tanh(y);
        }
        let mut h_next = None;
        if let Some(h) = h {
            let hs = self.arch.hidden;
            let (wx, bx) = *layers.next().unwrap();
            let (wh, bh) = *layers.next().unwrap();
            let gx = tape.affine(wx, act, Some(bx));
            let gh = tape.affine(wh, h, Some(bh));
            let gates_x = tape.slice(gx, 0, 2 * hs);
            let gates_h = tape.slice(gh, 0, 2 * hs);
            let pre = tape.add(gates_x, gates_h);
            let rz = tape.sigmoid(pre);
            let r = tape.slice(rz, 0, hs);
            let z = tape.slice(rz, hs, hs);
            let nx = tape.slice(gx, 2 * hs, hs);
            let nh = tape.slice(gh, 2 * hs, hs);
            let rn = tape.mul(r, nh);
            let npre = tape.add(nx, rn);
            let n = tape.tanh(npre);
            let diff = tape.sub(h, n);
            let zd = tape.mul(z, diff);
            let hn = tape.add(n, zd);
            h_next = Some(hn);
            act = hn;
        }
        for _ in &self.arch.head {
            let (w, b) = *layers.next().unwrap();
            let y = tape.affine(w, act, Some(b));
            act = tape.tanh(y);
        }
        let (w, b) = *layers.next().unwrap();
        let y = tape.affine(w, act, Some(b));
        let yv = tape.value(y);
        let (u, jac) = squash([yv[0].real(), yv[1].real(), yv[2].real()], self.arch.a_max);
        let jac: Vec<F> = jac.iter().flatten().map(|&v| F::lit(v)).collect();
        let cmd = tape.custom(&[F::lit(u.x), F::lit(u.y), F::lit(u.z)], &[(y, &jac)]);
        Ok((cmd, h_next))
    }
}

/// Reads a command node back as a bounded [`ControlCommand`].
pub fn command_value<F: Real>(tape: &Tape<F>, cmd: Var, a_max: f64) -> ControlCommand {
    let v = tape.value(cmd);
    let u = Vec3::new(v[0].real(), v[1].real(), v[2].real());
    let n = u.norm();
    ControlCommand(if n > a_max { u * (a_max / n) } else { u })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraIntrinsics;
    use crate::flow::{FlowImage, OBS_GRID};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_obs(rng: &mut ChaCha8Rng) -> DualFlowObservation {
        let intr = CameraIntrinsics::new(OBS_GRID.1, OBS_GRID.0, 90.0, 20.0).unwrap();
        let mut grid = || FlowImage::from_fn(intr, |_, _| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let full_flow = grid();
        let central_flow = grid();
        let mut proprio = [0.0; PROPRIO_LEN];
        proprio.iter_mut().for_each(|p| *p = rng.random_range(-5.0..5.0));
        DualFlowObservation {
            full_flow,
            central_flow,
            proprio,
        }
    }

    /// Counts parameters from the architecture description alone.
    fn count_params(input: usize, enc: &[usize], hidden: usize, head: &[usize]) -> usize {
        let mut n = 0;
        let mut prev = input;
        for &w in enc {
            n += w * prev + w;
            prev = w;
        }
        if hidden > 0 {
            n += 3 * (hidden * prev + hidden) + 3 * (hidden * hidden + hidden);
            prev = hidden;
        }
        for &w in head {
            n += w * prev + w;
            prev = w;
        }
        n + 3 * prev + 3
    }

    #[test]
    fn default_parameter_count() {
        let arch = ArchConfig::default();
        let p = init_params(&arch, 0).unwrap();
        let expected = count_params(2 * 2 * 12 * 16 + 9, &[128], 64, &[64]);
        assert_eq!(expected, 777 * 128 + 128 + 3 * (128 * 64 + 64) + 3 * (64 * 64 + 64) + 64 * 64 + 64 + 3 * 64 + 3);
        assert_eq!(p.len(), expected);
        let sum: usize = p.layout.iter().map(|s| s.len()).sum();
        assert_eq!(sum, expected);
        for pair in p.layout.windows(2) {
            assert_eq!(pair[0].offset + pair[0].len(), pair[1].offset);
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_recurrent_and_output_bias() {
        let arch = ArchConfig::default();
        let a = init_params(&arch, 42).unwrap();
        let b = init_params(&arch, 42).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, init_params(&arch, 43).unwrap().values);
        for name in ["gru.input", "gru.hidden", "output"] {
            let s = a.slot(name).unwrap();
            assert!(a.values[s.bias_range()].iter().all(|&v| v == 0.0), "{name}");
        }
        // zero output weights -> exactly zero command
        let mut z = a.clone();
        let s = z.slot("output").unwrap().clone();
        z.values[s.weight_range()].iter_mut().for_each(|v| *v = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (cmd, _) = z.forward(&random_obs(&mut rng), &z.zero_hidden()).unwrap();
        assert_eq!(cmd.0, Vec3::ZERO);
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let arch = ArchConfig::default();
        let p = init_params(&arch, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::<f64>::new();
        let tp = TapePolicy::register(&p, &mut tape);
        let mut h_var = tp.zero_hidden(&mut tape);
        let mut h = p.zero_hidden();
        for _ in 0..4 {
            let obs = random_obs(&mut rng);
            let x = p.input_vector(&obs).unwrap();
            let xv = tape.constant(&x.iter().map(|&v| v as f64).collect::<Vec<_>>());
            let (c_var, hn) = tp.step(&mut tape, xv, h_var).unwrap();
            h_var = hn;
            let (c, h2) = p.forward(&obs, &h).unwrap();
            h = h2;
            let ct = command_value(&tape, c_var, arch.a_max);
            assert!((ct.0 - c.0).norm() < 1e-4, "{:?} vs {:?}", ct, c);
            for (a, b) in tape.value(h_var.unwrap()).iter().zip(&h.0) {
                assert!((a - *b as f64).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let p = init_params(&ArchConfig::default(), 0).unwrap();
        assert!(p.forward_input(&[0.0; 10], &p.zero_hidden()).is_err());
        assert!(p.forward_input(&vec![0.0; 777], &HiddenState(vec![0.0; 3])).is_err());
    }

    #[test]
    fn central_flow_changes_output() {
        let arch = ArchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let p = init_params(&arch, trial).unwrap();
            let obs = random_obs(&mut rng);
            let mut other = obs.clone();
            for v in &mut other.central_flow.values {
                v[0] += rng.random_range(-0.5..0.5);
                v[1] += rng.random_range(-0.5..0.5);
            }
            let a = p.forward(&obs, &p.zero_hidden()).unwrap().0;
            let b = p.forward(&other, &p.zero_hidden()).unwrap().0;
            assert_ne!(a, b, "trial {trial}");
        }
    }

    #[test]
    fn memory_reset_gives_identical_streams() {
        let p = init_params(&ArchConfig::default(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stream: Vec<_> = (0..6).map(|_| random_obs(&mut rng)).collect();
        let run = || {
            let mut h = p.zero_hidden();
            stream
                .iter()
                .map(|o| {
                    let (c, h2) = p.forward(o, &h).unwrap();
                    h = h2;
                    c
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn every_layer_receives_gradient() {
        let arch = ArchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..10 {
            let p = init_params(&arch, 100 + trial).unwrap();
            let mut tape = Tape::<f32>::new();
            let tp = TapePolicy::register(&p, &mut tape);
            let mut h = tp.zero_hidden(&mut tape);
            let mut cmds = Vec::new();
            for _ in 0..3 {
                let x = p.input_vector(&random_obs(&mut rng)).unwrap();
                let xv = tape.constant(&x);
                let (c, hn) = tp.step(&mut tape, xv, h).unwrap();
                h = hn;
                cmds.push(c);
            }
            let all = tape.concat(&cmds);
            let v = tape.value(all).to_vec();
            let w: Vec<f32> = (0..v.len()).map(|i| 1.0 + i as f32 * 0.1).collect();
            let s = tape.custom(&[v.iter().zip(&w).map(|(a, b)| a * b).sum()], &[(all, &w)]);
            let g = tape.backward(s, p.len()).unwrap().params;
            for slot in &p.layout {
                assert!(g[slot.weight_range()].iter().any(|&x| x != 0.0), "{} weights", slot.name);
            }
        }
    }

    #[test]
    fn recurrent_gradient_matches_finite_differences() {
        let arch = ArchConfig {
            encoder: vec![6],
            hidden: 5,
            head: vec![4],
            ..ArchConfig::default()
        };
        let mut p = init_params(&arch, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // nonzero recurrent and output biases so every path is active
        for v in &mut p.values {
            if *v == 0.0 {
                *v = rng.random_range(-0.3..0.3);
            }
        }
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| p.input_vector(&random_obs(&mut rng)).unwrap().iter().map(|&v| v as f64 * 3.0).collect())
            .collect();
        let run = |p: &PolicyParams| -> (f64, Vec<f64>) {
            let mut tape = Tape::<f64>::new();
            let tp = TapePolicy::register(p, &mut tape);
            let mut h = tp.zero_hidden(&mut tape);
            let mut cmds = Vec::new();
            for x in &xs {
                let xv = tape.constant(x);
                let (c, hn) = tp.step(&mut tape, xv, h).unwrap();
                h = hn;
                cmds.push(c);
            }
            let all = tape.concat(&cmds);
            let v = tape.value(all).to_vec();
            let w: Vec<f64> = (0..v.len()).map(|i| (i as f64 * 0.7).sin()).collect();
            let s = tape.custom(&[v.iter().zip(&w).map(|(a, b)| a * b).sum()], &[(all, &w)]);
            let value = tape.scalar(s);
            (value, tape.backward(s, p.len()).unwrap().params)
        };
        let (_, g) = run(&p);
        let encoder = p.slot("encoder.0").unwrap().weight_range();
        let mut checked = 0;
        for i in 0..p.len() {
            // sample the wide input layer, check everything else
            if encoder.contains(&i) && i % 97 != 0 {
                continue;
            }
            let v0 = p.values[i];
            let step = 1e-3f32 * v0.abs().max(0.1);
            let mut q = p.clone();
            q.values[i] = v0 + step;
            let up = run(&q).0;
            q.values[i] = v0 - step;
            let down = run(&q).0;
            // the f32 perturbation is exact in f64
            let h = (v0 + step) as f64 - (v0 - step) as f64;
            let num = (up - down) / h;
            let scale = g[i].abs().max(num.abs()).max(1e-6);
            assert!((g[i] - num).abs() / scale < 1e-4, "param {i}: {} vs {num}", g[i]);
            checked += 1;
        }
        assert!(checked > 250, "{checked}");
    }

    #[test]
    fn squash_jacobian_matches_finite_differences() {
        for y in [[0.3, -1.2, 2.0], [1e-6, 2e-6, -1e-6], [5e-5, 0.0, 0.0], [0.0; 3], [-0.01, 0.02, 0.005]] {
            let (_, jac) = squash(y, 10.0);
            for j in 0..3 {
                let h = 1e-7;
                let mut yp = y;
                yp[j] += h;
                let mut ym = y;
                ym[j] -= h;
                let d = (squash(yp, 10.0).0 - squash(ym, 10.0).0) * (0.5 / h);
                for i in 0..3 {
                    assert!((d[i] - jac[i][j]).abs() < 1e-6, "{y:?} {i}{j}: {} vs {}", d[i], jac[i][j]);
                }
            }
        }
        let (u, _) = squash([1e3, -2e3, 0.0], 10.0);
        assert!(u.norm() <= 10.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn output_is_bounded(seed in 0u64..1000, gain in 0.0f32..1e4) {
            let arch = ArchConfig { a_max: 3.5, ..ArchConfig::default() };
            let mut p = init_params(&arch, seed).unwrap();
            p.values.iter_mut().for_each(|v| *v *= gain);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (c, h) = p.forward(&random_obs(&mut rng), &p.zero_hidden()).unwrap();
            for x in c.0.to_array() {
                prop_assert!(x.abs() <= 3.5);
            }
            prop_assert!(c.0.norm() <= 3.5);
            prop_assert!(h.0.iter().all(|v| v.is_finite()));
        }
    }
}
