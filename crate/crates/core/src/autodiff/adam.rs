use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 0.0,
        }
    }
}

/// Adaptive-moment state for a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
    /// Updates skipped because the gradient was not finite.
    pub warnings: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        OptimizerState {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            warnings: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Non-finite gradient; parameters untouched.
    Skipped,
}

/// One bias-corrected Adam update in place.
///
/// Panics if the parameter, gradient and moment lengths differ.
pub fn adam_step(params: &mut [f32], grads: &[f32], opt: &mut OptimizerState) -> StepOutcome {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
    assert_eq!(params.len(), opt.m.len(), "optimizer state shape mismatch");
    if grads.iter().any(|g| !g.is_finite()) {
        opt.warnings += 1;
        return StepOutcome::Skipped;
    }
    let c = opt.config;
    let mut scale = 1.0f64;
    if c.clip_norm > 0.0 {
        let norm = grads.iter().map(|g| (*g as f64).powi(2)).sum::<f64>().sqrt();
        if norm > c.clip_norm {
            scale = c.clip_norm / norm;
        }
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
    let step_size = (c.learning_rate / bc1) as f32;
    let inv_bc2 = (1.0 / bc2) as f32;
    let eps = c.epsilon as f32;
    let scale = scale as f32;
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(opt.m.iter_mut()).zip(opt.v.iter_mut()) {
        let g = g * scale;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
    }
    StepOutcome::Applied
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params_and_counts_step() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut opt = OptimizerState::new(3, AdamConfig::default());
        assert_eq!(adam_step(&mut p, &[0.0; 3], &mut opt), StepOutcome::Applied);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_sign() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            epsilon: 1e-12,
            ..Default::default()
        };
        let mut p = vec![0.5f32, 0.5, 0.5];
        let mut opt = OptimizerState::new(3, cfg);
        adam_step(&mut p, &[3.0, -0.002, 150.0], &mut opt);
        // m_hat = g, v_hat = g^2 => update = -lr * sign(g)
        let expect = [0.49f32, 0.51, 0.49];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn nan_gradient_is_skipped_with_warning() {
        let mut p = vec![1.0f32, 2.0];
        let mut opt = OptimizerState::new(2, AdamConfig::default());
        assert_eq!(adam_step(&mut p, &[f32::NAN, 1.0], &mut opt), StepOutcome::Skipped);
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(opt.warnings, 1);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let cfg = AdamConfig {
            clip_norm: 1.0,
            ..Default::default()
        };
        let mut p = vec![0.0f32; 2];
        let mut opt = OptimizerState::new(2, cfg);
        adam_step(&mut p, &[30.0, 40.0], &mut opt);
        assert!((opt.m[0] - 0.1 * 0.6).abs() < 1e-7);
        assert!((opt.m[1] - 0.1 * 0.8).abs() < 1e-7);
    }
}
