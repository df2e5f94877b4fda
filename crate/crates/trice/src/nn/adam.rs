//! Adaptive-moment optimizer over the flat parameter list, plus global-norm
//! gradient clipping.

use super::model::ParameterSet;
use super::tape::GradientSet;
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Moment accumulators and schedule state. Shapes mirror the parameters.
#[derive(Clone, Debug)]
pub struct OptimizerState<E> {
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<E: Scalar> OptimizerState<E> {
    pub fn new(params: &ParameterSet<E>, lr: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        OptimizerState { m: zeros(), v: zeros(), step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn first_moment(&self, pid: usize) -> &Tensor<E> {
        &self.m[pid]
    }
}

/// One bias-corrected update. Increments the step counter.
pub fn adam_step<E: Scalar>(
    params: &mut ParameterSet<E>,
    grads: &GradientSet<E>,
    state: &mut OptimizerState<E>,
) -> Result<(), NnError> {
    if grads.tensors.len() != params.tensors().len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} gradient tensors for {} parameters",
            grads.tensors.len(),
            params.tensors().len()
        )));
    }
    for (g, p) in grads.tensors.iter().zip(params.tensors().iter()) {
        if g.shape() != p.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "gradient {:?} vs parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let b1 = E::from_f64(state.beta1);
    let b2 = E::from_f64(state.beta2);
    let one_m_b1 = E::from_f64(1.0 - state.beta1);
    let one_m_b2 = E::from_f64(1.0 - state.beta2);
    let corr1 = E::from_f64(1.0 / (1.0 - state.beta1.powi(t as i32)));
    let corr2 = E::from_f64(1.0 / (1.0 - state.beta2.powi(t as i32)));
    let lr = E::from_f64(state.lr);
    let eps = E::from_f64(state.eps);
    let _ = t;

    for (pid, g) in grads.tensors.iter().enumerate() {
        let m = state.m[pid].data_mut();
        let v = state.v[pid].data_mut();
        let p = params.tensors_mut()[pid].data_mut();
        for i in 0..g.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + one_m_b1 * gi;
            v[i] = b2 * v[i] + one_m_b2 * gi * gi;
            let mhat = m[i] * corr1;
            let vhat = v[i] * corr2;
            p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales gradients in place when the global L2 norm exceeds `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<E: Scalar>(grads: &mut GradientSet<E>, max_norm: f64) -> f64 {
    let norm = grads.global_norm_f64();
    if norm > max_norm && norm > 0.0 {
        grads.scale(E::from_f64(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::ModelConfig;
    use crate::rng::stream_rng;

    fn one_scalar_setup(p0: f64, lr: f64) -> (ParameterSet<f32>, OptimizerState<f32>) {
        // Smallest legal model; tests poke coordinate [0] of the first tensor.
        let cfg = ModelConfig { vocab: 2, d_model: 2, n_layers: 1, n_heads: 1, ctx_len: 2 };
        let mut params = ParameterSet::<f32>::zeros(cfg);
        params.tensors_mut()[0].data_mut()[0] = p0 as f32;
        let state = OptimizerState::new(&params, lr);
        (params, state)
    }

    fn grad_like(params: &ParameterSet<f32>, g0: f32) -> GradientSet<f32> {
        let mut g = GradientSet::zeros(&params.shapes());
        g.tensors[0].data_mut()[0] = g0;
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged_and_decays_moments() {
        // Fresh state + zero grad: no movement at all.
        let (mut fresh, mut fresh_state) = one_scalar_setup(0.5, 0.1);
        let zg = grad_like(&fresh, 0.0);
        adam_step(&mut fresh, &zg, &mut fresh_state).unwrap();
        assert_eq!(fresh.tensors()[0].data()[0], 0.5);

        // Primed moments decay toward zero once gradients stop.
        let (mut params, mut state) = one_scalar_setup(1.0, 0.1);
        let g = grad_like(&params, 1.0);
        adam_step(&mut params, &g, &mut state).unwrap();
        let m_before = state.first_moment(0).data()[0].abs();
        let zero = grad_like(&params, 0.0);
        for _ in 0..5 {
            adam_step(&mut params, &zero, &mut state).unwrap();
        }
        assert!(state.first_moment(0).data()[0].abs() < m_before);
    }

    #[test]
    fn constant_gradient_update_magnitude_approaches_lr() {
        let (mut params, mut state) = one_scalar_setup(0.0, 0.1);
        let g = grad_like(&params, 0.37);
        let mut prev = params.tensors()[0].data()[0];
        let mut last_delta = 0.0f32;
        for _ in 0..300 {
            adam_step(&mut params, &g, &mut state).unwrap();
            let cur = params.tensors()[0].data()[0];
            last_delta = (cur - prev).abs();
            prev = cur;
        }
        assert!((last_delta - 0.1).abs() < 1e-3, "per-step magnitude {last_delta}");
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // p=1, g=1, lr=0.1, fresh state: p' = 1 - 0.1 * 1/(1 + eps) ~= 0.9
        let (mut params, mut state) = one_scalar_setup(1.0, 0.1);
        let g = grad_like(&params, 1.0);
        adam_step(&mut params, &g, &mut state).unwrap();
        let p = params.tensors()[0].data()[0];
        assert!((p - 0.9).abs() < 1e-6, "got {p}");
        assert_eq!(state.step, 1);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = ModelConfig { vocab: 3, d_model: 2, n_layers: 1, n_heads: 1, ctx_len: 2 };
        let mut rng = stream_rng(21, "adam");
        let mut params = ParameterSet::<f32>::init_random(cfg, &mut rng);
        let other = ModelConfig { vocab: 4, d_model: 2, n_layers: 1, n_heads: 1, ctx_len: 2 };
        let bad = GradientSet::<f32>::zeros(&ParameterSet::<f32>::zeros(other).shapes());
        let mut state = OptimizerState::new(&params, 0.1);
        assert!(matches!(
            adam_step(&mut params, &bad, &mut state),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let cfg = ModelConfig { vocab: 2, d_model: 2, n_layers: 1, n_heads: 1, ctx_len: 2 };
        let params = ParameterSet::<f32>::zeros(cfg);
        let mut g = GradientSet::zeros(&params.shapes());
        for t in g.tensors.iter_mut() {
            for x in t.data_mut() {
                *x = 10.0;
            }
        }
        let norm = clip_global_norm(&mut g, 1.0);
        assert!(norm > 1.0);
        assert!((g.global_norm_f64() - 1.0).abs() < 1e-5);
    }
}
