//! Central finite differences as an independent oracle for the backward
//! pass. Runs the same generic code path at f64, where the arithmetic noise
//! floor sits far below the tolerance being checked.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::model::ParameterSet;
use super::tape::{NodeId, Tape};
use super::tensor::Scalar;
use super::NnError;

/// Max relative error between analytic gradients and central finite
/// differences over `n_samples` randomly sampled parameter coordinates:
/// `|analytic - numeric| / (|numeric| + 1e-8)`.
///
/// `loss_fn` must rebuild the loss for the parameters it is handed; the
/// analytic side comes from one backward pass at the unperturbed point.
pub fn finite_diff_check<E, F>(
    loss_fn: F,
    params: &ParameterSet<E>,
    step: f64,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, NnError>
where
    E: Scalar,
    F: Fn(&ParameterSet<E>) -> Result<(Tape<E>, NodeId), NnError>,
{
    if !(step > 0.0) {
        return Err(NnError::Contract(format!("finite difference step must be > 0, got {step}")));
    }
    let (mut tape, loss) = loss_fn(params)?;
    let grads = tape.backward(loss, &params.shapes())?;

    let total = params.n_scalars();
    let mut worst = 0.0f64;
    let mut work = params.clone();
    for _ in 0..n_samples {
        let flat = rng.gen_range(0..total);
        let (pid, offset) = locate(params, flat);
        let original = work.tensors()[pid].data()[offset];

        work.tensors_mut()[pid].data_mut()[offset] = original + E::from_f64(step);
        let (tape_hi, node_hi) = loss_fn(&work)?;
        let hi = tape_hi.value(node_hi).item().as_f64();

        work.tensors_mut()[pid].data_mut()[offset] = original - E::from_f64(step);
        let (tape_lo, node_lo) = loss_fn(&work)?;
        let lo = tape_lo.value(node_lo).item().as_f64();

        work.tensors_mut()[pid].data_mut()[offset] = original;

        let numeric = (hi - lo) / (2.0 * step);
        let analytic = grads.tensors[pid].data()[offset].as_f64();
        let rel = (analytic - numeric).abs() / (numeric.abs() + 1e-8);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

fn locate<E: Scalar>(params: &ParameterSet<E>, mut flat: usize) -> (usize, usize) {
    for (pid, t) in params.tensors().iter().enumerate() {
        if flat < t.len() {
            return (pid, flat);
        }
        flat -= t.len();
    }
    unreachable!("flat index within n_scalars")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{nll_loss, ModelConfig};
    use crate::rng::stream_rng;

    #[test]
    fn quadratic_loss_checks_to_machine_precision() {
        let cfg = ModelConfig { vocab: 5, d_model: 8, n_layers: 1, n_heads: 2, ctx_len: 8 };
        let mut rng = stream_rng(11, "gradcheck");
        let params = ParameterSet::<f64>::init_random(cfg, &mut rng);
        let err = finite_diff_check(
            |p| {
                let mut tape = Tape::new();
                let leaf = tape.param(0, p.tensor(0).clone());
                let loss = tape.square_sum(leaf);
                Ok((tape, loss))
            },
            &params,
            1e-4,
            50,
            &mut rng,
        )
        .unwrap();
        assert!(err < 1e-6, "quadratic check error {err}");
    }

    #[test]
    fn full_model_nll_gradients_match_finite_differences() {
        let cfg = ModelConfig { vocab: 13, d_model: 16, n_layers: 2, n_heads: 4, ctx_len: 24 };
        let mut rng = stream_rng(12, "gradcheck");
        let params = ParameterSet::<f64>::init_random(cfg, &mut rng);
        let context = [0u32, 7, 2, 11];
        let target = [5u32, 3, 3, 9, 1];
        let err = finite_diff_check(
            |p| nll_loss(p, &context, &target),
            &params,
            1e-4,
            120,
            &mut rng,
        )
        .unwrap();
        assert!(err < 1e-3, "full-model gradient check error {err}");
    }

    #[test]
    fn zero_step_rejected() {
        let cfg = ModelConfig { vocab: 5, d_model: 8, n_layers: 1, n_heads: 2, ctx_len: 8 };
        let mut rng = stream_rng(13, "gradcheck");
        let params = ParameterSet::<f64>::init_random(cfg, &mut rng);
        let res = finite_diff_check(
            |p| nll_loss(p, &[0, 1], &[2]),
            &params,
            0.0,
            10,
            &mut rng,
        );
        assert!(matches!(res, Err(NnError::Contract(_))));
    }
}
