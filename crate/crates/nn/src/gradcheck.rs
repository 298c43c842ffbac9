use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::loss::{bce_loss, sum_squared_error};
use crate::network::Network;
use crate::tensor::Tensor;

/// Scalar loss used to drive a gradient check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckLoss {
    /// `0.5 * sum (y - t)^2`
    HalfSquared,
    /// Mean binary cross-entropy; the network output must lie in (0, 1).
    Bce,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name (or `input`) and flat index of the worst entry.
    pub worst: (String, usize),
}

/// Entries whose finite-difference gradient is smaller than this are compared
/// on an absolute scale.
const REL_FLOOR: f64 = 1e-5;

fn loss_of(
    net: &Network<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    loss: CheckLoss,
) -> Result<(f64, Tensor<f64>)> {
    let out = net.predict(input)?;
    match loss {
        CheckLoss::HalfSquared => sum_squared_error(&out, target),
        CheckLoss::Bce => bce_loss(&out, target),
    }
}

/// Maximum relative error between analytic and central-difference gradients,
/// using the half-squared loss, over up to 100 sampled parameters plus up to
/// 20 input coordinates.
pub fn grad_check(net: &Network<f64>, input: &Tensor<f64>, target: &Tensor<f64>, eps: f64) -> Result<f64> {
    Ok(grad_check_with(net, input, target, eps, CheckLoss::HalfSquared, 100, 0)?.max_rel_error)
}

pub fn grad_check_with(
    net: &Network<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    eps: f64,
    loss: CheckLoss,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let trace = net.forward(input)?;
    let (_, upstream) = match loss {
        CheckLoss::HalfSquared => sum_squared_error(trace.output(), target)?,
        CheckLoss::Bce => bce_loss(trace.output(), target)?,
    };
    let mut grads = net.params().zero_gradients();
    let input_grad = net.backward(&trace, &upstream, &mut grads, true)?.expect("requested");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (param id or None for the input, flat index)
    let mut candidates: Vec<(Option<usize>, usize)> = Vec::new();
    for (pid, p) in net.params().iter().enumerate() {
        if !p.frozen {
            candidates.extend((0..p.value.len()).map(|i| (Some(pid), i)));
        }
    }
    let mut chosen: Vec<(Option<usize>, usize)> = if candidates.len() <= samples {
        candidates
    } else {
        sample(&mut rng, candidates.len(), samples)
            .into_iter()
            .map(|i| candidates[i])
            .collect()
    };
    let n_in = input.len();
    if n_in <= 20 {
        chosen.extend((0..n_in).map(|i| (None, i)));
    } else {
        chosen.extend(sample(&mut rng, n_in, 20).into_iter().map(|i| (None, i)));
    }

    let mut work = net.clone();
    let mut x = input.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: (String::new(), 0),
    };
    for (pid, idx) in chosen {
        let (analytic, numeric, name) = match pid {
            Some(pid) => {
                let orig = work.params().by_id(pid).value.data()[idx];
                work.params_mut().by_id_mut(pid).value.data_mut()[idx] = orig + eps;
                let lp = loss_of(&work, &x, target, loss)?.0;
                work.params_mut().by_id_mut(pid).value.data_mut()[idx] = orig - eps;
                let lm = loss_of(&work, &x, target, loss)?.0;
                work.params_mut().by_id_mut(pid).value.data_mut()[idx] = orig;
                (
                    grads.tensors[pid].data()[idx],
                    (lp - lm) / (2.0 * eps),
                    work.params().by_id(pid).name.clone(),
                )
            }
            None => {
                let orig = x.data()[idx];
                x.data_mut()[idx] = orig + eps;
                let lp = loss_of(&work, &x, target, loss)?.0;
                x.data_mut()[idx] = orig - eps;
                let lm = loss_of(&work, &x, target, loss)?.0;
                x.data_mut()[idx] = orig;
                (input_grad.data()[idx], (lp - lm) / (2.0 * eps), "input".to_string())
            }
        };
        let rel = (analytic - numeric).abs() / numeric.abs().max(REL_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = (name, idx);
        }
    }
    Ok(report)
}
