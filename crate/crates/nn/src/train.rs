use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamState;
use crate::error::{NnError, Result};
use crate::network::Network;
use crate::params::Gradients;
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.learning_rate.is_infinite() {
            return Err(NnError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(NnError::InvalidConfig("max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// A per-sample loss whose parameter gradient can be accumulated.
pub trait Objective<T: Real> {
    type Sample;

    /// Adds `scale * d loss / d params` into `grads` and returns the loss.
    fn accumulate(&self, net: &Network<T>, sample: &Self::Sample, grads: &mut Gradients<T>, scale: T) -> Result<f64>;

    fn evaluate(&self, net: &Network<T>, sample: &Self::Sample) -> Result<f64>;
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean training loss per epoch (accumulated during the epoch's updates).
    pub train_loss: Vec<f64>,
    /// Mean validation loss per epoch; empty without a validation set.
    pub val_loss: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub steps: usize,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

/// Mini-batch Adam training with seeded shuffling. With a validation set the
/// parameters of the best validation epoch are restored at the end, and
/// training stops once `early_stop_patience` epochs pass without improvement.
/// `lr_scale(step, total_steps)` multiplies the base learning rate.
pub fn fit<T: Real, O: Objective<T>>(
    net: &mut Network<T>,
    objective: &O,
    train: &[O::Sample],
    val: &[O::Sample],
    cfg: &TrainConfig,
    lr_scale: impl Fn(usize, usize) -> f64,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(NnError::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(net.params());
    let mut grads = net.params().zero_gradients();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.max_epochs;

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, crate::params::ParamSet<T>)> = None;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.zero();
            let scale = T::lit(1.0 / batch.len() as f64);
            for &i in batch {
                epoch_loss += objective.accumulate(net, &train[i], &mut grads, scale)?;
            }
            let lr = cfg.learning_rate * lr_scale(history.steps, total_steps);
            adam.step(net.params_mut(), &grads, lr)?;
            history.steps += 1;
        }
        history.train_loss.push(epoch_loss / train.len() as f64);

        if val.is_empty() {
            continue;
        }
        let mut vl = 0.0;
        for s in val {
            vl += objective.evaluate(net, s)?;
        }
        let vl = vl / val.len() as f64;
        history.val_loss.push(vl);
        if best.as_ref().is_none_or(|(b, _)| vl < *b) {
            best = Some((vl, net.params().clone()));
            history.best_epoch = Some(epoch);
        }
        if let (Some(p), Some(b)) = (cfg.early_stop_patience, history.best_epoch) {
            if epoch - b >= p {
                history.stopped_early = true;
                break;
            }
        }
    }
    match best {
        Some((_, params)) => *net.params_mut() = params,
        None => history.best_epoch = Some(history.train_loss.len() - 1),
    }
    Ok(history)
}
