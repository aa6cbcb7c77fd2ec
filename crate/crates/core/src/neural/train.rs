//! Minibatch training loop with dropout and early stopping.

use rand::seq::SliceRandom;

use super::{Adam, Dropout, ModelKind, Network, NnError, NnHyperparams, SeriesDataset};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Training-set MSE before the first update (dropout off).
    pub initial_loss: f64,
    /// Training-set MSE of the returned parameters (dropout off).
    pub final_loss: f64,
    /// Mean minibatch loss per epoch, with dropout active.
    pub epoch_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    /// Epoch whose parameters were kept; 0 means the initialization.
    pub best_epoch: usize,
    pub train_samples: usize,
    pub validation_samples: usize,
}

/// Mean squared error over the given sample indices, dropout off.
pub fn mse(net: &Network, data: &SeriesDataset, indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let w = net.window();
    let total: f64 = indices
        .iter()
        .map(|&k| {
            let e = net.predict(&data.window(k, w)) - data.targets[k];
            e * e
        })
        .sum();
    total / indices.len() as f64
}

/// Trains a fresh network. Samples keep their order for the split: the last
/// `validation_fraction` of them drive early stopping, and the parameters
/// with the lowest validation loss are returned.
pub fn train(
    kind: ModelKind,
    data: &SeriesDataset,
    hp: &NnHyperparams,
) -> Result<(Network, TrainReport), NnError> {
    hp.validate()?;
    data.validate()?;
    let mut net = Network::new(kind, data.input_dim(), hp);
    let n = data.len();
    let mut n_val = (n as f64 * hp.validation_fraction).floor() as usize;
    if n_val == n {
        n_val = 0;
    }
    let train_idx: Vec<usize> = (0..n - n_val).collect();
    let val_idx: Vec<usize> = (n - n_val..n).collect();

    let initial_loss = mse(&net, data, &train_idx);
    if !initial_loss.is_finite() {
        return Err(NnError::NonFiniteLoss {
            epoch: 0,
            last_loss: initial_loss,
        });
    }
    let mut best_val = mse(&net, data, &val_idx);
    let mut best_params = net.params().to_vec();
    let mut best_epoch = 0;

    let mut opt = Adam::new(net.params().len(), hp.learning_rate);
    let mut shuffle_rng = rng_for(hp.seed, "nn-shuffle");
    let mut dropout_rng = rng_for(hp.seed, "nn-dropout");
    let mut order = train_idx.clone();
    let mut grad = vec![0.0; net.params().len()];
    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    let mut validation_losses = Vec::with_capacity(hp.epochs);
    let mut last_loss = initial_loss;
    let mut stale = 0;
    let window = net.window();

    for epoch in 1..=hp.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for batch in order.chunks(hp.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &k in batch {
                let mut drop = Dropout {
                    rng: &mut dropout_rng,
                    rate: hp.dropout_rate,
                };
                let dropout = (hp.dropout_rate > 0.0).then_some(&mut drop);
                let y = net.accumulate_gradient(
                    &data.window(k, window),
                    data.targets[k],
                    scale,
                    dropout,
                    &mut grad,
                );
                let e = y - data.targets[k];
                sum += e * e;
            }
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(NnError::NonFiniteLoss { epoch, last_loss });
            }
            opt.step(net.params_mut(), &grad);
        }
        let epoch_loss = sum / order.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(NnError::NonFiniteLoss { epoch, last_loss });
        }
        last_loss = epoch_loss;
        epoch_losses.push(epoch_loss);

        if val_idx.is_empty() {
            best_params.copy_from_slice(net.params());
            best_epoch = epoch;
            continue;
        }
        let val = mse(&net, data, &val_idx);
        validation_losses.push(val);
        if val < best_val {
            best_val = val;
            best_params.copy_from_slice(net.params());
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= hp.patience {
                break;
            }
        }
    }
    net.params_mut().copy_from_slice(&best_params);
    let final_loss = mse(&net, data, &train_idx);
    Ok((
        net,
        TrainReport {
            initial_loss,
            final_loss,
            epoch_losses,
            validation_losses,
            best_epoch,
            train_samples: train_idx.len(),
            validation_samples: val_idx.len(),
        },
    ))
}
