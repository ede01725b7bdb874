use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{accumulate_grad, evaluate, init_with, LabeledFeatures, ProbeError, ProbeModel, Standardizer, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the full training set after the epoch.
    pub train_loss: f64,
    pub eval_accuracy: f64,
}

/// Per-epoch history. Entry 0 is the initialization, before any update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
    pub selected_epoch: usize,
}

impl TrainTrace {
    pub fn selected(&self) -> &EpochStats {
        &self.epochs[self.selected_epoch]
    }
}

fn full_loss(model: &ProbeModel, data: &LabeledFeatures, gw: &mut [f32], gb: &mut [f32]) -> Result<f64, ProbeError> {
    gw.fill(0.0);
    gb.fill(0.0);
    accumulate_grad(model, data.rows(), data.len(), gw, gb)
}

/// Mini-batch SGD with momentum.
///
/// Batches are drawn from a per-epoch shuffle seeded by `config.seed`. After
/// every epoch the evaluation accuracy is measured; the returned model is the
/// snapshot with the highest evaluation accuracy (earliest epoch on ties).
pub fn train_probe(
    train: &LabeledFeatures,
    eval: &LabeledFeatures,
    classes: usize,
    config: &TrainConfig,
) -> Result<(ProbeModel, TrainTrace), ProbeError> {
    config.validate()?;
    if train.is_empty() {
        return Err(ProbeError::Empty("training"));
    }
    if eval.is_empty() {
        return Err(ProbeError::Empty("evaluation"));
    }
    if eval.n_features() != train.n_features() {
        return Err(ProbeError::FeatureLength {
            expected: train.n_features(),
            found: eval.n_features(),
        });
    }
    if let Some(&y) = train.labels().iter().chain(eval.labels()).find(|&&y| y >= classes) {
        return Err(ProbeError::LabelOutOfRange { label: y, classes });
    }

    let (train, standardizer) = if config.standardize {
        let st = Standardizer::fit(train);
        (std::borrow::Cow::Owned(st.apply(train)), Some(st))
    } else {
        (std::borrow::Cow::Borrowed(train), None)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init_with(classes, train.n_features(), &mut rng)?;
    model.standardizer = standardizer;

    let n = train.n_features();
    let mut gw = vec![0.0f32; classes * n];
    let mut gb = vec![0.0f32; classes];
    let mut vw = vec![0.0f32; classes * n];
    let mut vb = vec![0.0f32; classes];
    let (lr, mu) = (config.learning_rate, config.momentum);

    let mut epochs = vec![EpochStats {
        epoch: 0,
        train_loss: full_loss(&model, &train, &mut gw, &mut gb)?,
        eval_accuracy: evaluate(&model, eval)?.accuracy,
    }];
    let mut best = (epochs[0].eval_accuracy, 0, model.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            gw.fill(0.0);
            gb.fill(0.0);
            let rows = batch.iter().map(|&i| (train.row(i), train.labels()[i]));
            accumulate_grad(&model, rows, batch.len(), &mut gw, &mut gb)?;
            step(model.weights.data_mut(), &mut vw, &gw, lr, mu);
            step(model.bias.data_mut(), &mut vb, &gb, lr, mu);
        }
        let stats = EpochStats {
            epoch,
            train_loss: full_loss(&model, &train, &mut gw, &mut gb)?,
            eval_accuracy: evaluate(&model, eval)?.accuracy,
        };
        if stats.eval_accuracy > best.0 {
            best = (stats.eval_accuracy, epoch, model.clone());
        }
        epochs.push(stats);
    }
    let (_, selected_epoch, model) = best;
    Ok((model, TrainTrace { epochs, selected_epoch }))
}

/// `v = mu * v + g; p -= lr * v`
fn step(params: &mut [f32], velocity: &mut [f32], grad: &[f32], lr: f32, mu: f32) {
    for ((p, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = mu * *v + g;
        *p -= lr * *v;
    }
}
