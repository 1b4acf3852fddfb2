//! Plaintext softmax regression, used to give the demo model realistic weights.

use crate::error::{shape_err, Result};
use crate::nn::ModelWeights;
use crate::ring::RngStream;
use crate::runtime::plan::{argmax, softmax};
use crate::tensor::RealTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// `fc1.weight` `[features, classes]` and `fc1.bias` `[classes]`.
    pub weights: ModelWeights,
    /// Mean cross-entropy over each epoch's minibatches.
    pub epoch_losses: Vec<f64>,
}

const CLASSES: usize = 10;

/// Minibatch SGD from zero weights. Deterministic in `config.seed`.
pub fn train_logreg_plaintext(images: &RealTensor, labels: &[u8], config: &TrainConfig) -> Result<TrainOutcome> {
    let n = labels.len();
    if n == 0 || images.shape.first() != Some(&n) {
        return Err(shape_err(format!("{} labels for images {:?}", n, images.shape)));
    }
    let features = images.numel() / n;
    let mut w = vec![0.0; features * CLASSES];
    let mut b = vec![0.0; CLASSES];
    let mut rng = RngStream::new(config.seed, "train-logreg");
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let batch = config.batch_size.max(1);
    for _ in 0..config.epochs {
        for i in (1..n).rev() {
            order.swap(i, rng.below(i as u64 + 1) as usize);
        }
        let mut loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut gw = vec![0.0; features * CLASSES];
            let mut gb = vec![0.0; CLASSES];
            for &s in chunk {
                let x = &images.data[s * features..(s + 1) * features];
                let mut logits = b.clone();
                for (j, &xj) in x.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                    for (l, wv) in logits.iter_mut().zip(&w[j * CLASSES..(j + 1) * CLASSES]) {
                        *l += xj * wv;
                    }
                }
                let mut p = softmax(&logits);
                let y = labels[s] as usize;
                loss -= p[y].max(1e-300).ln();
                p[y] -= 1.0;
                for (j, &xj) in x.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                    for (g, pk) in gw[j * CLASSES..(j + 1) * CLASSES].iter_mut().zip(&p) {
                        *g += xj * pk;
                    }
                }
                for (g, pk) in gb.iter_mut().zip(&p) {
                    *g += pk;
                }
            }
            let step = config.learning_rate / chunk.len() as f64;
            for (wv, g) in w.iter_mut().zip(&gw) {
                *wv -= step * g;
            }
            for (bv, g) in b.iter_mut().zip(&gb) {
                *bv -= step * g;
            }
        }
        epoch_losses.push(loss / n as f64);
    }
    let mut weights = ModelWeights::new();
    weights.insert("fc1.weight".into(), RealTensor::new(vec![features, CLASSES], w)?);
    weights.insert("fc1.bias".into(), RealTensor::new(vec![CLASSES], b)?);
    Ok(TrainOutcome { weights, epoch_losses })
}

/// Fraction of rows of `logits` whose argmax equals the label.
pub fn accuracy(logits: &RealTensor, labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits.rows().zip(labels).filter(|(row, &l)| argmax(row) == l as usize).count();
    hits as f64 / labels.len() as f64
}
