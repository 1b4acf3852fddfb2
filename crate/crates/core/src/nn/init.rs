//! Random weights that keep activations inside the fitted interval.

use super::eval::apply_layer_float;
use super::lower::ModelWeights;
use super::model::{fold_batchnorm, LayerKind, ModelSpec, BATCHNORM_EPS};
use crate::error::{shape_err, Result};
use crate::ring::RngStream;
use crate::tensor::RealTensor;

/// Where calibrated batchnorm puts the calibration batch: `|x| <= TARGET`
/// before the shift.
const TARGET: f64 = 2.5;

fn uniform(rng: &mut RngStream, shape: &[usize], half_width: f64) -> RealTensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| (2.0 * rng.unit_f64() - 1.0) * half_width).collect();
    RealTensor {
        shape: shape.to_vec(),
        data,
    }
}

/// Draws weights layer by layer, running `calibration` (a batch of typical
/// inputs) forward so each batchnorm can be set from real statistics. Dense
/// and conv weights are scaled by fan-in.
pub fn random_weights(model: &ModelSpec, seed: u64, calibration: &RealTensor) -> Result<ModelWeights> {
    model.validate()?;
    let batch = *calibration.shape.first().ok_or_else(|| shape_err("calibration batch is empty"))?;
    let mut weights = ModelWeights::new();
    let mut h = calibration.clone();
    let shapes = model.shapes()?;
    for (layer, input) in model.layers.iter().zip(&shapes) {
        let specs = layer.weight_specs(input)?;
        let mut rng = RngStream::new(seed, &format!("weights/{}", layer.name));
        match &layer.kind {
            LayerKind::Dense { inputs, .. } => {
                let bound = (3.0 / *inputs as f64).sqrt();
                weights.insert(specs[0].name.clone(), uniform(&mut rng, &specs[0].shape, bound));
                weights.insert(specs[1].name.clone(), uniform(&mut rng, &specs[1].shape, 0.1));
                if h.shape.len() != 2 {
                    let features = h.numel() / batch;
                    h = h.reshape(&[batch, features])?;
                }
            }
            LayerKind::Conv2D { .. } => {
                let fan_in: usize = specs[0].shape[..3].iter().product();
                let bound = (3.0 / fan_in as f64).sqrt();
                weights.insert(specs[0].name.clone(), uniform(&mut rng, &specs[0].shape, bound));
            }
            LayerKind::BatchNormFolded => {
                let c = specs[0].shape[0];
                let mut sum = vec![0.0; c];
                let mut sq = vec![0.0; c];
                for (i, v) in h.data.iter().enumerate() {
                    sum[i % c] += v;
                    sq[i % c] += v * v;
                }
                let count = (h.numel() / c) as f64;
                let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
                let var: Vec<f64> = sq.iter().zip(&mean).map(|(q, m)| (q / count - m * m).max(0.0)).collect();
                let mut spread = vec![0.0f64; c];
                for (i, v) in h.data.iter().enumerate() {
                    spread[i % c] = spread[i % c].max((v - mean[i % c]).abs());
                }
                let gamma: Vec<f64> = (0..c)
                    .map(|j| {
                        let u = 0.7 + 0.3 * rng.unit_f64();
                        let norm = (var[j] + BATCHNORM_EPS).sqrt();
                        if spread[j] > 0.0 {
                            u * TARGET * norm / spread[j]
                        } else {
                            u
                        }
                    })
                    .collect();
                let beta: Vec<f64> = (0..c).map(|_| 0.5 * rng.unit_f64() - 0.25).collect();
                let (scale, shift) = fold_batchnorm(&gamma, &beta, &mean, &var, BATCHNORM_EPS)?;
                weights.insert(specs[0].name.clone(), RealTensor::new(vec![c], scale)?);
                weights.insert(specs[1].name.clone(), RealTensor::new(vec![c], shift)?);
            }
            LayerKind::AvgPool { .. } | LayerKind::PolyActivation { .. } => {}
        }
        h = apply_layer_float(layer, &h, &weights)?;
    }
    Ok(weights)
}
