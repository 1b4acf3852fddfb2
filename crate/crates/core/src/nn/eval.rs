//! Plaintext reference evaluation.

use rayon::prelude::*;

use super::lower::{lower_model, public_weights, ModelWeights, Roles, LOGITS};
use super::model::{LayerKind, LayerSpec, ModelSpec};
use super::relu::eval_poly;
use crate::error::{shape_err, Error, Result};
use crate::params::ProtocolParams;
use crate::ring::{layout, ConvGeometry};
use crate::runtime::{simulate_plan, SimTruncation};
use crate::tensor::RealTensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalMode {
    /// Real arithmetic with the same polynomial activations.
    Float,
    /// The lowered plan in the protocol's integer arithmetic.
    FixedPointSim {
        params: ProtocolParams,
        truncation: SimTruncation,
    },
}

fn weight<'w>(weights: &'w ModelWeights, layer: &LayerSpec, i: usize) -> Result<&'w RealTensor> {
    let name = layer
        .weights
        .get(i)
        .ok_or_else(|| Error::MissingWeights(format!("layer {} lists too few weights", layer.name)))?;
    weights.get(name).ok_or_else(|| Error::MissingWeights(name.clone()))
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    out.par_chunks_mut(m.max(1)).enumerate().for_each(|(i, row)| {
        for (kk, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            for (o, &y) in row.iter_mut().zip(&b[kk * m..(kk + 1) * m]) {
                *o += x * y;
            }
        }
    });
    out
}

/// One layer in real arithmetic over a batch.
pub fn apply_layer_float(layer: &LayerSpec, x: &RealTensor, weights: &ModelWeights) -> Result<RealTensor> {
    let batch = *x.shape.first().ok_or_else(|| shape_err("layer input has no batch axis"))?;
    match &layer.kind {
        LayerKind::Dense { inputs, outputs } => {
            if x.numel() != batch * inputs {
                return Err(shape_err(format!("{}: {:?} into Dense({inputs}, {outputs})", layer.name, x.shape)));
            }
            let w = weight(weights, layer, 0)?;
            let bias = weight(weights, layer, 1)?;
            if w.shape != [*inputs, *outputs] || bias.shape != [*outputs] {
                return Err(shape_err(format!("{}: weight shapes {:?}, {:?}", layer.name, w.shape, bias.shape)));
            }
            let mut out = matmul(&x.data, &w.data, batch, *inputs, *outputs);
            for row in out.chunks_mut(*outputs) {
                for (o, b) in row.iter_mut().zip(&bias.data) {
                    *o += b;
                }
            }
            RealTensor::new(vec![batch, *outputs], out)
        }
        LayerKind::Conv2D {
            field,
            channels,
            stride,
            padding,
        } => {
            let k = weight(weights, layer, 0)?;
            let geometry = ConvGeometry::new(*field, *stride, *padding);
            let out_shape = geometry.output_shape(&x.shape, &k.shape)?;
            if k.shape[3] != *channels {
                return Err(shape_err(format!("{}: kernel {:?} for {channels} channels", layer.name, k.shape)));
            }
            let (cols, cols_shape) = layout::im2col(&x.data, 1, &x.shape, &geometry)?;
            let out = matmul(&cols, &k.data, cols_shape[0], cols_shape[1], *channels);
            RealTensor::new(out_shape, out)
        }
        LayerKind::AvgPool { window } => {
            let [b, h, w, c] = x.shape[..] else {
                return Err(shape_err(format!("{}: pooling expects NHWC, got {:?}", layer.name, x.shape)));
            };
            let win = *window;
            if win == 0 || h % win != 0 || w % win != 0 {
                return Err(shape_err(format!("{}: window {win} does not tile {h}x{w}", layer.name)));
            }
            let (oh, ow) = (h / win, w / win);
            let mut out = vec![0.0; b * oh * ow * c];
            for n in 0..b {
                for y in 0..h {
                    for xx in 0..w {
                        let src = ((n * h + y) * w + xx) * c;
                        let dst = ((n * oh + y / win) * ow + xx / win) * c;
                        for ch in 0..c {
                            out[dst + ch] += x.data[src + ch];
                        }
                    }
                }
            }
            let area = (win * win) as f64;
            out.iter_mut().for_each(|v| *v /= area);
            RealTensor::new(vec![b, oh, ow, c], out)
        }
        LayerKind::BatchNormFolded => {
            let scale = weight(weights, layer, 0)?;
            let shift = weight(weights, layer, 1)?;
            let c = *x.shape.last().expect("batch axis exists");
            if scale.data.len() != c || shift.data.len() != c {
                return Err(shape_err(format!("{}: {} channels, {} scales", layer.name, c, scale.data.len())));
            }
            let data = x
                .data
                .iter()
                .enumerate()
                .map(|(i, v)| v * scale.data[i % c] + shift.data[i % c])
                .collect();
            RealTensor::new(x.shape.clone(), data)
        }
        LayerKind::PolyActivation { coeffs, .. } => {
            RealTensor::new(x.shape.clone(), x.data.iter().map(|&v| eval_poly(coeffs, v)).collect())
        }
    }
}

/// Logits `[batch, classes]` for images `[batch, ...input_shape]`.
pub fn plaintext_eval(model: &ModelSpec, weights: &ModelWeights, x: &RealTensor, mode: EvalMode) -> Result<RealTensor> {
    model.validate()?;
    let batch = *x.shape.first().ok_or_else(|| shape_err("images need a batch axis"))?;
    if x.shape[1..] != model.input_shape[..] {
        return Err(shape_err(format!("images {:?} for model input {:?}", x.shape, model.input_shape)));
    }
    match mode {
        EvalMode::Float => {
            let mut h = x.clone();
            for layer in &model.layers {
                if matches!(layer.kind, LayerKind::Dense { .. }) && h.shape.len() != 2 {
                    let features = h.numel() / batch.max(1);
                    h = h.reshape(&[batch, features])?;
                }
                h = apply_layer_float(layer, &h, weights)?;
            }
            Ok(h)
        }
        EvalMode::FixedPointSim { params, truncation } => {
            let roles = Roles::default();
            let public = public_weights(model, weights)?;
            let lowered = lower_model(model, batch, &public, &roles, params.fixed.frac_bits)?;
            let inputs = lowered.all_inputs(x, weights)?;
            let mut outputs = simulate_plan(&lowered.plan, &params, &inputs, truncation)?;
            outputs
                .get_mut(&roles.output_receiver)
                .and_then(|o| o.remove(LOGITS))
                .ok_or_else(|| Error::InvalidPlan("lowered model revealed no logits".into()))
        }
    }
}
