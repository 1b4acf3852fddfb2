//! Turning a model into a computation plan.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::model::{LayerKind, LayerSpec, ModelSpec, WeightRole};
use crate::error::{shape_err, Error, Result};
use crate::ring::ConvGeometry;
use crate::runtime::{ComputationPlan, InputSet, NodeId, PlainFn, PlanBuilder};
use crate::sharing::LocalOp;
use crate::tensor::RealTensor;

/// Named weight tensors, private and public alike.
pub type ModelWeights = BTreeMap<String, RealTensor>;

pub const IMAGES: &str = "images";
pub const LOGITS: &str = "logits";
pub const PROBABILITIES: &str = "probs";
pub const LABELS: &str = "labels";

/// Who feeds and who learns what in a prediction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Roles {
    pub input_provider: String,
    pub model_owner: String,
    pub output_receiver: String,
}

impl Default for Roles {
    fn default() -> Self {
        Roles {
            input_provider: "client".into(),
            model_owner: "owner".into(),
            output_receiver: "client".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoweredModel {
    pub plan: ComputationPlan,
    pub roles: Roles,
    pub batch: usize,
    /// Weight names the model owner must supply, with shapes.
    pub private_weights: Vec<(String, Vec<usize>)>,
}

impl LoweredModel {
    /// Inputs for the input provider.
    pub fn client_inputs(&self, images: &RealTensor) -> InputSet {
        InputSet::from([(IMAGES.to_string(), images.clone())])
    }

    /// Inputs for the model owner, checked against the plan.
    pub fn owner_inputs(&self, weights: &ModelWeights) -> Result<InputSet> {
        let mut set = InputSet::new();
        for (name, shape) in &self.private_weights {
            let w = weights.get(name).ok_or_else(|| Error::MissingWeights(name.clone()))?;
            if &w.shape != shape {
                return Err(shape_err(format!("weight {name} has shape {:?}, expected {shape:?}", w.shape)));
            }
            set.insert(name.clone(), w.clone());
        }
        Ok(set)
    }

    /// Every provider's inputs, merged when one party plays both roles.
    pub fn all_inputs(&self, images: &RealTensor, weights: &ModelWeights) -> Result<HashMap<String, InputSet>> {
        let mut out: HashMap<String, InputSet> = HashMap::new();
        out.entry(self.roles.input_provider.clone())
            .or_default()
            .extend(self.client_inputs(images));
        out.entry(self.roles.model_owner.clone())
            .or_default()
            .extend(self.owner_inputs(weights)?);
        Ok(out)
    }
}

fn public<'w>(weights: &'w ModelWeights, layer: &LayerSpec, i: usize) -> Result<&'w RealTensor> {
    let name = layer
        .weights
        .get(i)
        .ok_or_else(|| Error::MissingWeights(format!("layer {} lists too few weights", layer.name)))?;
    weights.get(name).ok_or_else(|| Error::MissingWeights(name.clone()))
}

fn private_name(layer: &LayerSpec, i: usize) -> Result<&str> {
    layer
        .weights
        .get(i)
        .map(String::as_str)
        .ok_or_else(|| Error::MissingWeights(format!("layer {} lists too few weights", layer.name)))
}

/// Appends one layer acting on the batch `x`. Dense and convolution weights
/// become inputs of `owner`; batchnorm constants come from `public`.
pub fn apply_layer(
    b: &mut PlanBuilder,
    layer: &LayerSpec,
    x: NodeId,
    public_weights: &ModelWeights,
    owner: &str,
) -> Result<NodeId> {
    let shape = b.shape(x)?;
    let batch = *shape.first().ok_or_else(|| shape_err("layer input has no batch axis"))?;
    match &layer.kind {
        LayerKind::Dense { inputs, outputs } => {
            let features: usize = shape[1..].iter().product();
            if features != *inputs {
                return Err(shape_err(format!("{}: {features} features into Dense({inputs}, {outputs})", layer.name)));
            }
            let x = if shape.len() == 2 { x } else { b.reshape(x, &[batch, features])? };
            let w = b.input(owner, private_name(layer, 0)?, &[*inputs, *outputs])?;
            let (xm, wm) = (b.masked(x)?, b.mask(w)?);
            let z = b.matmul(xm, wm)?;
            let z = b.truncate(z)?;
            let bias = b.input(owner, private_name(layer, 1)?, &[*outputs])?;
            let bias = b.local(LocalOp::Stack { axis: 0 }, &vec![bias; batch])?;
            b.add(z, bias)
        }
        LayerKind::Conv2D {
            field,
            channels,
            stride,
            padding,
        } => {
            if shape.len() != 4 {
                return Err(shape_err(format!("{}: conv expects NHWC, got {shape:?}", layer.name)));
            }
            let kernel = b.input(owner, private_name(layer, 0)?, &[*field, *field, shape[3], *channels])?;
            let (xm, km) = (b.masked(x)?, b.mask(kernel)?);
            let z = b.conv2d(xm, km, ConvGeometry::new(*field, *stride, *padding))?;
            b.truncate(z)
        }
        LayerKind::AvgPool { window } => {
            let w = *window;
            let [_, h, wd, c] = shape[..] else {
                return Err(shape_err(format!("{}: pooling expects NHWC, got {shape:?}", layer.name)));
            };
            if w == 0 || h % w != 0 || wd % w != 0 {
                return Err(shape_err(format!("{}: window {w} does not tile {h}x{wd}", layer.name)));
            }
            let tiles = b.reshape(x, &[batch, h / w, w, wd / w, w, c])?;
            let s = b.local(LocalOp::ReduceSum { axis: 4 }, &[tiles])?;
            let s = b.local(LocalOp::ReduceSum { axis: 2 }, &[s])?;
            let s = b.mul_public(s, &RealTensor::scalar(1.0 / (w * w) as f64))?;
            b.truncate(s)
        }
        LayerKind::BatchNormFolded => {
            let y = b.mul_public(x, public(public_weights, layer, 0)?)?;
            let y = b.truncate(y)?;
            b.add_public(y, public(public_weights, layer, 1)?)
        }
        LayerKind::PolyActivation { coeffs, .. } => horner(b, x, coeffs),
    }
}

/// `c0 + t(c1 + t(c2 + ...))` with one truncation per product. `t` is masked
/// once and reused by every round.
fn horner(b: &mut PlanBuilder, t: NodeId, coeffs: &[f64]) -> Result<NodeId> {
    let (&top, rest) = coeffs
        .split_last()
        .ok_or_else(|| Error::InvalidPlan("activation without coefficients".into()))?;
    let Some((&next, rest)) = rest.split_last() else {
        let zero = b.mul_public(t, &RealTensor::scalar(0.0))?;
        let zero = b.truncate(zero)?;
        return b.add_public(zero, &RealTensor::scalar(top));
    };
    let acc = b.mul_public(t, &RealTensor::scalar(top))?;
    let acc = b.truncate(acc)?;
    let mut acc = b.add_public(acc, &RealTensor::scalar(next))?;
    for &c in rest.iter().rev() {
        let (am, tm) = (b.mask(acc)?, b.masked(t)?);
        let p = b.mul(am, tm)?;
        let p = b.truncate(p)?;
        acc = b.add_public(p, &RealTensor::scalar(c))?;
    }
    Ok(acc)
}

/// Lowers `model` for a batch. Only public weights are needed here; private
/// ones are checked later by [`LoweredModel::owner_inputs`].
pub fn lower_model(
    model: &ModelSpec,
    batch: usize,
    public_weights: &ModelWeights,
    roles: &Roles,
    frac_bits: u32,
) -> Result<LoweredModel> {
    model.validate()?;
    if batch == 0 {
        return Err(shape_err("batch size must be positive"));
    }
    let mut b = PlanBuilder::new(frac_bits);
    let mut shape = vec![batch];
    shape.extend(&model.input_shape);
    let mut x = b.input(&roles.input_provider, IMAGES, &shape)?;
    for layer in &model.layers {
        x = apply_layer(&mut b, layer, x, public_weights, &roles.model_owner)?;
    }
    let logits = b.reveal(x, &roles.output_receiver, LOGITS)?;
    b.plaintext(logits, PlainFn::Softmax, PROBABILITIES)?;
    b.plaintext(logits, PlainFn::Argmax, LABELS)?;
    let private_weights = model
        .weight_specs()?
        .into_iter()
        .filter(|w| w.role == WeightRole::Private)
        .map(|w| (w.name, w.shape))
        .collect();
    Ok(LoweredModel {
        plan: b.build(),
        roles: roles.clone(),
        batch,
        private_weights,
    })
}

/// Only the public constants of `weights`.
pub fn public_weights(model: &ModelSpec, weights: &ModelWeights) -> Result<ModelWeights> {
    let mut out = ModelWeights::new();
    for spec in model.weight_specs()? {
        if spec.role == WeightRole::Public {
            let w = weights.get(&spec.name).ok_or_else(|| Error::MissingWeights(spec.name.clone()))?;
            out.insert(spec.name, w.clone());
        }
    }
    Ok(out)
}
