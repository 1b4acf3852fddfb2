//! Layer and model descriptions, the benchmark architectures, and their text manifest.
//!
//! Manifest lines, whitespace separated:
//!
//! ```text
//! model <name>
//! input <dims...>
//! layer <name> dense <in> <out> weights <weight> <bias>
//! layer <name> conv2d <field> <channels> <stride> <padding> weights <kernel>
//! layer <name> avgpool <window>
//! layer <name> batchnorm weights <scale> <shift>
//! layer <name> poly <lo> <hi> coeffs <c0> <c1> ...
//! ```
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::relu::{poly_relu_fit, ReluFit, DEFAULT_DEGREE, DEFAULT_INTERVAL};
use crate::error::{shape_err, Error, Result};
use crate::ring::ConvGeometry;

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const IMAGE_SHAPE: [usize; 3] = [28, 28, 1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Network {
    A,
    B,
    C,
    #[serde(rename = "logreg")]
    LogReg,
}

impl Network {
    pub const ALL: [Network; 4] = [Network::A, Network::B, Network::C, Network::LogReg];

    pub fn name(self) -> &'static str {
        match self {
            Network::A => "A",
            Network::B => "B",
            Network::C => "C",
            Network::LogReg => "logreg",
        }
    }
}

impl std::fmt::Display for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Network {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Network::A),
            "b" => Ok(Network::B),
            "c" => Ok(Network::C),
            "logreg" | "lr" => Ok(Network::LogReg),
            other => Err(Error::Config(format!("unknown network {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Flattens its input first.
    Dense { inputs: usize, outputs: usize },
    Conv2D {
        field: usize,
        channels: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool { window: usize },
    /// Per-channel affine map over the last axis.
    BatchNormFolded,
    PolyActivation { coeffs: Vec<f64>, interval: (f64, f64) },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub weights: Vec<String>,
}

/// Whether a weight tensor stays with the model owner or is a public constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightRole {
    Private,
    Public,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: WeightRole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Shape of one sample.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl LayerSpec {
    pub fn dense(name: &str, inputs: usize, outputs: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Dense { inputs, outputs },
            weights: vec![format!("{name}.weight"), format!("{name}.bias")],
        }
    }

    pub fn conv(name: &str, field: usize, channels: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv2D {
                field,
                channels,
                stride,
                padding,
            },
            weights: vec![format!("{name}.kernel")],
        }
    }

    pub fn avg_pool(name: &str, window: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::AvgPool { window },
            weights: vec![],
        }
    }

    pub fn batch_norm(name: &str) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::BatchNormFolded,
            weights: vec![format!("{name}.scale"), format!("{name}.shift")],
        }
    }

    pub fn activation(name: &str, fit: &ReluFit) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::PolyActivation {
                coeffs: fit.coeffs.clone(),
                interval: fit.interval,
            },
            weights: vec![],
        }
    }

    fn weight(&self, i: usize) -> Result<&str> {
        self.weights
            .get(i)
            .map(String::as_str)
            .ok_or_else(|| Error::MissingWeights(format!("layer {} lists too few weights", self.name)))
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match &self.kind {
            LayerKind::Dense { inputs, outputs } => {
                let n: usize = input.iter().product();
                if n != *inputs {
                    return Err(shape_err(format!("{}: {n} features into Dense({inputs}, {outputs})", self.name)));
                }
                Ok(vec![*outputs])
            }
            LayerKind::Conv2D {
                field,
                channels,
                stride,
                padding,
            } => {
                let [h, w, c] = input else {
                    return Err(shape_err(format!("{}: conv expects HWC input, got {input:?}", self.name)));
                };
                let g = ConvGeometry::new(*field, *stride, *padding);
                let out = g.output_shape(&[1, *h, *w, *c], &[*field, *field, *c, *channels])?;
                Ok(out[1..].to_vec())
            }
            LayerKind::AvgPool { window } => {
                let [h, w, c] = input else {
                    return Err(shape_err(format!("{}: pooling expects HWC input, got {input:?}", self.name)));
                };
                if *window == 0 || h % window != 0 || w % window != 0 {
                    return Err(shape_err(format!("{}: window {window} does not tile {h}x{w}", self.name)));
                }
                Ok(vec![h / window, w / window, *c])
            }
            LayerKind::BatchNormFolded | LayerKind::PolyActivation { .. } => Ok(input.to_vec()),
        }
    }

    /// Weights this layer consumes, given its per-sample input shape.
    pub fn weight_specs(&self, input: &[usize]) -> Result<Vec<WeightSpec>> {
        let spec = |name: &str, shape: Vec<usize>, role| WeightSpec {
            name: name.to_string(),
            shape,
            role,
        };
        Ok(match &self.kind {
            LayerKind::Dense { inputs, outputs } => vec![
                spec(self.weight(0)?, vec![*inputs, *outputs], WeightRole::Private),
                spec(self.weight(1)?, vec![*outputs], WeightRole::Private),
            ],
            LayerKind::Conv2D { field, channels, .. } => {
                let c = *input.last().ok_or_else(|| shape_err("conv on a scalar"))?;
                vec![spec(self.weight(0)?, vec![*field, *field, c, *channels], WeightRole::Private)]
            }
            LayerKind::BatchNormFolded => {
                let c = *input.last().ok_or_else(|| shape_err("batchnorm on a scalar"))?;
                vec![
                    spec(self.weight(0)?, vec![c], WeightRole::Public),
                    spec(self.weight(1)?, vec![c], WeightRole::Public),
                ]
            }
            LayerKind::AvgPool { .. } | LayerKind::PolyActivation { .. } => vec![],
        })
    }
}

impl ModelSpec {
    /// Per-sample shapes: the input, then each layer's output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes()?;
        match self.layers.last() {
            Some(LayerSpec {
                kind: LayerKind::Dense { .. },
                ..
            }) => Ok(()),
            _ => Err(Error::InvalidPlan(format!("model {} must end in a dense layer", self.name))),
        }
    }

    pub fn classes(&self) -> Result<usize> {
        Ok(self.shapes()?.last().map(|s| s.iter().product()).unwrap_or(0))
    }

    pub fn weight_specs(&self) -> Result<Vec<WeightSpec>> {
        let shapes = self.shapes()?;
        let mut out = Vec::new();
        for (layer, input) in self.layers.iter().zip(&shapes) {
            out.extend(layer.weight_specs(input)?);
        }
        Ok(out)
    }

    /// Scalars across all weights, folded batchnorm counted as scale and shift.
    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self.weight_specs()?.iter().map(|w| w.shape.iter().product::<usize>()).sum())
    }

    pub fn to_manifest(&self) -> String {
        let mut out = format!("model {}\ninput", self.name);
        for d in &self.input_shape {
            let _ = write!(out, " {d}");
        }
        out.push('\n');
        for layer in &self.layers {
            let _ = write!(out, "layer {} ", layer.name);
            match &layer.kind {
                LayerKind::Dense { inputs, outputs } => {
                    let _ = write!(out, "dense {inputs} {outputs}");
                }
                LayerKind::Conv2D {
                    field,
                    channels,
                    stride,
                    padding,
                } => {
                    let _ = write!(out, "conv2d {field} {channels} {stride} {padding}");
                }
                LayerKind::AvgPool { window } => {
                    let _ = write!(out, "avgpool {window}");
                }
                LayerKind::BatchNormFolded => out.push_str("batchnorm"),
                LayerKind::PolyActivation { coeffs, interval } => {
                    let _ = write!(out, "poly {} {} coeffs", interval.0, interval.1);
                    for c in coeffs {
                        let _ = write!(out, " {c}");
                    }
                }
            }
            if !layer.weights.is_empty() {
                out.push_str(" weights");
                for w in &layer.weights {
                    let _ = write!(out, " {w}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Config(format!("model manifest line {line}: {msg}"));
        let mut name = None;
        let mut input_shape = None;
        let mut layers = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = raw.split_whitespace().collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(line, &format!("expected integer, got {s:?}")));
            let real = |s: &str| s.parse::<f64>().map_err(|_| bad(line, &format!("expected number, got {s:?}")));
            match tokens[0] {
                "model" => name = Some(tokens.get(1).ok_or_else(|| bad(line, "missing name"))?.to_string()),
                "input" => input_shape = Some(tokens[1..].iter().map(|t| num(t)).collect::<Result<Vec<_>>>()?),
                "layer" => {
                    if tokens.len() < 3 {
                        return Err(bad(line, "layer needs a name and a kind"));
                    }
                    let (body, weights) = match tokens.iter().position(|&t| t == "weights") {
                        Some(p) => (&tokens[..p], tokens[p + 1..].iter().map(|s| s.to_string()).collect()),
                        None => (&tokens[..], Vec::new()),
                    };
                    let args = &body[3..];
                    let arg = |k: usize| args.get(k).copied().ok_or_else(|| bad(line, "too few layer arguments"));
                    let kind = match body[2] {
                        "dense" => LayerKind::Dense {
                            inputs: num(arg(0)?)?,
                            outputs: num(arg(1)?)?,
                        },
                        "conv2d" => LayerKind::Conv2D {
                            field: num(arg(0)?)?,
                            channels: num(arg(1)?)?,
                            stride: num(arg(2)?)?,
                            padding: num(arg(3)?)?,
                        },
                        "avgpool" => LayerKind::AvgPool { window: num(arg(0)?)? },
                        "batchnorm" => LayerKind::BatchNormFolded,
                        "poly" => {
                            if arg(2)? != "coeffs" {
                                return Err(bad(line, "poly expects `<lo> <hi> coeffs ...`"));
                            }
                            LayerKind::PolyActivation {
                                interval: (real(arg(0)?)?, real(arg(1)?)?),
                                coeffs: args[3..].iter().map(|t| real(t)).collect::<Result<Vec<_>>>()?,
                            }
                        }
                        other => return Err(bad(line, &format!("unknown layer kind {other:?}"))),
                    };
                    layers.push(LayerSpec {
                        name: body[1].to_string(),
                        kind,
                        weights,
                    });
                }
                other => return Err(bad(line, &format!("unknown directive {other:?}"))),
            }
        }
        let model = ModelSpec {
            name: name.ok_or_else(|| Error::Config("model manifest has no `model` line".into()))?,
            input_shape: input_shape.ok_or_else(|| Error::Config("model manifest has no `input` line".into()))?,
            layers,
        };
        model.validate()?;
        Ok(model)
    }
}

/// One of the benchmark architectures with the default activation fit.
pub fn build_network(which: Network) -> ModelSpec {
    let fit = poly_relu_fit(DEFAULT_DEGREE, DEFAULT_INTERVAL).expect("default degree is valid");
    build_network_with(which, &fit)
}

/// Convolutions use no padding; it is the only reading under which the
/// flattened sizes 256 and 800 line up.
pub fn build_network_with(which: Network, fit: &ReluFit) -> ModelSpec {
    let act = |n: &str| LayerSpec::activation(n, fit);
    let layers = match which {
        Network::LogReg => vec![LayerSpec::dense("fc1", 784, 10)],
        Network::A => vec![
            LayerSpec::dense("fc1", 784, 128),
            LayerSpec::batch_norm("bn1"),
            act("act1"),
            LayerSpec::dense("fc2", 128, 128),
            LayerSpec::batch_norm("bn2"),
            act("act2"),
            LayerSpec::dense("fc3", 128, 10),
        ],
        Network::B | Network::C => {
            let (c1, c2, flat, hidden) = if which == Network::B {
                (16, 16, 256, 100)
            } else {
                (20, 50, 800, 500)
            };
            vec![
                LayerSpec::conv("conv1", 5, c1, 1, 0),
                LayerSpec::batch_norm("bn1"),
                act("act1"),
                LayerSpec::avg_pool("pool1", 2),
                LayerSpec::conv("conv2", 5, c2, 1, 0),
                LayerSpec::batch_norm("bn2"),
                act("act2"),
                LayerSpec::avg_pool("pool2", 2),
                LayerSpec::dense("fc1", flat, hidden),
                LayerSpec::batch_norm("bn3"),
                act("act3"),
                LayerSpec::dense("fc2", hidden, 10),
            ]
        }
    };
    ModelSpec {
        name: which.name().to_string(),
        input_shape: IMAGE_SHAPE.to_vec(),
        layers,
    }
}

/// Folds inference batchnorm into `scale * x + shift`.
pub fn fold_batchnorm(gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = gamma.len();
    if beta.len() != n || mean.len() != n || var.len() != n {
        return Err(shape_err(format!(
            "batchnorm parameter lengths {n}, {}, {}, {}",
            beta.len(),
            mean.len(),
            var.len()
        )));
    }
    if let Some(i) = var.iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::NegativeVariance(i));
    }
    let scale: Vec<f64> = gamma.iter().zip(var).map(|(g, v)| g / (v + eps).sqrt()).collect();
    let shift = beta.iter().zip(mean).zip(&scale).map(|((b, m), s)| b - s * m).collect();
    Ok((scale, shift))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_sizes_match_figure() {
        let b = build_network(Network::B).shapes().unwrap();
        assert_eq!(b[1], vec![24, 24, 16]);
        assert_eq!(b[4], vec![12, 12, 16]);
        assert_eq!(b[5], vec![8, 8, 16]);
        assert_eq!(b[8], vec![4, 4, 16]);
        assert_eq!(b[8].iter().product::<usize>(), 256);
        let c = build_network(Network::C).shapes().unwrap();
        assert_eq!(c[8].iter().product::<usize>(), 800);
        for n in Network::ALL {
            assert_eq!(build_network(n).classes().unwrap(), 10);
        }
    }

    #[test]
    fn network_a_parameter_count() {
        let a = build_network(Network::A);
        let dense = 784 * 128 + 128 + 128 * 128 + 128 + 128 * 10 + 10;
        assert_eq!(a.parameter_count().unwrap(), dense + 2 * (2 * 128));
        assert_eq!(build_network(Network::LogReg).parameter_count().unwrap(), 7850);
    }

    #[test]
    fn manifest_round_trip() {
        for n in Network::ALL {
            let m = build_network(n);
            assert_eq!(ModelSpec::from_manifest(&m.to_manifest()).unwrap(), m);
        }
    }

    #[test]
    fn manifest_rejects_inconsistent_shapes() {
        let text = "model x\ninput 28 28 1\nlayer fc dense 100 10 weights w b\n";
        assert!(matches!(ModelSpec::from_manifest(text), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn fold_identity_and_formula() {
        let (s, t) = fold_batchnorm(&[1.0], &[0.0], &[0.0], &[1.0], 0.0).unwrap();
        assert_eq!((s[0], t[0]), (1.0, 0.0));
        let (g, b, m, v) = (1.7, -0.3, 0.42, 2.5);
        let (s, t) = fold_batchnorm(&[g], &[b], &[m], &[v], BATCHNORM_EPS).unwrap();
        for x in [-2.0, 0.0, 0.7, 3.1] {
            let direct = g * (x - m) / (v + BATCHNORM_EPS).sqrt() + b;
            assert!((s[0] * x + t[0] - direct).abs() < 1e-14);
        }
        assert!(matches!(
            fold_batchnorm(&[1.0, 1.0], &[0.0; 2], &[0.0; 2], &[1.0, -0.1], 0.0),
            Err(Error::NegativeVariance(1))
        ));
    }
}
