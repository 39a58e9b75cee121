use std::fs;
use std::path::Path;

use super::layers::{AvgPool, Conv2d, Dense, Layer, Padding, SeparableConv2d};
use super::tensor::Tensor;
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::rng;

pub const NETWORK_MAGIC: &[u8; 8] = b"QWNET001";

/// Per-layer, per-parameter-tensor gradients, shaped like the model weights.
pub type Gradients = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Mlp,
    VanillaCnn,
    Table2Dnn,
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Architecture::Mlp),
            "cnn" => Ok(Architecture::VanillaCnn),
            "dnn" => Ok(Architecture::Table2Dnn),
            _ => Err(Error::InvalidParameter(format!(
                "unknown architecture {s:?} (mlp, cnn, dnn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub layers: Vec<Layer>,
    /// Item shape without the batch axis.
    pub input_shape: Vec<usize>,
    /// Chern label predicted by each output unit.
    pub classes: Vec<i32>,
}

impl NetworkModel {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, classes: Vec<i32>) -> Result<Self> {
        let model = NetworkModel {
            layers,
            input_shape,
            classes,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        let mut shape = self.input_shape.clone();
        for (i, l) in self.layers.iter().enumerate() {
            if matches!(l, Layer::Softmax) && i + 1 != self.layers.len() {
                return Err(Error::ShapeMismatch(format!("softmax at position {i} is not terminal")));
            }
            shape = l.output_shape(&shape)?;
        }
        if shape != [self.classes.len()] {
            return Err(Error::ShapeMismatch(format!(
                "network ends in {shape:?}, expected {} classes",
                self.classes.len()
            )));
        }
        Ok(())
    }

    pub fn build(arch: Architecture, input_shape: &[usize], classes: Vec<i32>, seed: u64) -> Result<Self> {
        match arch {
            Architecture::Mlp => Self::mlp(input_shape, classes, seed),
            Architecture::VanillaCnn => Self::vanilla_cnn(input_shape, classes, seed),
            Architecture::Table2Dnn => Self::table2_dnn(input_shape, classes, seed),
        }
    }

    /// AvgPool(2) → Dense 2048 ELU → Dense 256 ELU → Dense K softmax.
    pub fn mlp(input_shape: &[usize], classes: Vec<i32>, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        let pool = Layer::AvgPool(AvgPool {
            size: 2,
            padding: Padding::Valid,
        });
        let flat: usize = pool.output_shape(input_shape)?.iter().product();
        let k = classes.len();
        let layers = vec![
            pool,
            Layer::Dense(Dense::new(&mut r, flat, 2048)),
            Layer::Elu,
            Layer::Dense(Dense::new(&mut r, 2048, 256)),
            Layer::Elu,
            Layer::Dense(Dense::new(&mut r, 256, k)),
            Layer::Softmax,
        ];
        Self::new(input_shape.to_vec(), layers, classes)
    }

    /// AvgPool → (Conv 32 ELU, AvgPool) → (Conv 64 ELU, AvgPool) → Dense 256 ELU → Dense K.
    pub fn vanilla_cnn(input_shape: &[usize], classes: Vec<i32>, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        let c = *input_shape
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty input shape".into()))?;
        let pool = || {
            Layer::AvgPool(AvgPool {
                size: 2,
                padding: Padding::Same,
            })
        };
        let mut layers = vec![
            pool(),
            Layer::Conv2d(Conv2d::new(&mut r, c, 32, 5, Padding::Same)),
            Layer::Elu,
            pool(),
            Layer::Conv2d(Conv2d::new(&mut r, 32, 64, 5, Padding::Same)),
            Layer::Elu,
            pool(),
        ];
        let flat = feature_len(input_shape, &layers)?;
        layers.extend([
            Layer::Dense(Dense::new(&mut r, flat, 256)),
            Layer::Elu,
            Layer::Dense(Dense::new(&mut r, 256, classes.len())),
            Layer::Softmax,
        ]);
        Self::new(input_shape.to_vec(), layers, classes)
    }

    /// Three blocks of [AvgPool, Conv, SeparableConv ELU] × 2 with 8, 16 and 32
    /// filters, then Dense 256 ReLU and Dense K softmax. Needs inputs of a few
    /// hundred pixels per side.
    pub fn table2_dnn(input_shape: &[usize], classes: Vec<i32>, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        let mut c = *input_shape
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty input shape".into()))?;
        let mut layers = Vec::new();
        for filters in [8, 16, 32] {
            for _ in 0..2 {
                layers.push(Layer::AvgPool(AvgPool {
                    size: 2,
                    padding: Padding::Valid,
                }));
                layers.push(Layer::Conv2d(Conv2d::new(&mut r, c, filters, 5, Padding::Valid)));
                layers.push(Layer::SeparableConv2d(SeparableConv2d::new(
                    &mut r,
                    filters,
                    filters,
                    5,
                    Padding::Same,
                )));
                layers.push(Layer::Elu);
                c = filters;
            }
        }
        let flat = feature_len(input_shape, &layers)?;
        layers.extend([
            Layer::Dense(Dense::new(&mut r, flat, 256)),
            Layer::Relu,
            Layer::Dense(Dense::new(&mut r, 256, classes.len())),
            Layer::Softmax,
        ]);
        Self::new(input_shape.to_vec(), layers, classes)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        self.layers.iter().map(|l| l.zero_grads()).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape.len() < 2 || x.shape[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch(format!(
                "batch {:?} does not match input shape {:?}",
                x.shape, self.input_shape
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Activations `acts[0] = x`, `acts[i + 1] = layer i output`.
    pub fn forward_cached(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for l in &self.layers {
            let next = l.forward(acts.last().unwrap())?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Backpropagates `grad` (with respect to the output of layer `top - 1`)
    /// down to the input. Returns parameter gradients and the input gradient.
    fn backward_from(
        &self,
        acts: &[Tensor],
        top: usize,
        grad: Tensor,
        need_input: bool,
    ) -> Result<(Gradients, Option<Tensor>)> {
        let mut grads = self.zero_grads();
        let mut g = grad;
        // below the lowest weighted layer only the input gradient remains
        let lowest = if need_input {
            0
        } else {
            self.layers.iter().position(|l| !l.params().is_empty()).unwrap_or(top)
        };
        for i in (lowest..top).rev() {
            let need_dx = i > lowest || need_input;
            match self.layers[i].backward(&acts[i], &acts[i + 1], &g, &mut grads[i], need_dx)? {
                Some(dx) => g = dx,
                None => return Ok((grads, None)),
            }
        }
        Ok((grads, need_input.then_some(g)))
    }

    /// Full reverse pass given the loss gradient with respect to the network output.
    pub fn backward(&self, acts: &[Tensor], grad_output: Tensor) -> Result<(Gradients, Tensor)> {
        let (g, dx) = self.backward_from(acts, self.layers.len(), grad_output, true)?;
        Ok((g, dx.unwrap()))
    }

    /// Mean cross-entropy and its gradients. The softmax and the loss are
    /// differentiated together, so backpropagation starts from `(p − onehot)/N`
    /// at the logits.
    pub fn loss_and_gradients(&self, x: &Tensor, targets: &[usize]) -> Result<(f64, Gradients)> {
        if !matches!(self.layers.last(), Some(Layer::Softmax)) {
            return Err(Error::ShapeMismatch("cross-entropy needs a terminal softmax".into()));
        }
        let acts = self.forward_cached(x)?;
        let probs = acts.last().unwrap();
        let loss = cross_entropy(probs, targets)?;
        let dz = softmax_cross_entropy_grad(probs, targets)?;
        let (grads, _) = self.backward_from(&acts, self.layers.len() - 1, dz, false)?;
        Ok((loss, grads))
    }

    /// Per-item features for the memory network: channel means of the last
    /// convolutional feature map, or the last hidden vector for models without
    /// convolutions.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let acts = self.forward_cached(x)?;
        let first_dense = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Dense(_)))
            .unwrap_or(self.layers.len());
        let has_conv = self
            .layers
            .iter()
            .any(|l| matches!(l, Layer::Conv2d(_) | Layer::SeparableConv2d(_)));
        let src = if has_conv && first_dense > 0 && acts[first_dense].shape.len() == 4 {
            &acts[first_dense]
        } else {
            let last_dense = self
                .layers
                .iter()
                .rposition(|l| matches!(l, Layer::Dense(_)))
                .unwrap_or(0);
            &acts[last_dense]
        };
        if src.shape.len() == 4 {
            let (n, c) = (src.shape[0], src.shape[1]);
            let hw = src.shape[2] * src.shape[3];
            let data = src
                .data
                .chunks(hw)
                .map(|plane| plane.iter().sum::<f64>() / hw as f64)
                .collect();
            Tensor::new(vec![n, c], data)
        } else {
            Tensor::new(vec![src.batch(), src.item_len()], src.data.clone())
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(NETWORK_MAGIC);
        w.u32(self.input_shape.len());
        for &d in &self.input_shape {
            w.u32(d);
        }
        w.u32(self.classes.len());
        for &c in &self.classes {
            w.i32(c);
        }
        w.u32(self.layers.len());
        for l in &self.layers {
            match l {
                Layer::AvgPool(p) => {
                    w.u8(0);
                    w.u32(p.size);
                    w.u8(p.padding.code());
                }
                Layer::Conv2d(c) => {
                    w.u8(1);
                    for v in [c.in_channels, c.out_channels, c.kernel] {
                        w.u32(v);
                    }
                    w.u8(c.padding.code());
                }
                Layer::SeparableConv2d(c) => {
                    w.u8(2);
                    for v in [c.in_channels, c.out_channels, c.kernel] {
                        w.u32(v);
                    }
                    w.u8(c.padding.code());
                }
                Layer::Dense(d) => {
                    w.u8(3);
                    w.u32(d.inputs);
                    w.u32(d.outputs);
                }
                Layer::Elu => w.u8(4),
                Layer::Relu => w.u8(5),
                Layer::Softmax => w.u8(6),
            }
            for p in l.params() {
                w.f64s(p);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, NETWORK_MAGIC, context)?;
        let rank = r.u32()?;
        if rank > 8 {
            return Err(r.invalid(format!("input rank {rank}")));
        }
        let input_shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let nc = r.u32()?;
        if nc > 1 << 16 {
            return Err(r.invalid(format!("class count {nc}")));
        }
        let classes = (0..nc).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
        let nl = r.u32()?;
        let mut layers = Vec::new();
        for _ in 0..nl {
            let tag = r.u8()?;
            let padding = |r: &mut ByteReader| -> Result<Padding> {
                let c = r.u8()?;
                Padding::from_code(c).ok_or_else(|| r.invalid(format!("padding code {c}")))
            };
            let mut layer = match tag {
                0 => {
                    let size = r.u32()?;
                    Layer::AvgPool(AvgPool {
                        size,
                        padding: padding(&mut r)?,
                    })
                }
                1 | 2 => {
                    let (i, o, k) = (r.u32()?, r.u32()?, r.u32()?);
                    let p = padding(&mut r)?;
                    if tag == 1 {
                        Layer::Conv2d(Conv2d {
                            in_channels: i,
                            out_channels: o,
                            kernel: k,
                            padding: p,
                            weight: Vec::new(),
                            bias: Vec::new(),
                        })
                    } else {
                        Layer::SeparableConv2d(SeparableConv2d {
                            in_channels: i,
                            out_channels: o,
                            kernel: k,
                            padding: p,
                            depthwise: Vec::new(),
                            pointwise: Vec::new(),
                            bias: Vec::new(),
                        })
                    }
                }
                3 => Layer::Dense(Dense {
                    inputs: r.u32()?,
                    outputs: r.u32()?,
                    weight: Vec::new(),
                    bias: Vec::new(),
                }),
                4 => Layer::Elu,
                5 => Layer::Relu,
                6 => Layer::Softmax,
                _ => return Err(r.invalid(format!("layer tag {tag}"))),
            };
            let expected = expected_param_lens(&layer);
            let mut loaded = Vec::new();
            for want in expected {
                let v = r.f64s()?;
                if v.len() != want {
                    return Err(r.invalid(format!("parameter length {} where {want} expected", v.len())));
                }
                loaded.push(v);
            }
            set_params(&mut layer, loaded);
            layers.push(layer);
        }
        Self::new(input_shape, layers, classes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

fn feature_len(input_shape: &[usize], layers: &[Layer]) -> Result<usize> {
    let mut shape = input_shape.to_vec();
    for l in layers {
        shape = l.output_shape(&shape)?;
    }
    Ok(shape.iter().product())
}

fn expected_param_lens(l: &Layer) -> Vec<usize> {
    match l {
        Layer::Conv2d(c) => vec![c.out_channels * c.in_channels * c.kernel * c.kernel, c.out_channels],
        Layer::SeparableConv2d(c) => vec![
            c.in_channels * c.kernel * c.kernel,
            c.out_channels * c.in_channels,
            c.out_channels,
        ],
        Layer::Dense(d) => vec![d.inputs * d.outputs, d.outputs],
        _ => Vec::new(),
    }
}

fn set_params(l: &mut Layer, mut v: Vec<Vec<f64>>) {
    match l {
        Layer::Conv2d(c) => {
            c.bias = v.pop().unwrap();
            c.weight = v.pop().unwrap();
        }
        Layer::SeparableConv2d(c) => {
            c.bias = v.pop().unwrap();
            c.pointwise = v.pop().unwrap();
            c.depthwise = v.pop().unwrap();
        }
        Layer::Dense(d) => {
            d.bias = v.pop().unwrap();
            d.weight = v.pop().unwrap();
        }
        _ => {}
    }
}

fn check_targets(probs: &Tensor, targets: &[usize]) -> Result<usize> {
    if probs.shape.len() != 2 || probs.batch() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for output {:?}",
            targets.len(),
            probs.shape
        )));
    }
    let k = probs.shape[1];
    if let Some(t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::ShapeMismatch(format!("target class {t} with {k} outputs")));
    }
    Ok(k)
}

/// Mean of `−ln p[target]`, with probabilities floored at the smallest normal
/// double so a saturated wrong prediction gives a large finite loss.
pub fn cross_entropy(probs: &Tensor, targets: &[usize]) -> Result<f64> {
    let k = check_targets(probs, targets)?;
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let p = probs.data[i * k + t];
            if p.is_nan() {
                f64::NAN
            } else {
                -p.max(f64::MIN_POSITIVE).ln()
            }
        })
        .sum();
    Ok(total / targets.len() as f64)
}

/// Gradient of the mean cross-entropy with respect to the logits.
pub fn softmax_cross_entropy_grad(probs: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let k = check_targets(probs, targets)?;
    let n = targets.len() as f64;
    let mut g = probs.clone();
    for (i, &t) in targets.iter().enumerate() {
        g.data[i * k + t] -= 1.0;
    }
    g.data.iter_mut().for_each(|v| *v /= n);
    Ok(g)
}
