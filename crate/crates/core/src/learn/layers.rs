//! Layer kinds with forward and reverse-mode passes.
//!
//! Image tensors are `[batch, channels, height, width]`. Dense layers flatten
//! whatever they receive to `[batch, features]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

impl Padding {
    /// Output length and leading pad for a window of `k` moved by `stride`.
    pub fn window(self, len: usize, k: usize, stride: usize) -> Option<(usize, usize)> {
        match self {
            Padding::Valid => (len >= k).then(|| ((len - k) / stride + 1, 0)),
            Padding::Same => {
                let out = len.div_ceil(stride);
                let total = ((out - 1) * stride + k).saturating_sub(len);
                Some((out, total / 2))
            }
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Padding::Valid => 0,
            Padding::Same => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Padding::Valid),
            1 => Some(Padding::Same),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    AvgPool,
    Conv2d,
    SeparableConv2d,
    Dense,
    Elu,
    Relu,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvgPool {
    pub size: usize,
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: Padding,
    /// `[out, in, k, k]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableConv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: Padding,
    /// `[in, k, k]`, one kernel per input channel.
    pub depthwise: Vec<f64>,
    /// `[out, in]`
    pub pointwise: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[inputs, outputs]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    AvgPool(AvgPool),
    Conv2d(Conv2d),
    SeparableConv2d(SeparableConv2d),
    Dense(Dense),
    Elu,
    Relu,
    Softmax,
}

fn fan_in_uniform<R: Rng>(rng: &mut R, fan_in: usize, count: usize) -> Vec<f64> {
    let a = (3.0 / fan_in as f64).sqrt();
    (0..count).map(|_| rng.random_range(-a..a)).collect()
}

impl Conv2d {
    pub fn new<R: Rng>(rng: &mut R, in_channels: usize, out_channels: usize, kernel: usize, padding: Padding) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding,
            weight: fan_in_uniform(rng, fan_in, out_channels * fan_in),
            bias: vec![0.0; out_channels],
        }
    }
}

impl SeparableConv2d {
    pub fn new<R: Rng>(rng: &mut R, in_channels: usize, out_channels: usize, kernel: usize, padding: Padding) -> Self {
        SeparableConv2d {
            in_channels,
            out_channels,
            kernel,
            padding,
            depthwise: fan_in_uniform(rng, kernel * kernel, in_channels * kernel * kernel),
            pointwise: fan_in_uniform(rng, in_channels, out_channels * in_channels),
            bias: vec![0.0; out_channels],
        }
    }
}

impl Dense {
    pub fn new<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: fan_in_uniform(rng, inputs, inputs * outputs),
            bias: vec![0.0; outputs],
        }
    }
}

/// Geometry of a stride-1 `k × k` window over one `c × h × w` image.
#[derive(Debug, Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    pad_h: usize,
    pad_w: usize,
}

impl Geom {
    fn new(shape: &[usize], k: usize, padding: Padding, what: &str) -> Result<Self> {
        let [c, h, w] = image_shape(shape, what)?;
        let err = || Error::ShapeMismatch(format!("{what}: kernel {k} larger than {h}x{w} input"));
        let (ho, pad_h) = padding.window(h, k, 1).ok_or_else(err)?;
        let (wo, pad_w) = padding.window(w, k, 1).ok_or_else(err)?;
        Ok(Geom {
            c,
            h,
            w,
            k,
            ho,
            wo,
            pad_h,
            pad_w,
        })
    }

    fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    /// Visits each (output position, input position) pair of the window at
    /// kernel offset `(ki, kj)` for which the input lies inside the image.
    #[inline]
    fn for_each_tap(&self, ki: usize, kj: usize, mut f: impl FnMut(usize, usize)) {
        for oy in 0..self.ho {
            let iy = oy + ki;
            if iy < self.pad_h || iy - self.pad_h >= self.h {
                continue;
            }
            let iy = iy - self.pad_h;
            for ox in 0..self.wo {
                let ix = ox + kj;
                if ix < self.pad_w || ix - self.pad_w >= self.w {
                    continue;
                }
                f(oy * self.wo + ox, iy * self.w + ix - self.pad_w);
            }
        }
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        cols.fill(0.0);
        let p = self.out_len();
        for ch in 0..self.c {
            let plane = &x[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = ((ch * self.k + ki) * self.k + kj) * p;
                    self.for_each_tap(ki, kj, |o, i| cols[row + o] = plane[i]);
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.out_len();
        for ch in 0..self.c {
            let plane = &mut dx[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = ((ch * self.k + ki) * self.k + kj) * p;
                    self.for_each_tap(ki, kj, |o, i| plane[i] += cols[row + o]);
                }
            }
        }
    }
}

fn image_shape(shape: &[usize], what: &str) -> Result<[usize; 3]> {
    match shape {
        [c, h, w] => Ok([*c, *h, *w]),
        _ => Err(Error::ShapeMismatch(format!("{what} expects [c, h, w], got {shape:?}"))),
    }
}

fn expect_channels(found: usize, expected: usize, what: &str) -> Result<()> {
    if found != expected {
        return Err(Error::ShapeMismatch(format!(
            "{what} expects {expected} channels, got {found}"
        )));
    }
    Ok(())
}

impl AvgPool {
    fn geometry(&self, shape: &[usize]) -> Result<([usize; 3], (usize, usize), (usize, usize))> {
        let [c, h, w] = image_shape(shape, "avgpool")?;
        let err = || Error::ShapeMismatch(format!("avgpool({}) on {h}x{w}", self.size));
        let rows = self.padding.window(h, self.size, self.size).ok_or_else(err)?;
        let cols = self.padding.window(w, self.size, self.size).ok_or_else(err)?;
        Ok(([c, h, w], rows, cols))
    }

    /// Calls `f(out_index, in_index, 1/count)` for every in-bounds pooled element.
    fn visit(&self, shape: &[usize], mut f: impl FnMut(usize, usize, f64)) -> Result<()> {
        let ([c, h, w], (ho, ph), (wo, pw)) = self.geometry(shape)?;
        let s = self.size;
        for ch in 0..c {
            for oy in 0..ho {
                let y0 = (oy * s).saturating_sub(ph);
                let y1 = (oy * s + s).saturating_sub(ph).min(h);
                for ox in 0..wo {
                    let x0 = (ox * s).saturating_sub(pw);
                    let x1 = (ox * s + s).saturating_sub(pw).min(w);
                    let inv = 1.0 / ((y1 - y0) * (x1 - x0)) as f64;
                    let o = (ch * ho + oy) * wo + ox;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            f(o, (ch * h + y) * w + x, inv);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn softmax_row(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::AvgPool(_) => LayerKind::AvgPool,
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::SeparableConv2d(_) => LayerKind::SeparableConv2d,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Elu => LayerKind::Elu,
            Layer::Relu => LayerKind::Relu,
            Layer::Softmax => LayerKind::Softmax,
        }
    }

    /// Shape of one output item for one input item of shape `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::AvgPool(p) => {
                let ([c, ..], (ho, _), (wo, _)) = p.geometry(input)?;
                Ok(vec![c, ho, wo])
            }
            Layer::Conv2d(l) => {
                let g = Geom::new(input, l.kernel, l.padding, "conv2d")?;
                expect_channels(g.c, l.in_channels, "conv2d")?;
                Ok(vec![l.out_channels, g.ho, g.wo])
            }
            Layer::SeparableConv2d(l) => {
                let g = Geom::new(input, l.kernel, l.padding, "separable_conv2d")?;
                expect_channels(g.c, l.in_channels, "separable_conv2d")?;
                Ok(vec![l.out_channels, g.ho, g.wo])
            }
            Layer::Dense(l) => {
                let n: usize = input.iter().product();
                if n != l.inputs {
                    return Err(Error::ShapeMismatch(format!(
                        "dense expects {} features, got {input:?}",
                        l.inputs
                    )));
                }
                Ok(vec![l.outputs])
            }
            Layer::Elu | Layer::Relu => Ok(input.to_vec()),
            Layer::Softmax => {
                if input.len() != 1 {
                    return Err(Error::ShapeMismatch(format!("softmax expects a vector, got {input:?}")));
                }
                Ok(input.to_vec())
            }
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv2d(l) => vec![&l.weight, &l.bias],
            Layer::SeparableConv2d(l) => vec![&l.depthwise, &l.pointwise, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::SeparableConv2d(l) => vec![&mut l.depthwise, &mut l.pointwise, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape.len() < 2 {
            return Err(Error::ShapeMismatch(format!("missing batch axis in {:?}", x.shape)));
        }
        let n = x.batch();
        let out_item = self.output_shape(&x.shape[1..])?;
        let mut shape = vec![n];
        shape.extend_from_slice(&out_item);
        let mut y = Tensor::zeros(shape);
        let (si, so) = (x.item_len(), y.item_len());
        match self {
            Layer::AvgPool(p) => {
                for b in 0..n {
                    let (xi, yo) = (&x.data[b * si..(b + 1) * si], &mut y.data[b * so..(b + 1) * so]);
                    p.visit(&x.shape[1..], |o, i, inv| yo[o] += xi[i] * inv)?;
                }
            }
            Layer::Conv2d(l) => {
                let g = Geom::new(&x.shape[1..], l.kernel, l.padding, "conv2d")?;
                let (rows, p) = (g.c * g.k * g.k, g.out_len());
                let mut cols = vec![0.0; rows * p];
                for b in 0..n {
                    g.im2col(&x.data[b * si..(b + 1) * si], &mut cols);
                    let yo = &mut y.data[b * so..(b + 1) * so];
                    for (o, chunk) in yo.chunks_mut(p).enumerate() {
                        chunk.fill(l.bias[o]);
                    }
                    gemm(l.out_channels, rows, p, &l.weight, false, &cols, false, yo, 1.0);
                }
            }
            Layer::SeparableConv2d(l) => {
                let g = Geom::new(&x.shape[1..], l.kernel, l.padding, "separable_conv2d")?;
                let p = g.out_len();
                let mut mid = vec![0.0; g.c * p];
                for b in 0..n {
                    depthwise_forward(l, &g, &x.data[b * si..(b + 1) * si], &mut mid);
                    let yo = &mut y.data[b * so..(b + 1) * so];
                    for (o, chunk) in yo.chunks_mut(p).enumerate() {
                        chunk.fill(l.bias[o]);
                    }
                    gemm(l.out_channels, g.c, p, &l.pointwise, false, &mid, false, yo, 1.0);
                }
            }
            Layer::Dense(l) => {
                for row in y.data.chunks_mut(l.outputs) {
                    row.copy_from_slice(&l.bias);
                }
                gemm(
                    n,
                    l.inputs,
                    l.outputs,
                    &x.data,
                    false,
                    &l.weight,
                    false,
                    &mut y.data,
                    1.0,
                );
            }
            Layer::Elu => {
                for (o, v) in y.data.iter_mut().zip(&x.data) {
                    *o = if *v > 0.0 { *v } else { v.exp_m1() };
                }
            }
            Layer::Relu => {
                for (o, v) in y.data.iter_mut().zip(&x.data) {
                    *o = v.max(0.0);
                }
            }
            Layer::Softmax => {
                for (zo, zi) in y.data.chunks_mut(so).zip(x.data.chunks(si)) {
                    softmax_row(zi, zo);
                }
            }
        }
        Ok(y)
    }

    /// Reverse pass. `x` and `y` are this layer's cached input and output,
    /// `dy` the loss gradient with respect to `y`. Parameter gradients are
    /// accumulated into `grads`; the input gradient is returned when `need_dx`.
    pub fn backward(
        &self,
        x: &Tensor,
        y: &Tensor,
        dy: &Tensor,
        grads: &mut [Vec<f64>],
        need_dx: bool,
    ) -> Result<Option<Tensor>> {
        if dy.shape != y.shape {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?} does not match output {:?}",
                dy.shape, y.shape
            )));
        }
        let n = x.batch();
        let (si, so) = (x.item_len(), y.item_len());
        let mut dx = Tensor::zeros(x.shape.clone());
        match self {
            Layer::AvgPool(p) => {
                if need_dx {
                    for b in 0..n {
                        let (gi, go) = (&mut dx.data[b * si..(b + 1) * si], &dy.data[b * so..(b + 1) * so]);
                        p.visit(&x.shape[1..], |o, i, inv| gi[i] += go[o] * inv)?;
                    }
                }
            }
            Layer::Conv2d(l) => {
                let g = Geom::new(&x.shape[1..], l.kernel, l.padding, "conv2d")?;
                let (rows, p) = (g.c * g.k * g.k, g.out_len());
                let mut cols = vec![0.0; rows * p];
                let (gw, gb) = grads.split_at_mut(1);
                for b in 0..n {
                    let go = &dy.data[b * so..(b + 1) * so];
                    g.im2col(&x.data[b * si..(b + 1) * si], &mut cols);
                    gemm(l.out_channels, p, rows, go, false, &cols, true, &mut gw[0], 1.0);
                    for (o, chunk) in go.chunks(p).enumerate() {
                        gb[0][o] += chunk.iter().sum::<f64>();
                    }
                    if need_dx {
                        gemm(rows, l.out_channels, p, &l.weight, true, go, false, &mut cols, 0.0);
                        g.col2im(&cols, &mut dx.data[b * si..(b + 1) * si]);
                    }
                }
            }
            Layer::SeparableConv2d(l) => {
                let g = Geom::new(&x.shape[1..], l.kernel, l.padding, "separable_conv2d")?;
                let p = g.out_len();
                let mut mid = vec![0.0; g.c * p];
                let mut dmid = vec![0.0; g.c * p];
                for b in 0..n {
                    let xi = &x.data[b * si..(b + 1) * si];
                    let go = &dy.data[b * so..(b + 1) * so];
                    depthwise_forward(l, &g, xi, &mut mid);
                    gemm(l.out_channels, p, g.c, go, false, &mid, true, &mut grads[1], 1.0);
                    for (o, chunk) in go.chunks(p).enumerate() {
                        grads[2][o] += chunk.iter().sum::<f64>();
                    }
                    gemm(g.c, l.out_channels, p, &l.pointwise, true, go, false, &mut dmid, 0.0);
                    let gx = &mut dx.data[b * si..(b + 1) * si];
                    depthwise_backward(l, &g, xi, &dmid, &mut grads[0], gx, need_dx);
                }
            }
            Layer::Dense(l) => {
                gemm(
                    l.inputs,
                    n,
                    l.outputs,
                    &x.data,
                    true,
                    &dy.data,
                    false,
                    &mut grads[0],
                    1.0,
                );
                for row in dy.data.chunks(l.outputs) {
                    for (g, v) in grads[1].iter_mut().zip(row) {
                        *g += v;
                    }
                }
                if need_dx {
                    gemm(
                        n,
                        l.outputs,
                        l.inputs,
                        &dy.data,
                        false,
                        &l.weight,
                        true,
                        &mut dx.data,
                        0.0,
                    );
                }
            }
            Layer::Elu => {
                for ((d, g), (xv, yv)) in dx.data.iter_mut().zip(&dy.data).zip(x.data.iter().zip(&y.data)) {
                    *d = if *xv > 0.0 { *g } else { g * (yv + 1.0) };
                }
            }
            Layer::Relu => {
                for ((d, g), xv) in dx.data.iter_mut().zip(&dy.data).zip(&x.data) {
                    *d = if *xv > 0.0 { *g } else { 0.0 };
                }
            }
            Layer::Softmax => {
                for ((d, g), p) in dx.data.chunks_mut(so).zip(dy.data.chunks(so)).zip(y.data.chunks(so)) {
                    let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                    for ((di, gi), pi) in d.iter_mut().zip(g).zip(p) {
                        *di = pi * (gi - dot);
                    }
                }
            }
        }
        Ok(need_dx.then_some(dx))
    }
}

fn depthwise_forward(l: &SeparableConv2d, g: &Geom, x: &[f64], mid: &mut [f64]) {
    mid.fill(0.0);
    let (hw, p, kk) = (g.h * g.w, g.out_len(), g.k * g.k);
    for ch in 0..g.c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        let out = &mut mid[ch * p..(ch + 1) * p];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let w = l.depthwise[ch * kk + ki * g.k + kj];
                g.for_each_tap(ki, kj, |o, i| out[o] += w * plane[i]);
            }
        }
    }
}

fn depthwise_backward(
    l: &SeparableConv2d,
    g: &Geom,
    x: &[f64],
    dmid: &[f64],
    gdw: &mut [f64],
    dx: &mut [f64],
    need_dx: bool,
) {
    let (hw, p, kk) = (g.h * g.w, g.out_len(), g.k * g.k);
    for ch in 0..g.c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        let d = &dmid[ch * p..(ch + 1) * p];
        let gplane = &mut dx[ch * hw..(ch + 1) * hw];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let idx = ch * kk + ki * g.k + kj;
                let w = l.depthwise[idx];
                let mut acc = 0.0;
                g.for_each_tap(ki, kj, |o, i| {
                    acc += d[o] * plane[i];
                    if need_dx {
                        gplane[i] += d[o] * w;
                    }
                });
                gdw[idx] += acc;
            }
        }
    }
}
