use rand::Rng;

use super::{SparseTensor, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Dense {
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    /// `[out_dim][in_dim]`
    pub(crate) weight: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub(crate) grad_w: Vec<f64>,
    pub(crate) grad_b: Vec<f64>,
}

/// Stride-1 convolution with zero padding `k/2` (odd `k` preserves the spatial shape).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub(crate) in_ch: usize,
    pub(crate) out_ch: usize,
    pub(crate) kernel: usize,
    pub(crate) height: usize,
    pub(crate) width: usize,
    /// `[out_ch][in_ch][k][k]`
    pub(crate) weight: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub(crate) grad_w: Vec<f64>,
    pub(crate) grad_b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AvgPool2d {
    pub(crate) kernel: usize,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    ConvPool(ConvPool),
    AvgPool2d(AvgPool2d),
    Relu,
    Softmax,
}

fn uniform_init<R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: uniform_init(in_dim * out_dim, in_dim, rng),
            bias: uniform_init(out_dim, in_dim, rng),
            grad_w: vec![0.0; in_dim * out_dim],
            grad_b: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn accumulate(&mut self, x: &[f64], g: &[f64]) {
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            self.grad_b[o] += go;
            let row = &mut self.grad_w[o * self.in_dim..(o + 1) * self.in_dim];
            for (gw, &v) in row.iter_mut().zip(x) {
                *gw += go * v;
            }
        }
    }

    fn input_grad(&self, g: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (row, &go) in self.weight.chunks_exact(self.in_dim).zip(g) {
            if go == 0.0 {
                continue;
            }
            for (d, w) in dx.iter_mut().zip(row) {
                *d += go * w;
            }
        }
        dx
    }
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let n = out_ch * fan_in;
        Self {
            in_ch,
            out_ch,
            kernel,
            height,
            width,
            weight: uniform_init(n, fan_in, rng),
            bias: uniform_init(out_ch, fan_in, rng),
            grad_w: vec![0.0; n],
            grad_b: vec![0.0; out_ch],
        }
    }

    #[inline]
    fn w_idx(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_ch + c) * self.kernel + ky) * self.kernel + kx
    }

    // Input-major scatter: zero input pixels (most of a sparse observation map) cost nothing.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.out_ch * plane];
        for (o, b) in self.bias.iter().enumerate() {
            out[o * plane..(o + 1) * plane].fill(*b);
        }
        for c in 0..self.in_ch {
            for iy in 0..self.height {
                for ix in 0..self.width {
                    let v = x[c * plane + iy * self.width + ix];
                    if v == 0.0 {
                        continue;
                    }
                    for_each_tap(self.kernel, self.height, self.width, iy, ix, |y, xx, ky, kx| {
                        for o in 0..self.out_ch {
                            out[o * plane + y * self.width + xx] += self.weight[self.w_idx(o, c, ky, kx)] * v;
                        }
                    });
                }
            }
        }
        out
    }

    fn accumulate(&mut self, x: &[f64], g: &[f64]) {
        let plane = self.height * self.width;
        for o in 0..self.out_ch {
            self.grad_b[o] += g[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
        let (in_ch, k, w, out_ch) = (self.in_ch, self.kernel, self.width, self.out_ch);
        for c in 0..in_ch {
            for iy in 0..self.height {
                for ix in 0..w {
                    let v = x[c * plane + iy * w + ix];
                    if v == 0.0 {
                        continue;
                    }
                    let grad_w = &mut self.grad_w;
                    for_each_tap(k, self.height, w, iy, ix, |y, xx, ky, kx| {
                        for o in 0..out_ch {
                            grad_w[((o * in_ch + c) * k + ky) * k + kx] += g[o * plane + y * w + xx] * v;
                        }
                    });
                }
            }
        }
    }

    fn input_grad(&self, g: &[f64]) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut dx = vec![0.0; self.in_ch * plane];
        for c in 0..self.in_ch {
            for iy in 0..self.height {
                for ix in 0..self.width {
                    let mut acc = 0.0;
                    for_each_tap(self.kernel, self.height, self.width, iy, ix, |y, xx, ky, kx| {
                        for o in 0..self.out_ch {
                            acc += g[o * plane + y * self.width + xx] * self.weight[self.w_idx(o, c, ky, kx)];
                        }
                    });
                    dx[c * plane + iy * self.width + ix] = acc;
                }
            }
        }
        dx
    }
}

/// Convolution, ReLU and average pooling fused. Only output pixels whose
/// receptive field holds a nonzero input are computed; every other pixel is
/// `relu(bias)`, which makes sparse maps cheap.
#[derive(Debug, Clone)]
pub struct ConvPool {
    pub(crate) conv: Conv2d,
    pub(crate) pool: usize,
}

/// Conv work driven by the nonzero inputs. `taps` lists `(pixel slot, weight
/// column, input value)` for every kernel tap that reads a nonzero input, and
/// `pre` holds `[slot][out_ch]` pre-activations of the touched pixels.
struct Touched {
    pixels: Vec<usize>,
    taps: Vec<(usize, usize, f64)>,
    pre: Vec<f64>,
}

impl ConvPool {
    fn out_shape(&self) -> Vec<usize> {
        vec![self.conv.out_ch, self.conv.height / self.pool, self.conv.width / self.pool]
    }

    fn cells(&self) -> usize {
        (self.conv.height / self.pool) * (self.conv.width / self.pool)
    }

    fn cell(&self, p: usize) -> usize {
        let w = self.conv.width;
        (p / w / self.pool) * (w / self.pool) + (p % w) / self.pool
    }

    fn touched(&self, nonzero: impl Iterator<Item = (usize, f64)>) -> Touched {
        let c = &self.conv;
        let plane = c.height * c.width;
        let mut raw = Vec::new();
        for (i, v) in nonzero.filter(|(_, v)| *v != 0.0) {
            let (ch, p) = (i / plane, i % plane);
            for_each_tap(c.kernel, c.height, c.width, p / c.width, p % c.width, |y, xx, ky, kx| {
                raw.push((y * c.width + xx, (ch * c.kernel + ky) * c.kernel + kx, v));
            });
        }
        raw.sort_by_key(|t| t.0);
        let mut pixels: Vec<usize> = Vec::new();
        let mut taps = Vec::with_capacity(raw.len());
        for (p, col, v) in raw {
            if pixels.last() != Some(&p) {
                pixels.push(p);
            }
            taps.push((pixels.len() - 1, col, v));
        }
        let cols = c.in_ch * c.kernel * c.kernel;
        let mut pre: Vec<f64> = pixels.iter().flat_map(|_| c.bias.iter().copied()).collect();
        for &(slot, col, v) in &taps {
            for o in 0..c.out_ch {
                pre[slot * c.out_ch + o] += c.weight[o * cols + col] * v;
            }
        }
        Touched { pixels, taps, pre }
    }

    fn touched_counts(&self, t: &Touched) -> Vec<usize> {
        let mut counts = vec![0usize; self.cells()];
        for &p in &t.pixels {
            counts[self.cell(p)] += 1;
        }
        counts
    }

    fn apply(&self, t: &Touched) -> Vec<f64> {
        let c = &self.conv;
        let cells = self.cells();
        let area = (self.pool * self.pool) as f64;
        let counts = self.touched_counts(t);
        let mut out = vec![0.0; c.out_ch * cells];
        for o in 0..c.out_ch {
            let base = c.bias[o].max(0.0);
            for (cell, &n) in counts.iter().enumerate() {
                out[o * cells + cell] = (area - n as f64) * base;
            }
        }
        for (i, &p) in t.pixels.iter().enumerate() {
            let cell = self.cell(p);
            for o in 0..c.out_ch {
                out[o * cells + cell] += t.pre[i * c.out_ch + o].max(0.0);
            }
        }
        out.iter_mut().for_each(|v| *v /= area);
        out
    }

    /// Gradient with respect to the conv pre-activations for every pixel.
    fn dense_pre_grad(&self, t: &Touched, g: &[f64]) -> Vec<f64> {
        let c = &self.conv;
        let plane = c.height * c.width;
        let cells = self.cells();
        let area = (self.pool * self.pool) as f64;
        let mut d = vec![0.0; c.out_ch * plane];
        for o in 0..c.out_ch {
            if c.bias[o] > 0.0 {
                for p in 0..plane {
                    d[o * plane + p] = g[o * cells + self.cell(p)] / area;
                }
            }
        }
        for (i, &p) in t.pixels.iter().enumerate() {
            for o in 0..c.out_ch {
                d[o * plane + p] = if t.pre[i * c.out_ch + o] > 0.0 { g[o * cells + self.cell(p)] / area } else { 0.0 };
            }
        }
        d
    }

    fn accumulate(&mut self, t: &Touched, g: &[f64]) {
        let cells = self.cells();
        let area = (self.pool * self.pool) as f64;
        let out_ch = self.conv.out_ch;
        let cols = self.conv.in_ch * self.conv.kernel * self.conv.kernel;
        let counts = self.touched_counts(t);
        for o in 0..out_ch {
            if self.conv.bias[o] > 0.0 {
                self.conv.grad_b[o] +=
                    counts.iter().enumerate().map(|(cell, &n)| g[o * cells + cell] * (area - n as f64)).sum::<f64>() / area;
            }
        }
        for (i, &p) in t.pixels.iter().enumerate() {
            let cell = self.cell(p);
            for o in 0..out_ch {
                if t.pre[i * out_ch + o] > 0.0 {
                    self.conv.grad_b[o] += g[o * cells + cell] / area;
                }
            }
        }
        for &(slot, col, v) in &t.taps {
            let cell = self.cell(t.pixels[slot]);
            for o in 0..out_ch {
                if t.pre[slot * out_ch + o] > 0.0 {
                    self.conv.grad_w[o * cols + col] += g[o * cells + cell] / area * v;
                }
            }
        }
    }

    fn input_grad(&self, t: &Touched, g: &[f64]) -> Vec<f64> {
        self.conv.input_grad(&self.dense_pre_grad(t, g))
    }
}

fn dense_entries(x: &[f64]) -> impl Iterator<Item = (usize, f64)> + '_ {
    x.iter().copied().enumerate()
}

fn sparse_entries(x: &SparseTensor) -> impl Iterator<Item = (usize, f64)> + '_ {
    x.entries().iter().map(|&(i, v)| (i as usize, v))
}

impl AvgPool2d {
    fn out_shape(&self, shape: &[usize]) -> Result<Vec<usize>> {
        let k = self.kernel;
        match shape {
            [c, h, w] if k > 0 && h % k == 0 && w % k == 0 => Ok(vec![*c, h / k, w / k]),
            _ => Err(Error::ShapeMismatch {
                expected: vec![0, k, k],
                got: shape.to_vec(),
            }),
        }
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let k = self.kernel;
        let (oh, ow) = (h / k, w / k);
        let mut out = vec![0.0; c * oh * ow];
        let scale = 1.0 / (k * k) as f64;
        let xd = x.data();
        for ch in 0..c {
            for y in 0..h {
                let row = &xd[(ch * h + y) * w..(ch * h + y + 1) * w];
                let orow = &mut out[(ch * oh + y / k) * ow..(ch * oh + y / k + 1) * ow];
                for (xi, v) in row.iter().enumerate() {
                    orow[xi / k] += v * scale;
                }
            }
        }
        Tensor::new(vec![c, oh, ow], out).expect("pool shape")
    }

    fn backward(&self, in_shape: &[usize], g: &[f64]) -> Vec<f64> {
        let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let k = self.kernel;
        let (oh, ow) = (h / k, w / k);
        let scale = 1.0 / (k * k) as f64;
        let mut dx = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for xi in 0..w {
                    dx[(ch * h + y) * w + xi] = g[(ch * oh + y / k) * ow + xi / k] * scale;
                }
            }
        }
        dx
    }
}

/// Calls `f(out_y, out_x, ky, kx)` for every output position an input pixel feeds.
#[inline]
fn for_each_tap(kernel: usize, height: usize, width: usize, iy: usize, ix: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let pad = (kernel / 2) as isize;
    for ky in 0..kernel {
        let y = iy as isize - ky as isize + pad;
        if y < 0 || y >= height as isize {
            continue;
        }
        for kx in 0..kernel {
            let x = ix as isize - kx as isize + pad;
            if x < 0 || x >= width as isize {
                continue;
            }
            f(y as usize, x as usize, ky, kx);
        }
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Layer {
    pub fn name(&self) -> String {
        match self {
            Layer::Dense(d) => format!("dense({}->{})", d.in_dim, d.out_dim),
            Layer::Conv2d(c) => format!("conv2d({}->{},k{},{}x{})", c.in_ch, c.out_ch, c.kernel, c.height, c.width),
            Layer::ConvPool(cp) => {
                let c = &cp.conv;
                format!("convpool({}->{},k{},{}x{},p{})", c.in_ch, c.out_ch, c.kernel, c.height, c.width, cp.pool)
            }
            Layer::AvgPool2d(p) => format!("avgpool({})", p.kernel),
            Layer::Relu => "relu".into(),
            Layer::Softmax => "softmax".into(),
        }
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let len: usize = input.iter().product();
        let mismatch = |expected: Vec<usize>| Error::ShapeMismatch { expected, got: input.to_vec() };
        match self {
            Layer::Dense(d) if len == d.in_dim => Ok(vec![d.out_dim]),
            Layer::Dense(d) => Err(mismatch(vec![d.in_dim])),
            Layer::Conv2d(c) if input == [c.in_ch, c.height, c.width] => Ok(vec![c.out_ch, c.height, c.width]),
            Layer::Conv2d(c) => Err(mismatch(vec![c.in_ch, c.height, c.width])),
            Layer::ConvPool(cp) => {
                let c = &cp.conv;
                if input != [c.in_ch, c.height, c.width] {
                    return Err(mismatch(vec![c.in_ch, c.height, c.width]));
                }
                AvgPool2d { kernel: cp.pool }.out_shape(&[c.out_ch, c.height, c.width])
            }
            Layer::AvgPool2d(p) => p.out_shape(input),
            Layer::Relu | Layer::Softmax => Ok(input.to_vec()),
        }
    }

    pub(crate) fn apply(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Dense(d) => Tensor::vector(d.apply(x.data())),
            Layer::Conv2d(c) => Tensor::new(vec![c.out_ch, c.height, c.width], c.apply(x.data())).expect("conv shape"),
            Layer::ConvPool(cp) => {
                Tensor::new(cp.out_shape(), cp.apply(&cp.touched(dense_entries(x.data())))).expect("convpool shape")
            }
            Layer::AvgPool2d(p) => p.apply(x),
            Layer::Relu => {
                let data = x.data().iter().map(|v| v.max(0.0)).collect();
                Tensor::new(x.shape().to_vec(), data).expect("same shape")
            }
            Layer::Softmax => Tensor::new(x.shape().to_vec(), softmax(x.data())).expect("same shape"),
        }
    }

    /// Gradient with respect to the layer input; parameters are untouched.
    pub(crate) fn input_grad(&self, x: &Tensor, g: &Tensor) -> Tensor {
        let dx = match self {
            Layer::Dense(d) => d.input_grad(g.data()),
            Layer::Conv2d(c) => c.input_grad(g.data()),
            Layer::ConvPool(cp) => cp.input_grad(&cp.touched(dense_entries(x.data())), g.data()),
            Layer::AvgPool2d(p) => p.backward(x.shape(), g.data()),
            Layer::Relu => x
                .data()
                .iter()
                .zip(g.data())
                .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                .collect(),
            Layer::Softmax => {
                let y = softmax(x.data());
                let dot: f64 = y.iter().zip(g.data()).map(|(a, b)| a * b).sum();
                y.iter().zip(g.data()).map(|(yi, gi)| yi * (gi - dot)).collect()
            }
        };
        Tensor::new(x.shape().to_vec(), dx).expect("input shape")
    }

    /// Accumulates parameter gradients; returns the input gradient when requested.
    pub(crate) fn backward(&mut self, x: &Tensor, g: &Tensor, need_input: bool) -> Option<Tensor> {
        match self {
            Layer::Dense(d) => d.accumulate(x.data(), g.data()),
            Layer::Conv2d(c) => c.accumulate(x.data(), g.data()),
            Layer::ConvPool(cp) => {
                let t = cp.touched(dense_entries(x.data()));
                cp.accumulate(&t, g.data());
            }
            _ => {}
        }
        need_input.then(|| self.input_grad(x, g))
    }

    /// `apply` on a sparse input; only the fused conv layer reads one natively.
    pub(crate) fn apply_sparse(&self, x: &SparseTensor) -> Tensor {
        match self {
            Layer::ConvPool(cp) => {
                Tensor::new(cp.out_shape(), cp.apply(&cp.touched(sparse_entries(x)))).expect("convpool shape")
            }
            _ => self.apply(&x.to_dense()),
        }
    }

    /// `backward` on a sparse input.
    pub(crate) fn backward_sparse(&mut self, x: &SparseTensor, g: &Tensor, need_input: bool) -> Option<Tensor> {
        match self {
            Layer::ConvPool(cp) => {
                let t = cp.touched(sparse_entries(x));
                cp.accumulate(&t, g.data());
                need_input.then(|| {
                    Tensor::new(x.shape().to_vec(), cp.input_grad(&t, g.data())).expect("input shape")
                })
            }
            _ => self.backward(&x.to_dense(), g, need_input),
        }
    }

    fn param_layer(&self) -> Option<(&[f64], &[f64], &[f64], &[f64])> {
        match self {
            Layer::Dense(d) => Some((&d.weight, &d.bias, &d.grad_w, &d.grad_b)),
            Layer::Conv2d(c) | Layer::ConvPool(ConvPool { conv: c, .. }) => Some((&c.weight, &c.bias, &c.grad_w, &c.grad_b)),
            _ => None,
        }
    }

    #[allow(clippy::type_complexity)]
    fn param_layer_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>, &mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias, &mut d.grad_w, &mut d.grad_b)),
            Layer::Conv2d(c) | Layer::ConvPool(ConvPool { conv: c, .. }) => {
                Some((&mut c.weight, &mut c.bias, &mut c.grad_w, &mut c.grad_b))
            }
            _ => None,
        }
    }

    /// Parameter slices in canonical order: weights, then bias.
    pub(crate) fn params(&self) -> [&[f64]; 2] {
        self.param_layer().map_or([&[], &[]], |(w, b, _, _)| [w, b])
    }

    pub(crate) fn params_mut(&mut self) -> [&mut [f64]; 2] {
        self.param_layer_mut().map_or([&mut [], &mut []], |(w, b, _, _)| [w, b])
    }

    pub(crate) fn grads(&self) -> [&[f64]; 2] {
        self.param_layer().map_or([&[], &[]], |(_, _, gw, gb)| [gw, gb])
    }

    pub(crate) fn grads_mut(&mut self) -> [&mut [f64]; 2] {
        self.param_layer_mut().map_or([&mut [], &mut []], |(_, _, gw, gb)| [gw, gb])
    }

    /// Mutable parameter and gradient slices side by side.
    pub(crate) fn params_and_grads(&mut self) -> [(&mut [f64], &[f64]); 2] {
        self.param_layer_mut()
            .map_or([(&mut [], &[]), (&mut [], &[])], |(w, b, gw, gb)| [(w, &*gw), (b, &*gb)])
    }
}
