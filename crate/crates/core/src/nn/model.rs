use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::loss::LossSpec;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Width of the first dense layer of the classification head.
pub const HIDDEN_UNITS: usize = 320;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "activation", content = "classes")]
pub enum OutputKind {
    /// Dense(n) + softmax.
    Softmax(usize),
    /// Dense(1) + sigmoid; expanded to two class probabilities on prediction.
    Sigmoid,
}

impl OutputKind {
    pub fn out_dim(self) -> usize {
        match self {
            OutputKind::Softmax(n) => n,
            OutputKind::Sigmoid => 1,
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            OutputKind::Softmax(n) => n,
            OutputKind::Sigmoid => 2,
        }
    }

    pub fn for_classes(n_classes: usize) -> Self {
        if n_classes == 2 {
            OutputKind::Sigmoid
        } else {
            OutputKind::Softmax(n_classes)
        }
    }
}

/// Architecture of a miniature backbone plus the classification head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub input_height: usize,
    pub input_width: usize,
    /// Output channels of each conv3x3 + ReLU + maxpool2x2 block.
    pub channels: Vec<usize>,
    pub hidden: usize,
    pub dropout: f64,
    pub output: OutputKind,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(name: &str, input: (usize, usize), channels: Vec<usize>, output: OutputKind, init_seed: u64) -> Self {
        ModelConfig {
            name: name.to_string(),
            input_height: input.0,
            input_width: input.1,
            channels,
            hidden: HIDDEN_UNITS,
            dropout: 0.2,
            output,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::invalid(format!("{}: backbone needs at least one block with non-zero channels", self.name)));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden layer width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {}", self.dropout)));
        }
        match self.output {
            OutputKind::Softmax(n) if n < 2 => {
                return Err(Error::invalid("softmax head needs at least two classes"));
            }
            _ => {}
        }
        let (mut h, mut w) = (self.input_height, self.input_width);
        for (i, _) in self.channels.iter().enumerate() {
            if h < 2 || w < 2 {
                return Err(Error::invalid(format!(
                    "{}: block {i} receives a {h}x{w} map, too small to pool",
                    self.name
                )));
            }
            h /= 2;
            w /= 2;
        }
        Ok(())
    }

    /// Shapes of every parameter tensor in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut in_c = 1;
        for &c in &self.channels {
            shapes.push(vec![c, in_c, 3, 3]);
            shapes.push(vec![c]);
            in_c = c;
        }
        shapes.push(vec![in_c, self.hidden]);
        shapes.push(vec![self.hidden]);
        shapes.push(vec![self.hidden, self.output.out_dim()]);
        shapes.push(vec![self.output.out_dim()]);
        shapes
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.channels.len() {
            names.push(format!("conv{i}.weight"));
            names.push(format!("conv{i}.bias"));
        }
        names.extend(["hidden.weight", "hidden.bias", "output.weight", "output.bias"].map(String::from));
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Miniature CNN: conv blocks → global average pool → dense(320, ReLU) →
/// dropout → dense(out) with softmax or sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Tensor>,
    generation: u64,
}

/// Intermediates of one sample's forward pass.
#[derive(Debug, Clone)]
struct SampleCache {
    /// Input of each conv block, channel-major `[c][h][w]`.
    block_inputs: Vec<Vec<f64>>,
    /// Post-ReLU conv output of each block.
    activations: Vec<Vec<f64>>,
    /// Flat index into `activations[b]` chosen by each pooled cell.
    pool_argmax: Vec<Vec<usize>>,
    pooled: Vec<f64>,
    pooled_dims: (usize, usize),
    gap: Vec<f64>,
    hidden_pre: Vec<f64>,
    /// Dropout scale per hidden unit (0 or 1/keep); empty in eval mode.
    mask: Vec<f64>,
    hidden_out: Vec<f64>,
}

/// Forward-pass state consumed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    samples: Vec<SampleCache>,
    generation: u64,
    mode: Mode,
}

impl Cache {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// On/off state of every ReLU and the winner of every pooling window.
    /// The network is linear in each parameter while this stays fixed.
    pub(crate) fn kink_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for s in &self.samples {
            for (a, arg) in s.activations.iter().zip(&s.pool_argmax) {
                out.extend(a.iter().map(|&v| usize::from(v > 0.0)));
                out.extend(arg);
            }
            out.extend(s.hidden_pre.iter().map(|&v| usize::from(v > 0.0)));
        }
        out
    }
}

fn conv_same(input: &[f64], in_c: usize, h: usize, w: usize, weight: &[f64], bias: &[f64], out_c: usize) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; out_c * plane];
    for o in 0..out_c {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..in_c {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let k = weight[((o * in_c + i) * 3 + ky) * 3 + kx];
                    let (y0, y1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += k * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and, when `d_input` is given, the
/// gradient with respect to the block input.
#[allow(clippy::too_many_arguments)]
fn conv_same_backward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    out_c: usize,
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let plane = h * w;
    for o in 0..out_c {
        let g = &d_out[o * plane..(o + 1) * plane];
        d_bias[o] += g.iter().sum::<f64>();
        for i in 0..in_c {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((o * in_c + i) * 3 + ky) * 3 + kx;
                    let (y0, y1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let gr = &g[y * w + x0..y * w + x1];
                        let sr = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        acc += gr.iter().zip(sr).map(|(a, b)| a * b).sum::<f64>();
                    }
                    d_weight[widx] += acc;
                    if let Some(di) = d_input.as_deref_mut() {
                        let k = weight[widx];
                        let dplane = &mut di[i * plane..(i + 1) * plane];
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let gr = &g[y * w + x0..y * w + x1];
                            let dr = &mut dplane[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            for (dv, gv) in dr.iter_mut().zip(gr) {
                                *dv += k * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn max_pool(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ph * pw);
    let mut arg = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        let base = ch * h * w;
        for py in 0..ph {
            for px in 0..pw {
                let mut best = base + 2 * py * w + 2 * px;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * py + dy) * w + 2 * px + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Inverted-dropout multipliers: `1 / (1 - rate)` with probability
/// `1 - rate`, otherwise 0.
pub fn dropout_mask(n: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Model {
    /// Fan-in scaled uniform weights drawn from `config.init_seed`; zero biases.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(config.init_seed);
        let params = config
            .param_shapes()
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    return Tensor::zeros(&shape);
                }
                let fan_in: usize = if shape.len() == 4 { shape[1] * 9 } else { shape[0] };
                let bound = (6.0 / fan_in as f64).sqrt();
                let mut t = Tensor::zeros(&shape);
                t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-bound..bound));
                t
            })
            .collect();
        Ok(Model {
            config,
            params,
            generation: 0,
        })
    }

    /// Rebuilds a model from stored parameters.
    pub fn from_parts(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Format(format!("expected {} parameter tensors, got {}", shapes.len(), params.len())));
        }
        for ((name, shape), p) in config.param_names().iter().zip(&shapes).zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::shape(name.clone(), format!("{shape:?}"), format!("{:?}", p.shape())));
            }
        }
        Ok(Model {
            config,
            params,
            generation: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.config.output.n_classes()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable access invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        self.generation += 1;
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let c = &self.config;
        let expected = [c.input_height, c.input_width, 1];
        match batch.shape() {
            [b, rest @ ..] if rest == expected && *b > 0 => Ok(*b),
            other => Err(Error::shape(
                format!("{}/input", c.name),
                format!("(B, {}, {}, 1) with B > 0", c.input_height, c.input_width),
                format!("{other:?}"),
            )),
        }
    }

    fn forward_sample(&self, input: &[f64], mask: Vec<f64>) -> (Vec<f64>, SampleCache) {
        let c = &self.config;
        let n_blocks = c.channels.len();
        let (mut h, mut w) = (c.input_height, c.input_width);
        let mut in_c = 1;
        let mut x = input.to_vec();
        let mut block_inputs = Vec::with_capacity(n_blocks);
        let mut activations = Vec::with_capacity(n_blocks);
        let mut pool_argmax = Vec::with_capacity(n_blocks);
        for (b, &out_c) in c.channels.iter().enumerate() {
            let mut a = conv_same(&x, in_c, h, w, self.params[2 * b].data(), self.params[2 * b + 1].data(), out_c);
            a.iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v = 0.0
                }
            });
            let (pooled, arg) = max_pool(&a, out_c, h, w);
            block_inputs.push(std::mem::replace(&mut x, pooled));
            activations.push(a);
            pool_argmax.push(arg);
            in_c = out_c;
            h /= 2;
            w /= 2;
        }
        let plane = (h * w) as f64;
        let gap: Vec<f64> = x.chunks(h * w).map(|ch| ch.iter().sum::<f64>() / plane).collect();

        let hw = self.params[2 * n_blocks].data();
        let hb = self.params[2 * n_blocks + 1].data();
        let mut hidden_pre = hb.to_vec();
        for (i, &g) in gap.iter().enumerate() {
            for (acc, &wv) in hidden_pre.iter_mut().zip(&hw[i * c.hidden..(i + 1) * c.hidden]) {
                *acc += g * wv;
            }
        }
        let mut hidden_out: Vec<f64> = hidden_pre.iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect();
        if !mask.is_empty() {
            hidden_out.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        }

        let out_dim = c.output.out_dim();
        let ow = self.params[2 * n_blocks + 2].data();
        let mut logits = self.params[2 * n_blocks + 3].data().to_vec();
        for (j, &z) in hidden_out.iter().enumerate() {
            if z != 0.0 {
                for (acc, &wv) in logits.iter_mut().zip(&ow[j * out_dim..(j + 1) * out_dim]) {
                    *acc += z * wv;
                }
            }
        }
        let y = match c.output {
            OutputKind::Softmax(_) => softmax(&logits),
            OutputKind::Sigmoid => vec![sigmoid(logits[0])],
        };
        let cache = SampleCache {
            block_inputs,
            activations,
            pool_argmax,
            pooled: x,
            pooled_dims: (h, w),
            gap,
            hidden_pre,
            mask,
            hidden_out,
        };
        (y, cache)
    }

    /// Runs a `(B, H, W, 1)` batch. In train mode dropout masks are drawn
    /// from `rng` (inverted dropout); eval mode ignores `rng`.
    pub fn forward(&self, batch: &Tensor, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Cache)> {
        let b = self.check_batch(batch)?;
        let mut out = Vec::with_capacity(b * self.config.output.out_dim());
        let mut samples = Vec::with_capacity(b);
        for i in 0..b {
            let mask = match mode {
                Mode::Train if self.config.dropout > 0.0 => dropout_mask(self.config.hidden, self.config.dropout, rng),
                _ => Vec::new(),
            };
            let (y, cache) = self.forward_sample(batch.outer(i), mask);
            out.extend(y);
            samples.push(cache);
        }
        let y = Tensor::new(vec![b, self.config.output.out_dim()], out)?;
        Ok((
            y,
            Cache {
                samples,
                generation: self.generation,
                mode,
            },
        ))
    }

    /// Deterministic eval-mode outputs without keeping a cache.
    pub fn infer(&self, batch: &Tensor) -> Result<Tensor> {
        let b = self.check_batch(batch)?;
        let mut out = Vec::with_capacity(b * self.config.output.out_dim());
        for i in 0..b {
            out.extend(self.forward_sample(batch.outer(i), Vec::new()).0);
        }
        Tensor::new(vec![b, self.config.output.out_dim()], out)
    }

    /// Exact gradients of the mean batch loss, one tensor per parameter.
    pub fn backward(&self, cache: &Cache, y: &Tensor, labels: &[usize], spec: &LossSpec) -> Result<Vec<Tensor>> {
        if cache.generation != self.generation {
            return Err(Error::invalid("stale forward cache: parameters changed since the forward pass"));
        }
        if cache.samples.len() != labels.len() || y.shape().first() != Some(&labels.len()) {
            return Err(Error::invalid(format!(
                "cache holds {} samples, outputs {:?}, but {} labels were given",
                cache.samples.len(),
                y.shape(),
                labels.len()
            )));
        }
        spec.check_head(self.config.output)?;
        let d_logits = spec.output_gradient(y, labels)?;

        let c = &self.config;
        let n_blocks = c.channels.len();
        let out_dim = c.output.out_dim();
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();

        for (s, dl) in cache.samples.iter().zip(d_logits.chunks(out_dim)) {
            // output dense
            {
                let (gw, rest) = grads[2 * n_blocks + 2..].split_at_mut(1);
                let gw = gw[0].data_mut();
                for (j, &z) in s.hidden_out.iter().enumerate() {
                    if z != 0.0 {
                        for (g, &d) in gw[j * out_dim..(j + 1) * out_dim].iter_mut().zip(dl) {
                            *g += z * d;
                        }
                    }
                }
                rest[0].data_mut().iter_mut().zip(dl).for_each(|(g, d)| *g += d);
            }
            let ow = self.params[2 * n_blocks + 2].data();
            let mut d_hidden: Vec<f64> = (0..c.hidden)
                .map(|j| ow[j * out_dim..(j + 1) * out_dim].iter().zip(dl).map(|(w, d)| w * d).sum())
                .collect();
            if !s.mask.is_empty() {
                d_hidden.iter_mut().zip(&s.mask).for_each(|(d, m)| *d *= m);
            }
            d_hidden
                .iter_mut()
                .zip(&s.hidden_pre)
                .for_each(|(d, &pre)| if pre <= 0.0 { *d = 0.0 });

            // hidden dense
            let hw = self.params[2 * n_blocks].data();
            let mut d_gap = vec![0.0; s.gap.len()];
            {
                let gw = grads[2 * n_blocks].data_mut();
                for (i, &g) in s.gap.iter().enumerate() {
                    let row = &mut gw[i * c.hidden..(i + 1) * c.hidden];
                    for (gv, &d) in row.iter_mut().zip(&d_hidden) {
                        *gv += g * d;
                    }
                    d_gap[i] = hw[i * c.hidden..(i + 1) * c.hidden].iter().zip(&d_hidden).map(|(w, d)| w * d).sum();
                }
                grads[2 * n_blocks + 1].data_mut().iter_mut().zip(&d_hidden).for_each(|(g, d)| *g += d);
            }

            // global average pool
            let (ph, pw) = s.pooled_dims;
            let plane = ph * pw;
            let mut d_x: Vec<f64> = d_gap
                .iter()
                .flat_map(|&d| std::iter::repeat_n(d / plane as f64, plane))
                .collect();
            debug_assert_eq!(d_x.len(), s.pooled.len());

            // conv blocks, last to first
            let mut dims = Vec::with_capacity(n_blocks);
            {
                let (mut hh, mut ww) = (c.input_height, c.input_width);
                for _ in 0..n_blocks {
                    dims.push((hh, ww));
                    hh /= 2;
                    ww /= 2;
                }
            }
            for b in (0..n_blocks).rev() {
                let (h, w) = dims[b];
                let out_c = c.channels[b];
                let in_c = if b == 0 { 1 } else { c.channels[b - 1] };
                let act = &s.activations[b];
                let mut d_act = vec![0.0; act.len()];
                for (&idx, &d) in s.pool_argmax[b].iter().zip(&d_x) {
                    if act[idx] > 0.0 {
                        d_act[idx] += d;
                    }
                }
                let (head, tail) = grads.split_at_mut(2 * b + 1);
                let gw = head[2 * b].data_mut();
                let gb = tail[0].data_mut();
                if b > 0 {
                    let mut d_in = vec![0.0; in_c * h * w];
                    conv_same_backward(
                        &s.block_inputs[b],
                        in_c,
                        h,
                        w,
                        self.params[2 * b].data(),
                        out_c,
                        &d_act,
                        gw,
                        gb,
                        Some(&mut d_in),
                    );
                    d_x = d_in;
                } else {
                    conv_same_backward(&s.block_inputs[b], in_c, h, w, self.params[2 * b].data(), out_c, &d_act, gw, gb, None);
                }
            }
        }
        Ok(grads)
    }

    /// Class probabilities, `N x n_classes`; sigmoid heads expand to `[1-p, p]`.
    pub fn predict_proba(&self, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        let mut rows = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(64) {
            let y = self.infer(&Tensor::stack(chunk)?)?;
            for i in 0..chunk.len() {
                let r = y.outer(i);
                rows.push(match self.config.output {
                    OutputKind::Softmax(_) => r.to_vec(),
                    OutputKind::Sigmoid => expand_binary(r[0]).to_vec(),
                });
            }
        }
        Ok(rows)
    }
}

pub fn expand_binary(p: f64) -> [f64; 2] {
    [1.0 - p, p]
}
