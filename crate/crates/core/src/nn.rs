//! Small 1-D convolutional network, written out layer by layer.
//!
//! Forward and backward passes are explicit f64 loops so that analytic
//! gradients can be checked against central finite differences, and so
//! training is bit-reproducible given a seed. Batches are laid out as
//! `(batch, channel, length)` flattened row-major.
//!
//! Training uses `forward_train`, which caches activations and batch
//! statistics; inference uses `forward_eval`, which reads frozen running
//! statistics and touches no state, so it is safe to call concurrently.

use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// 1-D valid convolution (stride 1, no padding).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    /// `weight[((o * in_ch) + i) * kernel + t]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    grad_w: Vec<f64>,
    grad_b: Vec<f64>,
    cache_in: Vec<f64>,
    cache_len: usize,
    cache_batch: usize,
}

impl Conv1d {
    fn new(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_ch * kernel;
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        let weight = (0..out_ch * in_ch * kernel).map(|_| dist.sample(rng)).collect();
        Self {
            in_ch,
            out_ch,
            kernel,
            weight,
            bias: vec![0.0; out_ch],
            grad_w: vec![0.0; out_ch * in_ch * kernel],
            grad_b: vec![0.0; out_ch],
            cache_in: Vec::new(),
            cache_len: 0,
            cache_batch: 0,
        }
    }

    fn out_len(&self, len: usize) -> usize {
        len + 1 - self.kernel
    }

    fn forward(&self, x: &[f64], batch: usize, len: usize, out: &mut Vec<f64>) {
        let out_len = self.out_len(len);
        out.clear();
        out.resize(batch * self.out_ch * out_len, 0.0);
        for b in 0..batch {
            for o in 0..self.out_ch {
                let dst = &mut out[(b * self.out_ch + o) * out_len..][..out_len];
                dst.fill(self.bias[o]);
                for i in 0..self.in_ch {
                    let src = &x[(b * self.in_ch + i) * len..][..len];
                    let w = &self.weight[(o * self.in_ch + i) * self.kernel..][..self.kernel];
                    for (t, &wt) in w.iter().enumerate() {
                        for p in 0..out_len {
                            dst[p] += wt * src[p + t];
                        }
                    }
                }
            }
        }
    }

    fn backward(&mut self, grad_out: &[f64], grad_in: &mut Vec<f64>) {
        let batch = self.cache_batch;
        let len = self.cache_len;
        let out_len = self.out_len(len);
        grad_in.clear();
        grad_in.resize(batch * self.in_ch * len, 0.0);
        for b in 0..batch {
            for o in 0..self.out_ch {
                let g = &grad_out[(b * self.out_ch + o) * out_len..][..out_len];
                self.grad_b[o] += g.iter().sum::<f64>();
                for i in 0..self.in_ch {
                    let src = &self.cache_in[(b * self.in_ch + i) * len..][..len];
                    let w = &self.weight[(o * self.in_ch + i) * self.kernel..][..self.kernel];
                    let gw = &mut self.grad_w[(o * self.in_ch + i) * self.kernel..][..self.kernel];
                    let gi = &mut grad_in[(b * self.in_ch + i) * len..][..len];
                    for t in 0..self.kernel {
                        let mut acc = 0.0;
                        for p in 0..out_len {
                            acc += g[p] * src[p + t];
                            gi[p + t] += g[p] * w[t];
                        }
                        gw[t] += acc;
                    }
                }
            }
        }
    }
}

/// Non-overlapping 1-D max pooling with window = stride.
#[derive(Debug, Clone)]
pub struct MaxPool1d {
    pub stride: usize,
    argmax: Vec<usize>,
    cache_len: usize,
    cache_batch_ch: usize,
}

impl MaxPool1d {
    fn new(stride: usize) -> Self {
        Self { stride, argmax: Vec::new(), cache_len: 0, cache_batch_ch: 0 }
    }

    fn out_len(&self, len: usize) -> usize {
        len / self.stride
    }

    fn forward(&self, x: &[f64], batch_ch: usize, len: usize, out: &mut Vec<f64>, argmax: Option<&mut Vec<usize>>) {
        let out_len = self.out_len(len);
        out.clear();
        out.resize(batch_ch * out_len, 0.0);
        let mut arg = argmax;
        if let Some(a) = arg.as_deref_mut() {
            a.clear();
            a.resize(batch_ch * out_len, 0);
        }
        for c in 0..batch_ch {
            let src = &x[c * len..][..len];
            for p in 0..out_len {
                let start = p * self.stride;
                let mut best = src[start];
                let mut best_i = start;
                for q in start + 1..start + self.stride {
                    if src[q] > best {
                        best = src[q];
                        best_i = q;
                    }
                }
                out[c * out_len + p] = best;
                if let Some(a) = arg.as_deref_mut() {
                    a[c * out_len + p] = best_i;
                }
            }
        }
    }

    fn backward(&self, grad_out: &[f64], grad_in: &mut Vec<f64>) {
        let out_len = self.out_len(self.cache_len);
        grad_in.clear();
        grad_in.resize(self.cache_batch_ch * self.cache_len, 0.0);
        for c in 0..self.cache_batch_ch {
            for p in 0..out_len {
                grad_in[c * self.cache_len + self.argmax[c * out_len + p]] +=
                    grad_out[c * out_len + p];
            }
        }
    }
}

/// Per-channel batch normalization over `(batch, length)`.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub ch: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    grad_gamma: Vec<f64>,
    grad_beta: Vec<f64>,
    cache_in: Vec<f64>,
    cache_mean: Vec<f64>,
    cache_var: Vec<f64>,
    cache_len: usize,
    cache_batch: usize,
}

impl BatchNorm1d {
    fn new(ch: usize) -> Self {
        Self {
            ch,
            gamma: vec![1.0; ch],
            beta: vec![0.0; ch],
            running_mean: vec![0.0; ch],
            running_var: vec![1.0; ch],
            momentum: 0.9,
            eps: 1e-5,
            grad_gamma: vec![0.0; ch],
            grad_beta: vec![0.0; ch],
            cache_in: Vec::new(),
            cache_mean: vec![0.0; ch],
            cache_var: vec![0.0; ch],
            cache_len: 0,
            cache_batch: 0,
        }
    }

    fn forward_train(&mut self, x: &[f64], batch: usize, len: usize, out: &mut Vec<f64>) {
        let m = (batch * len) as f64;
        out.clear();
        out.resize(x.len(), 0.0);
        for c in 0..self.ch {
            let mut mean = 0.0;
            for b in 0..batch {
                let src = &x[(b * self.ch + c) * len..][..len];
                mean += src.iter().sum::<f64>();
            }
            mean /= m;
            let mut var = 0.0;
            for b in 0..batch {
                let src = &x[(b * self.ch + c) * len..][..len];
                var += src.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>();
            }
            var /= m;
            self.cache_mean[c] = mean;
            self.cache_var[c] = var;
            self.running_mean[c] = self.momentum * self.running_mean[c] + (1.0 - self.momentum) * mean;
            self.running_var[c] = self.momentum * self.running_var[c] + (1.0 - self.momentum) * var;
            let inv_std = 1.0 / (var + self.eps).sqrt();
            for b in 0..batch {
                let src = &x[(b * self.ch + c) * len..][..len];
                let dst = &mut out[(b * self.ch + c) * len..][..len];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = self.gamma[c] * (v - mean) * inv_std + self.beta[c];
                }
            }
        }
    }

    fn forward_eval(&self, x: &[f64], batch: usize, len: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(x.len(), 0.0);
        for c in 0..self.ch {
            let inv_std = 1.0 / (self.running_var[c] + self.eps).sqrt();
            let mean = self.running_mean[c];
            for b in 0..batch {
                let src = &x[(b * self.ch + c) * len..][..len];
                let dst = &mut out[(b * self.ch + c) * len..][..len];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = self.gamma[c] * (v - mean) * inv_std + self.beta[c];
                }
            }
        }
    }

    /// Normalize with statistics of this batch, leaving running stats and
    /// caches untouched. Used when scoring mid-training, before the
    /// running estimates have warmed up.
    fn forward_batch_stats(&self, x: &[f64], batch: usize, len: usize, out: &mut Vec<f64>) {
        let m = (batch * len) as f64;
        out.clear();
        out.resize(x.len(), 0.0);
        for c in 0..self.ch {
            let mut mean = 0.0;
            for b in 0..batch {
                mean += x[(b * self.ch + c) * len..][..len].iter().sum::<f64>();
            }
            mean /= m;
            let mut var = 0.0;
            for b in 0..batch {
                let src = &x[(b * self.ch + c) * len..][..len];
                var += src.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>();
            }
            var /= m;
            let inv_std = 1.0 / (var + self.eps).sqrt();
            for b in 0..batch {
                let src = &x[(b * self.ch + c) * len..][..len];
                let dst = &mut out[(b * self.ch + c) * len..][..len];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = self.gamma[c] * (v - mean) * inv_std + self.beta[c];
                }
            }
        }
    }

    fn backward(&mut self, grad_out: &[f64], grad_in: &mut Vec<f64>) {
        let batch = self.cache_batch;
        let len = self.cache_len;
        let m = (batch * len) as f64;
        grad_in.clear();
        grad_in.resize(grad_out.len(), 0.0);
        for c in 0..self.ch {
            let mean = self.cache_mean[c];
            let var = self.cache_var[c];
            let inv_std = 1.0 / (var + self.eps).sqrt();
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for b in 0..batch {
                let src = &self.cache_in[(b * self.ch + c) * len..][..len];
                let g = &grad_out[(b * self.ch + c) * len..][..len];
                for (&gv, &xv) in g.iter().zip(src) {
                    sum_dy += gv;
                    sum_dy_xhat += gv * (xv - mean) * inv_std;
                }
            }
            self.grad_beta[c] += sum_dy;
            self.grad_gamma[c] += sum_dy_xhat;
            // dx = gamma*inv_std/m * (m*dy - sum_dy - xhat * sum_dy_xhat)
            let scale = self.gamma[c] * inv_std / m;
            for b in 0..batch {
                let src = &self.cache_in[(b * self.ch + c) * len..][..len];
                let g = &grad_out[(b * self.ch + c) * len..][..len];
                let dst = &mut grad_in[(b * self.ch + c) * len..][..len];
                for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(src) {
                    let xhat = (xv - mean) * inv_std;
                    *d = scale * (m * gv - sum_dy - xhat * sum_dy_xhat);
                }
            }
        }
    }
}

/// Fully connected layer over flattened features.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_f: usize,
    pub out_f: usize,
    /// `weight[j * in_f + i]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    grad_w: Vec<f64>,
    grad_b: Vec<f64>,
    cache_in: Vec<f64>,
    cache_batch: usize,
}

impl Dense {
    fn new(in_f: usize, out_f: usize, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0, (2.0 / in_f as f64).sqrt()).unwrap();
        Self {
            in_f,
            out_f,
            weight: (0..in_f * out_f).map(|_| dist.sample(rng)).collect(),
            bias: vec![0.0; out_f],
            grad_w: vec![0.0; in_f * out_f],
            grad_b: vec![0.0; out_f],
            cache_in: Vec::new(),
            cache_batch: 0,
        }
    }

    fn forward(&self, x: &[f64], batch: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(batch * self.out_f, 0.0);
        for b in 0..batch {
            let src = &x[b * self.in_f..][..self.in_f];
            let dst = &mut out[b * self.out_f..][..self.out_f];
            for j in 0..self.out_f {
                let w = &self.weight[j * self.in_f..][..self.in_f];
                dst[j] = self.bias[j] + w.iter().zip(src).map(|(&a, &b)| a * b).sum::<f64>();
            }
        }
    }

    fn backward(&mut self, grad_out: &[f64], grad_in: &mut Vec<f64>) {
        let batch = self.cache_batch;
        grad_in.clear();
        grad_in.resize(batch * self.in_f, 0.0);
        for b in 0..batch {
            let src = &self.cache_in[b * self.in_f..][..self.in_f];
            let g = &grad_out[b * self.out_f..][..self.out_f];
            let gi = &mut grad_in[b * self.in_f..][..self.in_f];
            for j in 0..self.out_f {
                self.grad_b[j] += g[j];
                let w = &self.weight[j * self.in_f..][..self.in_f];
                let gw = &mut self.grad_w[j * self.in_f..][..self.in_f];
                for i in 0..self.in_f {
                    gw[i] += g[j] * src[i];
                    gi[i] += g[j] * w[i];
                }
            }
        }
    }
}

/// Network layer variants in execution order.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv1d),
    Pool(MaxPool1d),
    Relu { mask: Vec<bool> },
    Norm(BatchNorm1d),
    Dense(Dense),
}

/// Sequential network over `(channels, length)` activations; dense layers
/// run on the flattened tail.
#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub input_len: usize,
    pub classes: usize,
    /// (channels, length) after each conv/pool stage, tracked at build time.
    shapes: Vec<(usize, usize)>,
}

/// One conv/pool/normalize block description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BlockSpec {
    pub kernel: usize,
    pub out_channels: usize,
    pub pool_stride: usize,
}

impl Network {
    /// Build the block stack + dense head for `input_len` features and
    /// `classes` outputs, validating that every stage keeps length >= 1.
    pub fn build(
        blocks: &[BlockSpec],
        hidden: &[usize],
        input_len: usize,
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Spectral("classifier needs at least 2 classes".into()));
        }
        if input_len == 0 {
            return Err(Error::Spectral("classifier input length must be >= 1".into()));
        }
        let mut layers = Vec::new();
        let mut shapes = Vec::new();
        let mut ch = 1usize;
        let mut len = input_len;
        shapes.push((ch, len));
        for (bi, blk) in blocks.iter().enumerate() {
            if blk.kernel == 0 || blk.out_channels == 0 || blk.pool_stride == 0 {
                return Err(Error::Spectral(format!("block {bi} has a zero-sized field")));
            }
            if len < blk.kernel {
                return Err(Error::Spectral(format!(
                    "block {bi}: conv kernel {} exceeds length {len}",
                    blk.kernel
                )));
            }
            layers.push(Layer::Conv(Conv1d::new(ch, blk.out_channels, blk.kernel, rng)));
            ch = blk.out_channels;
            len = len + 1 - blk.kernel;
            shapes.push((ch, len));
            if len < blk.pool_stride {
                return Err(Error::Spectral(format!(
                    "block {bi}: pool stride {} exceeds length {len} (flattened length would be 0)",
                    blk.pool_stride
                )));
            }
            layers.push(Layer::Pool(MaxPool1d::new(blk.pool_stride)));
            len /= blk.pool_stride;
            shapes.push((ch, len));
            layers.push(Layer::Relu { mask: Vec::new() });
            shapes.push((ch, len));
            layers.push(Layer::Norm(BatchNorm1d::new(ch)));
            shapes.push((ch, len));
        }
        let mut features = ch * len;
        if features == 0 {
            return Err(Error::Spectral("flattened feature length is 0".into()));
        }
        for &h in hidden {
            if h == 0 {
                return Err(Error::Spectral("hidden width must be >= 1".into()));
            }
            layers.push(Layer::Dense(Dense::new(features, h, rng)));
            shapes.push((1, h));
            layers.push(Layer::Relu { mask: Vec::new() });
            shapes.push((1, h));
            features = h;
        }
        // zero-initialized head: logits start uniform, so a dominant class
        // wins within the first few updates instead of fighting the
        // random-init logit spread
        let mut head = Dense::new(features, classes, rng);
        head.weight.fill(0.0);
        layers.push(Layer::Dense(head));
        shapes.push((1, classes));
        Ok(Self { layers, input_len, classes, shapes })
    }

    /// Training forward pass: caches per-layer state for `backward`.
    /// `x` is `(batch, input_len)` flattened.
    pub fn forward_train(&mut self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let mut shape_i = 0usize;
        for layer in self.layers.iter_mut() {
            let (ch, len) = self.shapes[shape_i];
            match layer {
                Layer::Conv(conv) => {
                    conv.cache_in = cur.clone();
                    conv.cache_len = len;
                    conv.cache_batch = batch;
                    conv.forward(&cur, batch, len, &mut next);
                }
                Layer::Pool(pool) => {
                    pool.cache_len = len;
                    pool.cache_batch_ch = batch * ch;
                    let mut arg = std::mem::take(&mut pool.argmax);
                    pool.forward(&cur, batch * ch, len, &mut next, Some(&mut arg));
                    pool.argmax = arg;
                }
                Layer::Relu { mask } => {
                    mask.clear();
                    mask.extend(cur.iter().map(|&v| v > 0.0));
                    next.clear();
                    next.extend(cur.iter().map(|&v| v.max(0.0)));
                }
                Layer::Norm(bn) => {
                    bn.cache_in = cur.clone();
                    bn.cache_len = len;
                    bn.cache_batch = batch;
                    bn.forward_train(&cur, batch, len, &mut next);
                }
                Layer::Dense(dense) => {
                    dense.cache_in = cur.clone();
                    dense.cache_batch = batch;
                    dense.forward(&cur, batch, &mut next);
                }
            }
            std::mem::swap(&mut cur, &mut next);
            shape_i += 1;
        }
        cur
    }

    /// Inference forward pass using frozen batch-norm running statistics.
    /// Immutable, so callers may share the network across threads.
    pub fn forward_eval(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.forward_immutable(x, batch, false)
    }

    /// Forward pass normalizing with the batch's own statistics, without
    /// touching any state. Only meaningful for whole-set scoring during
    /// training, where running estimates are still warming up.
    pub fn forward_with_batch_stats(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.forward_immutable(x, batch, true)
    }

    fn forward_immutable(&self, x: &[f64], batch: usize, batch_stats: bool) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let mut shape_i = 0usize;
        for layer in &self.layers {
            let (ch, len) = self.shapes[shape_i];
            match layer {
                Layer::Conv(conv) => conv.forward(&cur, batch, len, &mut next),
                Layer::Pool(pool) => pool.forward(&cur, batch * ch, len, &mut next, None),
                Layer::Relu { .. } => {
                    next.clear();
                    next.extend(cur.iter().map(|&v| v.max(0.0)));
                }
                Layer::Norm(bn) => {
                    if batch_stats {
                        bn.forward_batch_stats(&cur, batch, len, &mut next)
                    } else {
                        bn.forward_eval(&cur, batch, len, &mut next)
                    }
                }
                Layer::Dense(dense) => dense.forward(&cur, batch, &mut next),
            }
            std::mem::swap(&mut cur, &mut next);
            shape_i += 1;
        }
        cur
    }

    /// Backpropagate `grad_logits` through the cached forward pass,
    /// accumulating parameter gradients.
    pub fn backward(&mut self, grad_logits: &[f64]) {
        let mut cur = grad_logits.to_vec();
        let mut next = Vec::new();
        for layer in self.layers.iter_mut().rev() {
            match layer {
                Layer::Conv(conv) => conv.backward(&cur, &mut next),
                Layer::Pool(pool) => pool.backward(&cur, &mut next),
                Layer::Relu { mask } => {
                    next.clear();
                    next.extend(cur.iter().zip(mask.iter()).map(|(&g, &m)| if m { g } else { 0.0 }));
                }
                Layer::Norm(bn) => bn.backward(&cur, &mut next),
                Layer::Dense(dense) => dense.backward(&cur, &mut next),
            }
            std::mem::swap(&mut cur, &mut next);
        }
    }

    pub fn zero_grad(&mut self) {
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::Conv(c) => {
                    c.grad_w.fill(0.0);
                    c.grad_b.fill(0.0);
                }
                Layer::Norm(bn) => {
                    bn.grad_gamma.fill(0.0);
                    bn.grad_beta.fill(0.0);
                }
                Layer::Dense(d) => {
                    d.grad_w.fill(0.0);
                    d.grad_b.fill(0.0);
                }
                _ => {}
            }
        }
    }

    pub fn sgd_step(&mut self, lr: f64) {
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::Conv(c) => {
                    for (w, g) in c.weight.iter_mut().zip(&c.grad_w) {
                        *w -= lr * g;
                    }
                    for (b, g) in c.bias.iter_mut().zip(&c.grad_b) {
                        *b -= lr * g;
                    }
                }
                Layer::Norm(bn) => {
                    for (w, g) in bn.gamma.iter_mut().zip(&bn.grad_gamma) {
                        *w -= lr * g;
                    }
                    for (b, g) in bn.beta.iter_mut().zip(&bn.grad_beta) {
                        *b -= lr * g;
                    }
                }
                Layer::Dense(d) => {
                    for (w, g) in d.weight.iter_mut().zip(&d.grad_w) {
                        *w -= lr * g;
                    }
                    for (b, g) in d.bias.iter_mut().zip(&d.grad_b) {
                        *b -= lr * g;
                    }
                }
                _ => {}
            }
        }
    }

    /// Named parameter vectors of layer `li` as (params, grads) pairs.
    /// Used by the finite-difference gradient check and the model writer.
    pub fn param_vectors(&self, li: usize) -> Vec<(&str, &[f64], &[f64])> {
        match &self.layers[li] {
            Layer::Conv(c) => vec![("weight", &c.weight[..], &c.grad_w[..]), ("bias", &c.bias[..], &c.grad_b[..])],
            Layer::Norm(bn) => vec![
                ("gamma", &bn.gamma[..], &bn.grad_gamma[..]),
                ("beta", &bn.beta[..], &bn.grad_beta[..]),
            ],
            Layer::Dense(d) => vec![("weight", &d.weight[..], &d.grad_w[..]), ("bias", &d.bias[..], &d.grad_b[..])],
            _ => vec![],
        }
    }

    /// Mutable access to parameter vector `vi` of layer `li`, matching the
    /// order of [`Network::param_vectors`].
    pub fn param_vector_mut(&mut self, li: usize, vi: usize) -> &mut [f64] {
        match &mut self.layers[li] {
            Layer::Conv(c) => [&mut c.weight, &mut c.bias][vi],
            Layer::Norm(bn) => [&mut bn.gamma, &mut bn.beta][vi],
            Layer::Dense(d) => [&mut d.weight, &mut d.bias][vi],
            _ => panic!("layer {li} has no parameters"),
        }
    }
}

/// Row-wise softmax of logits.
pub fn softmax(logits: &[f64], batch: usize, classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for b in 0..batch {
        let row = &logits[b * classes..][..classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (o, &l) in out[b * classes..][..classes].iter_mut().zip(row) {
            *o = (l - max).exp();
            denom += *o;
        }
        for o in out[b * classes..][..classes].iter_mut() {
            *o /= denom;
        }
    }
    out
}

/// Mean cross-entropy of logits against integer targets, plus the gradient
/// with respect to the logits.
pub fn cross_entropy_with_grad(
    logits: &[f64],
    targets: &[usize],
    classes: usize,
) -> (f64, Vec<f64>) {
    let batch = targets.len();
    let probs = softmax(logits, batch, classes);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (b, &t) in targets.iter().enumerate() {
        loss -= probs[b * classes + t].max(1e-300).ln();
        grad[b * classes + t] -= 1.0;
    }
    let inv = 1.0 / batch as f64;
    for g in grad.iter_mut() {
        *g *= inv;
    }
    (loss * inv, grad)
}

/// Max relative error between analytic and central finite-difference
/// gradients, probing up to `probes_per_vector` entries of every parameter
/// vector of every layer.
pub fn gradient_check(
    net: &mut Network,
    x: &[f64],
    targets: &[usize],
    probes_per_vector: usize,
) -> f64 {
    let batch = targets.len();
    let classes = net.classes;

    net.zero_grad();
    let logits = net.forward_train(x, batch);
    let (_, grad) = cross_entropy_with_grad(&logits, targets, classes);
    net.backward(&grad);

    // snapshot analytic grads before probing mutates caches
    let mut analytic: Vec<Vec<Vec<f64>>> = Vec::new();
    for li in 0..net.layers.len() {
        analytic.push(net.param_vectors(li).iter().map(|(_, _, g)| g.to_vec()).collect());
    }

    let h = 1e-5;
    let mut worst = 0.0f64;
    for li in 0..net.layers.len() {
        let n_vecs = net.param_vectors(li).len();
        for vi in 0..n_vecs {
            let len = net.param_vectors(li)[vi].1.len();
            let step = (len / probes_per_vector).max(1);
            for idx in (0..len).step_by(step) {
                let orig = net.param_vector_mut(li, vi)[idx];
                net.param_vector_mut(li, vi)[idx] = orig + h;
                let lp = {
                    let logits = net.forward_train(x, batch);
                    cross_entropy_with_grad(&logits, targets, classes).0
                };
                net.param_vector_mut(li, vi)[idx] = orig - h;
                let lm = {
                    let logits = net.forward_train(x, batch);
                    cross_entropy_with_grad(&logits, targets, classes).0
                };
                net.param_vector_mut(li, vi)[idx] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let a = analytic[li][vi][idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    worst
}
