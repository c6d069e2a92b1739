//! Sequential networks: a list of [`LayerSpec`]s compiled into primitive
//! ops, with a recorded tape for reverse-mode differentiation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::conv::{conv_backward, conv_forward, conv_t_backward, conv_t_forward, gemm, ConvGeom};
use super::layers::{Activation, LayerKind, LayerSpec, Padding};
use super::params::{ParamId, ParameterStore};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are updated.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Serializable description of a network: per-item input shape and layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone)]
enum OpKind {
    Dense { w: ParamId, b: ParamId, inp: usize, out: usize },
    Conv { w: ParamId, b: ParamId, geom: ConvGeom },
    ConvT { w: ParamId, b: ParamId, geom: ConvGeom },
    BatchNorm { gamma: ParamId, beta: ParamId, mean: ParamId, var: ParamId, channels: usize },
    Relu,
    Tanh,
    MaxPool { c: usize, hw: [usize; 2], size: usize },
    AvgPool { c: usize, hw: [usize; 2], size: usize },
    Reshape,
    Scale(f32),
}

#[derive(Debug, Clone)]
struct Op {
    kind: OpKind,
    layer: usize,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
}

#[derive(Debug, Clone)]
enum Cache<T: Scalar> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    Bn { xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    ArgMax(Vec<u32>),
    Nothing,
}

#[derive(Debug, Clone)]
struct Tape<T: Scalar> {
    caches: Vec<Cache<T>>,
    batch: usize,
}

#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    spec: GraphSpec,
    ops: Vec<Op>,
    pub params: ParameterStore<T>,
    tape: Option<Tape<T>>,
}

/// Samples in f32 so that both precisions get identical initial weights.
fn uniform<T: Scalar>(rng: &mut Rng, n: usize, limit: f32) -> Vec<T> {
    (0..n).map(|_| T::of(rng.random_range(-limit..=limit) as f64)).collect()
}

fn init_limit(activation: Activation, fan_in: usize, fan_out: usize) -> f32 {
    match activation {
        Activation::Relu => (6.0 / fan_in as f32).sqrt(),
        Activation::Tanh | Activation::None => (6.0 / (fan_in + fan_out) as f32).sqrt(),
    }
}

impl<T: Scalar> Network<T> {
    /// Compiles `spec`, creating parameters named `{prefix}{layer}.{part}`.
    pub fn new(spec: GraphSpec, prefix: &str, rng: &mut Rng) -> Result<Self> {
        let mut params = ParameterStore::new();
        let mut ops = Vec::new();
        let mut shape = spec.input_shape.clone();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape("input", format!("invalid input shape {shape:?}")));
        }
        for (li, layer) in spec.layers.iter().enumerate() {
            let ctx = |m: String| Error::shape(format!("layer {li} ({:?})", layer.kind), m);
            let name = |part: &str| format!("{prefix}{li}.{part}");
            if layer.batch_norm {
                let c = shape[0];
                let gamma = params.add(name("bn.gamma"), Tensor::filled(&[c], T::one()), true)?;
                let beta = params.add(name("bn.beta"), Tensor::zeros(&[c]), true)?;
                let mean = params.add(name("bn.running_mean"), Tensor::zeros(&[c]), false)?;
                let var = params.add(name("bn.running_var"), Tensor::filled(&[c], T::one()), false)?;
                ops.push(Op {
                    kind: OpKind::BatchNorm { gamma, beta, mean, var, channels: c },
                    layer: li,
                    in_shape: shape.clone(),
                    out_shape: shape.clone(),
                });
            }
            let in_shape = shape.clone();
            let act = layer.activation;
            let kind = match &layer.kind {
                LayerKind::Dense { units } => {
                    if shape.len() != 1 {
                        return Err(ctx(format!("dense expects a flat input, got {shape:?}")));
                    }
                    let inp = shape[0];
                    let lim = init_limit(act, inp, *units);
                    let w = params.add(
                        name("w"),
                        Tensor::from_vec(&[inp, *units], uniform(rng, inp * units, lim))?,
                        true,
                    )?;
                    let b = params.add(name("b"), Tensor::zeros(&[*units]), true)?;
                    shape = vec![*units];
                    OpKind::Dense { w, b, inp, out: *units }
                }
                LayerKind::Conv2d { filters, kernel, stride, padding } => {
                    if shape.len() != 3 {
                        return Err(ctx(format!("conv2d expects [C, H, W], got {shape:?}")));
                    }
                    let geom = ConvGeom::new(
                        shape[0],
                        [shape[1], shape[2]],
                        *filters,
                        [*kernel, *kernel],
                        [*stride, *stride],
                        *padding,
                    );
                    let (w, b) = conv_params(&mut params, &name, &geom, act, rng)?;
                    shape = vec![*filters, geom.out_hw[0], geom.out_hw[1]];
                    OpKind::Conv { w, b, geom }
                }
                LayerKind::Conv1d { filters, kernel, stride, padding } => {
                    if shape.len() != 2 {
                        return Err(ctx(format!("conv1d expects [C, L], got {shape:?}")));
                    }
                    let geom = ConvGeom::new(shape[0], [1, shape[1]], *filters, [1, *kernel], [1, *stride], *padding);
                    let (w, b) = conv_params(&mut params, &name, &geom, act, rng)?;
                    shape = vec![*filters, geom.out_hw[1]];
                    OpKind::Conv { w, b, geom }
                }
                LayerKind::ConvTranspose2d { filters, kernel, stride, output_size } => {
                    if shape.len() != 3 {
                        return Err(ctx(format!("transposed conv2d expects [C, H, W], got {shape:?}")));
                    }
                    let geom = ConvGeom::new(
                        *filters,
                        *output_size,
                        shape[0],
                        [*kernel, *kernel],
                        [*stride, *stride],
                        Padding::Same,
                    );
                    if geom.out_hw != [shape[1], shape[2]] {
                        return Err(ctx(format!(
                            "output size {output_size:?} with stride {stride} does not invert input {:?}",
                            &shape[1..]
                        )));
                    }
                    let (w, b) = conv_t_params(&mut params, &name, &geom, act, stride * stride, rng)?;
                    shape = vec![*filters, output_size[0], output_size[1]];
                    OpKind::ConvT { w, b, geom }
                }
                LayerKind::ConvTranspose1d { filters, kernel, stride, output_len, padding } => {
                    if shape.len() != 2 {
                        return Err(ctx(format!("transposed conv1d expects [C, L], got {shape:?}")));
                    }
                    let geom = ConvGeom::new(*filters, [1, *output_len], shape[0], [1, *kernel], [1, *stride], *padding);
                    if geom.out_hw[1] != shape[1] {
                        return Err(ctx(format!(
                            "output length {output_len} with stride {stride} does not invert input {}",
                            shape[1]
                        )));
                    }
                    let (w, b) = conv_t_params(&mut params, &name, &geom, act, *stride, rng)?;
                    shape = vec![*filters, *output_len];
                    OpKind::ConvT { w, b, geom }
                }
                LayerKind::MaxPool2d { size } | LayerKind::AvgPool2d { size } => {
                    if shape.len() != 3 || *size == 0 || shape[1] < *size || shape[2] < *size {
                        return Err(ctx(format!("pooling {size}x{size} cannot apply to {shape:?}")));
                    }
                    let (c, hw) = (shape[0], [shape[1], shape[2]]);
                    shape = vec![c, hw[0] / size, hw[1] / size];
                    if matches!(layer.kind, LayerKind::MaxPool2d { .. }) {
                        OpKind::MaxPool { c, hw, size: *size }
                    } else {
                        OpKind::AvgPool { c, hw, size: *size }
                    }
                }
                LayerKind::Flatten => {
                    shape = vec![shape.iter().product()];
                    OpKind::Reshape
                }
                LayerKind::Reshape { shape: to } => {
                    if to.iter().product::<usize>() != shape.iter().product::<usize>() {
                        return Err(ctx(format!("cannot reshape {shape:?} into {to:?}")));
                    }
                    shape = to.clone();
                    OpKind::Reshape
                }
                LayerKind::Scale { factor } => OpKind::Scale(*factor),
            };
            ops.push(Op {
                kind,
                layer: li,
                in_shape,
                out_shape: shape.clone(),
            });
            let act_kind = match act {
                Activation::None => None,
                Activation::Relu => Some(OpKind::Relu),
                Activation::Tanh => Some(OpKind::Tanh),
            };
            if let Some(kind) = act_kind {
                ops.push(Op {
                    kind,
                    layer: li,
                    in_shape: shape.clone(),
                    out_shape: shape.clone(),
                });
            }
        }
        Ok(Self {
            spec,
            ops,
            params,
            tape: None,
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.ops.last().map_or(&self.spec.input_shape, |o| &o.out_shape)
    }

    /// Per-item output shape after each layer.
    pub fn layer_output_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.spec.layers.len()];
        for op in &self.ops {
            out[op.layer] = op.out_shape.clone();
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params.zero_grad();
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    pub fn clear_tape(&mut self) {
        self.tape = None;
    }

    /// SHA-256 over parameter names and values, in creation order.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in self.params.iter() {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        let s = x.shape();
        if s.len() != self.spec.input_shape.len() + 1 || s[1..] != self.spec.input_shape[..] || s[0] == 0 {
            return Err(Error::shape(
                "layer 0 input",
                format!("expected [N, {:?}], got {s:?}", self.spec.input_shape),
            ));
        }
        Ok(s[0])
    }

    /// Evaluation-mode forward pass without recording a tape.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, _, _) = self.run(x, Mode::Eval, false)?;
        Ok(y)
    }

    /// Forward pass in either mode with no tape and no state change.
    pub fn apply(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (y, _, _) = self.run(x, mode, false)?;
        Ok(y)
    }

    /// Forward pass that records a tape for [`backward`](Self::backward).
    /// In train mode, batch-norm running statistics are updated.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (y, caches, stats) = self.run(x, mode, true)?;
        for (id, values) in stats {
            let p = self.params.get_mut(id);
            for (r, v) in p.value.data_mut().iter_mut().zip(values) {
                *r = T::of(BN_MOMENTUM) * *r + T::of(1.0 - BN_MOMENTUM) * v;
            }
        }
        self.tape = Some(Tape {
            caches,
            batch: x.batch(),
        });
        Ok(y)
    }

    /// Replaces batch-norm running statistics by the equal-weight average of
    /// the train-mode batch statistics over `batches`. The exponential
    /// average starts from (0, 1) and lags badly when feature variances are
    /// tiny, as with sparse occupancy images. Returns the number of batches.
    pub fn recalibrate_batch_norm(&mut self, batches: impl IntoIterator<Item = Tensor<T>>) -> Result<usize> {
        let mut sums: Vec<(ParamId, Vec<f64>)> = Vec::new();
        let mut count = 0usize;
        for x in batches {
            let (_, _, stats) = self.run(&x, Mode::Train, false)?;
            if sums.is_empty() {
                sums = stats.iter().map(|(id, v)| (*id, vec![0.0; v.len()])).collect();
            }
            for ((_, acc), (_, v)) in sums.iter_mut().zip(&stats) {
                acc.iter_mut().zip(v).for_each(|(a, b)| *a += b.f64());
            }
            count += 1;
        }
        for (id, acc) in sums {
            let p = self.params.get_mut(id);
            for (r, a) in p.value.data_mut().iter_mut().zip(acc) {
                *r = T::of(a / count as f64);
            }
        }
        Ok(count)
    }

    #[allow(clippy::type_complexity)]
    fn run(&self, x: &Tensor<T>, mode: Mode, record: bool) -> Result<(Tensor<T>, Vec<Cache<T>>, Vec<(ParamId, Vec<T>)>)> {
        let n = self.check_input(x)?;
        let mut caches = Vec::with_capacity(if record { self.ops.len() } else { 0 });
        let mut stats = Vec::new();
        let mut cur = x.clone();
        for op in &self.ops {
            let mut out_shape = vec![n];
            out_shape.extend_from_slice(&op.out_shape);
            let p = &self.params;
            let (y, cache) = match &op.kind {
                OpKind::Dense { w, b, inp, out } => {
                    let mut y = vec![T::zero(); n * out];
                    for row in y.chunks_mut(*out) {
                        row.copy_from_slice(p.get(*b).value.data());
                    }
                    gemm(n, *inp, *out, cur.data(), (*inp as isize, 1), p.get(*w).value.data(), (*out as isize, 1), T::one(), &mut y);
                    (y, Cache::Input(cur))
                }
                OpKind::Conv { w, b, geom } => {
                    let mut y = vec![T::zero(); n * geom.c_out * geom.p_out()];
                    conv_forward(geom, cur.data(), n, p.get(*w).value.data(), p.get(*b).value.data(), &mut y);
                    (y, Cache::Input(cur))
                }
                OpKind::ConvT { w, b, geom } => {
                    let mut y = vec![T::zero(); n * geom.c_in * geom.p_in()];
                    conv_t_forward(geom, cur.data(), n, p.get(*w).value.data(), p.get(*b).value.data(), &mut y);
                    (y, Cache::Input(cur))
                }
                OpKind::BatchNorm { gamma, beta, mean, var, channels } => {
                    let c = *channels;
                    let spatial = cur.item_len() / c;
                    let m = (n * spatial) as f64;
                    let (mu, sigma2) = match mode {
                        Mode::Train => {
                            let mut mu = vec![0.0f64; c];
                            let mut s2 = vec![0.0f64; c];
                            for item in cur.data().chunks(c * spatial) {
                                for (ch, plane) in item.chunks(spatial).enumerate() {
                                    mu[ch] += plane.iter().map(|v| v.f64()).sum::<f64>();
                                }
                            }
                            mu.iter_mut().for_each(|v| *v /= m);
                            for item in cur.data().chunks(c * spatial) {
                                for (ch, plane) in item.chunks(spatial).enumerate() {
                                    s2[ch] += plane.iter().map(|v| (v.f64() - mu[ch]).powi(2)).sum::<f64>();
                                }
                            }
                            s2.iter_mut().for_each(|v| *v /= m);
                            let mu: Vec<T> = mu.into_iter().map(T::of).collect();
                            let s2: Vec<T> = s2.into_iter().map(T::of).collect();
                            stats.push((*mean, mu.clone()));
                            stats.push((*var, s2.clone()));
                            (mu, s2)
                        }
                        Mode::Eval => (p.get(*mean).value.data().to_vec(), p.get(*var).value.data().to_vec()),
                    };
                    let inv_std: Vec<T> = sigma2.iter().map(|v| T::one() / (*v + T::of(BN_EPS)).sqrt()).collect();
                    let g = p.get(*gamma).value.data();
                    let bt = p.get(*beta).value.data();
                    let mut xhat = cur.into_data();
                    let mut y = vec![T::zero(); xhat.len()];
                    for (item, yi) in xhat.chunks_mut(c * spatial).zip(y.chunks_mut(c * spatial)) {
                        for (ch, (plane, yp)) in item.chunks_mut(spatial).zip(yi.chunks_mut(spatial)).enumerate() {
                            for (v, o) in plane.iter_mut().zip(yp.iter_mut()) {
                                *v = (*v - mu[ch]) * inv_std[ch];
                                *o = g[ch] * *v + bt[ch];
                            }
                        }
                    }
                    (y, Cache::Bn { xhat, inv_std, train: mode == Mode::Train })
                }
                OpKind::Relu => {
                    let y: Vec<T> = cur.data().iter().map(|v| v.max(T::zero())).collect();
                    (y, Cache::Nothing)
                }
                OpKind::Tanh => {
                    let y: Vec<T> = cur.data().iter().map(|v| v.tanh()).collect();
                    (y, Cache::Nothing)
                }
                OpKind::MaxPool { c, hw, size } => {
                    let (oh, ow) = (hw[0] / size, hw[1] / size);
                    let mut y = vec![T::zero(); n * c * oh * ow];
                    let mut arg = vec![0u32; y.len()];
                    for (plane, (yp, ap)) in cur
                        .data()
                        .chunks(hw[0] * hw[1])
                        .zip(y.chunks_mut(oh * ow).zip(arg.chunks_mut(oh * ow)))
                    {
                        for r in 0..oh {
                            for q in 0..ow {
                                let mut best = T::neg_infinity();
                                let mut best_i = 0;
                                for dr in 0..*size {
                                    for dq in 0..*size {
                                        let i = (r * size + dr) * hw[1] + q * size + dq;
                                        // strict comparison keeps the first maximum in scan order
                                        if plane[i] > best {
                                            best = plane[i];
                                            best_i = i;
                                        }
                                    }
                                }
                                yp[r * ow + q] = best;
                                ap[r * ow + q] = best_i as u32;
                            }
                        }
                    }
                    (y, Cache::ArgMax(arg))
                }
                OpKind::AvgPool { c, hw, size } => {
                    let (oh, ow) = (hw[0] / size, hw[1] / size);
                    let mut y = vec![T::zero(); n * c * oh * ow];
                    let norm = T::of(1.0 / (size * size) as f64);
                    for (plane, yp) in cur.data().chunks(hw[0] * hw[1]).zip(y.chunks_mut(oh * ow)) {
                        for r in 0..oh {
                            for q in 0..ow {
                                let mut s = T::zero();
                                for dr in 0..*size {
                                    for dq in 0..*size {
                                        s = s + plane[(r * size + dr) * hw[1] + q * size + dq];
                                    }
                                }
                                yp[r * ow + q] = s * norm;
                            }
                        }
                    }
                    (y, Cache::Nothing)
                }
                OpKind::Reshape => (cur.into_data(), Cache::Nothing),
                OpKind::Scale(f) => {
                    let f = T::of(*f as f64);
                    (cur.data().iter().map(|v| *v * f).collect(), Cache::Nothing)
                }
            };
            let y = Tensor::from_vec(&out_shape, y)?;
            let cache = match (&op.kind, cache) {
                // activations differentiate through their output
                (OpKind::Relu | OpKind::Tanh, _) => Cache::Output(y.clone()),
                (_, c) => c,
            };
            if record {
                caches.push(cache);
            }
            cur = y;
        }
        Ok((cur, caches, stats))
    }

    /// Propagates `grad_out` through the last recorded forward pass,
    /// accumulating parameter gradients, and returns the input gradient.
    /// The tape is consumed.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        let n = tape.batch;
        let mut expect = vec![n];
        expect.extend_from_slice(self.output_shape());
        if grad_out.shape() != expect.as_slice() {
            return Err(Error::shape(
                "backward",
                format!("output gradient {:?} does not match output {expect:?}", grad_out.shape()),
            ));
        }
        let mut g = grad_out.data().to_vec();
        for (op, cache) in self.ops.iter().zip(tape.caches).rev() {
            let in_len = n * op.in_shape.iter().product::<usize>();
            g = match (&op.kind, cache) {
                (OpKind::Dense { w, b, inp, out }, Cache::Input(x)) => {
                    let db = &mut self.params.get_mut(*b).grad;
                    for row in g.chunks(*out) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d = *d + *v;
                        }
                    }
                    {
                        let dw = &mut self.params.get_mut(*w).grad;
                        // dW += x^T dy
                        gemm(*inp, n, *out, x.data(), (1, *inp as isize), &g, (*out as isize, 1), T::one(), dw);
                    }
                    let mut dx = vec![T::zero(); n * inp];
                    // dx = dy W^T
                    gemm(n, *out, *inp, &g, (*out as isize, 1), self.params.get(*w).value.data(), (1, *out as isize), T::zero(), &mut dx);
                    dx
                }
                (OpKind::Conv { w, b, geom }, Cache::Input(x)) => {
                    let mut dx = vec![T::zero(); in_len];
                    let mut db = std::mem::take(&mut self.params.get_mut(*b).grad);
                    let mut dw = std::mem::take(&mut self.params.get_mut(*w).grad);
                    conv_backward(geom, x.data(), n, self.params.get(*w).value.data(), &g, &mut dw, &mut db, &mut dx);
                    self.params.get_mut(*w).grad = dw;
                    self.params.get_mut(*b).grad = db;
                    dx
                }
                (OpKind::ConvT { w, b, geom }, Cache::Input(x)) => {
                    let mut dx = vec![T::zero(); in_len];
                    let mut db = std::mem::take(&mut self.params.get_mut(*b).grad);
                    let mut dw = std::mem::take(&mut self.params.get_mut(*w).grad);
                    conv_t_backward(geom, x.data(), n, self.params.get(*w).value.data(), &g, &mut dw, &mut db, &mut dx);
                    self.params.get_mut(*w).grad = dw;
                    self.params.get_mut(*b).grad = db;
                    dx
                }
                (OpKind::BatchNorm { gamma, beta, channels, .. }, Cache::Bn { xhat, inv_std, train }) => {
                    let c = *channels;
                    let spatial = op.in_shape.iter().product::<usize>() / c;
                    let m = (n * spatial) as f64;
                    let mut sum_dy = vec![0.0f64; c];
                    let mut sum_dy_xhat = vec![0.0f64; c];
                    for (gi, xi) in g.chunks(c * spatial).zip(xhat.chunks(c * spatial)) {
                        for ch in 0..c {
                            for k in ch * spatial..(ch + 1) * spatial {
                                sum_dy[ch] += gi[k].f64();
                                sum_dy_xhat[ch] += (gi[k] * xi[k]).f64();
                            }
                        }
                    }
                    {
                        let dg = &mut self.params.get_mut(*gamma).grad;
                        for ch in 0..c {
                            dg[ch] = dg[ch] + T::of(sum_dy_xhat[ch]);
                        }
                    }
                    {
                        let dbt = &mut self.params.get_mut(*beta).grad;
                        for ch in 0..c {
                            dbt[ch] = dbt[ch] + T::of(sum_dy[ch]);
                        }
                    }
                    let gm = self.params.get(*gamma).value.data();
                    let mut dx = vec![T::zero(); g.len()];
                    for ((gi, xi), di) in g.chunks(c * spatial).zip(xhat.chunks(c * spatial)).zip(dx.chunks_mut(c * spatial)) {
                        for ch in 0..c {
                            let s = gm[ch] * inv_std[ch];
                            let mean_dy = T::of(sum_dy[ch] / m);
                            let mean_dyx = T::of(sum_dy_xhat[ch] / m);
                            for k in ch * spatial..(ch + 1) * spatial {
                                di[k] = if train {
                                    s * (gi[k] - mean_dy - xi[k] * mean_dyx)
                                } else {
                                    s * gi[k]
                                };
                            }
                        }
                    }
                    dx
                }
                (OpKind::Relu, Cache::Output(y)) => {
                    g.iter_mut().zip(y.data()).for_each(|(d, y)| {
                        if *y <= T::zero() {
                            *d = T::zero()
                        }
                    });
                    g
                }
                (OpKind::Tanh, Cache::Output(y)) => {
                    g.iter_mut().zip(y.data()).for_each(|(d, y)| *d = *d * (T::one() - *y * *y));
                    g
                }
                (OpKind::MaxPool { hw, .. }, Cache::ArgMax(arg)) => {
                    let plane_in = hw[0] * hw[1];
                    let plane_out = arg.len() / (n * op.in_shape[0]);
                    let mut dx = vec![T::zero(); in_len];
                    for (pi, (gp, ap)) in g.chunks(plane_out).zip(arg.chunks(plane_out)).enumerate() {
                        let base = pi * plane_in;
                        for (d, a) in gp.iter().zip(ap) {
                            dx[base + *a as usize] = dx[base + *a as usize] + *d;
                        }
                    }
                    dx
                }
                (OpKind::AvgPool { hw, size, .. }, Cache::Nothing) => {
                    let (oh, ow) = (hw[0] / size, hw[1] / size);
                    let norm = T::of(1.0 / (size * size) as f64);
                    let mut dx = vec![T::zero(); in_len];
                    for (gp, dp) in g.chunks(oh * ow).zip(dx.chunks_mut(hw[0] * hw[1])) {
                        for r in 0..oh {
                            for q in 0..ow {
                                let v = gp[r * ow + q] * norm;
                                for dr in 0..*size {
                                    for dq in 0..*size {
                                        let i = (r * size + dr) * hw[1] + q * size + dq;
                                        dp[i] = dp[i] + v;
                                    }
                                }
                            }
                        }
                    }
                    dx
                }
                (OpKind::Reshape, _) => g,
                (OpKind::Scale(f), _) => {
                    let f = T::of(*f as f64);
                    g.into_iter().map(|v| v * f).collect()
                }
                _ => return Err(Error::State(format!("corrupt tape at layer {}", op.layer))),
            };
        }
        let mut in_shape = vec![n];
        in_shape.extend_from_slice(&self.spec.input_shape);
        Tensor::from_vec(&in_shape, g)
    }
}

fn conv_params<T: Scalar>(
    params: &mut ParameterStore<T>,
    name: &dyn Fn(&str) -> String,
    geom: &ConvGeom,
    act: Activation,
    rng: &mut Rng,
) -> Result<(ParamId, ParamId)> {
    let taps = geom.kernel[0] * geom.kernel[1];
    let lim = init_limit(act, geom.c_in * taps, geom.c_out * taps);
    let w = params.add(
        name("w"),
        Tensor::from_vec(&[geom.c_out, geom.k_rows()], uniform(rng, geom.c_out * geom.k_rows(), lim))?,
        true,
    )?;
    let b = params.add(name("b"), Tensor::zeros(&[geom.c_out]), true)?;
    Ok((w, b))
}

/// Transposed conv weights `[small channels, large channels * taps]`; each
/// output sees roughly `taps / div` taps per input channel.
fn conv_t_params<T: Scalar>(
    params: &mut ParameterStore<T>,
    name: &dyn Fn(&str) -> String,
    geom: &ConvGeom,
    act: Activation,
    div: usize,
    rng: &mut Rng,
) -> Result<(ParamId, ParamId)> {
    let taps = geom.kernel[0] * geom.kernel[1];
    let fan_in = (geom.c_out * taps / div.max(1)).max(1);
    let fan_out = (geom.c_in * taps / div.max(1)).max(1);
    let lim = init_limit(act, fan_in, fan_out);
    let w = params.add(
        name("w"),
        Tensor::from_vec(&[geom.c_out, geom.k_rows()], uniform(rng, geom.c_out * geom.k_rows(), lim))?,
        true,
    )?;
    let b = params.add(name("b"), Tensor::zeros(&[geom.c_in]), true)?;
    Ok((w, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::nn::gradcheck::normal_tensor;

    #[test]
    fn transposed_conv_is_adjoint() {
        let mut rng = seeded(20);
        for (c_in, hw, c_out, k, s, pad) in [
            (2, [9, 7], 3, 3, 2, Padding::Same),
            (3, [8, 8], 2, 3, 1, Padding::Same),
            (2, [1, 15], 4, 5, 2, Padding::Circular),
            (1, [1, 720], 2, 5, 2, Padding::Circular),
        ] {
            let kk = if hw[0] == 1 { [1, k] } else { [k, k] };
            let g = ConvGeom::new(c_in, hw, c_out, kk, [if hw[0] == 1 { 1 } else { s }, s], pad);
            let x = normal_tensor(&[2, c_in, hw[0], hw[1]], &mut rng).unwrap();
            let y = normal_tensor(&[2, c_out, g.out_hw[0], g.out_hw[1]], &mut rng).unwrap();
            let w = normal_tensor(&[c_out, g.k_rows()], &mut rng).unwrap();
            let mut cx = vec![0.0; y.len()];
            conv_forward(&g, x.data(), 2, w.data(), &vec![0.0; c_out], &mut cx);
            let mut ty = vec![0.0; x.len()];
            conv_t_forward(&g, y.data(), 2, w.data(), &vec![0.0; c_in], &mut ty);
            let lhs: f64 = cx.iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = ty.iter().zip(x.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-5 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn identity_1x1_conv() {
        let mut rng = seeded(0);
        let spec = GraphSpec {
            input_shape: vec![1, 3, 3],
            layers: vec![LayerSpec::conv2d(1, 1, 1)],
        };
        let mut net = Network::<f32>::new(spec, "", &mut rng).unwrap();
        net.params.by_name_mut("0.w").unwrap().value.data_mut()[0] = 1.0;
        let x = Tensor::from_vec(&[1, 1, 3, 3], (0..9).map(|v| v as f32).collect()).unwrap();
        assert_eq!(net.infer(&x).unwrap().data(), x.data());
    }

    #[test]
    fn circular_kernel_of_ones() {
        let mut rng = seeded(0);
        let spec = GraphSpec {
            input_shape: vec![1, 6],
            layers: vec![LayerSpec::conv1d(1, 3, 1, Padding::Circular)],
        };
        let mut net = Network::<f32>::new(spec, "", &mut rng).unwrap();
        net.params.by_name_mut("0.w").unwrap().value.data_mut().fill(1.0);
        let x = Tensor::from_vec(&[1, 1, 6], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(net.infer(&x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn max_pool_tie_routes_to_first() {
        let mut rng = seeded(0);
        let spec = GraphSpec {
            input_shape: vec![1, 2, 2],
            layers: vec![LayerSpec::max_pool2d(2)],
        };
        let mut net = Network::<f32>::new(spec, "", &mut rng).unwrap();
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let y = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.data(), &[0.5]);
        let dx = net.backward(&Tensor::filled(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let mut rng = seeded(0);
        let spec = GraphSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::scale(1.0).bn()],
        };
        let mut net = Network::<f32>::new(spec, "", &mut rng).unwrap();
        net.params.by_name_mut("0.bn.running_mean").unwrap().value.data_mut().copy_from_slice(&[1.0, -2.0]);
        net.params.by_name_mut("0.bn.running_var").unwrap().value.data_mut().copy_from_slice(&[4.0, 0.25]);
        let x = Tensor::from_vec(&[1, 2], vec![3.0, -1.0]).unwrap();
        let y = net.infer(&x).unwrap();
        let expect = [2.0 / (4.0f32 + 1e-3).sqrt(), 1.0 / (0.25f32 + 1e-3).sqrt()];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_norm_train_updates_running_stats() {
        let mut rng = seeded(0);
        let spec = GraphSpec {
            input_shape: vec![1],
            layers: vec![LayerSpec::scale(1.0).bn()],
        };
        let mut net = Network::<f32>::new(spec, "", &mut rng).unwrap();
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        let y = net.forward(&x, Mode::Train).unwrap();
        assert!((y.data()[0] + y.data()[1]).abs() < 1e-6);
        let mean = net.params.by_name("0.bn.running_mean").unwrap().value.data()[0];
        let var = net.params.by_name("0.bn.running_var").unwrap().value.data()[0];
        assert!((mean - 0.02).abs() < 1e-6, "{mean}");
        assert!((var - (0.99 + 0.01)).abs() < 1e-6, "{var}");
        // eval mode leaves the statistics alone
        net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(net.params.by_name("0.bn.running_mean").unwrap().value.data()[0], mean);
    }

    #[test]
    fn recalibration_averages_batch_statistics() {
        let mut rng = seeded(0);
        let spec = GraphSpec {
            input_shape: vec![1],
            layers: vec![LayerSpec::scale(1.0).bn()],
        };
        let mut net = Network::<f64>::new(spec, "", &mut rng).unwrap();
        let a = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![5.0, 5.0]).unwrap();
        assert_eq!(net.recalibrate_batch_norm([a, b]).unwrap(), 2);
        assert_eq!(net.params.by_name("0.bn.running_mean").unwrap().value.data(), &[3.5]);
        assert_eq!(net.params.by_name("0.bn.running_var").unwrap().value.data(), &[0.5]);
    }

    #[test]
    fn backward_without_tape_fails() {
        let mut rng = seeded(0);
        let spec = GraphSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::dense(1)],
        };
        let mut net = Network::<f32>::new(spec, "", &mut rng).unwrap();
        assert!(matches!(net.backward(&Tensor::zeros(&[1, 1])), Err(Error::State(_))));
        let x = Tensor::zeros(&[1, 2]);
        net.forward(&x, Mode::Train).unwrap();
        net.backward(&Tensor::zeros(&[1, 1])).unwrap();
        assert!(net.backward(&Tensor::zeros(&[1, 1])).is_err());
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let mut rng = seeded(0);
        let spec = GraphSpec {
            input_shape: vec![1, 8, 8],
            layers: vec![LayerSpec::conv2d(2, 3, 2), LayerSpec::dense(3)],
        };
        let err = Network::<f32>::new(spec, "", &mut rng).unwrap_err().to_string();
        assert!(err.contains("layer 1"), "{err}");
        let spec = GraphSpec {
            input_shape: vec![2, 4, 4],
            layers: vec![LayerSpec::conv_transpose2d(1, 3, 2, [5, 9])],
        };
        assert!(Network::<f32>::new(spec, "", &mut rng).is_err());
        let spec = GraphSpec {
            input_shape: vec![3],
            layers: vec![LayerSpec::dense(1)],
        };
        let net = Network::<f32>::new(spec, "", &mut rng).unwrap();
        let err = net.infer(&Tensor::zeros(&[2, 4])).unwrap_err().to_string();
        assert!(err.contains("layer 0"), "{err}");
    }

    #[test]
    fn precisions_share_initial_weights() {
        let spec = GraphSpec {
            input_shape: vec![3],
            layers: vec![LayerSpec::dense(4).relu(), LayerSpec::dense(2)],
        };
        let a = Network::<f32>::new(spec.clone(), "", &mut seeded(5)).unwrap();
        let b = Network::<f64>::new(spec, "", &mut seeded(5)).unwrap();
        for (p, q) in a.params.iter().zip(b.params.iter()) {
            for (u, v) in p.value.data().iter().zip(q.value.data()) {
                assert_eq!(*u as f64, *v);
            }
        }
    }
}
