use rand::Rng as _;

use super::layers::*;
use super::spec::{NetworkSpec, Op};
use crate::error::{Error, Result};
use crate::rng;

/// Loss probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub enum ParamSet {
    None,
    Conv { kernel: Vec<f64>, bias: Vec<f64> },
    Bn { gamma: Vec<f64>, beta: Vec<f64>, running_mean: Vec<f64>, running_var: Vec<f64> },
}

impl ParamSet {
    /// Trainable tensors in a fixed order: kernel, bias or gamma, beta.
    pub fn trainable(&self) -> Vec<&Vec<f64>> {
        match self {
            ParamSet::None => vec![],
            ParamSet::Conv { kernel, bias } => vec![kernel, bias],
            ParamSet::Bn { gamma, beta, .. } => vec![gamma, beta],
        }
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            ParamSet::None => vec![],
            ParamSet::Conv { kernel, bias } => vec![kernel, bias],
            ParamSet::Bn { gamma, beta, .. } => vec![gamma, beta],
        }
    }
}

/// One parameter set per node of the spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub layers: Vec<ParamSet>,
}

impl Weights {
    /// Glorot-uniform kernels, zero biases, unit gamma, zero beta.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Weights {
        let layers = spec
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match n.op {
                Op::Conv { k, c_in, c_out } => {
                    let mut r = rng::stream(seed, &[0x4E4E, i as u64]);
                    let limit = (6.0 / ((k * k * c_in + k * k * c_out) as f64)).sqrt();
                    let kernel = (0..k * k * c_in * c_out).map(|_| r.gen_range(-limit..limit)).collect();
                    ParamSet::Conv { kernel, bias: vec![0.0; c_out] }
                }
                Op::BatchNorm { c } => ParamSet::Bn {
                    gamma: vec![1.0; c],
                    beta: vec![0.0; c],
                    running_mean: vec![0.0; c],
                    running_var: vec![1.0; c],
                },
                _ => ParamSet::None,
            })
            .collect();
        Weights { layers }
    }

    pub fn zeros_like(&self) -> Weights {
        let layers = self
            .layers
            .iter()
            .map(|p| match p {
                ParamSet::None => ParamSet::None,
                ParamSet::Conv { kernel, bias } => ParamSet::Conv { kernel: vec![0.0; kernel.len()], bias: vec![0.0; bias.len()] },
                ParamSet::Bn { gamma, .. } => {
                    let c = gamma.len();
                    ParamSet::Bn { gamma: vec![0.0; c], beta: vec![0.0; c], running_mean: vec![0.0; c], running_var: vec![0.0; c] }
                }
            })
            .collect();
        Weights { layers }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|p| p.trainable().iter().all(|v| v.iter().all(|x| x.is_finite())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Intermediate state kept for the backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    acts: Vec<Option<Tensor4>>,
    shapes: Vec<(usize, usize, usize, usize)>,
    pool_idx: Vec<Option<Vec<usize>>>,
    bn: Vec<Option<BnCache>>,
    /// Gathered probabilities, `n * valid` values, image-major.
    pub output: Vec<f64>,
}

impl ForwardCache {
    /// Batch statistics of each training-mode batchnorm, by node.
    pub fn batch_stats(&self) -> impl Iterator<Item = (usize, &BnCache)> {
        self.bn.iter().enumerate().filter_map(|(i, c)| c.as_ref().map(|c| (i, c)))
    }
}

fn check_input(t: &Tensor4, shape: (usize, usize, usize), what: &str) -> Result<()> {
    if (t.h, t.w, t.c) != shape {
        return Err(Error::shape(format!("{what} input is {}x{}x{}, expected {}x{}x{}", t.h, t.w, t.c, shape.0, shape.1, shape.2)));
    }
    Ok(())
}

/// Whether a node's output must survive until the backward pass.
fn kept(spec: &NetworkSpec, i: usize) -> bool {
    matches!(spec.nodes[i].op, Op::Relu | Op::Sigmoid)
        || spec.nodes.iter().any(|n| matches!(n.op, Op::Conv { .. }) && n.inputs.contains(&i))
}

/// Run the network. The result does not depend on anything but the
/// arguments; training-mode running statistics are updated separately by
/// [`update_running_stats`].
pub fn forward(spec: &NetworkSpec, w: &Weights, main: &Tensor4, late: &Tensor4, mode: Mode) -> Result<ForwardCache> {
    if w.layers.len() != spec.nodes.len() {
        return Err(Error::shape("weights do not match the network"));
    }
    if main.n != late.n {
        return Err(Error::shape("main and late inputs differ in batch size"));
    }
    let count = spec.nodes.len();
    let last_use: Vec<usize> = (0..count)
        .map(|i| spec.nodes.iter().enumerate().filter(|(_, n)| n.inputs.contains(&i)).map(|(j, _)| j).max().unwrap_or(i))
        .collect();
    let keep: Vec<bool> = (0..count).map(|i| kept(spec, i)).collect();
    let mut acts: Vec<Option<Tensor4>> = vec![None; count];
    let mut shapes = vec![(0, 0, 0, 0); count];
    let mut pool_idx = vec![None; count];
    let mut bn = vec![None; count];
    let mut output = Vec::new();
    for (i, node) in spec.nodes.iter().enumerate() {
        let arg = |k: usize| acts[node.inputs[k]].as_ref().expect("input still alive");
        let out = match (&node.op, &w.layers[i]) {
            (Op::InputMain, _) => {
                check_input(main, node.shape, "main")?;
                main.clone()
            }
            (Op::InputLate, _) => {
                check_input(late, node.shape, "late")?;
                late.clone()
            }
            (Op::InputMask, _) => Tensor4::zeros(1, 1, 1, 1),
            (Op::Conv { k, .. }, ParamSet::Conv { kernel, bias }) => conv2d(arg(0), kernel, bias, *k)?,
            (Op::BatchNorm { .. }, ParamSet::Bn { gamma, beta, running_mean, running_var }) => match mode {
                Mode::Train => {
                    let (o, c) = batchnorm_train(arg(0), gamma, beta);
                    bn[i] = Some(c);
                    o
                }
                Mode::Infer => batchnorm_infer(arg(0), gamma, beta, running_mean, running_var),
            },
            (Op::Relu, _) => relu(arg(0)),
            (Op::MaxPool, _) => {
                let (o, idx) = maxpool_argmax(arg(0))?;
                pool_idx[i] = Some(idx);
                o
            }
            (Op::Unpool { pool }, _) => {
                let (h, wd, _) = spec.nodes[*pool].inputs.first().map(|&p| spec.nodes[p].shape).unwrap();
                unpool(arg(0), pool_idx[*pool].as_ref().unwrap(), h, wd)?
            }
            (Op::Concat, _) => {
                let ins: Vec<&Tensor4> = node.inputs.iter().map(|&j| acts[j].as_ref().unwrap()).collect();
                concat(&ins)?
            }
            (Op::Reshape, _) => arg(0).clone(),
            (Op::Sigmoid, _) => sigmoid(arg(0)),
            (Op::MaskGather, _) => {
                output = mask_gather(arg(0), &spec.valid)?;
                let t = arg(0);
                Tensor4::zeros(t.n, 1, 1, 1)
            }
            _ => return Err(Error::shape(format!("weights for {} have the wrong kind", node.name))),
        };
        shapes[i] = out.shape();
        acts[i] = Some(out);
        for &j in &node.inputs {
            if !keep[j] && last_use[j] <= i {
                acts[j] = None;
            }
        }
    }
    for (i, a) in acts.iter_mut().enumerate() {
        if !keep[i] {
            *a = None;
        }
    }
    Ok(ForwardCache { acts, shapes, pool_idx, bn, output })
}

/// Mean clamped negative log-likelihood of `p` against `y`.
pub fn log_loss(p: &[f64], y: &[f64]) -> f64 {
    let s: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    s / p.len() as f64
}

/// Loss of a training-mode forward pass and the gradient of every
/// trainable tensor. `labels` align with `cache.output`.
pub fn backward(spec: &NetworkSpec, w: &Weights, cache: &ForwardCache, labels: &[f64]) -> Result<(f64, Weights)> {
    let out = &cache.output;
    if labels.len() != out.len() {
        return Err(Error::shape(format!("{} labels for {} outputs", labels.len(), out.len())));
    }
    let loss = log_loss(out, labels);
    let m = out.len() as f64;
    let dp: Vec<f64> = out
        .iter()
        .zip(labels)
        .map(|(&p, &y)| if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP { 0.0 } else { (-(y / p) + (1.0 - y) / (1.0 - p)) / m })
        .collect();
    let count = spec.nodes.len();
    let mut grads = w.zeros_like();
    let mut d: Vec<Option<Tensor4>> = vec![None; count];
    let accumulate = |d: &mut Vec<Option<Tensor4>>, j: usize, g: Tensor4| match &mut d[j] {
        Some(t) => t.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    };
    for i in (0..count).rev() {
        let node = &spec.nodes[i];
        let dy = if let Op::MaskGather = node.op {
            let (n, h, wd, _) = cache.shapes[node.inputs[0]];
            accumulate(&mut d, node.inputs[0], mask_gather_backward(&dp, &spec.valid, n, h, wd));
            continue;
        } else {
            match d[i].take() {
                Some(t) => t,
                None => continue,
            }
        };
        match (&node.op, &w.layers[i]) {
            (Op::InputMain | Op::InputLate | Op::InputMask, _) => {}
            (Op::Conv { k, .. }, ParamSet::Conv { kernel, .. }) => {
                let src = node.inputs[0];
                let x = cache.acts[src].as_ref().expect("conv input kept");
                let need_dx = !matches!(spec.nodes[src].op, Op::InputMain | Op::InputLate);
                let g = conv2d_backward(x, kernel, *k, &dy, need_dx);
                grads.layers[i] = ParamSet::Conv { kernel: g.dkernel, bias: g.dbias };
                if let Some(dx) = g.dx {
                    accumulate(&mut d, src, dx);
                }
            }
            (Op::BatchNorm { .. }, ParamSet::Bn { gamma, .. }) => {
                let c = cache.bn[i].as_ref().ok_or_else(|| Error::shape("backward needs a training-mode forward pass"))?;
                let (dx, dg, db) = batchnorm_backward(&dy, c, gamma);
                let ch = dg.len();
                grads.layers[i] = ParamSet::Bn { gamma: dg, beta: db, running_mean: vec![0.0; ch], running_var: vec![0.0; ch] };
                accumulate(&mut d, node.inputs[0], dx);
            }
            (Op::Relu, _) => {
                let y = cache.acts[i].as_ref().unwrap();
                accumulate(&mut d, node.inputs[0], relu_backward(y, &dy));
            }
            (Op::MaxPool, _) => {
                let (_, h, wd, _) = cache.shapes[node.inputs[0]];
                accumulate(&mut d, node.inputs[0], maxpool_backward(&dy, cache.pool_idx[i].as_ref().unwrap(), h, wd));
            }
            (Op::Unpool { pool }, _) => {
                let shape = cache.shapes[node.inputs[0]];
                accumulate(&mut d, node.inputs[0], unpool_backward(&dy, cache.pool_idx[*pool].as_ref().unwrap(), shape));
            }
            (Op::Concat, _) => {
                let chans: Vec<usize> = node.inputs.iter().map(|&j| cache.shapes[j].3).collect();
                for (&j, g) in node.inputs.iter().zip(concat_backward(&dy, &chans)) {
                    if !matches!(spec.nodes[j].op, Op::InputMain | Op::InputLate) {
                        accumulate(&mut d, j, g);
                    }
                }
            }
            (Op::Reshape, _) => accumulate(&mut d, node.inputs[0], dy),
            (Op::Sigmoid, _) => {
                let s = cache.acts[i].as_ref().unwrap();
                let data = s.data.iter().zip(&dy.data).map(|(s, g)| g * s * (1.0 - s)).collect();
                accumulate(&mut d, node.inputs[0], Tensor4 { data, ..*s });
            }
            _ => return Err(Error::shape(format!("weights for {} have the wrong kind", node.name))),
        }
    }
    Ok((loss, grads))
}

/// Blend batch statistics into the running averages.
pub fn update_running_stats(w: &mut Weights, cache: &ForwardCache) {
    for (i, c) in cache.batch_stats() {
        if let ParamSet::Bn { running_mean, running_var, .. } = &mut w.layers[i] {
            for ch in 0..c.mean.len() {
                running_mean[ch] = BN_MOMENTUM * running_mean[ch] + (1.0 - BN_MOMENTUM) * c.mean[ch];
                running_var[ch] = BN_MOMENTUM * running_var[ch] + (1.0 - BN_MOMENTUM) * c.var[ch];
            }
        }
    }
}

/// Inference-mode probabilities, evaluated in chunks of `batch` images.
pub fn predict(spec: &NetworkSpec, w: &Weights, main: &Tensor4, late: &Tensor4, batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(main.n * spec.valid.len());
    let batch = batch.max(1);
    let mut start = 0;
    while start < main.n {
        let end = (start + batch).min(main.n);
        let idx: Vec<usize> = (start..end).collect();
        let cache = forward(spec, w, &select(main, &idx), &select(late, &idx), Mode::Infer)?;
        out.extend(cache.output);
        start = end;
    }
    Ok(out)
}

/// Images `idx` of `t`, in that order.
pub fn select(t: &Tensor4, idx: &[usize]) -> Tensor4 {
    let l = t.image_len();
    let mut data = Vec::with_capacity(idx.len() * l);
    for &i in idx {
        data.extend_from_slice(t.image(i));
    }
    Tensor4 { n: idx.len(), data, ..*t }
}

impl ForwardCache {
    /// Every discrete choice made by the pass: ReLU on/off states and pool
    /// argmax positions. Equal signatures mean the same piecewise-smooth branch.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for idx in self.pool_idx.iter().flatten() {
            sig.extend_from_slice(idx);
        }
        for a in self.acts.iter().flatten() {
            sig.extend(a.data.iter().map(|&v| usize::from(v > 0.0)));
        }
        sig
    }
}
