use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Op {
    InputMain,
    InputLate,
    /// The output mask, supplied as a graph input.
    InputMask,
    Conv { k: usize, c_in: usize, c_out: usize },
    BatchNorm { c: usize },
    Relu,
    MaxPool,
    /// Unpool with the indices of node `pool`.
    Unpool { pool: usize },
    Concat,
    Reshape,
    Sigmoid,
    MaskGather,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<usize>,
    /// Per-image output shape `(h, w, c)`; the gathered output reports `(1, 1, 1)`.
    pub shape: (usize, usize, usize),
}

impl NodeSpec {
    pub fn params(&self) -> (usize, usize) {
        match self.op {
            Op::Conv { k, c_in, c_out } => {
                let n = k * k * c_in * c_out + c_out;
                (n, n)
            }
            Op::BatchNorm { c } => (4 * c, 2 * c),
            _ => (0, 0),
        }
    }
}

/// Encoder/decoder layout in multiples of `base_filters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegnetParams {
    pub height: usize,
    pub width: usize,
    pub input_channels: usize,
    pub late_channels: usize,
    pub base_filters: usize,
    pub kernel: usize,
    /// Conv widths per encoder stage; every stage ends with a 2x2 pool.
    pub encoder: Vec<Vec<usize>>,
    pub middle: Vec<usize>,
    /// Conv widths per decoder stage; every stage starts with an unpool.
    pub decoder: Vec<Vec<usize>>,
}

impl Default for SegnetParams {
    fn default() -> Self {
        SegnetParams {
            height: 384,
            width: 384,
            input_channels: 14,
            late_channels: 3,
            base_filters: 8,
            kernel: 3,
            encoder: vec![vec![1], vec![1], vec![2, 2], vec![4], vec![4, 4], vec![8, 8, 8], vec![8, 8, 8]],
            middle: vec![8],
            decoder: vec![vec![8, 8, 8], vec![8, 8, 4], vec![4], vec![4, 2], vec![2, 1], vec![1], vec![1]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub params: SegnetParams,
    pub nodes: Vec<NodeSpec>,
    /// Pixels of the output gathered per image.
    pub valid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub name: String,
    /// Per-image output shape; flattened after the reshape.
    pub shape: Vec<usize>,
    pub params: usize,
    pub trainable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterReport {
    pub layers: Vec<LayerReport>,
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

struct Builder {
    nodes: Vec<NodeSpec>,
    counters: std::collections::HashMap<&'static str, usize>,
}

impl Builder {
    fn add(&mut self, kind: &'static str, op: Op, inputs: Vec<usize>, shape: (usize, usize, usize)) -> usize {
        let n = self.counters.entry(kind).or_insert(0);
        *n += 1;
        self.nodes.push(NodeSpec { name: format!("{kind}_{n}"), op, inputs, shape });
        self.nodes.len() - 1
    }

    fn shape(&self, id: usize) -> (usize, usize, usize) {
        self.nodes[id].shape
    }

    /// conv -> batchnorm -> relu
    fn block(&mut self, from: usize, c_out: usize, k: usize) -> usize {
        let (h, w, c_in) = self.shape(from);
        let conv = self.add("conv2d", Op::Conv { k, c_in, c_out }, vec![from], (h, w, c_out));
        let bn = self.add("batch_normalization", Op::BatchNorm { c: c_out }, vec![conv], (h, w, c_out));
        self.add("activation", Op::Relu, vec![bn], (h, w, c_out))
    }
}

/// Build the encoder-decoder network for inputs of `params.height x
/// params.width` and the output mask given as flat valid-pixel indices.
pub fn build_segnet(params: &SegnetParams, valid: &[usize]) -> Result<(NetworkSpec, ParameterReport)> {
    let p = params;
    if p.kernel % 2 == 0 || p.base_filters == 0 || p.input_channels == 0 {
        return Err(Error::config("kernel must be odd, base_filters and input_channels positive"));
    }
    if p.encoder.len() != p.decoder.len() {
        return Err(Error::config("encoder and decoder need the same number of stages"));
    }
    let pools = p.encoder.len() as u32;
    let div = 1usize << pools;
    if p.height % div != 0 || p.width % div != 0 {
        return Err(Error::shape(format!("input {}x{} is not divisible by 2^{pools}", p.height, p.width)));
    }
    if valid.is_empty() || valid.iter().any(|&i| i >= p.height * p.width) {
        return Err(Error::shape("mask must select at least one pixel inside the image"));
    }
    let mut b = Builder { nodes: Vec::new(), counters: Default::default() };
    let main = b.add("input", Op::InputMain, vec![], (p.height, p.width, p.input_channels));
    let mut cur = main;
    let mut pool_ids = Vec::new();
    for stage in &p.encoder {
        for &m in stage {
            cur = b.block(cur, m * p.base_filters, p.kernel);
        }
        let (h, w, c) = b.shape(cur);
        cur = b.add("max_pooling_with_argmax2d", Op::MaxPool, vec![cur], (h / 2, w / 2, c));
        pool_ids.push(cur);
    }
    for &m in &p.middle {
        cur = b.block(cur, m * p.base_filters, p.kernel);
    }
    for stage in &p.decoder {
        let pool = pool_ids.pop().unwrap();
        let (h, w, pc) = b.shape(pool);
        let (ph, pw, c) = b.shape(cur);
        if (ph, pw, c) != (h, w, pc) {
            return Err(Error::shape(format!("decoder input {ph}x{pw}x{c} does not match its paired pool {h}x{w}x{pc}")));
        }
        cur = b.add("max_unpooling2d", Op::Unpool { pool }, vec![cur], (2 * h, 2 * w, c));
        for &m in stage {
            cur = b.block(cur, m * p.base_filters, p.kernel);
        }
    }
    let (h, w, c) = b.shape(cur);
    let late = b.add("input", Op::InputLate, vec![], (h, w, p.late_channels));
    let cat_c = c + p.input_channels + p.late_channels;
    let cat = b.add("concatenate", Op::Concat, vec![cur, main, late], (h, w, cat_c));
    let conv = b.add("conv2d", Op::Conv { k: 1, c_in: cat_c, c_out: 1 }, vec![cat], (h, w, 1));
    let bn = b.add("batch_normalization", Op::BatchNorm { c: 1 }, vec![conv], (h, w, 1));
    let rs = b.add("reshape", Op::Reshape, vec![bn], (h, w, 1));
    let sg = b.add("activation", Op::Sigmoid, vec![rs], (h, w, 1));
    let mask = b.add("input", Op::InputMask, vec![], (h, w, 1));
    b.add("lambda", Op::MaskGather, vec![sg, mask], (1, 1, 1));
    let spec = NetworkSpec { params: p.clone(), nodes: b.nodes, valid: valid.to_vec() };
    let report = spec.report();
    Ok((spec, report))
}

impl NetworkSpec {
    pub fn report(&self) -> ParameterReport {
        let mut flat = false;
        let layers: Vec<LayerReport> = self
            .nodes
            .iter()
            .map(|n| {
                let (params, trainable) = n.params();
                let (h, w, c) = n.shape;
                flat |= n.op == Op::Reshape;
                let shape = match n.op {
                    Op::MaskGather => vec![self.valid.len()],
                    _ if flat => vec![h * w * c],
                    _ => vec![h, w, c],
                };
                LayerReport { name: n.name.clone(), shape, params, trainable }
            })
            .collect();
        let total = layers.iter().map(|l| l.params).sum();
        let trainable = layers.iter().map(|l| l.trainable).sum();
        ParameterReport { layers, total, trainable, non_trainable: total - trainable }
    }

    pub fn output_len(&self) -> usize {
        self.valid.len()
    }
}
