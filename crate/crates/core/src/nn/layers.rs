//! Layer primitives on NHWC tensors with their reverse-mode gradients.

use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

/// Batch x height x width x channels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Tensor4 { n, h, w, c, data: vec![0.0; n * h * w * c] }
    }

    pub fn new(n: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::shape("tensor dimensions must be at least 1"));
        }
        if data.len() != n * h * w * c {
            return Err(Error::shape(format!("{} values for shape ({n}, {h}, {w}, {c})", data.len())));
        }
        Ok(Tensor4 { n, h, w, c, data })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }

    pub fn image_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn at(&self, b: usize, y: usize, x: usize, ch: usize) -> f64 {
        self.data[((b * self.h + y) * self.w + x) * self.c + ch]
    }

    pub fn image(&self, b: usize) -> &[f64] {
        let l = self.image_len();
        &self.data[b * l..(b + 1) * l]
    }

    fn zeros_like(&self) -> Self {
        Tensor4::zeros(self.n, self.h, self.w, self.c)
    }
}

/// Unfold one image into rows of `k*k*c` patch values (zero padded).
fn im2col(img: &[f64], h: usize, w: usize, c: usize, k: usize, cols: &mut [f64]) {
    let r = (k / 2) as isize;
    let kk = k * k * c;
    for y in 0..h {
        for x in 0..w {
            let row = &mut cols[(y * w + x) * kk..(y * w + x + 1) * kk];
            for dy in 0..k {
                let sy = y as isize + dy as isize - r;
                for dx in 0..k {
                    let sx = x as isize + dx as isize - r;
                    let dst = &mut row[(dy * k + dx) * c..(dy * k + dx + 1) * c];
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        dst.fill(0.0);
                    } else {
                        let s = (sy as usize * w + sx as usize) * c;
                        dst.copy_from_slice(&img[s..s + c]);
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], h: usize, w: usize, c: usize, k: usize, img: &mut [f64]) {
    let r = (k / 2) as isize;
    let kk = k * k * c;
    for y in 0..h {
        for x in 0..w {
            let row = &cols[(y * w + x) * kk..(y * w + x + 1) * kk];
            for dy in 0..k {
                let sy = y as isize + dy as isize - r;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for dx in 0..k {
                    let sx = x as isize + dx as isize - r;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let s = (sy as usize * w + sx as usize) * c;
                    for (d, v) in img[s..s + c].iter_mut().zip(&row[(dy * k + dx) * c..(dy * k + dx + 1) * c]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// `c = alpha * a * b + beta * c` for row-major `a` (m x k) and `b` (k x n),
/// either of which may be read transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserted lengths cover every element addressed by the strides.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Same-padded `k x k` convolution; `kernel` is laid out `[k, k, c_in, c_out]`.
pub fn conv2d(x: &Tensor4, kernel: &[f64], bias: &[f64], k: usize) -> Result<Tensor4> {
    let c_out = bias.len();
    if kernel.len() != k * k * x.c * c_out || k % 2 == 0 {
        return Err(Error::shape(format!("kernel of {} values does not fit {k}x{k}x{}x{c_out} (odd k)", kernel.len(), x.c)));
    }
    let hw = x.h * x.w;
    let kk = k * k * x.c;
    let mut out = Tensor4::zeros(x.n, x.h, x.w, c_out);
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; hw * kk] };
    for b in 0..x.n {
        let dst = &mut out.data[b * hw * c_out..(b + 1) * hw * c_out];
        for row in dst.chunks_exact_mut(c_out) {
            row.copy_from_slice(bias);
        }
        let src = if k == 1 {
            x.image(b)
        } else {
            im2col(x.image(b), x.h, x.w, x.c, k, &mut cols);
            &cols
        };
        gemm(hw, kk, c_out, src, false, kernel, false, 1.0, dst);
    }
    Ok(out)
}

pub struct ConvGrads {
    pub dx: Option<Tensor4>,
    pub dkernel: Vec<f64>,
    pub dbias: Vec<f64>,
}

pub fn conv2d_backward(x: &Tensor4, kernel: &[f64], k: usize, dy: &Tensor4, need_dx: bool) -> ConvGrads {
    let c_out = dy.c;
    let hw = x.h * x.w;
    let kk = k * k * x.c;
    let mut dkernel = vec![0.0; kk * c_out];
    let mut dbias = vec![0.0; c_out];
    let mut dx = need_dx.then(|| x.zeros_like());
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; hw * kk] };
    let mut dcols = if need_dx && k != 1 { vec![0.0; hw * kk] } else { Vec::new() };
    for b in 0..x.n {
        let g = &dy.data[b * hw * c_out..(b + 1) * hw * c_out];
        for row in g.chunks_exact(c_out) {
            for (d, v) in dbias.iter_mut().zip(row) {
                *d += v;
            }
        }
        let src = if k == 1 {
            x.image(b)
        } else {
            im2col(x.image(b), x.h, x.w, x.c, k, &mut cols);
            &cols
        };
        // dK += cols^T g
        gemm(kk, hw, c_out, src, true, g, false, 1.0, &mut dkernel);
        if let Some(dx) = dx.as_mut() {
            let l = hw * x.c;
            let dimg = &mut dx.data[b * l..(b + 1) * l];
            if k == 1 {
                gemm(hw, c_out, kk, g, false, kernel, true, 0.0, dimg);
            } else {
                gemm(hw, c_out, kk, g, false, kernel, true, 0.0, &mut dcols);
                col2im_add(&dcols, x.h, x.w, x.c, k, dimg);
            }
        }
    }
    ConvGrads { dx, dkernel, dbias }
}

/// Per-channel statistics of a training-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub x_hat: Vec<f64>,
}

pub fn batchnorm_train(x: &Tensor4, gamma: &[f64], beta: &[f64]) -> (Tensor4, BnCache) {
    let c = x.c;
    let m = (x.data.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for px in x.data.chunks_exact(c) {
        for (s, v) in mean.iter_mut().zip(px) {
            *s += v;
        }
    }
    mean.iter_mut().for_each(|s| *s /= m);
    let mut var = vec![0.0; c];
    for px in x.data.chunks_exact(c) {
        for ((s, v), mu) in var.iter_mut().zip(px).zip(&mean) {
            *s += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|s| *s /= m);
    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut x_hat = vec![0.0; x.data.len()];
    let mut out = x.zeros_like();
    for ((px, xh), o) in x.data.chunks_exact(c).zip(x_hat.chunks_exact_mut(c)).zip(out.data.chunks_exact_mut(c)) {
        for ch in 0..c {
            xh[ch] = (px[ch] - mean[ch]) * inv[ch];
            o[ch] = gamma[ch] * xh[ch] + beta[ch];
        }
    }
    (out, BnCache { mean, var, x_hat })
}

pub fn batchnorm_infer(x: &Tensor4, gamma: &[f64], beta: &[f64], running_mean: &[f64], running_var: &[f64]) -> Tensor4 {
    let c = x.c;
    let scale: Vec<f64> = (0..c).map(|ch| gamma[ch] / (running_var[ch] + BN_EPSILON).sqrt()).collect();
    let mut out = x.zeros_like();
    for (px, o) in x.data.chunks_exact(c).zip(out.data.chunks_exact_mut(c)) {
        for ch in 0..c {
            o[ch] = (px[ch] - running_mean[ch]) * scale[ch] + beta[ch];
        }
    }
    out
}

/// Returns `(dx, dgamma, dbeta)` for a training-mode batch normalization.
pub fn batchnorm_backward(dy: &Tensor4, cache: &BnCache, gamma: &[f64]) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let c = dy.c;
    let m = (dy.data.len() / c) as f64;
    let (mut dgamma, mut dbeta) = (vec![0.0; c], vec![0.0; c]);
    for (g, xh) in dy.data.chunks_exact(c).zip(cache.x_hat.chunks_exact(c)) {
        for ch in 0..c {
            dgamma[ch] += g[ch] * xh[ch];
            dbeta[ch] += g[ch];
        }
    }
    let k: Vec<f64> = (0..c).map(|ch| gamma[ch] / (cache.var[ch] + BN_EPSILON).sqrt() / m).collect();
    let mut dx = dy.zeros_like();
    for ((g, xh), d) in dy.data.chunks_exact(c).zip(cache.x_hat.chunks_exact(c)).zip(dx.data.chunks_exact_mut(c)) {
        for ch in 0..c {
            d[ch] = k[ch] * (m * g[ch] - dbeta[ch] - xh[ch] * dgamma[ch]);
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    Tensor4 { data: x.data.iter().map(|v| v.max(0.0)).collect(), ..*x }
}

/// Gradient through a ReLU given its input.
pub fn relu_backward(x: &Tensor4, dy: &Tensor4) -> Tensor4 {
    Tensor4 { data: x.data.iter().zip(&dy.data).map(|(v, g)| if *v > 0.0 { *g } else { 0.0 }).collect(), ..*dy }
}

/// 2x2 max pooling. Indices are flat positions `(y * w + x) * c + ch`
/// within each input image; ties go to the smallest index.
pub fn maxpool_argmax(x: &Tensor4) -> Result<(Tensor4, Vec<usize>)> {
    if x.h % 2 != 0 || x.w % 2 != 0 {
        return Err(Error::shape(format!("max pooling needs even height and width, got {}x{}", x.h, x.w)));
    }
    let (ho, wo, c) = (x.h / 2, x.w / 2, x.c);
    let mut out = Tensor4::zeros(x.n, ho, wo, c);
    let mut idx = vec![0usize; out.data.len()];
    for b in 0..x.n {
        let img = x.image(b);
        let base = b * ho * wo * c;
        for y in 0..ho {
            for xx in 0..wo {
                for ch in 0..c {
                    let mut best = (2 * y * x.w + 2 * xx) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ((2 * y + dy) * x.w + 2 * xx + dx) * c + ch;
                        if img[i] > img[best] {
                            best = i;
                        }
                    }
                    let o = base + (y * wo + xx) * c + ch;
                    out.data[o] = img[best];
                    idx[o] = best;
                }
            }
        }
    }
    Ok((out, idx))
}

/// Place pooled values at their recorded positions in a zero tensor of
/// spatial size `out_h x out_w`.
pub fn unpool(pooled: &Tensor4, idx: &[usize], out_h: usize, out_w: usize) -> Result<Tensor4> {
    if idx.len() != pooled.data.len() {
        return Err(Error::shape("unpool indices do not match the pooled tensor"));
    }
    let mut out = Tensor4::zeros(pooled.n, out_h, out_w, pooled.c);
    let l = out.image_len();
    let pl = pooled.image_len();
    for b in 0..pooled.n {
        for k in 0..pl {
            let i = idx[b * pl + k];
            if i >= l {
                return Err(Error::invalid(format!("unpool index {i} outside an image of {l} values")));
            }
            out.data[b * l + i] = pooled.data[b * pl + k];
        }
    }
    Ok(out)
}

/// Gradient of [`unpool`] with respect to the pooled values, which is also
/// the forward map of the max-pool gradient's adjoint.
pub fn unpool_backward(dy: &Tensor4, idx: &[usize], pooled_shape: (usize, usize, usize, usize)) -> Tensor4 {
    let (n, h, w, c) = pooled_shape;
    let mut out = Tensor4::zeros(n, h, w, c);
    let l = dy.image_len();
    let pl = h * w * c;
    for b in 0..n {
        for k in 0..pl {
            out.data[b * pl + k] = dy.data[b * l + idx[b * pl + k]];
        }
    }
    out
}

/// Gradient of [`maxpool_argmax`]: route each pooled gradient to its argmax.
pub fn maxpool_backward(dy: &Tensor4, idx: &[usize], in_h: usize, in_w: usize) -> Tensor4 {
    unpool(dy, idx, in_h, in_w).expect("indices come from the paired pool")
}

pub fn concat(inputs: &[&Tensor4]) -> Result<Tensor4> {
    let first = inputs.first().ok_or_else(|| Error::shape("concat of nothing"))?;
    if inputs.iter().any(|t| (t.n, t.h, t.w) != (first.n, first.h, first.w)) {
        return Err(Error::shape("concat inputs differ in batch or spatial size"));
    }
    let c: usize = inputs.iter().map(|t| t.c).sum();
    let mut out = Tensor4::zeros(first.n, first.h, first.w, c);
    let pixels = first.n * first.h * first.w;
    for p in 0..pixels {
        let mut off = 0;
        for t in inputs {
            out.data[p * c + off..p * c + off + t.c].copy_from_slice(&t.data[p * t.c..(p + 1) * t.c]);
            off += t.c;
        }
    }
    Ok(out)
}

/// Split a concat gradient back into per-input gradients.
pub fn concat_backward(dy: &Tensor4, channels: &[usize]) -> Vec<Tensor4> {
    let pixels = dy.n * dy.h * dy.w;
    let mut outs: Vec<Tensor4> = channels.iter().map(|&c| Tensor4::zeros(dy.n, dy.h, dy.w, c)).collect();
    for p in 0..pixels {
        let mut off = 0;
        for o in outs.iter_mut() {
            let c = o.c;
            o.data[p * c..(p + 1) * c].copy_from_slice(&dy.data[p * dy.c + off..p * dy.c + off + c]);
            off += c;
        }
    }
    outs
}

pub fn sigmoid(x: &Tensor4) -> Tensor4 {
    Tensor4 { data: x.data.iter().map(|&z| crate::linear::sigmoid(z)).collect(), ..*x }
}

/// Values of single-channel `x` at the given flat pixel positions, per image.
pub fn mask_gather(x: &Tensor4, valid: &[usize]) -> Result<Vec<f64>> {
    if x.c != 1 {
        return Err(Error::shape("mask gather expects a single channel"));
    }
    let l = x.h * x.w;
    if valid.iter().any(|&i| i >= l) {
        return Err(Error::shape("mask index outside the image"));
    }
    Ok((0..x.n).flat_map(|b| valid.iter().map(move |&i| x.data[b * l + i])).collect())
}

pub fn mask_gather_backward(dy: &[f64], valid: &[usize], n: usize, h: usize, w: usize) -> Tensor4 {
    let mut out = Tensor4::zeros(n, h, w, 1);
    let nv = valid.len();
    for b in 0..n {
        for (k, &i) in valid.iter().enumerate() {
            out.data[b * h * w + i] = dy[b * nv + k];
        }
    }
    out
}
