//! Central finite-difference checks of the analytic gradients.

use rand::Rng as _;
use serde::Serialize;

use super::layers::*;
use super::net::{backward, forward, log_loss, Mode, ParamSet, Weights};
use super::spec::{build_segnet, NetworkSpec, SegnetParams};
use crate::error::Result;
use crate::rng;

pub const FD_STEP: f64 = 1e-3;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Relative errors use `max(|analytic|, |numeric|, REL_FLOOR)` as denominator.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates checked with a smaller step because the standard one
    /// switched a ReLU or pooling choice.
    pub reduced_step: usize,
    /// Coordinates where no tried step stayed on one branch.
    pub skipped: usize,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= GRAD_TOLERANCE
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Steps tried, in order, when a perturbation leaves the current branch.
const FALLBACK_STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];

/// Central difference of `f` at `x[i]` with step `h`, or `None` when a
/// perturbed point lies on another branch.
fn central(f: &impl Fn(&[f64]) -> Option<f64>, xp: &mut [f64], i: usize, h: f64) -> Option<f64> {
    let x0 = xp[i];
    xp[i] = x0 + h;
    let hi = f(xp);
    xp[i] = x0 - h;
    let lo = f(xp);
    xp[i] = x0;
    Some((hi? - lo?) / (2.0 * h))
}

/// Compare `analytic` with Richardson-extrapolated central differences of
/// `f` (steps `h` and `h/2`) around `x`. `f` returns `None` when the
/// perturbed point lies on a different branch.
fn compare(name: &str, x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> Option<f64>) -> GradCheck {
    let mut r = GradCheck { name: name.into(), checked: 0, reduced_step: 0, skipped: 0, max_rel_error: 0.0 };
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let mut done = false;
        for (k, h) in std::iter::once(FD_STEP).chain(FALLBACK_STEPS).enumerate() {
            let (Some(full), Some(half)) = (central(&f, &mut xp, i, h), central(&f, &mut xp, i, h / 2.0)) else { continue };
            let numeric = (4.0 * half - full) / 3.0;
            r.checked += 1;
            r.reduced_step += usize::from(k > 0);
            r.max_rel_error = r.max_rel_error.max(rel_error(analytic[i], numeric));
            done = true;
            break;
        }
        if !done {
            r.skipped += 1;
        }
    }
    r
}

fn merge(name: &str, parts: Vec<GradCheck>) -> GradCheck {
    GradCheck {
        name: name.into(),
        checked: parts.iter().map(|p| p.checked).sum(),
        reduced_step: parts.iter().map(|p| p.reduced_step).sum(),
        skipped: parts.iter().map(|p| p.skipped).sum(),
        max_rel_error: parts.iter().map(|p| p.max_rel_error).fold(0.0, f64::max),
    }
}

fn uniform(r: &mut rng::Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn tensor(n: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Tensor4 {
    Tensor4 { n, h, w, c, data }
}

/// Values spaced well apart so that no finite-difference step reorders them.
fn spread(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.05 + 0.013).collect();
    rng::shuffle(&mut v, r);
    v
}

/// Each layer type in isolation, probed through `L = sum(r * layer(x))`.
pub fn check_layers(seed: u64) -> Vec<GradCheck> {
    let mut r = rng::stream(seed, &[0x6C, 0]);
    let mut out = Vec::new();

    let (n, h, w, ci, co, k) = (2, 5, 4, 2, 3, 3);
    let x = uniform(&mut r, n * h * w * ci, -1.0, 1.0);
    let kern = uniform(&mut r, k * k * ci * co, -0.5, 0.5);
    let bias = uniform(&mut r, co, -0.5, 0.5);
    let probe = uniform(&mut r, n * h * w * co, -1.0, 1.0);
    let xt = tensor(n, h, w, ci, x.clone());
    let g = conv2d_backward(&xt, &kern, k, &tensor(n, h, w, co, probe.clone()), true);
    let conv = |x: &[f64], kern: &[f64], bias: &[f64]| dot(&conv2d(&tensor(n, h, w, ci, x.to_vec()), kern, bias, k).unwrap().data, &probe);
    out.push(merge(
        "conv2d",
        vec![
            compare("x", &x, &g.dx.unwrap().data, |v| Some(conv(v, &kern, &bias))),
            compare("kernel", &kern, &g.dkernel, |v| Some(conv(&x, v, &bias))),
            compare("bias", &bias, &g.dbias, |v| Some(conv(&x, &kern, v))),
        ],
    ));

    let c = 3;
    let x = uniform(&mut r, n * h * w * c, -2.0, 2.0);
    let gamma = uniform(&mut r, c, 0.5, 1.5);
    let beta = uniform(&mut r, c, -0.5, 0.5);
    let probe = uniform(&mut r, x.len(), -1.0, 1.0);
    let (_, cache) = batchnorm_train(&tensor(n, h, w, c, x.clone()), &gamma, &beta);
    let (dx, dg, db) = batchnorm_backward(&tensor(n, h, w, c, probe.clone()), &cache, &gamma);
    let bnf = |x: &[f64], g: &[f64], b: &[f64]| dot(&batchnorm_train(&tensor(n, h, w, c, x.to_vec()), g, b).0.data, &probe);
    out.push(merge(
        "batch_normalization",
        vec![
            compare("x", &x, &dx.data, |v| Some(bnf(v, &gamma, &beta))),
            compare("gamma", &gamma, &dg, |v| Some(bnf(&x, v, &beta))),
            compare("beta", &beta, &db, |v| Some(bnf(&x, &gamma, v))),
        ],
    ));

    let x = spread(&mut r, n * h * w * c);
    let probe = uniform(&mut r, x.len(), -1.0, 1.0);
    let xt = tensor(n, h, w, c, x.clone());
    let dx = relu_backward(&relu(&xt), &tensor(n, h, w, c, probe.clone()));
    out.push(compare("relu", &x, &dx.data, |v| Some(dot(&relu(&tensor(n, h, w, c, v.to_vec())).data, &probe))));

    let (ph, pw) = (4, 6);
    let x = spread(&mut r, n * ph * pw * c);
    let probe = uniform(&mut r, n * (ph / 2) * (pw / 2) * c, -1.0, 1.0);
    let (_, idx) = maxpool_argmax(&tensor(n, ph, pw, c, x.clone())).unwrap();
    let dx = maxpool_backward(&tensor(n, ph / 2, pw / 2, c, probe.clone()), &idx, ph, pw);
    out.push(compare("max_pooling_with_argmax2d", &x, &dx.data, |v| {
        let (p, i) = maxpool_argmax(&tensor(n, ph, pw, c, v.to_vec())).unwrap();
        (i == idx).then(|| dot(&p.data, &probe))
    }));

    let pooled = uniform(&mut r, idx.len(), -1.0, 1.0);
    let probe = uniform(&mut r, n * ph * pw * c, -1.0, 1.0);
    let shape = (n, ph / 2, pw / 2, c);
    let dp = unpool_backward(&tensor(n, ph, pw, c, probe.clone()), &idx, shape);
    out.push(compare("max_unpooling2d", &pooled, &dp.data, |v| {
        Some(dot(&unpool(&tensor(n, ph / 2, pw / 2, c, v.to_vec()), &idx, ph, pw).unwrap().data, &probe))
    }));

    let (c1, c2) = (2, 3);
    let a = uniform(&mut r, n * h * w * c1, -1.0, 1.0);
    let b = uniform(&mut r, n * h * w * c2, -1.0, 1.0);
    let probe = uniform(&mut r, n * h * w * (c1 + c2), -1.0, 1.0);
    let parts = concat_backward(&tensor(n, h, w, c1 + c2, probe.clone()), &[c1, c2]);
    let cat = |a: &[f64], b: &[f64]| {
        dot(&concat(&[&tensor(n, h, w, c1, a.to_vec()), &tensor(n, h, w, c2, b.to_vec())]).unwrap().data, &probe)
    };
    out.push(merge(
        "concatenate",
        vec![compare("a", &a, &parts[0].data, |v| Some(cat(v, &b))), compare("b", &b, &parts[1].data, |v| Some(cat(&a, v)))],
    ));

    let x = uniform(&mut r, n * h * w, -3.0, 3.0);
    let probe = uniform(&mut r, x.len(), -1.0, 1.0);
    let s = sigmoid(&tensor(n, h, w, 1, x.clone()));
    let dx: Vec<f64> = s.data.iter().zip(&probe).map(|(s, g)| g * s * (1.0 - s)).collect();
    out.push(compare("sigmoid", &x, &dx, |v| Some(dot(&sigmoid(&tensor(n, h, w, 1, v.to_vec())).data, &probe))));

    let valid: Vec<usize> = (0..h * w).filter(|i| i % 3 != 1).collect();
    let x = uniform(&mut r, n * h * w, -1.0, 1.0);
    let probe = uniform(&mut r, n * valid.len(), -1.0, 1.0);
    let dx = mask_gather_backward(&probe, &valid, n, h, w);
    out.push(compare("lambda", &x, &dx.data, |v| Some(dot(&mask_gather(&tensor(n, h, w, 1, v.to_vec()), &valid).unwrap(), &probe))));

    let p = uniform(&mut r, 12, 0.05, 0.95);
    let y: Vec<f64> = (0..12).map(|i| (i % 2) as f64).collect();
    let m = p.len() as f64;
    let dp: Vec<f64> = p.iter().zip(&y).map(|(p, y)| (-(y / p) + (1.0 - y) / (1.0 - p)) / m).collect();
    out.push(compare("log_loss", &p, &dp, |v| Some(log_loss(v, &y))));
    out
}

/// Small network: 8x8 input, 2 main channels and 1 late channel, two pools.
pub fn tiny_network() -> Result<NetworkSpec> {
    let params = SegnetParams {
        height: 8,
        width: 8,
        input_channels: 2,
        late_channels: 1,
        base_filters: 2,
        kernel: 3,
        encoder: vec![vec![1], vec![2]],
        middle: vec![2],
        decoder: vec![vec![1], vec![1]],
    };
    let valid: Vec<usize> = (0..64).filter(|i| (i / 8 + i % 8) % 5 != 0).collect();
    Ok(build_segnet(&params, &valid)?.0)
}

/// Every trainable parameter of the composed tiny network, in training mode.
pub fn check_network(seed: u64) -> Result<GradCheck> {
    let spec = tiny_network()?;
    let mut r = rng::stream(seed, &[0x6C, 1]);
    let n = 4;
    let main = tensor(n, 8, 8, 2, uniform(&mut r, n * 128, -1.0, 1.0));
    let late = tensor(n, 8, 8, 1, uniform(&mut r, n * 64, -1.0, 1.0));
    let labels: Vec<f64> = (0..n * spec.output_len()).map(|_| f64::from(r.gen_bool(0.3) as u8)).collect();
    let mut w = Weights::init(&spec, seed);
    for p in w.layers.iter_mut() {
        match p {
            ParamSet::Conv { bias, .. } => bias.iter_mut().for_each(|b| *b = r.gen_range(-0.2..0.2)),
            ParamSet::Bn { gamma, beta, .. } => {
                gamma.iter_mut().for_each(|g| *g = r.gen_range(0.6..1.4));
                beta.iter_mut().for_each(|b| *b = r.gen_range(-0.3..0.3));
            }
            ParamSet::None => {}
        }
    }
    let base = forward(&spec, &w, &main, &late, Mode::Train)?;
    let sig = base.branch_signature();
    let (_, grads) = backward(&spec, &w, &base, &labels)?;
    let eval = |w: &Weights| -> Option<f64> {
        let c = forward(&spec, w, &main, &late, Mode::Train).ok()?;
        (c.branch_signature() == sig).then(|| log_loss(&c.output, &labels))
    };
    let mut parts = Vec::new();
    for (li, (p, g)) in w.layers.iter().zip(&grads.layers).enumerate() {
        for (ti, (vals, an)) in p.trainable().into_iter().zip(g.trainable()).enumerate() {
            let name = format!("{}[{ti}]", spec.nodes[li].name);
            parts.push(compare(&name, vals, an, |v| {
                let mut wp = w.clone();
                *wp.layers[li].trainable_mut()[ti] = v.to_vec();
                eval(&wp)
            }));
        }
    }
    Ok(merge("network", parts))
}
