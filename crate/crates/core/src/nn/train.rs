use std::fmt;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Tensor4;
use super::net::{backward, forward, log_loss, predict, select, update_running_stats, Mode, Weights};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::features::{FeatureCube, RowIndex};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NnOptimizer {
    /// Keras-style SGD with momentum.
    Sgd,
    /// Adam with Keras defaults (beta1 0.9, beta2 0.999, epsilon 1e-7).
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub optimizer: NnOptimizer,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub patience: usize,
    /// Epochs without improvement before the learning rate is divided.
    pub plateau_epochs: usize,
    pub plateau_factor: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Stop as soon as the training Brier falls below this value.
    pub target_train_brier: Option<f64>,
    /// Also score the training set after every epoch.
    pub track_train_brier: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            optimizer: NnOptimizer::Sgd,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            patience: 20,
            plateau_epochs: 10,
            plateau_factor: 10.0,
            max_epochs: 200,
            seed: 0,
            target_train_brier: None,
            track_train_brier: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("learning_rate must be positive and momentum in [0, 1)"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size and max_epochs must be at least 1"));
        }
        if self.patience == 0 || self.plateau_epochs > self.patience {
            return Err(Error::config("patience must be at least 1 and no smaller than plateau_epochs"));
        }
        if !(self.plateau_factor >= 1.0) {
            return Err(Error::config("plateau_factor must be at least 1"));
        }
        Ok(())
    }
}

/// Inputs and gathered labels for a set of images.
#[derive(Debug, Clone, PartialEq)]
pub struct NnData {
    pub main: Tensor4,
    pub late: Tensor4,
    /// `n * valid` labels, image-major.
    pub labels: Vec<f64>,
}

impl NnData {
    pub fn len(&self) -> usize {
        self.main.n
    }

    pub fn is_empty(&self) -> bool {
        self.main.n == 0
    }

    pub fn subset(&self, idx: &[usize], valid: usize) -> NnData {
        let labels = idx.iter().flat_map(|&i| self.labels[i * valid..(i + 1) * valid].iter().copied()).collect();
        NnData { main: select(&self.main, idx), late: select(&self.late, idx), labels }
    }
}

/// Per-channel mean and population standard deviation over training images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ChannelStats {
    pub fn fit(t: &Tensor4, names: &[String]) -> ChannelStats {
        let c = t.c;
        let m = (t.data.len() / c) as f64;
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for px in t.data.chunks_exact(c) {
            for ch in 0..c {
                mean[ch] += px[ch];
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for px in t.data.chunks_exact(c) {
            for ch in 0..c {
                sq[ch] += (px[ch] - mean[ch]).powi(2);
            }
        }
        let sd = sq.iter().map(|s| (s / m).sqrt()).collect();
        ChannelStats { names: names.to_vec(), mean, sd }
    }

    /// Constant channels map to zero.
    pub fn apply(&self, t: &mut Tensor4) {
        let c = t.c;
        for px in t.data.chunks_exact_mut(c) {
            for ch in 0..c {
                px[ch] = if self.sd[ch] > 0.0 { (px[ch] - self.mean[ch]) / self.sd[ch] } else { 0.0 };
            }
        }
    }
}

/// Channels fed straight into the final 1x1 convolution by default.
pub const DEFAULT_LATE_CHANNELS: [&str; 3] = ["xdim", "ydim", "tdim"];

/// Default main channels: every feature except the late ones and the two
/// past-error features.
pub fn default_main_channels() -> Vec<String> {
    crate::features::ALL_FEATURES
        .iter()
        .filter(|f| !DEFAULT_LATE_CHANNELS.contains(f) && !f.ends_with("_past_error"))
        .map(|f| f.to_string())
        .collect()
}

fn stack(cube: &FeatureCube, days: &[usize], names: &[String]) -> Result<Tensor4> {
    let cols: Vec<usize> = names
        .iter()
        .map(|n| cube.feature_index(n).ok_or_else(|| Error::MissingFeature { feature: n.clone(), reason: "not in the feature cube".into() }))
        .collect::<Result<_>>()?;
    let g = cube.geometry;
    let (h, w, c) = (g.height_px, g.width_px, cols.len());
    let mut data = Vec::with_capacity(days.len() * h * w * c);
    for &d in days {
        let rs = &cube.days[d].rasters;
        for p in 0..h * w {
            for &j in &cols {
                let v = rs[j].values()[p];
                if crate::grid::Raster::is_fill(v) {
                    return Err(Error::invalid(format!("{} has missing values on {}", names[cols.iter().position(|&x| x == j).unwrap()], cube.days[d].date)));
                }
                data.push(f64::from(v));
            }
        }
    }
    Tensor4::new(days.len(), h, w, c, data)
}

/// Image tensors and mask-gathered labels for the given cube days.
pub fn cube_data(cube: &FeatureCube, days: &[usize], main: &[String], late: &[String]) -> Result<NnData> {
    if days.is_empty() {
        return Err(Error::invalid("no days selected"));
    }
    let valid = cube.mask.valid_indices();
    let mut labels = Vec::with_capacity(days.len() * valid.len());
    for &d in days {
        let l = cube.days[d].label.values();
        labels.extend(valid.iter().map(|&i| f64::from(l[i])));
    }
    Ok(NnData { main: stack(cube, days, main)?, late: stack(cube, days, late)?, labels })
}

/// Row index matching the order of gathered predictions for `days`.
pub fn cube_index(cube: &FeatureCube, days: &[usize]) -> Vec<RowIndex> {
    let w = cube.geometry.width_px;
    let valid = cube.mask.valid_indices();
    days.iter()
        .flat_map(|&d| {
            let time = cube.days[d].valid_time;
            valid.iter().map(move |&i| RowIndex { time, row: i / w, col: i % w })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    Patience,
    MaxEpochs,
    Target,
    Diverged,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
            StopReason::Target => "target",
            StopReason::Diverged => "diverged",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochAction {
    Continue,
    Stop,
}

/// Early stopping on a validation score with learning-rate reduction on
/// plateaus. Epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub plateau_epochs: usize,
    pub plateau_factor: f64,
    pub lr: f64,
    pub best: f64,
    pub best_epoch: usize,
    wait: usize,
    plateau_wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, plateau_epochs: usize, plateau_factor: f64, lr: f64) -> Self {
        EarlyStopping { patience, plateau_epochs, plateau_factor, lr, best: f64::INFINITY, best_epoch: 0, wait: 0, plateau_wait: 0 }
    }

    /// Record the score of `epoch`; returns whether it improved and what to do next.
    pub fn observe(&mut self, epoch: usize, score: f64) -> (bool, EpochAction) {
        if score < self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.wait = 0;
            self.plateau_wait = 0;
            return (true, EpochAction::Continue);
        }
        self.wait += 1;
        self.plateau_wait += 1;
        if self.plateau_epochs > 0 && self.plateau_wait >= self.plateau_epochs {
            self.lr /= self.plateau_factor;
            self.plateau_wait = 0;
        }
        let action = if self.wait >= self.patience { EpochAction::Stop } else { EpochAction::Continue };
        (false, action)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_brier: Option<f64>,
    pub val_brier: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: Weights,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut s = String::from("epoch,train_loss,train_brier,val_brier,val_loss,lr\n");
    for r in history {
        let tb = r.train_brier.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{},{}\n", r.epoch, r.train_loss, tb, r.val_brier, r.val_loss, r.lr));
    }
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

fn brier_of(p: &[f64], y: &[f64]) -> f64 {
    p.iter().zip(y).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / p.len() as f64
}

const EVAL_BATCH: usize = 8;

/// Minibatch SGD with momentum (or Adam), scored on `val` after every epoch. When
/// `val` is the same object as `train` it is evaluated once per epoch.
pub fn train(spec: &NetworkSpec, init: Weights, train: &NnData, val: &NnData, cfg: &TrainerConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    let nv = spec.output_len();
    let same = std::ptr::eq(train, val);
    let mut w = init;
    let mut velocity = w.zeros_like();
    let mut second = w.zeros_like();
    let mut step = 0i32;
    let mut best = w.clone();
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.plateau_epochs, cfg.plateau_factor, cfg.learning_rate);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let lr = stopper.lr;
        let mut shuffler = rng::stream(cfg.seed, &[0x7A11, epoch as u64]);
        rng::shuffle(&mut order, &mut shuffler);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut diverged = false;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.subset(chunk, nv);
            let cache = forward(spec, &w, &batch.main, &batch.late, Mode::Train)?;
            let (loss, grads) = backward(spec, &w, &cache, &batch.labels)?;
            if !loss.is_finite() {
                diverged = true;
                break;
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
            step += 1;
            let (c1, c2) = (1.0 - ADAM_BETA1.powi(step), 1.0 - ADAM_BETA2.powi(step));
            for (((p, g), v), s2) in w.layers.iter_mut().zip(&grads.layers).zip(velocity.layers.iter_mut()).zip(second.layers.iter_mut()) {
                for (((p, g), v), s2) in p.trainable_mut().into_iter().zip(g.trainable()).zip(v.trainable_mut()).zip(s2.trainable_mut()) {
                    for (((p, g), v), s2) in p.iter_mut().zip(g).zip(v.iter_mut()).zip(s2.iter_mut()) {
                        match cfg.optimizer {
                            NnOptimizer::Sgd => {
                                *v = cfg.momentum * *v - lr * g;
                                *p += *v;
                            }
                            NnOptimizer::Adam => {
                                *v = ADAM_BETA1 * *v + (1.0 - ADAM_BETA1) * g;
                                *s2 = ADAM_BETA2 * *s2 + (1.0 - ADAM_BETA2) * g * g;
                                *p -= lr * (*v / c1) / ((*s2 / c2).sqrt() + ADAM_EPSILON);
                            }
                        }
                    }
                }
            }
            update_running_stats(&mut w, &cache);
        }
        if diverged || !w.all_finite() {
            stop_reason = StopReason::Diverged;
            break;
        }
        let vp = predict(spec, &w, &val.main, &val.late, EVAL_BATCH)?;
        let (val_brier, val_loss) = (brier_of(&vp, &val.labels), log_loss(&vp, &val.labels));
        let train_brier = if same {
            Some(val_brier)
        } else if cfg.track_train_brier || cfg.target_train_brier.is_some() {
            let tp = predict(spec, &w, &train.main, &train.late, EVAL_BATCH)?;
            Some(brier_of(&tp, &train.labels))
        } else {
            None
        };
        if !val_brier.is_finite() {
            stop_reason = StopReason::Diverged;
            break;
        }
        history.push(EpochRecord { epoch, train_loss: loss_sum / seen as f64, train_brier, val_brier, val_loss, lr });
        let (improved, action) = stopper.observe(epoch, val_brier);
        if improved {
            best = w.clone();
        }
        if let (Some(t), Some(b)) = (cfg.target_train_brier, train_brier) {
            if b < t {
                stop_reason = StopReason::Target;
                break;
            }
        }
        if action == EpochAction::Stop {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    Ok(TrainOutcome { weights: best, history, best_epoch: stopper.best_epoch, stop_reason })
}
