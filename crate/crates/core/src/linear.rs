//! L2-penalized logistic regression on per-pixel feature rows.
//!
//! The penalty is written with the inverse strength `C`: the loss is the
//! mean negative log-likelihood plus `(1/C) * sum(beta^2)`, so an "L2
//! strength" of `L` corresponds to `C = 1/L`. The intercept is not
//! penalized.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::rng;

pub const PROB_CLAMP: f64 = 1e-15;
/// Batch fits stop once this many consecutive steps lower the loss by less
/// than `STALL_REL` relative.
const STALL_ITERATIONS: usize = 5;
const STALL_REL: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Batch,
    SgdEarlyStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { learning_rate: 0.01, momentum: 0.9, batch_size: 32, patience: 20, max_epochs: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearFitConfig {
    pub c: f64,
    pub max_iterations: usize,
    /// Stop once the squared gradient norm falls below this.
    pub tolerance: f64,
    /// `(w_pos, w_neg)` sample weights.
    pub class_weights: Option<(f64, f64)>,
    pub optimizer: Optimizer,
    pub sgd: SgdConfig,
}

impl Default for LinearFitConfig {
    fn default() -> Self {
        LinearFitConfig {
            c: 1e-3,
            max_iterations: 10_000,
            tolerance: 1e-14,
            class_weights: None,
            optimizer: Optimizer::Batch,
            sgd: SgdConfig::default(),
        }
    }
}

impl LinearFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::config("C must be positive and finite"));
        }
        if self.sgd.patience < 1 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.sgd.batch_size < 1 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if let Some((p, n)) = self.class_weights {
            if !(p > 0.0 && n > 0.0) {
                return Err(Error::config("class weights must be positive"));
            }
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl LinearParams {
    pub fn zeros(columns: &[String]) -> Self {
        LinearParams { intercept: 0.0, coefficients: vec![0.0; columns.len()], columns: columns.to_vec() }
    }

    fn check(&self, table: &FeatureTable) -> Result<()> {
        if table.columns() != self.columns.as_slice() {
            return Err(Error::shape(format!("table columns {:?} do not match model columns {:?}", table.columns(), self.columns)));
        }
        Ok(())
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// CSV with columns `feature,coefficient`; the intercept is the first row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
        w.write_record(["feature", "coefficient"])?;
        w.write_record(["(intercept)".to_string(), self.intercept.to_string()])?;
        for (c, b) in self.columns.iter().zip(&self.coefficients) {
            w.write_record([c.clone(), b.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let perr = |m: String| Error::Parse { path: path.into(), message: m };
        let mut r = csv::Reader::from_path(path).map_err(|e| perr(e.to_string()))?;
        let mut intercept = None;
        let (mut columns, mut coefficients) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let v = rec[1].parse::<f64>().map_err(|e| perr(format!("{}: {e}", &rec[1])))?;
            if &rec[0] == "(intercept)" {
                intercept = Some(v);
            } else {
                columns.push(rec[0].to_string());
                coefficients.push(v);
            }
        }
        let intercept = intercept.ok_or_else(|| perr("missing (intercept) row".into()))?;
        Ok(LinearParams { intercept, coefficients, columns })
    }
}

pub fn lr_predict(params: &LinearParams, table: &FeatureTable) -> Result<Vec<f64>> {
    params.check(table)?;
    Ok((0..table.n_rows()).map(|i| sigmoid(params.score(table.row(i)))).collect())
}

fn check_labels(table: &FeatureTable, labels: &[u8], weights: Option<(f64, f64)>) -> Result<()> {
    if labels.len() != table.n_rows() {
        return Err(Error::shape(format!("{} labels for {} rows", labels.len(), table.n_rows())));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    if table.n_rows() == 0 {
        return Err(Error::invalid("empty table"));
    }
    if let Some((p, n)) = weights {
        if !(p >= 0.0 && n >= 0.0) {
            return Err(Error::invalid("weights must be non-negative"));
        }
    }
    Ok(())
}

fn weight(y: u8, weights: Option<(f64, f64)>) -> f64 {
    match (weights, y) {
        (None, _) => 1.0,
        (Some((p, _)), 1) => p,
        (Some((_, n)), _) => n,
    }
}

fn penalty(params: &LinearParams, c: f64) -> f64 {
    params.coefficients.iter().map(|b| b * b).sum::<f64>() / c
}

/// Mean (weighted) negative log-likelihood plus `(1/C) * sum(beta^2)`.
pub fn penalized_loss(params: &LinearParams, table: &FeatureTable, labels: &[u8], c: f64, weights: Option<(f64, f64)>) -> Result<f64> {
    params.check(table)?;
    check_labels(table, labels, weights)?;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = sigmoid(params.score(table.row(i))).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let nll = if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
        total += weight(y, weights) * nll;
    }
    Ok(total / labels.len() as f64 + penalty(params, c))
}

/// Loss and gradient `(d_alpha, d_beta)` over the given rows.
fn loss_and_gradient(
    params: &LinearParams,
    table: &FeatureTable,
    labels: &[u8],
    rows: impl Iterator<Item = usize>,
    c: f64,
    weights: Option<(f64, f64)>,
) -> (f64, f64, Vec<f64>) {
    let p_cols = params.coefficients.len();
    let (mut loss, mut ga, mut gb, mut n) = (0.0, 0.0, vec![0.0; p_cols], 0usize);
    for i in rows {
        let y = labels[i];
        let x = table.row(i);
        let p = sigmoid(params.score(x));
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let w = weight(y, weights);
        loss += w * if y == 1 { -pc.ln() } else { -(1.0 - pc).ln() };
        let r = w * (p - f64::from(y));
        ga += r;
        for (g, v) in gb.iter_mut().zip(x) {
            *g += r * v;
        }
        n += 1;
    }
    let nf = n.max(1) as f64;
    for (g, b) in gb.iter_mut().zip(&params.coefficients) {
        *g = *g / nf + 2.0 * b / c;
    }
    (loss / nf + penalty(params, c), ga / nf, gb)
}

/// Analytic gradient of [`penalized_loss`] as `(d_alpha, d_beta)`.
pub fn penalized_gradient(params: &LinearParams, table: &FeatureTable, labels: &[u8], c: f64, weights: Option<(f64, f64)>) -> Result<(f64, Vec<f64>)> {
    params.check(table)?;
    check_labels(table, labels, weights)?;
    let (_, ga, gb) = loss_and_gradient(params, table, labels, 0..labels.len(), c, weights);
    Ok((ga, gb))
}

fn require_both_classes(labels: &[u8]) -> Result<()> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::invalid("both classes must be present"));
    }
    Ok(())
}

/// Diagonal scaling for the batch solver: the Hessian diagonal at
/// p = 1/2 plus the penalty curvature. It evens out the curvature gap between the
/// unpenalized intercept and strongly penalized coefficients.
fn jacobi_scale(table: &FeatureTable, labels: &[u8], c: f64, weights: Option<(f64, f64)>) -> Vec<f64> {
    let p_cols = table.n_cols();
    let mut d = vec![0.0; p_cols + 1];
    for (i, &y) in labels.iter().enumerate() {
        let w = 0.25 * weight(y, weights);
        d[0] += w;
        for (dj, v) in d[1..].iter_mut().zip(table.row(i)) {
            *dj += w * v * v;
        }
    }
    let nf = labels.len().max(1) as f64;
    d.iter()
        .enumerate()
        .map(|(j, v)| {
            let h = v / nf + if j > 0 { 2.0 / c } else { 0.0 };
            1.0 / h.max(1e-12)
        })
        .collect()
}

/// Diagonally scaled full-gradient descent with Barzilai-Borwein step
/// proposals and an Armijo backtracking safeguard.
pub fn lr_fit_batch(table: &FeatureTable, labels: &[u8], config: &LinearFitConfig) -> Result<LinearParams> {
    config.validate()?;
    check_labels(table, labels, config.class_weights)?;
    require_both_classes(labels)?;
    let (c, w) = (config.c, config.class_weights);
    let n = labels.len();
    let scale = jacobi_scale(table, labels, c, w);
    let mut params = LinearParams::zeros(table.columns());
    let (mut loss, mut ga, mut gb) = loss_and_gradient(&params, table, labels, 0..n, c, w);
    let mut step = 1.0;
    let mut stalled = 0;
    for _ in 0..config.max_iterations {
        let g: Vec<f64> = std::iter::once(ga).chain(gb.iter().copied()).collect();
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2 <= config.tolerance {
            return Ok(params);
        }
        let dir: Vec<f64> = g.iter().zip(&scale).map(|(g, s)| g * s).collect();
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let mut t = step;
        let (cand, cl, cga, cgb) = loop {
            let mut cand = params.clone();
            cand.intercept -= t * dir[0];
            for (b, d) in cand.coefficients.iter_mut().zip(&dir[1..]) {
                *b -= t * d;
            }
            let (cl, cga, cgb) = loss_and_gradient(&cand, table, labels, 0..n, c, w);
            if cl <= loss - 1e-4 * t * slope || t < 1e-20 {
                break (cand, cl, cga, cgb);
            }
            t *= 0.5;
        };
        if t < 1e-20 {
            // no descent possible at machine precision: already at the minimum
            return Ok(params);
        }
        // the summed loss carries rounding noise far above the remaining decrease
        stalled = if loss - cl <= STALL_REL * loss.abs() { stalled + 1 } else { 0 };
        if stalled >= STALL_ITERATIONS {
            return Ok(cand);
        }
        // Barzilai-Borwein proposal in the scaled metric
        let s: Vec<f64> = std::iter::once(cand.intercept - params.intercept)
            .chain(cand.coefficients.iter().zip(&params.coefficients).map(|(a, b)| a - b))
            .collect();
        let yv: Vec<f64> = std::iter::once(cga - ga).chain(cgb.iter().zip(&gb).map(|(a, b)| a - b)).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().zip(&scale).map(|(a, d)| a * a / d).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { t * 2.0 };
        params = cand;
        (loss, ga, gb) = (cl, cga, cgb);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch: 0 });
        }
    }
    Err(Error::NotConverged { iterations: config.max_iterations, last_loss: loss })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdFit {
    pub params: LinearParams,
    /// 1-based epoch whose weights were returned.
    pub best_epoch: usize,
    /// `(epoch, train_loss, validation_brier)` per completed epoch.
    pub history: Vec<(usize, f64, f64)>,
}

fn brier_of(params: &LinearParams, table: &FeatureTable, labels: &[u8]) -> f64 {
    let s: f64 = (0..labels.len())
        .map(|i| {
            let d = sigmoid(params.score(table.row(i))) - f64::from(labels[i]);
            d * d
        })
        .sum();
    s / labels.len() as f64
}

/// Mini-batch SGD with momentum, scored on the validation set after every
/// epoch; stops after `patience` epochs without improvement and returns
/// the best epoch's weights.
pub fn lr_fit_sgd_earlystop(
    train: &FeatureTable,
    train_labels: &[u8],
    validation: &FeatureTable,
    validation_labels: &[u8],
    config: &LinearFitConfig,
) -> Result<SgdFit> {
    config.validate()?;
    check_labels(train, train_labels, config.class_weights)?;
    require_both_classes(train_labels)?;
    if validation.n_rows() == 0 {
        return Err(Error::invalid("validation set is empty"));
    }
    check_labels(validation, validation_labels, None)?;
    if validation.columns() != train.columns() {
        return Err(Error::shape("validation columns differ from training columns"));
    }
    let sgd = config.sgd;
    let mut rng = rng::stream(sgd.seed, &[0x5cd]);
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    let mut params = LinearParams::zeros(train.columns());
    let p = params.coefficients.len();
    let (mut va, mut vb) = (0.0, vec![0.0; p]);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut history = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=sgd.max_epochs {
        rng::shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(sgd.batch_size) {
            let (l, ga, gb) = loss_and_gradient(&params, train, train_labels, batch.iter().copied(), config.c, config.class_weights);
            epoch_loss += l * batch.len() as f64;
            va = sgd.momentum * va - sgd.learning_rate * ga;
            params.intercept += va;
            for ((v, g), b) in vb.iter_mut().zip(&gb).zip(params.coefficients.iter_mut()) {
                *v = sgd.momentum * *v - sgd.learning_rate * g;
                *b += *v;
            }
        }
        epoch_loss /= train.n_rows() as f64;
        if !epoch_loss.is_finite() || !params.intercept.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let vbrier = brier_of(&params, validation, validation_labels);
        history.push((epoch, epoch_loss, vbrier));
        if vbrier < best.0 {
            best = (vbrier, epoch, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= sgd.patience {
                break;
            }
        }
    }
    Ok(SgdFit { params: best.2, best_epoch: best.1, history })
}

/// Weights `N / (2 N_c)` per class, returned as `(w_pos, w_neg)`.
pub fn balanced_weights(labels: &[u8]) -> Result<(f64, f64)> {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::invalid("balanced weights need both classes"));
    }
    Ok((n / (2.0 * pos), n / (2.0 * neg)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(cols: &[&str], rows: &[&[f64]]) -> FeatureTable {
        FeatureTable::from_matrix(cols.iter().map(|s| s.to_string()).collect(), rows.concat()).unwrap()
    }

    fn params(a: f64, b: &[f64]) -> LinearParams {
        LinearParams { intercept: a, coefficients: b.to_vec(), columns: (0..b.len()).map(|i| format!("x{i}")).collect() }
    }

    fn cols(n: usize) -> Vec<&'static str> {
        ["x0", "x1", "x2", "x3"][..n].to_vec()
    }

    #[test]
    fn predict_examples() {
        let t = table(&cols(2), &[&[1.0, -2.0], &[0.5, 3.0]]);
        assert_eq!(lr_predict(&params(0.0, &[0.0, 0.0]), &t).unwrap(), vec![0.5, 0.5]);
        let p = lr_predict(&params(logit(0.2), &[0.0, 0.0]), &t).unwrap();
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-12));
        let t2 = table(&cols(2), &[&[2.0, -2.0], &[1.0, 3.0]]);
        let a = lr_predict(&params(0.3, &[0.8, -0.1]), &t).unwrap();
        let b = lr_predict(&params(0.3, &[0.4, -0.1]), &t2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(lr_predict(&params(0.0, &[0.0]), &t).is_err());
    }

    #[test]
    fn loss_examples() {
        let t = table(&cols(2), &[&[0.0, 0.0]]);
        let l = penalized_loss(&params(0.0, &[0.0, 0.0]), &t, &[1], 1.0, None).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l = penalized_loss(&params(0.0, &[3.0, 4.0]), &t, &[1], 1.0, None).unwrap();
        assert!((l - std::f64::consts::LN_2 - 25.0).abs() < 1e-12);
        // perfectly confident correct predictions
        let l = penalized_loss(&params(60.0, &[0.0, 0.0]), &t, &[1], 1.0, None).unwrap();
        assert!(l < 1e-14);
        // clamp keeps confident mistakes finite
        let l = penalized_loss(&params(-800.0, &[0.0, 0.0]), &t, &[1], 1.0, None).unwrap();
        assert!((l - (-PROB_CLAMP.ln())).abs() < 1e-9);
    }

    #[test]
    fn balanced_weight_examples() {
        assert_eq!(balanced_weights(&[1, 0, 1, 0]).unwrap(), (1.0, 1.0));
        let mut y = vec![0u8; 100];
        y[..10].fill(1);
        let (wp, wn) = balanced_weights(&y).unwrap();
        assert_eq!(wp, 5.0);
        assert!((wn - 5.0 / 9.0).abs() < 1e-15);
        assert!((wp * 10.0 - wn * 90.0).abs() < 1e-12);
        assert!(balanced_weights(&[1, 1]).is_err());
    }

    #[test]
    fn batch_matches_grid_search() {
        let t = table(&cols(1), &[&[-1.0], &[0.5], &[0.2], &[2.0]]);
        let y = [0, 0, 1, 1];
        let cfg = LinearFitConfig { c: 1.0, ..LinearFitConfig::default() };
        let fit = lr_fit_batch(&t, &y, &cfg).unwrap();
        let fitted = penalized_loss(&fit, &t, &y, 1.0, None).unwrap();
        // coarse grid then a fine 1e-3 grid around its best cell
        let eval = |a: f64, b: f64| penalized_loss(&params(a, &[b]), &t, &y, 1.0, None).unwrap();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=200 {
            for j in 0..=200 {
                let (a, b) = (-10.0 + 0.1 * i as f64, -10.0 + 0.1 * j as f64);
                let l = eval(a, b);
                if l < best.0 {
                    best = (l, a, b);
                }
            }
        }
        let (_, a0, b0) = best;
        for i in -100..=100 {
            for j in -100..=100 {
                let (a, b) = (a0 + 1e-3 * i as f64, b0 + 1e-3 * j as f64);
                best.0 = best.0.min(eval(a, b));
            }
        }
        assert!(fitted <= best.0 + 1e-6, "fit {fitted} vs grid {}", best.0);
    }

    #[test]
    fn symmetric_data_has_zero_intercept() {
        let t = table(&cols(1), &[&[-2.0], &[-1.0], &[1.0], &[2.0], &[-0.5], &[0.5]]);
        let fit = lr_fit_batch(&t, &[0, 1, 0, 1, 0, 1], &LinearFitConfig { c: 10.0, ..Default::default() }).unwrap();
        assert!(fit.intercept.abs() < 1e-6);
    }

    #[test]
    fn strong_penalty_gives_base_rate() {
        let t = table(&cols(2), &[&[1.0, 0.0], &[2.0, 1.0], &[0.0, 3.0], &[4.0, 1.0], &[-1.0, 0.0]]);
        let y = [1, 0, 0, 1, 0];
        let fit = lr_fit_batch(&t, &y, &LinearFitConfig { c: 1e-7, ..Default::default() }).unwrap();
        assert!(fit.coefficients.iter().all(|b| b.abs() < 1e-5));
        assert!((fit.intercept - logit(0.4)).abs() < 1e-4);
    }

    #[test]
    fn single_class_is_rejected() {
        let t = table(&cols(1), &[&[1.0], &[2.0]]);
        assert!(lr_fit_batch(&t, &[1, 1], &LinearFitConfig::default()).is_err());
        let cfg = LinearFitConfig { max_iterations: 1, tolerance: 0.0, ..Default::default() };
        let t = table(&cols(1), &[&[1.0], &[2.0], &[3.0]]);
        assert!(matches!(lr_fit_batch(&t, &[1, 0, 1], &cfg), Err(Error::NotConverged { iterations: 1, .. })));
    }

    #[test]
    fn early_stopping_contract() {
        // validation labels are the reverse of training, so any learning hurts
        let t = table(&cols(1), &[&[-1.0], &[1.0], &[-2.0], &[2.0]]);
        let cfg = LinearFitConfig {
            c: 1e3,
            optimizer: Optimizer::SgdEarlyStop,
            sgd: SgdConfig { patience: 1, batch_size: 2, learning_rate: 0.5, ..Default::default() },
            ..Default::default()
        };
        let fit = lr_fit_sgd_earlystop(&t, &[0, 1, 0, 1], &t, &[1, 0, 1, 0], &cfg).unwrap();
        assert_eq!(fit.best_epoch, 1);
        assert_eq!(fit.history.len(), 2);
        let again = lr_fit_sgd_earlystop(&t, &[0, 1, 0, 1], &t, &[1, 0, 1, 0], &cfg).unwrap();
        assert_eq!(fit, again);
    }

    #[test]
    fn params_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = params(-0.25, &[1.5, -3e-9]);
        let path = dir.path().join("p.csv");
        p.write_csv(&path).unwrap();
        assert_eq!(LinearParams::read_csv(&path).unwrap(), p);
    }

    fn small_problem() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (3usize..12).prop_flat_map(|n| (proptest::collection::vec(-3.0f64..3.0, n * 2), proptest::collection::vec(0u8..=1, n)))
    }

    proptest! {
        #[test]
        fn loss_is_convex((x, y) in small_problem(), a in proptest::collection::vec(-3.0f64..3.0, 3), b in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let t = FeatureTable::from_matrix(vec!["x0".into(), "x1".into()], x).unwrap();
            let pa = params(a[0], &a[1..]);
            let pb = params(b[0], &b[1..]);
            let mid = params((a[0] + b[0]) / 2.0, &[(a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0]);
            let f = |p: &LinearParams| penalized_loss(p, &t, &y, 0.7, None).unwrap();
            prop_assert!(f(&mid) <= (f(&pa) + f(&pb)) / 2.0 + 1e-9);
        }

        #[test]
        fn gradient_matches_finite_differences((x, y) in small_problem(), a in proptest::collection::vec(-2.0f64..2.0, 3), wp in 0.2f64..3.0) {
            let t = FeatureTable::from_matrix(vec!["x0".into(), "x1".into()], x).unwrap();
            let w = Some((wp, 1.0));
            let p = params(a[0], &a[1..]);
            let (ga, gb) = penalized_gradient(&p, &t, &y, 0.5, w).unwrap();
            let analytic = [ga, gb[0], gb[1]];
            // central differences on a loss of order 10 carry ~1e-9 rounding noise
            let h = 1e-4;
            for k in 0..3 {
                let mut up = a.clone();
                let mut dn = a.clone();
                up[k] += h;
                dn[k] -= h;
                let f = |v: &[f64]| penalized_loss(&params(v[0], &v[1..]), &t, &y, 0.5, w).unwrap();
                let num = (f(&up) - f(&dn)) / (2.0 * h);
                let rel = (num - analytic[k]).abs() / analytic[k].abs().max(1e-3);
                prop_assert!(rel < 1e-5, "k={} analytic={} numeric={}", k, analytic[k], num);
            }
        }

        #[test]
        fn fit_is_permutation_invariant((x, y) in small_problem(), seed: u64) {
            prop_assume!(y.iter().any(|&v| v == 1) && y.iter().any(|&v| v == 0));
            let n = y.len();
            let t = FeatureTable::from_matrix(vec!["x0".into(), "x1".into()], x.clone()).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            rng::shuffle(&mut perm, &mut rng::stream(seed, &[]));
            let tp = t.select_rows(&perm);
            let yp: Vec<u8> = perm.iter().map(|&i| y[i]).collect();
            let cfg = LinearFitConfig { c: 2.0, ..Default::default() };
            let a = lr_fit_batch(&t, &y, &cfg).unwrap();
            let b = lr_fit_batch(&tp, &yp, &cfg).unwrap();
            prop_assert!((a.intercept - b.intercept).abs() < 1e-5);
            for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
                prop_assert!((u - v).abs() < 1e-5);
            }
        }

        #[test]
        fn split_twin_coefficients_leave_predictions_unchanged(x in proptest::collection::vec(-3.0f64..3.0, 5), beta in -2.0f64..2.0, frac in 0.0f64..1.0) {
            let single = FeatureTable::from_matrix(vec!["x0".into()], x.clone()).unwrap();
            let twin = single.with_column("x1", &x).unwrap();
            let p1 = lr_predict(&params(0.1, &[beta]), &single).unwrap();
            let p2 = lr_predict(&params(0.1, &[beta * frac, beta * (1.0 - frac)]), &twin).unwrap();
            for (u, v) in p1.iter().zip(&p2) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
