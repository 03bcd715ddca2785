//! Experiment runs over model families and feature sets, paired BSS deltas,
//! MDI summaries and the duplicated-feature diagnostic.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{make_splits, Season, SplitPlan};
use crate::features::{FeatureCube, FeatureTable, RowIndex, StandardizationStats};
use crate::forest::{forest_fit, forest_predict_proba, mdi, Forest, ForestConfig, Importance};
use crate::grid::{Raster, Timestamp};
use crate::linear::{lr_fit_batch, lr_fit_sgd_earlystop, lr_predict, LinearFitConfig, LinearParams, Optimizer};
use crate::nn::{self, ChannelStats, NetworkSpec, SegnetParams, TrainOutcome, TrainerConfig, Weights};
use crate::rng;
use crate::verify::{brier, bss, calibrate, climatology_baseline, evaluate, pava_fit, CalibrationMap, EvalReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    IsotonicInput,
    Linear,
    Forest,
    Network,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::IsotonicInput => "isotonic_input",
            ModelFamily::Linear => "linear",
            ModelFamily::Forest => "forest",
            ModelFamily::Network => "network",
        })
    }
}

impl FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isotonic_input" => Ok(ModelFamily::IsotonicInput),
            "linear" => Ok(ModelFamily::Linear),
            "forest" => Ok(ModelFamily::Forest),
            "network" => Ok(ModelFamily::Network),
            _ => Err(Error::config(format!("unknown model family '{s}'"))),
        }
    }
}

/// One experiment: a model family on a feature set for one season, lead,
/// threshold and test fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub family: ModelFamily,
    pub features: Vec<String>,
    /// `None` means all days.
    pub season: Option<Season>,
    pub lead: i64,
    pub threshold: f64,
    pub fold_year: i32,
    /// Seed of the scenario the cube was built from.
    pub scenario_seed: u64,
    /// Model seed.
    pub seed: u64,
}

impl ExperimentSpec {
    /// `family:feature+feature`, with features in the given order.
    pub fn label(&self) -> String {
        format!("{}:{}", self.family, self.features.join("+"))
    }

    fn feature_set(&self) -> BTreeSet<&str> {
        self.features.iter().map(String::as_str).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::config("experiment needs at least one feature"));
        }
        if self.feature_set().len() != self.features.len() {
            return Err(Error::config(format!("{}: repeated feature", self.label())));
        }
        if self.family == ModelFamily::IsotonicInput && self.features.len() != 1 {
            return Err(Error::config("isotonic_input takes exactly one feature"));
        }
        Ok(())
    }
}

/// Hyperparameters and the per-family grids searched on validation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub linear: LinearFitConfig,
    /// Inverse penalty strengths tried for the linear family.
    pub linear_c_grid: Vec<f64>,
    pub forest: ForestConfig,
    pub trainer: TrainerConfig,
    pub network: SegnetParams,
    /// Base filter counts tried for the network family.
    pub network_filters_grid: Vec<usize>,
    pub late_channels: Vec<String>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            linear: LinearFitConfig::default(),
            linear_c_grid: vec![1e-5, 1e-3, 1e-1],
            forest: ForestConfig::default(),
            trainer: TrainerConfig::default(),
            network: SegnetParams::default(),
            network_filters_grid: vec![8, 16],
            late_channels: nn::DEFAULT_LATE_CHANNELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Scores of one experiment: validation from the uncalibrated model, test
/// from the model calibrated on validation data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub spec: ExperimentSpec,
    /// Hyperparameter chosen on validation data.
    pub selected: String,
    pub val_brier: f64,
    pub val_bss: f64,
    pub test_brier: f64,
    pub test_bss: f64,
    pub n_test: usize,
    /// Forest family only.
    pub mdi: Option<Importance>,
}

pub enum FittedModel {
    Isotonic,
    Linear { params: LinearParams, stats: StandardizationStats },
    Forest(Box<Forest>),
    Network { spec: Box<NetworkSpec>, weights: Weights, main: ChannelStats, late: ChannelStats, outcome: TrainOutcome },
}

pub struct RunOutput {
    pub record: EvalRecord,
    pub plan: SplitPlan,
    pub calibration: CalibrationMap,
    pub model: FittedModel,
    /// Calibrated test predictions, scored against climatology.
    pub report: EvalReport,
    pub test_index: Vec<RowIndex>,
    pub test_predictions: Vec<f64>,
}

/// Split plan over the days a cube covers.
pub fn plan_for(cube: &FeatureCube, fold_year: i32, season: Option<Season>) -> Result<SplitPlan> {
    let mut days: Vec<NaiveDate> = cube.days.iter().map(|d| d.date).collect();
    days.extend(cube.skipped.iter().map(|(d, _)| *d));
    make_splits(&days, fold_year, season, &cube.skipped)
}

fn indices(cube: &FeatureCube, dates: &[NaiveDate]) -> Result<Vec<usize>> {
    dates.iter().map(|d| cube.day_index(*d).ok_or_else(|| Error::invalid(format!("{d} is not in the feature cube")))).collect()
}

struct Part {
    days: Vec<usize>,
    table: FeatureTable,
    labels: Vec<u8>,
}

fn part(cube: &FeatureCube, dates: &[NaiveDate], features: &[String]) -> Result<Part> {
    let days = indices(cube, dates)?;
    let (table, labels) = cube.table(&days, features)?;
    Ok(Part { days, table, labels })
}

fn score(p: &[f64], y: &[u8], baseline: &[f64]) -> Result<(f64, f64)> {
    let b = brier(p, y)?;
    Ok((b, bss(b, brier(baseline, y)?)?))
}

fn with_spec(spec: &ExperimentSpec, e: Error) -> Error {
    match e {
        Error::NotConverged { .. } | Error::Diverged { .. } | Error::Io { .. } => e,
        other => Error::InvalidInput(format!("{}: {other}", spec.label())),
    }
}

/// Fit on training days, select and calibrate on validation days, score on
/// test days against the climatology of training and validation days.
pub fn run_config(cube: &FeatureCube, spec: &ExperimentSpec, settings: &ModelSettings) -> Result<RunOutput> {
    run_inner(cube, spec, settings).map_err(|e| with_spec(spec, e))
}

fn run_inner(cube: &FeatureCube, spec: &ExperimentSpec, settings: &ModelSettings) -> Result<RunOutput> {
    spec.validate()?;
    if cube.lead_hours != spec.lead || (cube.threshold_mm - spec.threshold).abs() > 1e-12 {
        return Err(Error::config("feature cube does not match the experiment's lead and threshold"));
    }
    let plan = plan_for(cube, spec.fold_year, spec.season)?;
    let (train, val, test) =
        (part(cube, &plan.train, &spec.features)?, part(cube, &plan.validation, &spec.features)?, part(cube, &plan.test, &spec.features)?);
    let test_dates: BTreeSet<Timestamp> = test.days.iter().map(|&d| cube.days[d].valid_time).collect();
    if test.table.index().iter().any(|r| !test_dates.contains(&r.time)) {
        return Err(Error::invalid("test rows outside the test partition"));
    }
    let mut clim_labels = train.labels.clone();
    clim_labels.extend_from_slice(&val.labels);
    let mut clim_index = train.table.index().to_vec();
    clim_index.extend_from_slice(val.table.index());
    let clim = climatology_baseline(&clim_labels, &clim_index)?;
    let val_base = clim.predictions(val.table.index())?;
    let test_base = clim.predictions(test.table.index())?;

    let (selected, val_pred, test_raw, model) = match spec.family {
        ModelFamily::IsotonicInput => {
            let vp: Vec<f64> = val.table.column(0).collect();
            let tp: Vec<f64> = test.table.column(0).collect();
            ("-".to_string(), vp, tp, FittedModel::Isotonic)
        }
        ModelFamily::Linear => {
            let stats = StandardizationStats::fit(&train.table)?;
            let (tr, va, te) = (stats.apply(&train.table)?, stats.apply(&val.table)?, stats.apply(&test.table)?);
            let mut best: Option<(f64, f64, LinearParams, Vec<f64>)> = None;
            for &c in &settings.linear_c_grid {
                let cfg = LinearFitConfig { c, ..settings.linear.clone() };
                let params = match cfg.optimizer {
                    Optimizer::Batch => lr_fit_batch(&tr, &train.labels, &cfg)?,
                    Optimizer::SgdEarlyStop => lr_fit_sgd_earlystop(&tr, &train.labels, &va, &val.labels, &cfg)?.params,
                };
                let vp = lr_predict(&params, &va)?;
                let b = brier(&vp, &val.labels)?;
                if best.as_ref().map_or(true, |(bb, ..)| b < *bb) {
                    best = Some((b, c, params, vp));
                }
            }
            let (_, c, params, vp) = best.ok_or_else(|| Error::config("linear_c_grid is empty"))?;
            let tp = lr_predict(&params, &te)?;
            (format!("C={c}"), vp, tp, FittedModel::Linear { params, stats })
        }
        ModelFamily::Forest => {
            let cfg = ForestConfig { seed: rng::derive_seed(spec.seed, &[0xF0]), ..settings.forest.clone() };
            let forest = forest_fit(&train.table, &train.labels, &cfg)?;
            let vp = forest_predict_proba(&forest, &val.table)?;
            let tp = forest_predict_proba(&forest, &test.table)?;
            (format!("n_estimators={}", cfg.n_estimators), vp, tp, FittedModel::Forest(Box::new(forest)))
        }
        ModelFamily::Network => run_network(cube, spec, settings, &train.days, &val.days, &test.days, &val.labels)?,
    };
    let (val_brier, val_bss) = match spec.family {
        ModelFamily::IsotonicInput => {
            let m = pava_fit(&val_pred, &val.labels)?;
            score(&calibrate(&m, &val_pred), &val.labels, &val_base)?
        }
        _ => score(&val_pred, &val.labels, &val_base)?,
    };
    let calibration = pava_fit(&val_pred, &val.labels)?;
    let test_pred = calibrate(&calibration, &test_raw);
    let (test_brier, test_bss) = score(&test_pred, &test.labels, &test_base)?;
    let report = evaluate(&test_pred, &test.labels, test.table.index(), &test_base, &cube.geometry)?;
    let mdi = match &model {
        FittedModel::Forest(f) => Some(mdi(f)),
        _ => None,
    };
    let record = EvalRecord { spec: spec.clone(), selected, val_brier, val_bss, test_brier, test_bss, n_test: test.labels.len(), mdi };
    Ok(RunOutput { record, plan, calibration, model, report, test_index: test.table.index().to_vec(), test_predictions: test_pred })
}

#[allow(clippy::too_many_arguments)]
fn run_network(
    cube: &FeatureCube,
    spec: &ExperimentSpec,
    settings: &ModelSettings,
    train_days: &[usize],
    val_days: &[usize],
    test_days: &[usize],
    val_labels: &[u8],
) -> Result<(String, Vec<f64>, Vec<f64>, FittedModel)> {
    let late = &settings.late_channels;
    let main: Vec<String> = spec.features.iter().filter(|f| !late.contains(f)).cloned().collect();
    if main.is_empty() {
        return Err(Error::config("network needs at least one main input channel"));
    }
    let mut tr = nn::cube_data(cube, train_days, &main, late)?;
    let mut va = nn::cube_data(cube, val_days, &main, late)?;
    let mut te = nn::cube_data(cube, test_days, &main, late)?;
    let ms = ChannelStats::fit(&tr.main, &main);
    let ls = ChannelStats::fit(&tr.late, late);
    for d in [&mut tr, &mut va, &mut te] {
        ms.apply(&mut d.main);
        ls.apply(&mut d.late);
    }
    let valid = cube.mask.valid_indices();
    let g = cube.geometry;
    let mut best: Option<(f64, usize, NetworkSpec, TrainOutcome)> = None;
    for &filters in &settings.network_filters_grid {
        let params = SegnetParams {
            height: g.height_px,
            width: g.width_px,
            input_channels: main.len(),
            late_channels: late.len(),
            base_filters: filters,
            ..settings.network.clone()
        };
        let (net, _) = nn::build_segnet(&params, &valid)?;
        let cfg = TrainerConfig { seed: rng::derive_seed(spec.seed, &[0x7E, filters as u64]), ..settings.trainer.clone() };
        let init = Weights::init(&net, rng::derive_seed(spec.seed, &[0x1E, filters as u64]));
        let outcome = nn::train(&net, init, &tr, &va, &cfg)?;
        let vp = nn::predict(&net, &outcome.weights, &va.main, &va.late, 8)?;
        let b = brier(&vp, val_labels)?;
        if best.as_ref().map_or(true, |(bb, ..)| b < *bb) {
            best = Some((b, filters, net, outcome));
        }
    }
    let (_, filters, net, outcome) = best.ok_or_else(|| Error::config("network_filters_grid is empty"))?;
    let vp = nn::predict(&net, &outcome.weights, &va.main, &va.late, 8)?;
    let tp = nn::predict(&net, &outcome.weights, &te.main, &te.late, 8)?;
    let weights = outcome.weights.clone();
    Ok((format!("base_filters={filters}"), vp, tp, FittedModel::Network { spec: Box::new(net), weights, main: ms, late: ls, outcome }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Add,
    Remove,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Add => "add",
            Direction::Remove => "remove",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaSummary {
    pub feature: String,
    pub direction: Direction,
    /// Test-BSS differences (changed set minus base set), one per pair.
    pub deltas: Vec<f64>,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn same_context(a: &ExperimentSpec, b: &ExperimentSpec) -> bool {
    a.family == b.family
        && a.season == b.season
        && a.lead == b.lead
        && a.threshold == b.threshold
        && a.fold_year == b.fold_year
        && a.scenario_seed == b.scenario_seed
        && a.seed == b.seed
}

/// Paired test-BSS deltas from adding `feature` to `base` or removing it
/// from `base`, over every context where both records exist.
pub fn delta_bss(records: &[EvalRecord], base: &[String], feature: &str, direction: Direction) -> Result<DeltaSummary> {
    let base_set: BTreeSet<&str> = base.iter().map(String::as_str).collect();
    let mut other = base_set.clone();
    match direction {
        Direction::Add => {
            if !other.insert(feature) {
                return Err(Error::config(format!("{feature} is already in the base set")));
            }
        }
        Direction::Remove => {
            if !other.remove(feature) {
                return Err(Error::config(format!("{feature} is not in the base set")));
            }
        }
    }
    let mut deltas = Vec::new();
    for r in records.iter().filter(|r| r.spec.feature_set() == base_set) {
        if let Some(o) = records.iter().find(|o| o.spec.feature_set() == other && same_context(&o.spec, &r.spec)) {
            deltas.push(o.test_bss - r.test_bss);
        }
    }
    if deltas.is_empty() {
        return Err(Error::Unmatched(format!("no record pairs for {direction} {feature} against {}", base.join("+"))));
    }
    Ok(DeltaSummary {
        feature: feature.into(),
        direction,
        median: median(&deltas),
        min: deltas.iter().copied().fold(f64::INFINITY, f64::min),
        max: deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        deltas,
    })
}

pub fn write_deltas(path: impl AsRef<Path>, deltas: &[DeltaSummary]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
    w.write_record(["feature", "direction", "n", "median", "min", "max"])?;
    for d in deltas {
        w.write_record([d.feature.clone(), d.direction.to_string(), d.deltas.len().to_string(), d.median.to_string(), d.min.to_string(), d.max.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdiRow {
    pub feature: String,
    pub n: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-feature MDI across forest records, in first-seen feature order.
pub fn mdi_report(records: &[EvalRecord]) -> Result<Vec<MdiRow>> {
    let imps: Vec<&Importance> = records.iter().filter_map(|r| r.mdi.as_ref()).collect();
    if imps.is_empty() {
        return Err(Error::invalid("no forest records"));
    }
    let mut names: Vec<&str> = Vec::new();
    for imp in &imps {
        for c in &imp.columns {
            if !names.contains(&c.as_str()) {
                names.push(c);
            }
        }
    }
    Ok(names
        .into_iter()
        .map(|f| {
            let vals: Vec<f64> =
                imps.iter().filter_map(|i| i.columns.iter().position(|c| c == f).map(|j| i.values[j])).collect();
            MdiRow {
                feature: f.into(),
                n: vals.len(),
                median: median(&vals),
                min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect())
}

pub fn write_mdi(path: impl AsRef<Path>, rows: &[MdiRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
    w.write_record(["feature", "n", "median", "min", "max"])?;
    for r in rows {
        w.write_record([r.feature.clone(), r.n.to_string(), r.median.to_string(), r.min.to_string(), r.max.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appendix-B style table: one row per (season, lead, threshold, config)
/// with the median validation and test BSS over folds and seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub season: String,
    pub lead: i64,
    pub threshold: f64,
    pub config: String,
    pub valmedian: f64,
    pub testmedian: f64,
}

pub fn results_table(records: &[EvalRecord]) -> Vec<ResultRow> {
    let mut keys: Vec<(String, i64, u64, String)> = Vec::new();
    let key = |r: &EvalRecord| {
        let season = r.spec.season.map(|s| s.to_string()).unwrap_or_else(|| "all".into());
        (season, r.spec.lead, r.spec.threshold.to_bits(), r.spec.label())
    };
    for r in records {
        let k = key(r);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|k| {
            let group: Vec<&EvalRecord> = records.iter().filter(|r| key(r) == k).collect();
            let val: Vec<f64> = group.iter().map(|r| r.val_bss).collect();
            let test: Vec<f64> = group.iter().map(|r| r.test_bss).collect();
            ResultRow { season: k.0, lead: k.1, threshold: f64::from_bits(k.2), config: k.3, valmedian: median(&val), testmedian: median(&test) }
        })
        .collect()
}

pub fn write_results(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
    w.write_record(["season", "lead", "threshold", "config", "valmedian", "testmedian"])?;
    for r in rows {
        w.write_record([r.season.clone(), r.lead.to_string(), r.threshold.to_string(), r.config.clone(), r.valmedian.to_string(), r.testmedian.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_records(path: impl AsRef<Path>, records: &[EvalRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
    w.write_record([
        "family", "features", "season", "lead", "threshold", "fold", "scenario_seed", "seed", "selected", "val_brier", "val_bss", "test_brier", "test_bss", "n_test",
    ])?;
    for r in records {
        let s = &r.spec;
        w.write_record([
            s.family.to_string(),
            s.features.join("+"),
            s.season.map(|x| x.to_string()).unwrap_or_else(|| "all".into()),
            s.lead.to_string(),
            s.threshold.to_string(),
            s.fold_year.to_string(),
            s.scenario_seed.to_string(),
            s.seed.to_string(),
            r.selected.clone(),
            r.val_brier.to_string(),
            r.val_bss.to_string(),
            r.test_brier.to_string(),
            r.test_bss.to_string(),
            r.n_test.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Contrast between the forest's MDI and paired ablation for an exactly
/// duplicated informative feature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuplicateDiagnostic {
    pub informative: String,
    pub twin: String,
    pub other: String,
    /// Share of the pair's combined MDI held by the original and the twin.
    pub mdi_share_original: f64,
    pub mdi_share_twin: f64,
    pub mdi_noise: f64,
    /// Linear-model test-BSS deltas (changed set minus full set).
    pub delta_remove_twin: f64,
    pub delta_remove_both: f64,
    /// Delta of removing the informative feature when its twin is noise.
    pub delta_remove_without_duplicate: f64,
    /// Forest test-BSS delta of removing the twin.
    pub forest_delta_remove_twin: f64,
}

impl DuplicateDiagnostic {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
        w.write_record(["metric", "value"])?;
        for (k, v) in [
            ("mdi_share_original", self.mdi_share_original),
            ("mdi_share_twin", self.mdi_share_twin),
            ("mdi_noise", self.mdi_noise),
            ("delta_remove_twin", self.delta_remove_twin),
            ("delta_remove_both", self.delta_remove_both),
            ("delta_remove_without_duplicate", self.delta_remove_without_duplicate),
            ("forest_delta_remove_twin", self.forest_delta_remove_twin),
        ] {
            w.write_record([k.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub const TWIN_SUFFIX: &str = "_twin";
pub const NOISE_FEATURE: &str = "noise";

/// Add `informative` + `_twin` (an exact copy) and a standard-normal
/// `noise` feature to the cube, then contrast forest MDI with paired
/// ablation deltas.
pub fn duplicate_feature_diagnostic(
    cube: &FeatureCube,
    informative: &str,
    other: &str,
    fold_year: i32,
    scenario_seed: u64,
    settings: &ModelSettings,
    seed: u64,
) -> Result<DuplicateDiagnostic> {
    let j = cube.feature_index(informative).ok_or_else(|| Error::MissingFeature { feature: informative.into(), reason: "not in the feature cube".into() })?;
    let twin = format!("{informative}{TWIN_SUFFIX}");
    let mut c = cube.clone();
    c.push_feature(&twin, cube.days.iter().map(|d| d.rasters[j].clone()).collect())?;
    let mut r = rng::stream(seed, &[0xD0]);
    let noise: Vec<Raster> = cube
        .days
        .iter()
        .map(|d| {
            let n = d.label.values().len();
            Raster::new(cube.geometry, (0..n).map(|_| r.sample::<f64, _>(StandardNormal) as f32).collect())
        })
        .collect::<Result<_>>()?;
    c.push_feature(NOISE_FEATURE, noise)?;
    let run = |family: ModelFamily, feats: &[&str]| -> Result<EvalRecord> {
        let spec = ExperimentSpec {
            family,
            features: feats.iter().map(|s| s.to_string()).collect(),
            season: None,
            lead: cube.lead_hours,
            threshold: cube.threshold_mm,
            fold_year,
            scenario_seed,
            seed,
        };
        Ok(run_config(&c, &spec, settings)?.record)
    };
    let full = [informative, twin.as_str(), other];
    let forest_full = run(ModelFamily::Forest, &[informative, twin.as_str(), other, NOISE_FEATURE])?;
    let forest_one = run(ModelFamily::Forest, &[informative, other, NOISE_FEATURE])?;
    let imp = forest_full.mdi.as_ref().expect("forest records carry MDI");
    let (a, b, n) = (imp.values[0], imp.values[1], imp.values[3]);
    let lin_full = run(ModelFamily::Linear, &full)?;
    let lin_one = run(ModelFamily::Linear, &[informative, other])?;
    let lin_none = run(ModelFamily::Linear, &[other])?;
    let lin_noise = run(ModelFamily::Linear, &[informative, NOISE_FEATURE, other])?;
    let lin_noise_removed = run(ModelFamily::Linear, &[NOISE_FEATURE, other])?;
    Ok(DuplicateDiagnostic {
        informative: informative.into(),
        twin,
        other: other.into(),
        mdi_share_original: a / (a + b),
        mdi_share_twin: b / (a + b),
        mdi_noise: n,
        delta_remove_twin: lin_one.test_bss - lin_full.test_bss,
        delta_remove_both: lin_none.test_bss - lin_full.test_bss,
        delta_remove_without_duplicate: lin_noise_removed.test_bss - lin_noise.test_bss,
        forest_delta_remove_twin: forest_one.test_bss - forest_full.test_bss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: ModelFamily, features: &[&str], seed: u64) -> ExperimentSpec {
        ExperimentSpec {
            family,
            features: features.iter().map(|s| s.to_string()).collect(),
            season: None,
            lead: 12,
            threshold: 0.5,
            fold_year: 2016,
            scenario_seed: seed,
            seed: 0,
        }
    }

    fn record(family: ModelFamily, features: &[&str], seed: u64, test_bss: f64) -> EvalRecord {
        EvalRecord {
            spec: spec(family, features, seed),
            selected: "-".into(),
            val_brier: 0.05,
            val_bss: test_bss - 0.01,
            test_brier: 0.05,
            test_bss,
            n_test: 10,
            mdi: None,
        }
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn remove_delta_pairs_by_context() {
        let l = ModelFamily::Linear;
        let recs = vec![
            record(l, &["a", "b"], 1, 0.30),
            record(l, &["a"], 1, 0.20),
            record(l, &["b", "a"], 2, 0.40),
            record(l, &["a"], 2, 0.35),
            record(ModelFamily::Forest, &["a"], 3, 0.0),
        ];
        let d = delta_bss(&recs, &names(&["a", "b"]), "b", Direction::Remove).unwrap();
        assert_eq!(d.deltas.len(), 2);
        assert!((d.deltas[0] + 0.10).abs() < 1e-12 && (d.deltas[1] + 0.05).abs() < 1e-12);
        assert!((d.median + 0.075).abs() < 1e-12);
        assert!((d.min + 0.10).abs() < 1e-12 && (d.max + 0.05).abs() < 1e-12);
    }

    #[test]
    fn add_is_the_negated_remove_on_the_same_pair() {
        let l = ModelFamily::Linear;
        let recs = vec![record(l, &["a", "b"], 1, 0.30), record(l, &["a"], 1, 0.20)];
        let add = delta_bss(&recs, &names(&["a"]), "b", Direction::Add).unwrap();
        let rem = delta_bss(&recs, &names(&["a", "b"]), "b", Direction::Remove).unwrap();
        assert_eq!(add.median, -rem.median);
    }

    #[test]
    fn unmatched_and_inconsistent_requests_fail() {
        let recs = vec![record(ModelFamily::Linear, &["a", "b"], 1, 0.3)];
        assert!(matches!(delta_bss(&recs, &names(&["a", "b"]), "b", Direction::Remove), Err(Error::Unmatched(_))));
        assert!(matches!(delta_bss(&recs, &names(&["a"]), "a", Direction::Add), Err(Error::Config(_))));
        assert!(matches!(delta_bss(&recs, &names(&["a"]), "c", Direction::Remove), Err(Error::Config(_))));
        let other_family = vec![record(ModelFamily::Linear, &["a", "b"], 1, 0.3), record(ModelFamily::Forest, &["a"], 1, 0.2)];
        assert!(delta_bss(&other_family, &names(&["a", "b"]), "b", Direction::Remove).is_err());
    }

    #[test]
    fn mdi_report_aggregates_and_single_record_is_identity() {
        let mut r1 = record(ModelFamily::Forest, &["a", "b"], 1, 0.2);
        r1.mdi = Some(Importance { columns: names(&["a", "b"]), values: vec![0.7, 0.3], degenerate: false });
        let rows = mdi_report(std::slice::from_ref(&r1)).unwrap();
        assert_eq!(rows.iter().map(|r| r.median).collect::<Vec<_>>(), vec![0.7, 0.3]);
        let mut r2 = record(ModelFamily::Forest, &["a", "b"], 2, 0.2);
        r2.mdi = Some(Importance { columns: names(&["a", "b"]), values: vec![0.5, 0.5], degenerate: false });
        let rows = mdi_report(&[r1, r2]).unwrap();
        assert!((rows[0].median - 0.6).abs() < 1e-12);
        assert_eq!((rows[0].min, rows[0].max, rows[0].n), (0.5, 0.7, 2));
        assert!(mdi_report(&[record(ModelFamily::Linear, &["a"], 1, 0.1)]).is_err());
    }

    #[test]
    fn results_table_groups_over_seeds() {
        let l = ModelFamily::Linear;
        let recs = vec![record(l, &["a"], 1, 0.1), record(l, &["a"], 2, 0.3), record(l, &["a"], 3, 0.2), record(l, &["b"], 1, 0.0)];
        let rows = results_table(&recs);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].config, "linear:a");
        assert_eq!(rows[0].season, "all");
        assert!((rows[0].testmedian - 0.2).abs() < 1e-12);
        assert!((rows[0].valmedian - 0.19).abs() < 1e-12);
    }

    #[test]
    fn results_csv_has_the_declared_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_results(&p, &results_table(&[record(ModelFamily::Linear, &["a"], 1, 0.1)])).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "season,lead,threshold,config,valmedian,testmedian");
    }

    #[test]
    fn spec_validation() {
        assert!(spec(ModelFamily::IsotonicInput, &["a", "b"], 1).validate().is_err());
        assert!(spec(ModelFamily::Linear, &[], 1).validate().is_err());
        assert!(spec(ModelFamily::Linear, &["a", "a"], 1).validate().is_err());
        assert!(spec(ModelFamily::Linear, &["a", "b"], 1).validate().is_ok());
        assert_eq!("isotonic_input".parse::<ModelFamily>().unwrap(), ModelFamily::IsotonicInput);
        assert!("svm".parse::<ModelFamily>().is_err());
    }
}
