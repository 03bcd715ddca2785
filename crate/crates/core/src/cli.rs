//! Command-line front end: `synth`, `run`, `ablate` and `report`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::ablation::{self, Direction, EvalRecord, ExperimentSpec, FittedModel, ModelFamily, ModelSettings};
use crate::error::{Error, Result};
use crate::experiment::Season;
use crate::features::{build_feature_cube, FeatureCube, FeatureOptions, StandardizationStats};
use crate::forest::{mdi, ForestConfig};
use crate::grid::{io as rio, generate_scenario, Raster, Scenario, ScenarioConfig};
use crate::linear::LinearFitConfig;
use crate::nn::{self, ChannelStats, NnOptimizer, SegnetParams, StopReason, TrainerConfig, Weights};
use crate::rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub model: ModelFamily,
    /// Empty means the family default: every network input channel, the
    /// fine forecast for `isotonic_input`, otherwise the fine forecast plus
    /// the coarse ensemble mean.
    pub features: Vec<String>,
    /// `all`, `summer` or `winter`.
    pub season: String,
    pub lead: i64,
    pub threshold: f64,
    pub fold_year: i32,
    pub seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            model: ModelFamily::Linear,
            features: Vec::new(),
            season: "all".into(),
            lead: 12,
            threshold: 0.5,
            fold_year: 2016,
            seed: 0,
        }
    }
}

/// Search grids and network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub linear_c: Vec<f64>,
    pub network_base_filters: Vec<usize>,
    pub late_channels: Vec<String>,
}

impl Default for GridSection {
    fn default() -> Self {
        let m = ModelSettings::default();
        GridSection { linear_c: m.linear_c_grid, network_base_filters: m.network_filters_grid, late_channels: m.late_channels }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub families: Vec<ModelFamily>,
    /// Reference feature set.
    pub base: Vec<String>,
    /// Features added to the reference set one at a time.
    pub add: Vec<String>,
    /// Features removed from the reference set one at a time.
    pub remove: Vec<String>,
    /// Scenario seeds; empty means the configured scenario only.
    pub scenario_seeds: Vec<u64>,
    /// Empty lists fall back to the experiment section.
    pub leads: Vec<i64>,
    pub thresholds: Vec<f64>,
    pub seasons: Vec<String>,
    pub fold_years: Vec<i32>,
    pub duplicate_diagnostic: bool,
    pub duplicate_feature: String,
    pub duplicate_other: String,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            families: vec![ModelFamily::Linear],
            base: vec!["harmonie".into(), "gefs_avg".into()],
            add: vec![],
            remove: vec!["harmonie".into(), "gefs_avg".into()],
            scenario_seeds: vec![],
            leads: vec![],
            thresholds: vec![],
            seasons: vec![],
            fold_years: vec![],
            duplicate_diagnostic: false,
            duplicate_feature: "harmonie".into(),
            duplicate_other: "gefs_avg".into(),
        }
    }
}

/// Trainer settings for `run --overfit-sanity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverfitSection {
    pub optimizer: NnOptimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub target_train_brier: f64,
}

impl Default for OverfitSection {
    fn default() -> Self {
        OverfitSection { optimizer: NnOptimizer::Adam, learning_rate: 1e-3, batch_size: 4, max_epochs: 500, target_train_brier: 0.02 }
    }
}

/// Everything a command needs, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub output_dir: PathBuf,
    /// Read the scenario from here instead of generating it.
    pub scenario_dir: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub experiment: ExperimentSection,
    pub trainer: TrainerConfig,
    pub linear: LinearFitConfig,
    pub forest: ForestConfig,
    pub network: SegnetParams,
    pub grid: GridSection,
    pub ablation: AblationSection,
    pub overfit: OverfitSection,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        RunConfigFile {
            output_dir: PathBuf::from("stratus-out"),
            scenario_dir: None,
            scenario: ScenarioConfig::default(),
            experiment: ExperimentSection::default(),
            trainer: TrainerConfig::default(),
            linear: LinearFitConfig::default(),
            forest: ForestConfig::default(),
            network: SegnetParams::default(),
            grid: GridSection::default(),
            ablation: AblationSection::default(),
            overfit: OverfitSection::default(),
        }
    }
}

fn has_key(v: &toml::Value, section: &str, key: &str) -> bool {
    v.get(section).and_then(|s| s.get(key)).is_some()
}

impl RunConfigFile {
    /// Parse a config. Seeds the file leaves unset fall back to `STRATUS_SEED`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let perr = |m: String| Error::Parse { path: path.into(), message: m };
        let raw: toml::Value = toml::from_str(text).map_err(|e| perr(e.to_string()))?;
        let mut cfg: RunConfigFile = toml::from_str(text).map_err(|e| perr(e.to_string()))?;
        if !has_key(&raw, "scenario", "seed") {
            cfg.scenario.seed = rng::env_seed_or(cfg.scenario.seed);
        }
        if !has_key(&raw, "experiment", "seed") {
            cfg.experiment.seed = rng::env_seed_or(cfg.experiment.seed);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.trainer.validate()?;
        self.linear.validate()?;
        self.forest.validate()?;
        TrainerConfig {
            optimizer: self.overfit.optimizer,
            learning_rate: self.overfit.learning_rate,
            batch_size: self.overfit.batch_size,
            max_epochs: self.overfit.max_epochs,
            ..TrainerConfig::default()
        }
        .validate()?;
        parse_season(&self.experiment.season)?;
        for s in &self.ablation.seasons {
            parse_season(s)?;
        }
        if self.grid.linear_c.is_empty() || self.grid.network_base_filters.is_empty() {
            return Err(Error::config("search grids must not be empty"));
        }
        if self.scenario_dir.is_some() && !self.ablation.scenario_seeds.is_empty() {
            return Err(Error::config("ablation.scenario_seeds cannot be combined with scenario_dir"));
        }
        Ok(())
    }

    /// Fill in family-default features.
    pub fn resolve(&mut self) {
        let e = &mut self.experiment;
        if e.features.is_empty() {
            e.features = match e.model {
                ModelFamily::Network => {
                    let mut f = nn::default_main_channels();
                    f.extend(self.grid.late_channels.iter().cloned());
                    f
                }
                ModelFamily::IsotonicInput => vec!["harmonie".into()],
                _ => vec!["harmonie".into(), "gefs_avg".into()],
            };
        }
    }

    pub fn settings(&self) -> ModelSettings {
        ModelSettings {
            linear: self.linear.clone(),
            linear_c_grid: self.grid.linear_c.clone(),
            forest: self.forest.clone(),
            trainer: self.trainer.clone(),
            network: self.network.clone(),
            network_filters_grid: self.grid.network_base_filters.clone(),
            late_channels: self.grid.late_channels.clone(),
        }
    }

    fn write_resolved(&self, dir: &Path) -> Result<()> {
        let p = dir.join(RESOLVED_CONFIG);
        fs::write(&p, self.to_toml()).map_err(|e| Error::io(p, e))
    }
}

pub fn parse_season(s: &str) -> Result<Option<Season>> {
    match s {
        "all" => Ok(None),
        other => other.parse().map(Some),
    }
}

#[derive(Debug, Parser)]
#[command(name = "stratus", version, about = "Calibrated precipitation exceedance forecasts from gridded model output")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Overrides `scenario.seed` for synth and `experiment.seed` otherwise.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario into `<output_dir>/scenario`.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Fit, calibrate and evaluate one experiment.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<ModelFamily>,
        #[arg(long)]
        lead: Option<i64>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Repeat to list several features.
        #[arg(long = "feature")]
        features: Vec<String>,
        #[arg(long)]
        season: Option<String>,
        #[arg(long)]
        fold_year: Option<i32>,
        /// Train the network on this many days with validation equal to training.
        #[arg(long, value_name = "N")]
        overfit_sanity: Option<usize>,
    },
    /// Run the ablation grid and write results, delta and MDI tables.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Merge report directories into plot-ready CSVs.
    Report {
        /// Run or report directories.
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        output: PathBuf,
    },
}

impl clap::ValueEnum for ModelFamily {
    fn value_variants<'a>() -> &'a [Self] {
        &[ModelFamily::IsotonicInput, ModelFamily::Linear, ModelFamily::Forest, ModelFamily::Network]
    }
    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            ModelFamily::IsotonicInput => "isotonic_input",
            ModelFamily::Linear => "linear",
            ModelFamily::Forest => "forest",
            ModelFamily::Network => "network",
        }))
    }
}

/// Parse arguments, run the command and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfigFile> {
    let mut cfg = match &common.config {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::parse("", Path::new("<defaults>"))?,
    };
    if let Some(o) = &common.output {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn ensure_dir(p: &Path) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Error::invalid(format!("output directory {} does not exist", p.display())))
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { common } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.scenario.seed = s;
            }
            cfg.validate()?;
            cmd_synth(&cfg).map(|_| ())
        }
        Command::Run { common, model, lead, threshold, features, season, fold_year, overfit_sanity } => {
            let mut cfg = load_config(&common)?;
            let e = &mut cfg.experiment;
            if let Some(s) = common.seed {
                e.seed = s;
            }
            if let Some(m) = model {
                e.model = m;
            }
            if let Some(l) = lead {
                e.lead = l;
            }
            if let Some(t) = threshold {
                e.threshold = t;
            }
            if !features.is_empty() {
                e.features = features;
            }
            if let Some(s) = season {
                e.season = s;
            }
            if let Some(f) = fold_year {
                e.fold_year = f;
            }
            cfg.resolve();
            cfg.validate()?;
            match overfit_sanity {
                Some(n) => cmd_overfit(&cfg, n).map(|_| ()),
                None => cmd_run(&cfg).map(|_| ()),
            }
        }
        Command::Ablate { common, jobs } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.experiment.seed = s;
            }
            cfg.validate()?;
            cmd_ablate(&cfg, jobs.max(1)).map(|_| ())
        }
        Command::Report { dirs, output } => cmd_report(&dirs, &output),
    }
}

/// Generate the configured scenario and write it to `<output_dir>/scenario`.
pub fn cmd_synth(cfg: &RunConfigFile) -> Result<PathBuf> {
    ensure_dir(&cfg.output_dir)?;
    let s = generate_scenario(&cfg.scenario)?;
    let dir = cfg.output_dir.join("scenario");
    mkdir(&dir)?;
    s.write_dir(&dir)?;
    cfg.write_resolved(&cfg.output_dir)?;
    for c in &s.achieved_cover {
        println!("cover lead {}h > {} mm: target {:.4}, achieved {:.4}", c.lead_hours, c.threshold_mm, c.target, c.achieved);
    }
    println!("wrote {}", dir.display());
    Ok(dir)
}

fn load_scenario(cfg: &RunConfigFile, seed_override: Option<u64>) -> Result<Scenario> {
    match &cfg.scenario_dir {
        Some(d) => Scenario::read_dir(d),
        None => {
            let mut sc = cfg.scenario.clone();
            if let Some(s) = seed_override {
                sc.seed = s;
            }
            generate_scenario(&sc)
        }
    }
}

fn cube_for(s: &Scenario, lead: i64, threshold: f64, names: &BTreeSet<String>) -> Result<FeatureCube> {
    let names: Vec<String> = names.iter().cloned().collect();
    build_feature_cube(s, lead, threshold, &names, FeatureOptions::for_scenario(s))
}

fn run_label(spec: &ExperimentSpec) -> String {
    let season = spec.season.map(|s| s.to_string()).unwrap_or_else(|| "all".into());
    format!(
        "{}_{}_{}h_{}mm_{}_{}_s{}",
        spec.family,
        spec.features.join("+"),
        spec.lead,
        spec.threshold,
        season,
        spec.fold_year,
        spec.seed
    )
}

fn experiment_spec(cfg: &RunConfigFile, scenario_seed: u64) -> Result<ExperimentSpec> {
    let e = &cfg.experiment;
    Ok(ExperimentSpec {
        family: e.model,
        features: e.features.clone(),
        season: parse_season(&e.season)?,
        lead: e.lead,
        threshold: e.threshold,
        fold_year: e.fold_year,
        scenario_seed,
        seed: e.seed,
    })
}

fn needed_features(specs: &[ExperimentSpec], settings: &ModelSettings) -> BTreeSet<String> {
    let mut names: BTreeSet<String> = specs.iter().flat_map(|s| s.features.iter().cloned()).collect();
    if specs.iter().any(|s| s.family == ModelFamily::Network) {
        names.extend(settings.late_channels.iter().cloned());
    }
    names
}

/// Fit, calibrate and evaluate the configured experiment; returns the run directory.
pub fn cmd_run(cfg: &RunConfigFile) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    cfg.resolve();
    let cfg = &cfg;
    ensure_dir(&cfg.output_dir)?;
    let s = load_scenario(cfg, None)?;
    let spec = experiment_spec(cfg, s.config.seed)?;
    let settings = cfg.settings();
    let cube = cube_for(&s, spec.lead, spec.threshold, &needed_features(std::slice::from_ref(&spec), &settings))?;
    let out = ablation::run_config(&cube, &spec, &settings)?;
    let dir = cfg.output_dir.join("runs").join(run_label(&spec));
    mkdir(&dir)?;
    cfg.write_resolved(&dir)?;
    ablation::write_records(dir.join("record.csv"), std::slice::from_ref(&out.record))?;
    out.plan.write_csv(dir.join("splits.csv"))?;
    out.calibration.write_csv(dir.join("calibration.csv"))?;
    out.report.write_dir(&dir.join("report"))?;
    let model_dir = dir.join("model");
    mkdir(&model_dir)?;
    match &out.model {
        FittedModel::Isotonic => {}
        FittedModel::Linear { params, stats } => {
            params.write_csv(model_dir.join("coefficients.csv"))?;
            write_stats(&model_dir.join("standardization.csv"), stats)?;
        }
        FittedModel::Forest(f) => {
            f.write_csv(model_dir.join("forest.csv"))?;
            mdi(f).write_csv(model_dir.join("mdi.csv"))?;
        }
        FittedModel::Network { spec: net, weights, main, late, outcome } => {
            nn::write_weights(&model_dir, net, weights)?;
            nn::write_history(model_dir.join("history.csv"), &outcome.history)?;
            write_channel_stats(&model_dir.join("channels.csv"), &[main, late])?;
        }
    }
    let r = &out.record;
    println!("{}: selected {}", run_label(&spec), r.selected);
    println!("validation brier {:.6} bss {:.4}", r.val_brier, r.val_bss);
    println!("test brier {:.6} bss {:.4} (n = {})", r.test_brier, r.test_bss, r.n_test);
    println!("wrote {}", dir.display());
    Ok(dir)
}

fn write_stats(path: &Path, stats: &StandardizationStats) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
    w.write_record(["column", "mean", "sd"])?;
    for ((c, m), s) in stats.columns.iter().zip(&stats.mean).zip(&stats.sd) {
        w.write_record([c.clone(), m.to_string(), s.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_channel_stats(path: &Path, sets: &[&ChannelStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
    w.write_record(["channel", "mean", "sd"])?;
    for s in sets {
        for ((c, m), sd) in s.names.iter().zip(&s.mean).zip(&s.sd) {
            w.write_record([c.clone(), m.to_string(), sd.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Outcome of the overfit sanity run.
#[derive(Debug, Clone)]
pub struct OverfitOutcome {
    pub dir: PathBuf,
    pub best_train_brier: f64,
    pub epochs: usize,
    pub stop_reason: StopReason,
}

/// Train the network on the first `n_images` usable days with validation
/// equal to training until the training Brier falls below the target.
/// Learning-rate decay and patience are disabled.
pub fn cmd_overfit(cfg: &RunConfigFile, n_images: usize) -> Result<OverfitOutcome> {
    let mut cfg = cfg.clone();
    cfg.resolve();
    let cfg = &cfg;
    ensure_dir(&cfg.output_dir)?;
    let s = load_scenario(cfg, None)?;
    let spec = experiment_spec(cfg, s.config.seed)?;
    let settings = cfg.settings();
    let late = &settings.late_channels;
    let main: Vec<String> = spec.features.iter().filter(|f| !late.contains(f)).cloned().collect();
    let mut names: BTreeSet<String> = main.iter().cloned().collect();
    names.extend(late.iter().cloned());
    let cube = cube_for(&s, spec.lead, spec.threshold, &names)?;
    if n_images == 0 || n_images > cube.days.len() {
        return Err(Error::config(format!("overfit sanity needs 1..={} images, got {n_images}", cube.days.len())));
    }
    let days: Vec<usize> = (0..n_images).collect();
    let mut data = nn::cube_data(&cube, &days, &main, late)?;
    ChannelStats::fit(&data.main, &main).apply(&mut data.main);
    ChannelStats::fit(&data.late, late).apply(&mut data.late);
    let g = cube.geometry;
    let filters = settings.network_filters_grid[0];
    let params = SegnetParams {
        height: g.height_px,
        width: g.width_px,
        input_channels: main.len(),
        late_channels: late.len(),
        base_filters: filters,
        ..settings.network.clone()
    };
    let (net, _) = nn::build_segnet(&params, &cube.mask.valid_indices())?;
    let o = &cfg.overfit;
    let tcfg = TrainerConfig {
        optimizer: o.optimizer,
        learning_rate: o.learning_rate,
        batch_size: o.batch_size,
        max_epochs: o.max_epochs,
        patience: o.max_epochs,
        plateau_epochs: o.max_epochs,
        target_train_brier: Some(o.target_train_brier),
        seed: rng::derive_seed(spec.seed, &[0x7E, filters as u64]),
        ..settings.trainer.clone()
    };
    let init = Weights::init(&net, rng::derive_seed(spec.seed, &[0x1E, filters as u64]));
    let outcome = nn::train(&net, init, &data, &data, &tcfg)?;
    let dir = cfg.output_dir.join("runs").join(format!("overfit_{n_images}_s{}", spec.seed));
    mkdir(&dir)?;
    cfg.write_resolved(&dir)?;
    nn::write_history(dir.join("history.csv"), &outcome.history)?;
    nn::write_weights(dir.join("model"), &net, &outcome.weights)?;
    let best = outcome.history.iter().map(|h| h.val_brier).fold(f64::INFINITY, f64::min);
    println!("overfit sanity: {} epochs, best training brier {best:.5}, stopped: {}", outcome.history.len(), outcome.stop_reason);
    println!("wrote {}", dir.display());
    if best >= o.target_train_brier {
        return Err(Error::NotConverged { iterations: outcome.history.len(), last_loss: best });
    }
    Ok(OverfitOutcome { dir, best_train_brier: best, epochs: outcome.history.len(), stop_reason: outcome.stop_reason })
}

/// Every spec of the ablation grid for one scenario seed, lead and threshold.
pub fn ablation_specs(cfg: &RunConfigFile, scenario_seed: u64, lead: i64, threshold: f64) -> Result<Vec<ExperimentSpec>> {
    let a = &cfg.ablation;
    let e = &cfg.experiment;
    let seasons: Vec<Option<Season>> = if a.seasons.is_empty() {
        vec![parse_season(&e.season)?]
    } else {
        a.seasons.iter().map(|s| parse_season(s)).collect::<Result<_>>()?
    };
    let folds = if a.fold_years.is_empty() { vec![e.fold_year] } else { a.fold_years.clone() };
    let mut sets: Vec<Vec<String>> = vec![a.base.clone()];
    for f in &a.add {
        if a.base.contains(f) {
            return Err(Error::config(format!("ablation.add: {f} is already in the base set")));
        }
        let mut s = a.base.clone();
        s.push(f.clone());
        sets.push(s);
    }
    for f in &a.remove {
        if !a.base.contains(f) {
            return Err(Error::config(format!("ablation.remove: {f} is not in the base set")));
        }
        let s: Vec<String> = a.base.iter().filter(|x| *x != f).cloned().collect();
        if !s.is_empty() {
            sets.push(s);
        }
    }
    let mut out = Vec::new();
    for &family in &a.families {
        for &season in &seasons {
            for &fold_year in &folds {
                for features in &sets {
                    if family == ModelFamily::IsotonicInput && features.len() != 1 {
                        continue;
                    }
                    out.push(ExperimentSpec {
                        family,
                        features: features.clone(),
                        season,
                        lead,
                        threshold,
                        fold_year,
                        scenario_seed,
                        seed: e.seed,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Run specs on one cube with up to `jobs` threads; results keep spec order.
pub fn run_parallel(cube: &FeatureCube, specs: &[ExperimentSpec], settings: &ModelSettings, jobs: usize) -> Result<Vec<EvalRecord>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<EvalRecord>>>> = Mutex::new((0..specs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(specs.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= specs.len() {
                    break;
                }
                let r = ablation::run_config(cube, &specs[i], settings).map(|o| o.record);
                results.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("threads joined").into_iter().map(|r| r.expect("every spec ran")).collect()
}

/// Run the ablation grid and write `records.csv`, `results.csv`,
/// `deltas.csv`, `mdi.csv` and optionally `duplicate.csv`.
pub fn cmd_ablate(cfg: &RunConfigFile, jobs: usize) -> Result<PathBuf> {
    ensure_dir(&cfg.output_dir)?;
    let a = &cfg.ablation;
    let settings = cfg.settings();
    let dir = cfg.output_dir.join("ablation");
    mkdir(&dir)?;
    cfg.write_resolved(&dir)?;
    let seeds: Vec<Option<u64>> = if a.scenario_seeds.is_empty() { vec![None] } else { a.scenario_seeds.iter().map(|s| Some(*s)).collect() };
    let leads = if a.leads.is_empty() { vec![cfg.experiment.lead] } else { a.leads.clone() };
    let thresholds = if a.thresholds.is_empty() { vec![cfg.experiment.threshold] } else { a.thresholds.clone() };
    let mut records = Vec::new();
    let mut duplicates = Vec::new();
    for seed in &seeds {
        let s = load_scenario(cfg, *seed)?;
        for &lead in &leads {
            for &thr in &thresholds {
                let specs = ablation_specs(cfg, s.config.seed, lead, thr)?;
                let mut names = needed_features(&specs, &settings);
                if a.duplicate_diagnostic {
                    names.insert(a.duplicate_feature.clone());
                    names.insert(a.duplicate_other.clone());
                }
                let cube = cube_for(&s, lead, thr, &names)?;
                eprintln!("scenario {} lead {lead}h threshold {thr} mm: {} runs", s.config.seed, specs.len());
                records.extend(run_parallel(&cube, &specs, &settings, jobs)?);
                if a.duplicate_diagnostic {
                    for fold in if a.fold_years.is_empty() { vec![cfg.experiment.fold_year] } else { a.fold_years.clone() } {
                        duplicates.push(ablation::duplicate_feature_diagnostic(
                            &cube,
                            &a.duplicate_feature,
                            &a.duplicate_other,
                            fold,
                            s.config.seed,
                            &settings,
                            cfg.experiment.seed,
                        )?);
                    }
                }
            }
        }
    }
    ablation::write_records(dir.join("records.csv"), &records)?;
    ablation::write_results(dir.join("results.csv"), &ablation::results_table(&records))?;
    let mut deltas = Vec::new();
    let mut unmatched = Vec::new();
    for (list, direction) in [(&a.add, Direction::Add), (&a.remove, Direction::Remove)] {
        for f in list {
            match ablation::delta_bss(&records, &a.base, f, direction) {
                Ok(d) => deltas.push(d),
                Err(Error::Unmatched(m)) => unmatched.push(m),
                Err(e) => return Err(e),
            }
        }
    }
    ablation::write_deltas(dir.join("deltas.csv"), &deltas)?;
    if records.iter().any(|r| r.mdi.is_some()) {
        ablation::write_mdi(dir.join("mdi.csv"), &ablation::mdi_report(&records)?)?;
    }
    for (i, d) in duplicates.iter().enumerate() {
        let name = if duplicates.len() == 1 { "duplicate.csv".to_string() } else { format!("duplicate_{i}.csv") };
        d.write_csv(dir.join(name))?;
    }
    for d in &deltas {
        println!("{} {}: median {:+.4} (min {:+.4}, max {:+.4}, n = {})", d.direction, d.feature, d.median, d.min, d.max, d.deltas.len());
    }
    println!("wrote {}", dir.display());
    if !unmatched.is_empty() {
        for m in &unmatched {
            eprintln!("unmatched: {m}");
        }
        return Err(Error::Unmatched(format!("{} delta(s) had no record pairs", unmatched.len())));
    }
    Ok(dir)
}

fn report_dir(d: &Path) -> Result<PathBuf> {
    for cand in [d.join("report"), d.to_path_buf()] {
        if cand.join("summary.json").is_file() {
            return Ok(cand);
        }
    }
    Err(Error::invalid(format!("{} holds no evaluation report", d.display())))
}

fn merge_csv(out: &Path, inputs: &[(String, PathBuf)]) -> Result<()> {
    let mut w = csv::Writer::from_path(out).map_err(|e| Error::Parse { path: out.into(), message: e.to_string() })?;
    let mut header_written = false;
    let mut header: Option<csv::StringRecord> = None;
    for (id, path) in inputs {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse { path: path.clone(), message: e.to_string() })?;
        let h = r.headers()?.clone();
        match &header {
            Some(prev) if *prev != h => {
                return Err(Error::Parse { path: path.clone(), message: "columns differ from the other reports".into() })
            }
            _ => header = Some(h.clone()),
        }
        if !header_written {
            let mut row = vec!["run_id".to_string()];
            row.extend(h.iter().map(String::from));
            w.write_record(&row)?;
            header_written = true;
        }
        for rec in r.records() {
            let rec = rec?;
            let mut row = vec![id.clone()];
            row.extend(rec.iter().map(String::from));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(out, e))
}

/// Merge reliability, histogram, daily Brier and per-pixel BSS of several
/// reports into single CSVs keyed by a run id (the directory name).
pub fn cmd_report(dirs: &[PathBuf], output: &Path) -> Result<()> {
    if dirs.is_empty() {
        return Err(Error::config("report needs at least one run directory"));
    }
    let mut runs: Vec<(String, PathBuf)> = Vec::new();
    for d in dirs {
        let rd = report_dir(d)?;
        let base = if rd.ends_with("report") { rd.parent().unwrap_or(&rd) } else { &rd };
        let id = base.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| base.display().to_string());
        if runs.iter().any(|(x, _)| *x == id) {
            return Err(Error::config(format!("two report directories share the run id {id}")));
        }
        runs.push((id, rd));
    }
    mkdir(output)?;
    for name in ["reliability.csv", "histogram.csv", "daily_brier.csv"] {
        let inputs: Vec<(String, PathBuf)> = runs.iter().map(|(id, d)| (id.clone(), d.join(name))).collect();
        merge_csv(&output.join(name), &inputs)?;
    }
    let p = output.join("pixel_bss.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["run_id", "row", "col", "bss"])?;
    for (id, d) in &runs {
        let (r, _) = rio::read_raster(d.join("pixel_bss.rst"))?;
        write_pixels(&mut w, id, &r)?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    let p = output.join("summary.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["run_id", "brier", "baseline_brier", "bss", "n_samples"])?;
    for (id, d) in &runs {
        let sp = d.join("summary.json");
        let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse { path: sp.clone(), message: e.to_string() })?;
        let field = |k: &str| v.get(k).map(|x| if x.is_null() { String::new() } else { x.to_string() }).unwrap_or_default();
        w.write_record([id.clone(), field("brier"), field("baseline_brier"), field("bss"), field("n_samples")])?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    println!("merged {} report(s) into {}", runs.len(), output.display());
    Ok(())
}

fn write_pixels(w: &mut csv::Writer<fs::File>, id: &str, r: &Raster) -> Result<()> {
    for row in 0..r.height() {
        for col in 0..r.width() {
            let v = r.get(row, col);
            if !Raster::is_fill(v) {
                w.write_record([id.to_string(), row.to_string(), col.to_string(), v.to_string()])?;
            }
        }
    }
    Ok(())
}
