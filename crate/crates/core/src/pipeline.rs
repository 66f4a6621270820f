//! Experiment orchestration: load a corpus, train per-category forecasters and
//! the selector, then run the walk-forward evaluation and backtest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backtest::{
    buy_and_hold, direction_metrics, run_backtest, BacktestConfig, BacktestError, Direction, DirectionMetrics, Trade,
};
use crate::categorize::{
    build_dataset, categorize_prefix, categorize_values, training_series, Basis, CategorizeError, CategorizedDataset,
    CategoryId, CategoryScheme,
};
use crate::forecaster::{
    naive_baseline, samples_from_series, train, ForecasterConfig, ForecasterError, ForecasterParams, ModelStore,
    ModelSummary,
};
use crate::market_data::{aggregate_frames, parse_kline_csv_frames, FrameSeries, MarketDataError};
use crate::preprocess::{sliding_windows, to_volatility, volatility_from_closes, PreprocessError};
use crate::selector::{CategorySelector, SelectorError, TransitionModel};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const SELECTOR_FILE: &str = "selector.txt";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("asset {pair}: {source}")]
    Asset {
        pair: String,
        #[source]
        source: MarketDataError,
    },
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Categorize(#[from] CategorizeError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Forecaster(#[from] ForecasterError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error("forecaster for category {category} diverged in epoch {epoch}")]
    Divergence { category: CategoryId, epoch: usize },
    #[error("no training windows in the train range")]
    NoWindows,
    #[error("test range has {frames} frames, at least {needed} are needed")]
    InsufficientTestData { frames: usize, needed: usize },
    #[error("{0} mode needs {1}")]
    MissingInput(SelectorMode, &'static str),
    #[error("expected a window of {expected} values, got {got}")]
    WindowLength { expected: usize, got: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorMode {
    /// Markov chain picks the next category (k = n-1).
    #[default]
    Markov,
    /// The realized next category is used (upper bound).
    Oracle,
    /// No selector; the observed prefix picks the model (k = n-2).
    None,
}

impl SelectorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectorMode::Markov => "markov",
            SelectorMode::Oracle => "oracle",
            SelectorMode::None => "none",
        }
    }

    pub fn scheme(&self, window_len: usize, basis: Basis) -> Result<CategoryScheme, CategorizeError> {
        match self {
            SelectorMode::Markov | SelectorMode::Oracle => CategoryScheme::with_selector(window_len, basis),
            SelectorMode::None => CategoryScheme::without_selector(window_len, basis),
        }
    }
}

impl fmt::Display for SelectorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markov" => Ok(SelectorMode::Markov),
            "oracle" => Ok(SelectorMode::Oracle),
            "none" => Ok(SelectorMode::None),
            other => Err(format!("unknown selector mode {other:?} (markov, oracle, none)")),
        }
    }
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSource {
    pub pair: String,
    /// Kline CSV; relative paths resolve against the config file's directory.
    pub path: PathBuf,
    /// Granularity of the file's rows.
    #[serde(default = "one")]
    pub source_minutes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeConfig {
    pub window_len: usize,
    pub basis: Basis,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            window_len: 8,
            basis: Basis::VolatilityChange,
        }
    }
}

/// Open-time bounds in epoch milliseconds; each range is `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_start: Option<i64>,
    pub train_end: Option<i64>,
    pub test_start: Option<i64>,
    pub test_end: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub assets: Vec<AssetSource>,
    /// Pair traded and evaluated.
    pub target: String,
    pub frame_minutes: u32,
    pub scheme: SchemeConfig,
    pub mode: SelectorMode,
    /// Update the Markov counts after every realized test step.
    pub online_selector: bool,
    pub selector_alpha: f64,
    pub forecaster: ForecasterConfig,
    pub backtest: BacktestConfig,
    pub split: SplitConfig,
    /// Master seed; every category model derives its own seed from it.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            assets: Vec::new(),
            target: String::new(),
            frame_minutes: 7,
            scheme: SchemeConfig::default(),
            mode: SelectorMode::Markov,
            online_selector: true,
            selector_alpha: 1.0,
            forecaster: ForecasterConfig::default(),
            backtest: BacktestConfig::default(),
            split: SplitConfig::default(),
            seed: 64,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml(&read_text(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn category_scheme(&self) -> Result<CategoryScheme, PipelineError> {
        Ok(self.mode.scheme(self.scheme.window_len, self.scheme.basis)?)
    }

    /// Forecaster settings with the input length tied to the window.
    pub fn forecaster_config(&self) -> ForecasterConfig {
        ForecasterConfig {
            input_len: self.scheme.window_len - 1,
            seed: self.seed,
            ..self.forecaster.clone()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(m));
        if self.assets.is_empty() {
            return fail("no assets listed".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.assets {
            if !seen.insert(a.pair.as_str()) {
                return fail(format!("asset {} listed twice", a.pair));
            }
            if a.source_minutes == 0 || !self.frame_minutes.is_multiple_of(a.source_minutes) {
                return fail(format!(
                    "asset {}: frame_minutes {} is not a multiple of source_minutes {}",
                    a.pair, self.frame_minutes, a.source_minutes
                ));
            }
        }
        if !seen.contains(self.target.as_str()) {
            return fail(format!("target {:?} is not among the assets", self.target));
        }
        if self.frame_minutes == 0 {
            return fail("frame_minutes must be positive".into());
        }
        self.category_scheme()?;
        if !(self.selector_alpha.is_finite() && self.selector_alpha >= 0.0) {
            return fail("selector_alpha must be finite and non-negative".into());
        }
        self.forecaster_config().validate()?;
        self.backtest.validate()?;
        let s = &self.split;
        let (Some(train_end), Some(test_start)) = (s.train_end, s.test_start) else {
            return fail("split.train_end and split.test_start are required".into());
        };
        if test_start < train_end {
            return fail("test range must start at or after the end of the train range".into());
        }
        if s.train_start.is_some_and(|t| t >= train_end) || s.test_end.is_some_and(|t| t <= test_start) {
            return fail("split ranges must be non-empty".into());
        }
        Ok(())
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Seed of one category's forecaster (splitmix64 of the master seed and id).
pub fn category_seed(master: u64, c: CategoryId) -> u64 {
    let mut z = master ^ (u64::from(c.0) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Aggregated series of every configured asset, in config order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub assets: Vec<FrameSeries>,
}

impl Corpus {
    pub fn get(&self, pair: &str) -> Option<&FrameSeries> {
        self.assets.iter().find(|s| s.pair_id() == pair)
    }

    /// sha256 of each series in its canonical CSV form.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.assets
            .iter()
            .map(|s| (s.pair_id().to_string(), series_hash(s)))
            .collect()
    }
}

pub fn series_hash(series: &FrameSeries) -> String {
    let mut bytes = Vec::new();
    series.write_csv(&mut bytes).expect("writing to memory");
    hex::encode(Sha256::digest(&bytes))
}

/// Brings a series to the experiment's frame size.
pub fn to_frames(series: &FrameSeries, frame_minutes: u32) -> Result<FrameSeries, MarketDataError> {
    if series.frame_minutes() == frame_minutes {
        Ok(series.clone())
    } else {
        aggregate_frames(series, frame_minutes)
    }
}

/// Reads and aggregates every asset file. Relative paths resolve against `base_dir`.
pub fn load_corpus(config: &ExperimentConfig, base_dir: &Path) -> Result<Corpus, PipelineError> {
    let mut assets = Vec::new();
    for a in &config.assets {
        let path = base_dir.join(&a.path);
        let file = fs::File::open(&path).map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?;
        let wrap = |source| PipelineError::Asset {
            pair: a.pair.clone(),
            source,
        };
        let raw = parse_kline_csv_frames(std::io::BufReader::new(file), &a.pair, a.source_minutes).map_err(wrap)?;
        assets.push(to_frames(&raw, config.frame_minutes).map_err(wrap)?);
    }
    Ok(Corpus { assets })
}

/// Categorized windows of the train range, pooled over all assets.
pub fn build_training_dataset(config: &ExperimentConfig, corpus: &Corpus) -> Result<CategorizedDataset, PipelineError> {
    let scheme = config.category_scheme()?;
    let n = scheme.window_len();
    let mut sets = Vec::new();
    for series in &corpus.assets {
        let train = series.slice_time(config.split.train_start, config.split.train_end);
        // too short to hold one window: contributes nothing
        if train.len() < n + 1 {
            sets.push((series.pair_id().to_string(), Vec::new()));
            continue;
        }
        let v = to_volatility(&train)?;
        sets.push((series.pair_id().to_string(), sliding_windows(&v, n)?));
    }
    let dataset = build_dataset(&sets, &scheme)?;
    if dataset.total_windows() == 0 {
        return Err(PipelineError::NoWindows);
    }
    Ok(dataset)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub store: ModelStore,
    /// Absent in `none` mode.
    pub selector: Option<TransitionModel>,
}

impl TrainedModels {
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        self.store.save(dir)?;
        if let Some(s) = &self.selector {
            s.save(&dir.join(SELECTOR_FILE))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let store = ModelStore::load(dir)?;
        let path = dir.join(SELECTOR_FILE);
        let selector = if path.exists() {
            Some(TransitionModel::load(&path)?)
        } else {
            None
        };
        Ok(Self { store, selector })
    }
}

/// Trains one forecaster per non-empty category and fits the selector on the
/// target asset's category sequence.
pub fn train_all(config: &ExperimentConfig, corpus: &Corpus) -> Result<TrainedModels, PipelineError> {
    config.validate()?;
    let dataset = build_training_dataset(config, corpus)?;
    train_on_dataset(config, &dataset)
}

pub fn train_on_dataset(config: &ExperimentConfig, dataset: &CategorizedDataset) -> Result<TrainedModels, PipelineError> {
    let base = config.forecaster_config();
    let categories: Vec<CategoryId> = dataset.buckets.keys().copied().collect();
    let trained: Vec<(CategoryId, ForecasterParams)> = categories
        .par_iter()
        .map(|&c| {
            let series = training_series(dataset, c)?;
            let samples = samples_from_series(&series);
            let cfg = ForecasterConfig {
                seed: category_seed(config.seed, c),
                ..base.clone()
            };
            let params = ForecasterParams::init(&cfg)?;
            match train(params, &samples, &cfg) {
                Ok((params, _)) => Ok((c, params)),
                Err(ForecasterError::Divergence { epoch }) => Err(PipelineError::Divergence { category: c, epoch }),
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut store = ModelStore::new(dataset.scheme, base);
    store.models = trained.into_iter().collect();
    store.empty_categories = dataset.empty_categories();

    let selector = match config.mode {
        SelectorMode::None => None,
        SelectorMode::Markov | SelectorMode::Oracle => {
            let seq = dataset.sequences.get(&config.target).map(Vec::as_slice).unwrap_or(&[]);
            Some(TransitionModel::fit(seq, dataset.scheme, config.selector_alpha)?)
        }
    };
    Ok(TrainedModels { store, selector })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Category of the observed window (k = n-1 modes) or of the observed prefix.
    pub current: CategoryId,
    /// Category whose model produced the forecast.
    pub chosen: CategoryId,
    /// Selector probability of `chosen`, markov mode only.
    pub probability: Option<f64>,
    pub value: f64,
    pub direction: Direction,
    /// The chosen category had no model; the naive baseline was used.
    pub fallback: bool,
}

/// Forecasts the value following `window` (the latest `n` volatility values).
/// `truth` is the realized next category and is required in oracle mode.
pub fn predict_one(
    store: &ModelStore,
    selector: Option<&dyn CategorySelector>,
    window: &[f64],
    mode: SelectorMode,
    truth: Option<CategoryId>,
) -> Result<Prediction, PipelineError> {
    let scheme = &store.scheme;
    let n = scheme.window_len();
    if window.len() != n {
        return Err(PipelineError::WindowLength {
            expected: n,
            got: window.len(),
        });
    }
    let inputs = &window[1..];
    let (current, chosen, probability) = match mode {
        SelectorMode::Markov => {
            let selector = selector.ok_or(PipelineError::MissingInput(mode, "a selector"))?;
            let current = categorize_values(window, scheme)?;
            let (chosen, p) = selector.select(current);
            (current, chosen, Some(p))
        }
        SelectorMode::Oracle => {
            let truth = truth.ok_or(PipelineError::MissingInput(mode, "the realized category"))?;
            (categorize_values(window, scheme)?, scheme.check(truth)?, None)
        }
        SelectorMode::None => {
            let c = categorize_prefix(inputs, scheme)?;
            (c, c, None)
        }
    };
    let (value, fallback) = match store.get(chosen) {
        Some(model) => (model.predict(inputs)?, false),
        None => (naive_baseline(inputs), true),
    };
    Ok(Prediction {
        current,
        chosen,
        probability,
        value,
        direction: Direction::from_value(value),
        fallback,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Open time of the frame at whose close the decision is taken.
    pub open_time: i64,
    /// Close the trade for this step would execute at.
    pub close: f64,
    pub current_category: CategoryId,
    pub chosen_category: CategoryId,
    pub realized_category: CategoryId,
    pub probability: Option<f64>,
    pub predicted: f64,
    pub realized: f64,
    pub direction: Direction,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorSummary {
    /// Whether predictions used the online-updated selector.
    pub online: bool,
    /// Fraction of steps whose chosen category was the realized one.
    pub accuracy: f64,
    pub frozen_accuracy: f64,
    pub online_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub config_hash: String,
    pub models: Vec<ModelSummary>,
    pub empty_categories: Vec<CategoryId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub initial_quote: f64,
    pub fee_rate: f64,
    pub final_value: f64,
    pub buy_and_hold: f64,
    pub liquidated: bool,
    /// Final close of the test range, used to mark an open position.
    pub last_close: f64,
    pub trades: Vec<Trade>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub scheme: CategoryScheme,
    pub dataset_hashes: BTreeMap<String, String>,
    pub training: TrainingSummary,
    pub steps: Vec<StepRecord>,
    pub metrics: DirectionMetrics,
    pub mean_absolute_error: f64,
    pub selector: Option<SelectorSummary>,
    pub fallback_count: usize,
    pub backtest: BacktestSummary,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn directions(&self) -> Vec<Direction> {
        self.steps.iter().map(|s| s.direction).collect()
    }

    /// Trade prices of every step plus the final close.
    pub fn backtest_closes(&self) -> Vec<f64> {
        let mut closes: Vec<f64> = self.steps.iter().map(|s| s.close).collect();
        closes.push(self.backtest.last_close);
        closes
    }
}

/// Walk-forward evaluation over the target's test range with a frozen store.
///
/// With `F` test frames the volatility series has `F-1` values; step `s` sees
/// `V[s..s+n)`, forecasts `V[s+n]` and trades at the close of frame `s+n`, so
/// there are `F-n-1` steps and at least `n+2` frames are required.
pub fn walk_forward(
    config: &ExperimentConfig,
    corpus: &Corpus,
    models: &TrainedModels,
) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let scheme = config.category_scheme()?;
    if models.store.scheme != scheme {
        return Err(PipelineError::Config(format!(
            "model store uses {}-bit categories, {} mode needs {}",
            models.store.scheme.bit_count(),
            config.mode,
            scheme.bit_count()
        )));
    }
    let n = scheme.window_len();
    let target = corpus
        .get(&config.target)
        .ok_or_else(|| PipelineError::Config(format!("target {} missing from the corpus", config.target)))?;
    let test = target.slice_time(config.split.test_start, config.split.test_end);
    let needed = n + 2;
    if test.len() < needed {
        return Err(PipelineError::InsufficientTestData {
            frames: test.len(),
            needed,
        });
    }
    let closes = test.closes();
    let v = volatility_from_closes(&closes)?;
    let steps_total = test.len() - n - 1;

    let mut frozen = match (&models.selector, config.mode) {
        (Some(s), _) => Some(s.clone()),
        (None, SelectorMode::Markov) => return Err(PipelineError::MissingInput(config.mode, "a trained selector")),
        (None, _) => None,
    };
    let mut online = frozen.clone();
    let (mut frozen_hits, mut online_hits) = (0usize, 0usize);
    let mut steps = Vec::with_capacity(steps_total);
    for s in 0..steps_total {
        let window = &v[s..s + n];
        let next = &v[s + 1..s + n + 1];
        let realized_category = match config.mode {
            SelectorMode::None => categorize_prefix(&next[..n - 1], &scheme)?,
            _ => categorize_values(next, &scheme)?,
        };
        let current = if config.mode == SelectorMode::None {
            None
        } else {
            Some(categorize_values(window, &scheme)?)
        };
        if let (Some(c), Some(f), Some(o)) = (current, frozen.as_ref(), online.as_ref()) {
            frozen_hits += usize::from(f.predict_next(c).0 == realized_category);
            online_hits += usize::from(o.predict_next(c).0 == realized_category);
        }
        let used: Option<&dyn CategorySelector> = if config.online_selector {
            online.as_ref().map(|m| m as &dyn CategorySelector)
        } else {
            frozen.as_ref().map(|m| m as &dyn CategorySelector)
        };
        let p = predict_one(&models.store, used, window, config.mode, Some(realized_category))?;
        if let (Some(c), Some(o)) = (current, online.as_mut()) {
            o.observe(c, realized_category)?;
        }
        let frame = &test.frames()[s + n];
        steps.push(StepRecord {
            step: s,
            open_time: frame.open_time,
            close: frame.close,
            current_category: p.current,
            chosen_category: p.chosen,
            realized_category,
            probability: p.probability,
            predicted: p.value,
            realized: v[s + n],
            direction: p.direction,
            fallback: p.fallback,
        });
    }
    if config.mode == SelectorMode::Oracle {
        // the oracle always picks the realized category; the Markov
        // tallies above stay informational
        frozen = None;
    }

    let directions: Vec<Direction> = steps.iter().map(|s| s.direction).collect();
    let realized: Vec<f64> = steps.iter().map(|s| s.realized).collect();
    let metrics = direction_metrics(&directions, &realized)?;
    let mean_absolute_error =
        steps.iter().map(|s| (s.predicted - s.realized).abs()).sum::<f64>() / steps.len() as f64;
    let trade_closes = &closes[n..];
    let ledger = run_backtest(&directions, trade_closes, &config.backtest)?;
    let bh = buy_and_hold(trade_closes, &config.backtest)?;
    let total = steps.len() as f64;
    let selector = match (config.mode, frozen) {
        (SelectorMode::Markov, Some(_)) => {
            let frozen_accuracy = frozen_hits as f64 / total;
            let online_accuracy = online_hits as f64 / total;
            Some(SelectorSummary {
                online: config.online_selector,
                accuracy: if config.online_selector { online_accuracy } else { frozen_accuracy },
                frozen_accuracy,
                online_accuracy,
            })
        }
        _ => None,
    };
    Ok(RunReport {
        format_version: REPORT_FORMAT_VERSION,
        config: config.clone(),
        scheme,
        dataset_hashes: corpus.hashes(),
        training: TrainingSummary {
            config_hash: models.store.config_hash(),
            models: models.store.summaries(),
            empty_categories: models.store.empty_categories.clone(),
        },
        fallback_count: steps.iter().filter(|s| s.fallback).count(),
        steps,
        metrics,
        mean_absolute_error,
        selector,
        backtest: BacktestSummary {
            initial_quote: config.backtest.initial_quote,
            fee_rate: config.backtest.fee_rate,
            final_value: ledger.final_value,
            buy_and_hold: bh,
            liquidated: ledger.liquidated,
            last_close: *trade_closes.last().expect("non-empty test range"),
            trades: ledger.trades,
        },
    })
}

/// Trains and evaluates in one go.
pub fn run_experiment(config: &ExperimentConfig, corpus: &Corpus) -> Result<(TrainedModels, RunReport), PipelineError> {
    let models = train_all(config, corpus)?;
    let report = walk_forward(config, corpus, &models)?;
    Ok((models, report))
}
