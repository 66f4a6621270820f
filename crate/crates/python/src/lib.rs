//! Python bindings for the catforecast pipeline.

use std::fmt::Display;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use catforecast::backtest::{self, BacktestConfig, Direction, Side};
use catforecast::categorize::{categorize_values, Basis, CategoryId, CategoryScheme};
use catforecast::forecaster::{self, ForecasterConfig, ForecasterParams, TrainingSample};
use catforecast::market_data;
use catforecast::pipeline::{self, ExperimentConfig};
use catforecast::preprocess;
use catforecast::selector;
use catforecast::synth::{self, SynthKind};

fn value_err<E: Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn os_err<E: Display>(e: E) -> PyErr {
    PyOSError::new_err(e.to_string())
}

fn parse_basis(basis: &str) -> PyResult<Basis> {
    basis.parse().map_err(value_err)
}

fn scheme(window_len: usize, bits: Option<usize>, basis: &str) -> PyResult<CategoryScheme> {
    let bits = bits.unwrap_or(window_len.saturating_sub(1));
    CategoryScheme::new(window_len, bits, parse_basis(basis)?).map_err(value_err)
}

fn directions(up: &[bool]) -> Vec<Direction> {
    up.iter().map(|u| if *u { Direction::Up } else { Direction::Down }).collect()
}

/// Validated candles of one pair.
#[pyclass(module = "catforecast", frozen)]
struct FrameSeries {
    inner: market_data::FrameSeries,
}

#[pymethods]
impl FrameSeries {
    /// Reads a 12-column kline CSV whose rows are `source_minutes` apart.
    #[staticmethod]
    #[pyo3(signature = (path, pair, source_minutes=1))]
    fn read_csv(path: PathBuf, pair: &str, source_minutes: u32) -> PyResult<Self> {
        let file = std::fs::File::open(&path).map_err(os_err)?;
        let inner = market_data::parse_kline_csv_frames(std::io::BufReader::new(file), pair, source_minutes)
            .map_err(value_err)?;
        Ok(Self { inner })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(&path).map_err(os_err)?;
        self.inner.write_csv(std::io::BufWriter::new(file)).map_err(value_err)
    }

    #[getter]
    fn pair_id(&self) -> &str {
        self.inner.pair_id()
    }

    #[getter]
    fn frame_minutes(&self) -> u32 {
        self.inner.frame_minutes()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "FrameSeries(pair_id={:?}, frame_minutes={}, frames={})",
            self.inner.pair_id(),
            self.inner.frame_minutes(),
            self.inner.len()
        )
    }

    fn closes(&self) -> Vec<f64> {
        self.inner.closes()
    }

    fn open_times(&self) -> Vec<i64> {
        self.inner.frames().iter().map(|k| k.open_time).collect()
    }

    fn volumes(&self) -> Vec<f64> {
        self.inner.frames().iter().map(|k| k.volume).collect()
    }

    fn aggregate(&self, frame_minutes: u32) -> PyResult<Self> {
        let inner = market_data::aggregate_frames(&self.inner, frame_minutes).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (start=None, end=None))]
    fn slice_time(&self, start: Option<i64>, end: Option<i64>) -> Self {
        Self {
            inner: self.inner.slice_time(start, end),
        }
    }

    /// Percent change of each close against the previous one.
    fn volatility(&self) -> PyResult<Vec<f64>> {
        Ok(preprocess::to_volatility(&self.inner).map_err(value_err)?.values)
    }

    /// sha256 of the canonical CSV form.
    fn content_hash(&self) -> String {
        pipeline::series_hash(&self.inner)
    }
}

/// `length` one-minute klines; kind is random_walk, deterministic_category or periodic.
#[pyfunction]
#[pyo3(signature = (kind, length, seed=64))]
fn generate_synthetic(kind: &str, length: usize, seed: u64) -> PyResult<FrameSeries> {
    let kind: SynthKind = kind.parse().map_err(value_err)?;
    let inner = synth::generate_synthetic(kind, length, seed).map_err(value_err)?;
    Ok(FrameSeries { inner })
}

#[pyfunction]
fn volatility_from_closes(closes: Vec<f64>) -> PyResult<Vec<f64>> {
    preprocess::volatility_from_closes(&closes).map_err(value_err)
}

/// Stride-1 windows of length `n`.
#[pyfunction]
fn sliding_windows(values: Vec<f64>, n: usize) -> PyResult<Vec<Vec<f64>>> {
    if n < 2 {
        return Err(value_err("window length must be at least 2"));
    }
    if values.len() < n {
        return Err(value_err(format!("{} values cannot fill a window of {n}", values.len())));
    }
    Ok(values.windows(n).map(<[f64]>::to_vec).collect())
}

/// Category id of one window; `bits` defaults to `len(window) - 1`.
#[pyfunction]
#[pyo3(signature = (window, bits=None, basis="volatility_change"))]
fn categorize(window: Vec<f64>, bits: Option<usize>, basis: &str) -> PyResult<u32> {
    let s = scheme(window.len(), bits, basis)?;
    Ok(categorize_values(&window, &s).map_err(value_err)?.0)
}

/// The two possible next categories: new bit 0, then new bit 1.
#[pyfunction]
#[pyo3(signature = (category, bits=7))]
fn successors(category: u32, bits: usize) -> PyResult<(u32, u32)> {
    let s = scheme(bits + 1, Some(bits), "volatility_change")?;
    s.check(CategoryId(category)).map_err(value_err)?;
    let (a, b) = catforecast::categorize::successors(CategoryId(category), &s);
    Ok((a.0, b.0))
}

/// Laplace-smoothed Markov model over category transitions.
#[pyclass(module = "catforecast")]
struct TransitionModel {
    inner: selector::TransitionModel,
}

#[pymethods]
impl TransitionModel {
    #[new]
    #[pyo3(signature = (bits=7, alpha=1.0))]
    fn new(bits: usize, alpha: f64) -> PyResult<Self> {
        let s = scheme(bits + 1, Some(bits), "volatility_change")?;
        let inner = selector::TransitionModel::new(s, alpha).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Counts the transitions of a time-ordered category sequence.
    #[staticmethod]
    #[pyo3(signature = (sequence, bits=7, alpha=1.0))]
    fn fit(sequence: Vec<u32>, bits: usize, alpha: f64) -> PyResult<Self> {
        let s = scheme(bits + 1, Some(bits), "volatility_change")?;
        let seq: Vec<CategoryId> = sequence.into_iter().map(CategoryId).collect();
        let inner = selector::TransitionModel::fit(&seq, s, alpha).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn update_online(&mut self, from: u32, to: u32) -> PyResult<()> {
        self.inner.update_online(CategoryId(from), CategoryId(to)).map_err(value_err)
    }

    fn predict_next(&self, category: u32) -> PyResult<(u32, f64)> {
        self.inner.scheme().check(CategoryId(category)).map_err(value_err)?;
        let (c, p) = self.inner.predict_next(CategoryId(category));
        Ok((c.0, p))
    }

    fn probability(&self, category: u32, bit: usize) -> PyResult<f64> {
        self.inner.scheme().check(CategoryId(category)).map_err(value_err)?;
        if bit > 1 {
            return Err(value_err("bit must be 0 or 1"));
        }
        Ok(self.inner.probability(CategoryId(category), bit))
    }

    #[getter]
    fn counts(&self) -> Vec<(u64, u64)> {
        self.inner.counts().iter().map(|r| (r[0], r[1])).collect()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let inner = selector::TransitionModel::from_text(text).map_err(value_err)?;
        Ok(Self { inner })
    }
}

/// One per-category sequence regressor.
#[pyclass(module = "catforecast")]
struct Forecaster {
    inner: ForecasterParams,
}

#[pymethods]
impl Forecaster {
    #[new]
    #[pyo3(signature = (
        hidden_size=16,
        recurrent_layers=2,
        attention_heads=2,
        input_len=7,
        epochs=7,
        learning_rate=1e-3,
        batch_size=32,
        seed=64
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        hidden_size: usize,
        recurrent_layers: usize,
        attention_heads: usize,
        input_len: usize,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config = ForecasterConfig {
            input_len,
            hidden_size,
            recurrent_layers,
            attention_heads,
            epochs,
            learning_rate,
            batch_size,
            seed,
            ..ForecasterConfig::default()
        };
        let inner = ForecasterParams::init(&config).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn final_loss(&self) -> Option<f64> {
        self.inner.meta.final_loss
    }

    /// Next value after `inputs` (positions 1..len).
    fn predict(&self, inputs: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&inputs).map_err(value_err)
    }

    /// Fits on full windows (inputs followed by the target); returns per-epoch losses.
    #[pyo3(signature = (windows, epochs=None))]
    fn train(&mut self, py: Python<'_>, windows: Vec<Vec<f64>>, epochs: Option<usize>) -> PyResult<Vec<f64>> {
        let expected = self.inner.config().input_len + 1;
        if let Some(w) = windows.iter().find(|w| w.len() != expected) {
            return Err(value_err(format!("windows must hold {expected} values, got {}", w.len())));
        }
        let samples: Vec<TrainingSample> = windows.iter().map(|w| TrainingSample::from_window(w)).collect();
        let mut config = self.inner.config().clone();
        if let Some(e) = epochs {
            config.epochs = e;
        }
        let params = self.inner.clone();
        let (params, report) = py
            .detach(|| forecaster::train(params, &samples, &config))
            .map_err(value_err)?;
        self.inner = params;
        Ok(report.epoch_losses)
    }

    /// Largest relative gap between analytic and finite-difference gradients.
    #[pyo3(signature = (window, step=1e-5))]
    fn gradient_check(&self, window: Vec<f64>, step: f64) -> PyResult<f64> {
        if window.len() != self.inner.config().input_len + 1 {
            return Err(value_err("window must hold input_len + 1 values"));
        }
        let sample = TrainingSample::from_window(&window);
        Ok(forecaster::gradient_check(&self.inner, &sample, step)
            .map_err(value_err)?
            .max_relative_error)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(value_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = ForecasterParams::from_json(text).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(os_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = ForecasterParams::load(&path).map_err(value_err)?;
        Ok(Self { inner })
    }
}

fn backtest_config(initial_quote: f64, fee_rate: f64, liquidate_at_end: bool) -> BacktestConfig {
    BacktestConfig {
        initial_quote,
        fee_rate,
        liquidate_at_end,
    }
}

/// All-in long-only simulation. `up[t]` is the forecast acted on at `closes[t]`;
/// `closes` holds one more entry than `up`. Returns the final value and the
/// trades as `(time_index, side, price, quantity, fee, equity)` tuples.
#[pyfunction]
#[pyo3(signature = (up, closes, initial_quote=100.0, fee_rate=0.0, liquidate_at_end=true))]
#[allow(clippy::type_complexity)]
fn run_backtest(
    up: Vec<bool>,
    closes: Vec<f64>,
    initial_quote: f64,
    fee_rate: f64,
    liquidate_at_end: bool,
) -> PyResult<(f64, Vec<(usize, &'static str, f64, f64, f64, f64)>)> {
    let cfg = backtest_config(initial_quote, fee_rate, liquidate_at_end);
    let ledger = backtest::run_backtest(&directions(&up), &closes, &cfg).map_err(value_err)?;
    let trades = ledger
        .trades
        .iter()
        .map(|t| {
            let side = match t.side {
                Side::Buy => "buy",
                Side::Sell => "sell",
            };
            (t.time_index, side, t.price, t.quantity, t.fee, t.equity)
        })
        .collect();
    Ok((ledger.final_value, trades))
}

#[pyfunction]
#[pyo3(signature = (closes, initial_quote=100.0, fee_rate=0.0))]
fn buy_and_hold(closes: Vec<f64>, initial_quote: f64, fee_rate: f64) -> PyResult<f64> {
    backtest::buy_and_hold(&closes, &backtest_config(initial_quote, fee_rate, true)).map_err(value_err)
}

/// Confusion counts with bullish as the positive class; zero counts as bearish.
#[pyfunction]
fn direction_metrics<'py>(py: Python<'py>, up: Vec<bool>, realized: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let m = backtest::direction_metrics(&directions(&up), &realized).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("tp", m.tp)?;
    d.set_item("fp", m.fp)?;
    d.set_item("tn", m.tn)?;
    d.set_item("fn", m.fn_)?;
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("precision", m.precision)?;
    Ok(d)
}

/// Trains and evaluates the experiment described by a TOML config; returns the
/// JSON run report. Relative asset paths resolve against `base_dir`.
#[pyfunction]
#[pyo3(signature = (config_toml, base_dir=PathBuf::from(".")))]
fn evaluate(py: Python<'_>, config_toml: &str, base_dir: PathBuf) -> PyResult<String> {
    let config = ExperimentConfig::from_toml(config_toml).map_err(value_err)?;
    let corpus = pipeline::load_corpus(&config, &base_dir).map_err(value_err)?;
    let (_, report) = py
        .detach(|| pipeline::run_experiment(&config, &corpus))
        .map_err(value_err)?;
    Ok(report.to_json())
}

#[pymodule]
#[pyo3(name = "catforecast")]
fn catforecast_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<FrameSeries>()?;
    m.add_class::<TransitionModel>()?;
    m.add_class::<Forecaster>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(volatility_from_closes, m)?)?;
    m.add_function(wrap_pyfunction!(sliding_windows, m)?)?;
    m.add_function(wrap_pyfunction!(categorize, m)?)?;
    m.add_function(wrap_pyfunction!(successors, m)?)?;
    m.add_function(wrap_pyfunction!(run_backtest, m)?)?;
    m.add_function(wrap_pyfunction!(buy_and_hold, m)?)?;
    m.add_function(wrap_pyfunction!(direction_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
