//! Per-category sequence regressor.
//!
//! A compact temporal-fusion style network: per-step affine embedding of
//! (value, position), a stacked LSTM encoder, a gated skip connection with layer
//! normalization, multi-head causal self-attention queried from the final step,
//! a gated residual feed-forward block and a linear head. Gradients are computed
//! by hand; everything runs in `f64` on the CPU.

mod gradcheck;
mod layout;
mod network;
mod store;
mod train;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::categorize::{CategoryId, CategoryTrainingSeries};

pub use gradcheck::{gradient_check, GradientCheckReport};
pub use layout::TensorSpec;
pub use network::Cache;
pub use store::{ModelStore, ModelSummary, FORECASTER_FORMAT_VERSION, STORE_FORMAT_VERSION};
pub use train::{train, TrainingReport};

use layout::{Init, Layout};

#[derive(Debug, Error)]
pub enum ForecasterError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("expected {expected} input values, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("parameters contain non-finite values")]
    NonFinite,
    #[error("no training samples")]
    NoSamples,
    #[error("training diverged in epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },
    #[error("no model for category {0}")]
    MissingModel(CategoryId),
    #[error("model file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("model file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    #[default]
    MeanSquaredError,
    /// Pinball loss over several quantiles; the one nearest 0.5 is the point forecast.
    Quantile { quantiles: Vec<f64> },
}

impl Loss {
    pub fn output_count(&self) -> usize {
        match self {
            Loss::MeanSquaredError => 1,
            Loss::Quantile { quantiles } => quantiles.len(),
        }
    }

    /// Index of the output used as the point forecast.
    pub fn point_index(&self) -> usize {
        match self {
            Loss::MeanSquaredError => 0,
            Loss::Quantile { quantiles } => quantiles
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0),
        }
    }

    /// Loss of one sample and its gradient with respect to the outputs.
    pub(crate) fn evaluate(&self, outputs: &[f64], target: f64, grad: &mut [f64]) -> f64 {
        match self {
            Loss::MeanSquaredError => {
                let err = outputs[0] - target;
                grad[0] = 2.0 * err;
                err * err
            }
            Loss::Quantile { quantiles } => {
                let q_count = quantiles.len() as f64;
                let mut total = 0.0;
                for ((q, y), g) in quantiles.iter().zip(outputs).zip(grad.iter_mut()) {
                    let diff = target - y;
                    if diff > 0.0 {
                        total += q * diff;
                        *g = -q / q_count;
                    } else {
                        total += (q - 1.0) * diff;
                        *g = (1.0 - q) / q_count;
                    }
                }
                total / q_count
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterConfig {
    pub input_len: usize,
    pub output_len: usize,
    pub hidden_size: usize,
    pub recurrent_layers: usize,
    pub attention_heads: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            input_len: 7,
            output_len: 1,
            hidden_size: 70,
            recurrent_layers: 4,
            attention_heads: 4,
            epochs: 7,
            learning_rate: 1e-3,
            batch_size: 32,
            loss: Loss::MeanSquaredError,
            seed: 64,
        }
    }
}

impl ForecasterConfig {
    /// Small configuration for tests and quick experiments.
    pub fn desk() -> Self {
        Self {
            hidden_size: 16,
            recurrent_layers: 2,
            attention_heads: 2,
            ..Self::default()
        }
    }

    /// Per-head width; heads that do not divide the hidden size get the floor,
    /// and the output projection maps `heads * head_dim` back to `hidden_size`.
    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.attention_heads.max(1)
    }

    pub fn validate(&self) -> Result<(), ForecasterError> {
        let fail = |m: String| Err(ForecasterError::Config(m));
        if self.input_len == 0 {
            return fail("input_len must be positive".into());
        }
        if self.output_len != 1 {
            return fail(format!("output_len {} unsupported: only one-step forecasts", self.output_len));
        }
        if self.hidden_size == 0 || self.recurrent_layers == 0 {
            return fail("hidden_size and recurrent_layers must be positive".into());
        }
        if self.attention_heads == 0 || self.attention_heads > self.hidden_size {
            return fail(format!(
                "{} attention heads cannot split hidden size {}",
                self.attention_heads, self.hidden_size
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail("learning_rate must be finite and non-negative".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if let Loss::Quantile { quantiles } = &self.loss {
            if quantiles.is_empty() || quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
                return fail("quantiles must be non-empty and inside (0, 1)".into());
            }
        }
        Ok(())
    }

    /// True when both configs produce parameter tensors of identical shapes.
    pub fn same_architecture(&self, other: &Self) -> bool {
        self.input_len == other.input_len
            && self.hidden_size == other.hidden_size
            && self.recurrent_layers == other.recurrent_layers
            && self.attention_heads == other.attention_heads
            && self.loss.output_count() == other.loss.output_count()
    }
}

/// One window-aligned example: the first `n-1` values predict the `n`-th.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub inputs: Vec<f64>,
    pub positions: Vec<u32>,
    pub target: f64,
}

impl TrainingSample {
    pub fn from_window(values: &[f64]) -> Self {
        let n = values.len();
        Self {
            inputs: values[..n - 1].to_vec(),
            positions: (1..n as u32).collect(),
            target: values[n - 1],
        }
    }
}

/// Window-aligned samples of a category series; no sample straddles two windows.
pub fn samples_from_series(series: &CategoryTrainingSeries) -> Vec<TrainingSample> {
    series
        .windows()
        .map(|(values, positions)| {
            let n = values.len();
            TrainingSample {
                inputs: values[..n - 1].to_vec(),
                positions: positions[..n - 1].to_vec(),
                target: values[n - 1],
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub final_loss: Option<f64>,
    pub sample_count: usize,
}

/// Weights of one forecaster, stored as a single flat vector.
#[derive(Debug, Clone)]
pub struct ForecasterParams {
    config: ForecasterConfig,
    layout: Arc<Layout>,
    values: Vec<f64>,
    pub meta: TrainingMeta,
}

impl PartialEq for ForecasterParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.values == other.values && self.meta == other.meta
    }
}

impl ForecasterParams {
    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, biases zero,
    /// layer-norm gains one.
    pub fn init(config: &ForecasterConfig) -> Result<Self, ForecasterError> {
        config.validate()?;
        let layout = Arc::new(Layout::new(config));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut values = vec![0.0; layout.total];
        for spec in &layout.specs {
            let slot = &mut values[spec.offset..spec.offset + spec.len()];
            match spec.init {
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    slot.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
                }
                Init::Zero => {}
                Init::One => slot.fill(1.0),
            }
        }
        Ok(Self {
            config: config.clone(),
            layout,
            values,
            meta: TrainingMeta::default(),
        })
    }

    /// All parameters set to zero, gains included.
    pub fn zeros(config: &ForecasterConfig) -> Result<Self, ForecasterError> {
        let mut p = Self::init(config)?;
        p.values.fill(0.0);
        Ok(p)
    }

    pub fn config(&self) -> &ForecasterConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.specs
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .specs
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.offset..s.offset + s.len()])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_inputs(&self, inputs: &[f64], positions: &[u32]) -> Result<(), ForecasterError> {
        let expected = self.config.input_len;
        if inputs.len() != expected || positions.len() != expected {
            return Err(ForecasterError::InputLength {
                expected,
                got: if inputs.len() != expected { inputs.len() } else { positions.len() },
            });
        }
        if !self.is_finite() {
            return Err(ForecasterError::NonFinite);
        }
        Ok(())
    }

    /// Raw network outputs (one per quantile, or a single value for MSE).
    pub fn forward_outputs(&self, inputs: &[f64], positions: &[u32]) -> Result<Vec<f64>, ForecasterError> {
        self.check_inputs(inputs, positions)?;
        let mut cache = Cache::new(&self.layout);
        Ok(network::forward(&self.layout, &self.values, inputs, positions, &mut cache).to_vec())
    }

    /// Point forecast of the next volatility value.
    pub fn forward(&self, inputs: &[f64], positions: &[u32]) -> Result<f64, ForecasterError> {
        let outputs = self.forward_outputs(inputs, positions)?;
        Ok(outputs[self.config.loss.point_index()])
    }

    /// Forecast with positions `1..=input_len`.
    pub fn predict(&self, inputs: &[f64]) -> Result<f64, ForecasterError> {
        let positions: Vec<u32> = (1..=self.config.input_len as u32).collect();
        self.forward(inputs, &positions)
    }

    /// Loss of one sample and the gradient of that loss for every parameter.
    pub fn loss_and_gradient(&self, sample: &TrainingSample) -> Result<(f64, Vec<f64>), ForecasterError> {
        self.check_inputs(&sample.inputs, &sample.positions)?;
        let mut cache = Cache::new(&self.layout);
        let mut grad = vec![0.0; self.values.len()];
        let loss = network::accumulate_gradient(&self.layout, &self.config.loss, &self.values, sample, &mut cache, &mut grad, 1.0);
        Ok((loss, grad))
    }

    /// Loss of one sample under the configured loss function.
    pub fn loss(&self, sample: &TrainingSample) -> Result<f64, ForecasterError> {
        let outputs = self.forward_outputs(&sample.inputs, &sample.positions)?;
        let mut scratch = vec![0.0; outputs.len()];
        Ok(self.config.loss.evaluate(&outputs, sample.target, &mut scratch))
    }

    /// Mean loss over a set of samples.
    pub fn mean_loss(&self, samples: &[TrainingSample]) -> Result<f64, ForecasterError> {
        if samples.is_empty() {
            return Err(ForecasterError::NoSamples);
        }
        let mut total = 0.0;
        for s in samples {
            total += self.loss(s)?;
        }
        Ok(total / samples.len() as f64)
    }
}

/// Comparison floor: repeat the last observed value.
pub fn naive_baseline(values: &[f64]) -> f64 {
    values.last().copied().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ForecasterConfig {
        ForecasterConfig {
            hidden_size: 8,
            recurrent_layers: 2,
            attention_heads: 2,
            ..ForecasterConfig::default()
        }
    }

    const INPUTS: [f64; 7] = [0.12, -0.3, 0.05, 0.4, -0.1, 0.02, 0.25];

    #[test]
    fn init_is_deterministic() {
        let a = ForecasterParams::init(&tiny()).unwrap();
        let b = ForecasterParams::init(&tiny()).unwrap();
        assert_eq!(a.values(), b.values());
        let c = ForecasterParams::init(&ForecasterConfig { seed: 65, ..tiny() }).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn init_ranges() {
        let p = ForecasterParams::init(&tiny()).unwrap();
        for spec in p.tensors() {
            let data = p.tensor(&spec.name).unwrap();
            match spec.init {
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    assert!(data.iter().all(|w| w.abs() <= bound), "{}", spec.name);
                }
                Init::Zero => assert!(data.iter().all(|w| *w == 0.0)),
                Init::One => assert!(data.iter().all(|w| *w == 1.0)),
            }
        }
    }

    #[test]
    fn default_config_uses_floor_head_width() {
        let cfg = ForecasterConfig::default();
        assert_eq!((cfg.hidden_size, cfg.attention_heads), (70, 4));
        assert_eq!(cfg.head_dim(), 17);
        let p = ForecasterParams::init(&cfg).unwrap();
        let spec = p.tensors().iter().find(|s| s.name == "attention.output.weight").unwrap();
        assert_eq!(spec.shape, vec![70, 68]);
        assert!(p.predict(&INPUTS).unwrap().is_finite());
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            ForecasterConfig { attention_heads: 9, ..tiny() },
            ForecasterConfig { attention_heads: 0, ..tiny() },
            ForecasterConfig { output_len: 2, ..tiny() },
            ForecasterConfig { batch_size: 0, ..tiny() },
            ForecasterConfig { loss: Loss::Quantile { quantiles: vec![1.5] }, ..tiny() },
        ] {
            assert!(matches!(ForecasterParams::init(&cfg), Err(ForecasterError::Config(_))));
        }
    }

    #[test]
    fn zero_weights_give_zero() {
        let p = ForecasterParams::zeros(&tiny()).unwrap();
        assert_eq!(p.predict(&INPUTS).unwrap(), 0.0);
    }

    #[test]
    fn golden_forward_value() {
        let p = ForecasterParams::init(&tiny()).unwrap();
        let y = p.predict(&INPUTS).unwrap();
        assert_eq!(y, p.predict(&INPUTS).unwrap());
        // recorded from the first run of this fixture
        let golden = GOLDEN_TINY;
        assert!((y - golden).abs() < 1e-12, "forward drifted: {y:.17}");
    }

    const GOLDEN_TINY: f64 = -0.114_168_125_150_044_04;

    #[test]
    fn positions_matter() {
        let p = ForecasterParams::init(&tiny()).unwrap();
        let mut swapped = INPUTS;
        swapped.swap(2, 5);
        assert_ne!(p.predict(&INPUTS).unwrap(), p.predict(&swapped).unwrap());
        let pos: Vec<u32> = (1..=7).collect();
        let mut pos_swapped = pos.clone();
        pos_swapped.swap(0, 6);
        assert_ne!(p.forward(&INPUTS, &pos).unwrap(), p.forward(&INPUTS, &pos_swapped).unwrap());
    }

    #[test]
    fn input_errors() {
        let mut p = ForecasterParams::init(&tiny()).unwrap();
        assert!(matches!(p.predict(&INPUTS[..6]), Err(ForecasterError::InputLength { expected: 7, got: 6 })));
        p.values_mut()[3] = f64::NAN;
        assert!(matches!(p.predict(&INPUTS), Err(ForecasterError::NonFinite)));
    }

    #[test]
    fn quantile_outputs() {
        let cfg = ForecasterConfig {
            loss: Loss::Quantile { quantiles: vec![0.1, 0.5, 0.9] },
            ..tiny()
        };
        let p = ForecasterParams::init(&cfg).unwrap();
        let out = p.forward_outputs(&INPUTS, &(1..=7).collect::<Vec<_>>()).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(p.predict(&INPUTS).unwrap(), out[1]);
    }

    #[test]
    fn pinball_loss_values() {
        let loss = Loss::Quantile { quantiles: vec![0.1, 0.9] };
        let mut g = [0.0; 2];
        // target above both: 0.1*1 and 0.9*1, averaged
        let l = loss.evaluate(&[0.0, 0.0], 1.0, &mut g);
        assert!((l - 0.5).abs() < 1e-15);
        assert_eq!(g, [-0.05, -0.45]);
    }

    #[test]
    fn naive_baseline_repeats_last() {
        assert_eq!(naive_baseline(&[0.1, 0.2, 0.3]), 0.3);
        assert_eq!(naive_baseline(&[0.4, 0.0]), 0.0);
        assert_eq!(naive_baseline(&[0.7; 7]), 0.7);
    }

    #[test]
    fn samples_are_window_aligned() {
        let s = TrainingSample::from_window(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(s.inputs.len(), 7);
        assert_eq!(s.positions, (1..=7).collect::<Vec<_>>());
        assert_eq!(s.target, 8.0);
    }
}
