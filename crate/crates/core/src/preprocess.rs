//! Volatility-rate conversion, auxiliary ratio features, capped normalization
//! and stride-1 window extraction.

use std::sync::Arc;

use thiserror::Error;

use crate::market_data::FrameSeries;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("non-positive close price {price} at frame {index}")]
    NonPositiveClose { index: usize, price: f64 },
    #[error("series of length {len} is shorter than window length {n}")]
    TooShort { len: usize, n: usize },
    #[error("window length must be at least 2, got {0}")]
    WindowTooSmall(usize),
    #[error("reference maximum must be positive, got {0}")]
    NonPositiveReference(f64),
}

/// Percent change of close versus the previous close, with the originating prices.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilitySeries {
    pub pair_id: String,
    pub frame_minutes: u32,
    pub values: Vec<f64>,
    pub base_prices: Vec<f64>,
}

impl VolatilitySeries {
    /// Rebuilds the close prices from the first base price and the rates.
    pub fn reconstruct_prices(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len() + 1);
        let mut p = self.base_prices[0];
        out.push(p);
        for v in &self.values {
            p *= 1.0 + v / 100.0;
            out.push(p);
        }
        out
    }
}

/// Fixed-length run of consecutive volatility values.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub values: Vec<f64>,
    pub pair_id: Arc<str>,
    /// Index of `values[0]` in the parent series.
    pub start: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `(P_t / P_{t-1} - 1) * 100` on a raw close sequence.
pub fn volatility_from_closes(closes: &[f64]) -> Result<Vec<f64>, PreprocessError> {
    if closes.len() < 2 {
        return Err(PreprocessError::TooFewFrames(closes.len()));
    }
    if let Some((index, &price)) = closes.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
        return Err(PreprocessError::NonPositiveClose { index, price });
    }
    Ok(closes.windows(2).map(|w| (w[1] / w[0] - 1.0) * 100.0).collect())
}

pub fn to_volatility(series: &FrameSeries) -> Result<VolatilitySeries, PreprocessError> {
    let closes = series.closes();
    let values = volatility_from_closes(&closes)?;
    Ok(VolatilitySeries {
        pair_id: series.pair_id().to_string(),
        frame_minutes: series.frame_minutes(),
        values,
        base_prices: closes,
    })
}

/// All windows of length `n` at stride 1, in order.
pub fn sliding_windows(series: &VolatilitySeries, n: usize) -> Result<Vec<Window>, PreprocessError> {
    if n < 2 {
        return Err(PreprocessError::WindowTooSmall(n));
    }
    let len = series.values.len();
    if len < n {
        return Err(PreprocessError::TooShort { len, n });
    }
    let pair: Arc<str> = Arc::from(series.pair_id.as_str());
    Ok(series
        .values
        .windows(n)
        .enumerate()
        .map(|(start, w)| Window {
            values: w.to_vec(),
            pair_id: Arc::clone(&pair),
            start,
        })
        .collect())
}

/// `min(value / reference_max, 1)` for each value.
pub fn normalize_capped(values: &[f64], reference_max: f64) -> Result<Vec<f64>, PreprocessError> {
    if !(reference_max > 0.0) {
        return Err(PreprocessError::NonPositiveReference(reference_max));
    }
    Ok(values.iter().map(|v| (v / reference_max).min(1.0)).collect())
}

/// Open, high and low of a frame relative to the previous frame's close.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioFeatures {
    pub ratio_open: f64,
    pub ratio_high: f64,
    pub ratio_low: f64,
}

pub fn ratio_features(series: &FrameSeries) -> Result<Vec<RatioFeatures>, PreprocessError> {
    let frames = series.frames();
    if frames.len() < 2 {
        return Err(PreprocessError::TooFewFrames(frames.len()));
    }
    Ok(frames
        .windows(2)
        .map(|w| {
            let prev = w[0].close;
            RatioFeatures {
                ratio_open: w[1].open / prev,
                ratio_high: w[1].high / prev,
                ratio_low: w[1].low / prev,
            }
        })
        .collect())
}
