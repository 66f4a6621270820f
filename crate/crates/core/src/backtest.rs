//! All-in long-only trading simulation and directional metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BacktestError {
    #[error("{directions} directions need {expected} closes, got {closes}")]
    LengthMismatch {
        directions: usize,
        closes: usize,
        expected: usize,
    },
    #[error("non-positive price {price} at step {step}")]
    NonPositivePrice { step: usize, price: f64 },
    #[error("invalid backtest config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    /// Positive values are bullish; zero and below are bearish.
    pub fn from_value(v: f64) -> Self {
        if v > 0.0 {
            Direction::Up
        } else {
            Direction::Down
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub initial_quote: f64,
    pub fee_rate: f64,
    pub liquidate_at_end: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            initial_quote: 100.0,
            fee_rate: 0.0,
            liquidate_at_end: true,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        if !(self.initial_quote > 0.0 && self.initial_quote.is_finite()) {
            return Err(BacktestError::Config("initial_quote must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.fee_rate) {
            return Err(BacktestError::Config("fee_rate must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub time_index: usize,
    pub side: Side,
    pub price: f64,
    /// Base-asset quantity bought or sold.
    pub quantity: f64,
    /// Fee paid, in quote units.
    pub fee: f64,
    /// Account value in quote units right after the trade.
    pub equity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeLedger {
    pub initial_quote: f64,
    pub fee_rate: f64,
    pub trades: Vec<Trade>,
    /// Whether a position is held after each step's decision.
    pub long_after_step: Vec<bool>,
    /// Quote value at the end (marked at the last close when not liquidated).
    pub final_value: f64,
    pub liquidated: bool,
}

impl TradeLedger {
    /// Recomputes the final value from the trade records alone.
    pub fn replay(&self, last_close: f64) -> f64 {
        let mut quote = self.initial_quote;
        let mut base = 0.0;
        for t in &self.trades {
            match t.side {
                Side::Buy => {
                    base = quote * (1.0 - self.fee_rate) / t.price;
                    quote = 0.0;
                }
                Side::Sell => {
                    quote = base * t.price * (1.0 - self.fee_rate);
                    base = 0.0;
                }
            }
        }
        quote + base * last_close
    }

    /// `time_index,side,price,quantity,fee,equity` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| std::io::Error::other(e);
        w.write_record(["time_index", "side", "price", "quantity", "fee", "equity"]).map_err(io)?;
        for t in &self.trades {
            w.write_record([
                t.time_index.to_string(),
                match t.side {
                    Side::Buy => "buy".to_string(),
                    Side::Sell => "sell".to_string(),
                },
                t.price.to_string(),
                t.quantity.to_string(),
                t.fee.to_string(),
                t.equity.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()
    }
}

/// Runs the all-in strategy. `directions[t]` is the forecast for the move from
/// `closes[t]` to `closes[t + 1]` and is acted on at `closes[t]`, so `closes`
/// holds one more entry than `directions`.
pub fn run_backtest(
    directions: &[Direction],
    closes: &[f64],
    config: &BacktestConfig,
) -> Result<TradeLedger, BacktestError> {
    config.validate()?;
    if closes.len() != directions.len() + 1 {
        return Err(BacktestError::LengthMismatch {
            directions: directions.len(),
            closes: closes.len(),
            expected: directions.len() + 1,
        });
    }
    if let Some((step, &price)) = closes.iter().enumerate().find(|(_, p)| !(**p > 0.0 && p.is_finite())) {
        return Err(BacktestError::NonPositivePrice { step, price });
    }
    let fee_rate = config.fee_rate;
    let mut quote = config.initial_quote;
    let mut base = 0.0;
    let mut long = false;
    let mut trades = Vec::new();
    let mut long_after_step = Vec::with_capacity(directions.len());
    for (t, (dir, &price)) in directions.iter().zip(closes).enumerate() {
        match (dir, long) {
            (Direction::Up, false) => {
                let fee = quote * fee_rate;
                base = (quote - fee) / price;
                quote = 0.0;
                long = true;
                trades.push(Trade {
                    time_index: t,
                    side: Side::Buy,
                    price,
                    quantity: base,
                    fee,
                    equity: base * price,
                });
            }
            (Direction::Down, true) => {
                let gross = base * price;
                let fee = gross * fee_rate;
                quote = gross - fee;
                trades.push(Trade {
                    time_index: t,
                    side: Side::Sell,
                    price,
                    quantity: base,
                    fee,
                    equity: quote,
                });
                base = 0.0;
                long = false;
            }
            _ => {}
        }
        long_after_step.push(long);
    }
    let last_index = closes.len() - 1;
    let last = closes[last_index];
    let liquidated = long && config.liquidate_at_end;
    if liquidated {
        let gross = base * last;
        let fee = gross * fee_rate;
        quote = gross - fee;
        trades.push(Trade {
            time_index: last_index,
            side: Side::Sell,
            price: last,
            quantity: base,
            fee,
            equity: quote,
        });
        base = 0.0;
    }
    Ok(TradeLedger {
        initial_quote: config.initial_quote,
        fee_rate,
        trades,
        long_after_step,
        final_value: quote + base * last,
        liquidated,
    })
}

/// Buy at the first close, sell at the last, paying the fee on both sides.
pub fn buy_and_hold(closes: &[f64], config: &BacktestConfig) -> Result<f64, BacktestError> {
    config.validate()?;
    if closes.len() < 2 {
        return Err(BacktestError::LengthMismatch {
            directions: 1,
            closes: closes.len(),
            expected: 2,
        });
    }
    if let Some((step, &price)) = closes.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
        return Err(BacktestError::NonPositivePrice { step, price });
    }
    let keep = 1.0 - config.fee_rate;
    Ok(config.initial_quote * (closes[closes.len() - 1] / closes[0]) * keep * keep)
}

/// Confusion counts with bullish as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DirectionMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub accuracy: Option<f64>,
    /// Absent when nothing was predicted bullish.
    pub precision: Option<f64>,
}

impl DirectionMetrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let total = tp + fp + tn + fn_;
        Self {
            tp,
            fp,
            tn,
            fn_,
            accuracy: (total > 0).then(|| (tp + tn) as f64 / total as f64),
            precision: (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64),
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn direction_metrics(predicted: &[Direction], realized: &[f64]) -> Result<DirectionMetrics, BacktestError> {
    if predicted.len() != realized.len() {
        return Err(BacktestError::LengthMismatch {
            directions: predicted.len(),
            closes: realized.len(),
            expected: predicted.len(),
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (p, v) in predicted.iter().zip(realized) {
        match (p, Direction::from_value(*v)) {
            (Direction::Up, Direction::Up) => tp += 1,
            (Direction::Up, Direction::Down) => fp += 1,
            (Direction::Down, Direction::Down) => tn += 1,
            (Direction::Down, Direction::Up) => fn_ += 1,
        }
    }
    Ok(DirectionMetrics::from_counts(tp, fp, tn, fn_))
}
