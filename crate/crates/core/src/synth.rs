//! Seeded synthetic kline series for tests and demos.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::market_data::{FrameSeries, Kline, MarketDataError, MINUTE_MS};

/// 2023-08-08 00:00 UTC.
pub const SYNTH_START_MS: i64 = 1_691_452_800_000;
/// Step of the deterministic generator's volatility, in percent.
pub const DETERMINISTIC_STEP: f64 = 0.05;
/// Acceleration pattern length of the deterministic generator.
pub const DETERMINISTIC_PERIOD: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    RandomWalk,
    DeterministicCategory,
    Periodic,
}

impl SynthKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthKind::RandomWalk => "random_walk",
            SynthKind::DeterministicCategory => "deterministic_category",
            SynthKind::Periodic => "periodic",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random_walk" => Ok(SynthKind::RandomWalk),
            "deterministic_category" => Ok(SynthKind::DeterministicCategory),
            "periodic" => Ok(SynthKind::Periodic),
            other => Err(format!(
                "unknown synthetic kind {other:?} (random_walk, deterministic_category, periodic)"
            )),
        }
    }
}

/// Volatility path of the deterministic generator.
///
/// The acceleration bit `b_t = [V_t > V_{t-1}]` follows `b_{t+7} = !b_t`, so
/// the next bit is the complement of the oldest bit of the current 7-bit
/// category and `V_{t+1} = V_t ± DETERMINISTIC_STEP`. The path is a triangle
/// wave centred on zero whose values are odd multiples of half a step, so no
/// value is ever exactly zero.
pub fn deterministic_volatility(count: usize, phase: usize) -> Vec<f64> {
    let half = DETERMINISTIC_PERIOD / 2;
    let mut level: i64 = 0;
    let mut levels = Vec::with_capacity(count);
    for t in 0..count {
        if t > 0 {
            let up = (t + phase) % DETERMINISTIC_PERIOD < half;
            level += if up { 1 } else { -1 };
        }
        levels.push(level);
    }
    // the wave spans `half` steps, so min + max is odd once a full period is seen
    let (lo, hi) = levels.iter().fold((i64::MAX, i64::MIN), |(lo, hi), l| (lo.min(*l), hi.max(*l)));
    let centre = if count > DETERMINISTIC_PERIOD {
        (lo + hi) as f64 / 2.0
    } else {
        lo as f64 - 0.5
    };
    levels
        .into_iter()
        .map(|l| (l as f64 - centre) * DETERMINISTIC_STEP)
        .collect()
}

fn closes_from_volatility(start: f64, volatility: &[f64]) -> Vec<f64> {
    let mut p = start;
    let mut out = Vec::with_capacity(volatility.len() + 1);
    out.push(p);
    for v in volatility {
        p *= 1.0 + v / 100.0;
        out.push(p);
    }
    out
}

fn klines_from_closes(closes: &[f64], rng: &mut ChaCha8Rng) -> Vec<Kline> {
    let mut prev = closes[0];
    closes
        .iter()
        .enumerate()
        .map(|(i, &close)| {
            let open = prev;
            prev = close;
            let high = open.max(close) * (1.0 + rng.gen_range(0.0..5e-4));
            let low = open.min(close) * (1.0 - rng.gen_range(0.0..5e-4));
            let volume = rng.gen_range(1.0..100.0);
            let taker = rng.gen_range(0.2..0.8);
            let quote = volume * (open + close) / 2.0;
            let open_time = SYNTH_START_MS + i as i64 * MINUTE_MS;
            Kline {
                open_time,
                close_time: open_time + MINUTE_MS - 1,
                open,
                high,
                low,
                close,
                volume,
                quote_asset_volume: quote,
                num_trades: rng.gen_range(10..500),
                taker_buy_base: volume * taker,
                taker_buy_quote: quote * taker,
            }
        })
        .collect()
}

/// `length` one-minute klines of the given kind, reproducible from `seed`.
pub fn generate_synthetic(kind: SynthKind, length: usize, seed: u64) -> Result<FrameSeries, MarketDataError> {
    if length == 0 {
        return Err(MarketDataError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(50.0..150.0);
    let steps = length - 1;
    let closes = match kind {
        SynthKind::RandomWalk => {
            let step = LogNormal::new(0.0, 2e-3).expect("valid log-normal");
            let mut p = start;
            std::iter::once(start)
                .chain((0..steps).map(|_| {
                    p *= step.sample(&mut rng);
                    p
                }))
                .collect()
        }
        SynthKind::DeterministicCategory => {
            let phase = rng.gen_range(0..DETERMINISTIC_PERIOD);
            closes_from_volatility(start, &deterministic_volatility(steps, phase))
        }
        SynthKind::Periodic => {
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let period = 48.0;
            let volatility: Vec<f64> = (0..steps)
                .map(|t| 0.2 * (std::f64::consts::TAU * t as f64 / period + phase).sin())
                .collect();
            closes_from_volatility(start, &volatility)
        }
    };
    let frames = klines_from_closes(&closes, &mut rng);
    FrameSeries::new(format!("SYN-{}-{seed}", kind.as_str()), 1, frames)
}
