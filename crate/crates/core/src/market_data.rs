//! Exchange kline records: parsing the 12-column Binance CSV layout,
//! validation, and aggregation into coarser time frames.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Milliseconds in one minute.
pub const MINUTE_MS: i64 = 60_000;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("empty input: no kline rows")]
    Empty,
    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("row {row}: invariant violated: {invariant}")]
    Invariant { row: usize, invariant: &'static str },
    #[error("row {row}: duplicate open_time {open_time}")]
    DuplicateTimestamp { row: usize, open_time: i64 },
    #[error("gap after open_time {after}: expected next frame at {expected}, found {found}")]
    Gap { after: i64, expected: i64, found: i64 },
    #[error("frame_minutes must be positive")]
    ZeroFrame,
    #[error("{target} minutes is not a multiple of the {source_minutes}-minute input granularity")]
    NotMultiple { target: u32, source_minutes: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One OHLCV candle as published by the exchange.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kline {
    pub open_time: i64,
    pub close_time: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub quote_asset_volume: f64,
    pub num_trades: u64,
    pub taker_buy_base: f64,
    pub taker_buy_quote: f64,
}

impl Kline {
    /// Returns the name of the first invariant this kline violates, if any.
    pub fn violated_invariant(&self) -> Option<&'static str> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Some("all prices > 0");
        }
        if self.low > self.open.min(self.close) {
            return Some("low <= min(open, close)");
        }
        if self.high < self.open.max(self.close) {
            return Some("high >= max(open, close)");
        }
        let volumes = [
            self.volume,
            self.quote_asset_volume,
            self.taker_buy_base,
            self.taker_buy_quote,
        ];
        if volumes.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Some("volumes >= 0");
        }
        if self.open_time >= self.close_time {
            return Some("open_time < close_time");
        }
        None
    }
}

/// Time-ordered, gap-free candles of one currency pair at a fixed granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSeries {
    pair_id: String,
    frame_minutes: u32,
    frames: Vec<Kline>,
}

impl FrameSeries {
    /// Builds a series, checking ordering, spacing and per-kline invariants.
    pub fn new(
        pair_id: impl Into<String>,
        frame_minutes: u32,
        frames: Vec<Kline>,
    ) -> Result<Self, MarketDataError> {
        if frame_minutes == 0 {
            return Err(MarketDataError::ZeroFrame);
        }
        for (i, k) in frames.iter().enumerate() {
            if let Some(invariant) = k.violated_invariant() {
                return Err(MarketDataError::Invariant { row: i + 1, invariant });
            }
        }
        let step = frame_minutes as i64 * MINUTE_MS;
        for (i, pair) in frames.windows(2).enumerate() {
            let expected = pair[0].open_time + step;
            if pair[1].open_time == pair[0].open_time {
                return Err(MarketDataError::DuplicateTimestamp {
                    row: i + 2,
                    open_time: pair[1].open_time,
                });
            }
            if pair[1].open_time != expected {
                return Err(MarketDataError::Gap {
                    after: pair[0].open_time,
                    expected,
                    found: pair[1].open_time,
                });
            }
        }
        Ok(Self {
            pair_id: pair_id.into(),
            frame_minutes,
            frames,
        })
    }

    pub fn pair_id(&self) -> &str {
        &self.pair_id
    }

    pub fn frame_minutes(&self) -> u32 {
        self.frame_minutes
    }

    pub fn frames(&self) -> &[Kline] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.frames.iter().map(|k| k.close).collect()
    }

    /// Frames whose open_time lies in `[start, end)`; `None` bounds are open.
    pub fn slice_time(&self, start: Option<i64>, end: Option<i64>) -> FrameSeries {
        let frames = self
            .frames
            .iter()
            .filter(|k| start.is_none_or(|s| k.open_time >= s) && end.is_none_or(|e| k.open_time < e))
            .copied()
            .collect();
        FrameSeries {
            pair_id: self.pair_id.clone(),
            frame_minutes: self.frame_minutes,
            frames,
        }
    }

    /// Writes the series in the 12-column kline layout, without a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MarketDataError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for k in &self.frames {
            w.write_record([
                k.open_time.to_string(),
                k.open.to_string(),
                k.high.to_string(),
                k.low.to_string(),
                k.close.to_string(),
                k.volume.to_string(),
                k.close_time.to_string(),
                k.quote_asset_volume.to_string(),
                k.num_trades.to_string(),
                k.taker_buy_base.to_string(),
                k.taker_buy_quote.to_string(),
                "0".to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> MarketDataError {
    MarketDataError::Io(std::io::Error::other(e))
}

const COLUMNS: usize = 12;

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
    row: usize,
) -> Result<T, MarketDataError> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| MarketDataError::Malformed {
        row,
        message: format!("column {name}: cannot parse {raw:?}"),
    })
}

fn parse_count(record: &csv::StringRecord, row: usize) -> Result<u64, MarketDataError> {
    let raw = record.get(8).unwrap_or("").trim();
    if let Ok(n) = raw.parse::<u64>() {
        return Ok(n);
    }
    // some exports write integer columns as "340.0"
    match raw.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 => Ok(x as u64),
        _ => Err(MarketDataError::Malformed {
            row,
            message: format!("column num_trades: cannot parse {raw:?} as a count"),
        }),
    }
}

/// Parses a 12-column Binance kline CSV into a validated 1-minute series.
///
/// A header row is recognized by a non-numeric first field on the first line.
/// Rows are sorted by open_time; duplicates and gaps are rejected.
pub fn parse_kline_csv<R: Read>(input: R, pair_id: &str) -> Result<FrameSeries, MarketDataError> {
    parse_kline_csv_frames(input, pair_id, 1)
}

/// Same as [`parse_kline_csv`] for files already sampled at `frame_minutes`.
pub fn parse_kline_csv_frames<R: Read>(
    input: R,
    pair_id: &str,
    frame_minutes: u32,
) -> Result<FrameSeries, MarketDataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows: Vec<(usize, Kline)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let record = rec.map_err(|e| MarketDataError::Malformed {
            row,
            message: e.to_string(),
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if row == 1 && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if record.len() != COLUMNS {
            return Err(MarketDataError::Malformed {
                row,
                message: format!("expected {COLUMNS} columns, found {}", record.len()),
            });
        }
        let kline = Kline {
            open_time: parse_field(&record, 0, "open_time", row)?,
            open: parse_field(&record, 1, "open", row)?,
            high: parse_field(&record, 2, "high", row)?,
            low: parse_field(&record, 3, "low", row)?,
            close: parse_field(&record, 4, "close", row)?,
            volume: parse_field(&record, 5, "volume", row)?,
            close_time: parse_field(&record, 6, "close_time", row)?,
            quote_asset_volume: parse_field(&record, 7, "quote_asset_volume", row)?,
            num_trades: parse_count(&record, row)?,
            taker_buy_base: parse_field(&record, 9, "taker_buy_base", row)?,
            taker_buy_quote: parse_field(&record, 10, "taker_buy_quote", row)?,
        };
        if let Some(invariant) = kline.violated_invariant() {
            return Err(MarketDataError::Invariant { row, invariant });
        }
        rows.push((row, kline));
    }
    if rows.is_empty() {
        return Err(MarketDataError::Empty);
    }
    rows.sort_by_key(|(_, k)| k.open_time);
    for pair in rows.windows(2) {
        if pair[0].1.open_time == pair[1].1.open_time {
            return Err(MarketDataError::DuplicateTimestamp {
                row: pair[1].0.max(pair[0].0),
                open_time: pair[1].1.open_time,
            });
        }
    }
    FrameSeries::new(pair_id, frame_minutes, rows.into_iter().map(|(_, k)| k).collect())
}

/// Merges consecutive frames into non-overlapping `n_minutes` blocks anchored at the
/// first frame. A trailing partial block is dropped.
pub fn aggregate_frames(series: &FrameSeries, n_minutes: u32) -> Result<FrameSeries, MarketDataError> {
    if series.is_empty() {
        return Err(MarketDataError::Empty);
    }
    if n_minutes == 0 || !n_minutes.is_multiple_of(series.frame_minutes) {
        return Err(MarketDataError::NotMultiple {
            target: n_minutes,
            source_minutes: series.frame_minutes,
        });
    }
    let block = (n_minutes / series.frame_minutes) as usize;
    let frames = series
        .frames
        .chunks_exact(block)
        .map(|chunk| {
            let first = chunk[0];
            let last = chunk[chunk.len() - 1];
            let mut out = Kline {
                open_time: first.open_time,
                close_time: last.close_time,
                open: first.open,
                close: last.close,
                high: f64::NEG_INFINITY,
                low: f64::INFINITY,
                volume: 0.0,
                quote_asset_volume: 0.0,
                num_trades: 0,
                taker_buy_base: 0.0,
                taker_buy_quote: 0.0,
            };
            for k in chunk {
                out.high = out.high.max(k.high);
                out.low = out.low.min(k.low);
                out.volume += k.volume;
                out.quote_asset_volume += k.quote_asset_volume;
                out.num_trades += k.num_trades;
                out.taker_buy_base += k.taker_buy_base;
                out.taker_buy_quote += k.taker_buy_quote;
            }
            out
        })
        .collect();
    Ok(FrameSeries {
        pair_id: series.pair_id.clone(),
        frame_minutes: n_minutes,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minute(i: i64, price: f64) -> Kline {
        Kline {
            open_time: i * MINUTE_MS,
            close_time: i * MINUTE_MS + MINUTE_MS - 1,
            open: price,
            high: price + 1.0 + i as f64,
            low: price - 1.0,
            close: price + 0.5,
            volume: 1.0 + i as f64,
            quote_asset_volume: 10.0,
            num_trades: i as u64 + 1,
            taker_buy_base: 0.5,
            taker_buy_quote: 5.0,
        }
    }

    #[test]
    fn parses_single_documented_row() {
        let row = "1638316800000,57000,57100,56900,57050,12.5,1638316859999,712625,340,6.1,347890,0\n";
        let s = parse_kline_csv(row.as_bytes(), "BTCUSDT").unwrap();
        assert_eq!(s.len(), 1);
        let k = s.frames()[0];
        assert_eq!(k.close, 57050.0);
        assert_eq!(k.num_trades, 340);
        assert_eq!(k.open_time, 1638316800000);
        assert_eq!(k.close_time, 1638316859999);
        assert_eq!(k.taker_buy_quote, 347890.0);
        assert_eq!(s.frame_minutes(), 1);
    }

    #[test]
    fn header_is_skipped_and_rows_sorted() {
        let text = "open_time,open,high,low,close,volume,close_time,qav,trades,tbb,tbq,ignore\n\
                    60000,2,3,1,2,1,119999,1,1,0,0,0\n\
                    0,1,2,0.5,1.5,1,59999,1,1,0,0,0\n";
        let s = parse_kline_csv(text.as_bytes(), "X").unwrap();
        assert_eq!(s.closes(), vec![1.5, 2.0]);
    }

    #[test]
    fn high_below_low_reports_row() {
        let text = "0,1,2,0.5,1.5,1,59999,1,1,0,0,0\n60000,2,1,3,2,1,119999,1,1,0,0,0\n";
        match parse_kline_csv(text.as_bytes(), "X") {
            Err(MarketDataError::Invariant { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_timestamp_rejected() {
        let text = "0,1,2,0.5,1.5,1,59999,1,1,0,0,0\n0,1,2,0.5,1.5,1,59999,1,1,0,0,0\n";
        assert!(matches!(
            parse_kline_csv(text.as_bytes(), "X"),
            Err(MarketDataError::DuplicateTimestamp { .. })
        ));
    }

    #[test]
    fn malformed_and_empty_inputs() {
        assert!(matches!(parse_kline_csv("".as_bytes(), "X"), Err(MarketDataError::Empty)));
        let bad = "0,1,2,0.5,abc,1,59999,1,1,0,0,0\n";
        assert!(matches!(
            parse_kline_csv(bad.as_bytes(), "X"),
            Err(MarketDataError::Malformed { row: 1, .. })
        ));
        let short = "0,1,2,0.5\n";
        assert!(matches!(
            parse_kline_csv(short.as_bytes(), "X"),
            Err(MarketDataError::Malformed { row: 1, .. })
        ));
    }

    #[test]
    fn gap_is_an_error() {
        let frames = vec![minute(0, 10.0), minute(2, 10.0)];
        assert!(matches!(FrameSeries::new("X", 1, frames), Err(MarketDataError::Gap { .. })));
    }

    #[test]
    fn aggregates_fourteen_minutes_into_two_frames() {
        let frames: Vec<Kline> = (0..14).map(|i| minute(i, 100.0 + i as f64)).collect();
        let s = FrameSeries::new("X", 1, frames.clone()).unwrap();
        let agg = aggregate_frames(&s, 7).unwrap();
        assert_eq!(agg.len(), 2);
        assert_eq!(agg.frame_minutes(), 7);
        let first = agg.frames()[0];
        let expected_high = frames[..7].iter().map(|k| k.high).fold(f64::MIN, f64::max);
        assert_eq!(first.high, expected_high);
        assert_eq!(first.low, frames[..7].iter().map(|k| k.low).fold(f64::MAX, f64::min));
        assert_eq!(first.open, frames[0].open);
        assert_eq!(first.close, frames[6].close);
        assert_eq!(first.num_trades, (1..=7).sum::<u64>());
        assert_eq!(agg.frames()[1].open_time, 7 * MINUTE_MS);
        assert_eq!(agg.frames()[1].close_time, frames[13].close_time);
    }

    #[test]
    fn aggregation_identity_and_partial_block() {
        let frames: Vec<Kline> = (0..13).map(|i| minute(i, 50.0)).collect();
        let s = FrameSeries::new("X", 1, frames).unwrap();
        assert_eq!(aggregate_frames(&s, 1).unwrap(), s);
        assert_eq!(aggregate_frames(&s, 7).unwrap().len(), 1);
        let seven = aggregate_frames(&s, 7).unwrap();
        assert!(matches!(
            aggregate_frames(&seven, 10),
            Err(MarketDataError::NotMultiple { .. })
        ));
        let empty = FrameSeries::new("X", 1, vec![]).unwrap();
        assert!(matches!(aggregate_frames(&empty, 7), Err(MarketDataError::Empty)));
    }

    #[test]
    fn csv_round_trip() {
        let frames: Vec<Kline> = (0..5).map(|i| minute(i, 1.25 + i as f64 * 0.1)).collect();
        let s = FrameSeries::new("X", 1, frames).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(parse_kline_csv(buf.as_slice(), "X").unwrap(), s);
    }
}
