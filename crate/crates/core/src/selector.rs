//! Next-category selection.
//!
//! [`TransitionModel`] is a visible-state Markov chain over categories. Because
//! each category can only move to its two successors, a row reduces to two
//! counts: how often the new bit was 0 and how often it was 1.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::categorize::{successor_bit, successors, Basis, CategorizeError, CategoryId, CategoryScheme};

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("category {to} at position {position} is not a successor of {from}")]
    NotSuccessor {
        from: CategoryId,
        to: CategoryId,
        position: usize,
    },
    #[error("smoothing alpha must be finite and non-negative, got {0}")]
    BadAlpha(f64),
    #[error(transparent)]
    Category(#[from] CategorizeError),
    #[error("selector file: {0}")]
    Format(String),
    #[error("selector file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything that can propose the next category and learn from realized moves.
pub trait CategorySelector {
    /// Chosen next category and the probability assigned to it.
    fn select(&self, current: CategoryId) -> (CategoryId, f64);

    /// Records a realized transition.
    fn observe(&mut self, from: CategoryId, to: CategoryId) -> Result<(), SelectorError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    scheme: CategoryScheme,
    counts: Vec<[u64; 2]>,
    alpha: f64,
}

impl TransitionModel {
    pub fn new(scheme: CategoryScheme, alpha: f64) -> Result<Self, SelectorError> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(SelectorError::BadAlpha(alpha));
        }
        Ok(Self {
            counts: vec![[0, 0]; scheme.category_count()],
            scheme,
            alpha,
        })
    }

    /// Tallies the transitions of one time-ordered, stride-1 category sequence.
    pub fn fit(sequence: &[CategoryId], scheme: CategoryScheme, alpha: f64) -> Result<Self, SelectorError> {
        let mut model = Self::new(scheme, alpha)?;
        for (i, pair) in sequence.windows(2).enumerate() {
            model.record(pair[0], pair[1], i + 1)?;
        }
        Ok(model)
    }

    fn record(&mut self, from: CategoryId, to: CategoryId, position: usize) -> Result<(), SelectorError> {
        self.scheme.check(from)?;
        let bit = successor_bit(from, to, &self.scheme).ok_or(SelectorError::NotSuccessor { from, to, position })?;
        self.counts[from.0 as usize][bit] += 1;
        Ok(())
    }

    pub fn update_online(&mut self, from: CategoryId, to: CategoryId) -> Result<(), SelectorError> {
        self.record(from, to, 0)
    }

    pub fn scheme(&self) -> &CategoryScheme {
        &self.scheme
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn counts(&self) -> &[[u64; 2]] {
        &self.counts
    }

    /// Smoothed probability that the new bit after `c` is `bit`.
    pub fn probability(&self, c: CategoryId, bit: usize) -> f64 {
        let row = self.counts[c.0 as usize];
        let total = row[0] as f64 + row[1] as f64 + 2.0 * self.alpha;
        if total == 0.0 {
            return 0.5;
        }
        (row[bit] as f64 + self.alpha) / total
    }

    /// The more likely successor of `c` and its probability. Ties pick the
    /// bit-0 successor.
    pub fn predict_next(&self, c: CategoryId) -> (CategoryId, f64) {
        let (zero, one) = successors(c, &self.scheme);
        let p1 = self.probability(c, 1);
        let p0 = self.probability(c, 0);
        if p1 > p0 {
            (one, p1)
        } else {
            (zero, p0)
        }
    }
}

impl CategorySelector for TransitionModel {
    fn select(&self, current: CategoryId) -> (CategoryId, f64) {
        self.predict_next(current)
    }

    fn observe(&mut self, from: CategoryId, to: CategoryId) -> Result<(), SelectorError> {
        self.update_online(from, to)
    }
}

/// Upper-bound selector for evaluation: returns the realized next category.
pub fn oracle_select(truth: CategoryId) -> CategoryId {
    truth
}

pub const SELECTOR_FORMAT_VERSION: u32 = 1;

impl TransitionModel {
    /// Text form: `key=value` header lines, then one `category,count0,count1`
    /// row per category.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format=markov-selector");
        let _ = writeln!(out, "version={SELECTOR_FORMAT_VERSION}");
        let _ = writeln!(out, "window_len={}", self.scheme.window_len());
        let _ = writeln!(out, "bit_count={}", self.scheme.bit_count());
        let _ = writeln!(out, "basis={}", self.scheme.basis());
        let _ = writeln!(out, "alpha={}", self.alpha);
        let _ = writeln!(out, "counts");
        for (c, row) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{c},{},{}", row[0], row[1]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SelectorError> {
        let bad = |m: &str| SelectorError::Format(m.to_string());
        let mut lines = text.lines();
        let mut header = std::collections::BTreeMap::new();
        for line in lines.by_ref() {
            if line == "counts" {
                break;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad("malformed header line"))?;
            header.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| header.get(k).ok_or_else(|| bad(&format!("missing key {k}")));
        if get("format")? != "markov-selector" {
            return Err(bad("not a markov-selector file"));
        }
        let version: u32 = get("version")?.parse().map_err(|_| bad("bad version"))?;
        if version != SELECTOR_FORMAT_VERSION {
            return Err(SelectorError::Version {
                found: version,
                expected: SELECTOR_FORMAT_VERSION,
            });
        }
        let n: usize = get("window_len")?.parse().map_err(|_| bad("bad window_len"))?;
        let k: usize = get("bit_count")?.parse().map_err(|_| bad("bad bit_count"))?;
        let basis: Basis = get("basis")?.parse()?;
        let alpha: f64 = get("alpha")?.parse().map_err(|_| bad("bad alpha"))?;
        let mut model = Self::new(CategoryScheme::new(n, k, basis)?, alpha)?;
        let mut seen = 0;
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad("count rows need 3 fields"));
            }
            let parse = |s: &str| s.parse::<u64>().map_err(|_| bad("bad count"));
            let c = parse(f[0])? as usize;
            if c != seen || c >= model.counts.len() {
                return Err(bad("count rows out of order"));
            }
            model.counts[c] = [parse(f[1])?, parse(f[2])?];
            seen += 1;
        }
        if seen != model.counts.len() {
            return Err(bad("count table incomplete"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), SelectorError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SelectorError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scheme() -> CategoryScheme {
        CategoryScheme::default()
    }

    #[test]
    fn fit_tallies_transitions() {
        let m = TransitionModel::fit(&[CategoryId(0), CategoryId(0), CategoryId(1)], scheme(), 1.0).unwrap();
        assert_eq!(m.counts()[0], [1, 1]);
        assert_eq!(m.counts().iter().map(|r| r[0] + r[1]).sum::<u64>(), 2);
    }

    #[test]
    fn short_sequences_give_zero_counts() {
        for seq in [vec![], vec![CategoryId(9)]] {
            let m = TransitionModel::fit(&seq, scheme(), 1.0).unwrap();
            assert!(m.counts().iter().all(|r| *r == [0, 0]));
            assert_eq!(m.predict_next(CategoryId(9)).1, 0.5);
        }
    }

    #[test]
    fn illegal_transition_rejected() {
        let err = TransitionModel::fit(&[CategoryId(5), CategoryId(99)], scheme(), 1.0).unwrap_err();
        assert!(matches!(err, SelectorError::NotSuccessor { position: 1, .. }));
        let mut m = TransitionModel::new(scheme(), 1.0).unwrap();
        assert!(m.update_online(CategoryId(5), CategoryId(12)).is_err());
        assert!(m.update_online(CategoryId(500), CategoryId(0)).is_err());
    }

    #[test]
    fn laplace_prediction() {
        let mut m = TransitionModel::new(scheme(), 1.0).unwrap();
        let c = CategoryId(21);
        let (zero, one) = successors(c, &scheme());
        for _ in 0..3 {
            m.update_online(c, zero).unwrap();
        }
        m.update_online(c, one).unwrap();
        let (next, p) = m.predict_next(c);
        assert_eq!(next, zero);
        assert!((p - 4.0 / 6.0).abs() < 1e-15);

        let fresh = TransitionModel::new(scheme(), 1.0).unwrap();
        assert_eq!(fresh.predict_next(c), (zero, 0.5));

        let mut raw = TransitionModel::new(scheme(), 0.0).unwrap();
        for _ in 0..10 {
            raw.update_online(c, one).unwrap();
        }
        assert_eq!(raw.predict_next(c), (one, 1.0));
        assert_eq!(raw.counts()[21], [0, 10]);
    }

    #[test]
    fn oracle_passes_through() {
        for c in [0, 63, 127] {
            assert_eq!(oracle_select(CategoryId(c)), CategoryId(c));
        }
    }

    #[test]
    fn deterministic_transitions_learned_in_one_pass() {
        // new bit = NOT oldest bit: each category always has the same successor
        let s = scheme();
        let mut seq = vec![CategoryId(0b1011001)];
        for _ in 0..500 {
            let c = seq.last().unwrap().0;
            let bit = ((c >> 6) & 1) ^ 1;
            seq.push(CategoryId(((c << 1) & 127) | bit));
        }
        let m = TransitionModel::fit(&seq, s, 1.0).unwrap();
        let hits = seq.windows(2).filter(|p| m.predict_next(p[0]).0 == p[1]).count();
        assert_eq!(hits, seq.len() - 1);
    }

    #[test]
    fn text_round_trip_and_version_check() {
        let seq: Vec<CategoryId> = [0u32, 1, 3, 7, 14, 28, 57].iter().map(|c| CategoryId(*c)).collect();
        let m = TransitionModel::fit(&seq, scheme(), 0.5).unwrap();
        assert_eq!(TransitionModel::from_text(&m.to_text()).unwrap(), m);
        let bumped = m.to_text().replace("version=1", "version=2");
        assert!(matches!(
            TransitionModel::from_text(&bumped),
            Err(SelectorError::Version { found: 2, .. })
        ));
        let truncated: String = m.to_text().lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(TransitionModel::from_text(&truncated).is_err());
    }

    fn lawful_sequence(bits: &[bool], start: u32) -> Vec<CategoryId> {
        let mut seq = vec![CategoryId(start)];
        for b in bits {
            let (zero, one) = successors(*seq.last().unwrap(), &scheme());
            seq.push(if *b { one } else { zero });
        }
        seq
    }

    proptest! {
        #[test]
        fn batch_equals_online(bits in proptest::collection::vec(any::<bool>(), 0..300), start in 0u32..128, split in 0usize..300) {
            let seq = lawful_sequence(&bits, start);
            let split = split.min(seq.len());
            let mut m = TransitionModel::fit(&seq[..split], scheme(), 1.0).unwrap();
            let from = split.saturating_sub(1);
            for p in seq[from..].windows(2) {
                m.update_online(p[0], p[1]).unwrap();
            }
            prop_assert_eq!(m, TransitionModel::fit(&seq, scheme(), 1.0).unwrap());
        }

        #[test]
        fn rows_stochastic_and_interior(bits in proptest::collection::vec(any::<bool>(), 0..200), alpha in 0.01f64..5.0) {
            let m = TransitionModel::fit(&lawful_sequence(&bits, 0), scheme(), alpha).unwrap();
            for c in 0..128 {
                let c = CategoryId(c);
                let p0 = m.probability(c, 0);
                let p1 = m.probability(c, 1);
                prop_assert!((p0 + p1 - 1.0).abs() < 1e-15);
                let (_, p) = m.predict_next(c);
                prop_assert!(p > 0.0 && p < 1.0);
            }
        }
    }
}
