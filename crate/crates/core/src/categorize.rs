//! Direction-pattern categories over fixed-length windows.
//!
//! A window of `n` volatility values maps to a `k`-bit id. Bit `k-1-i` holds the
//! i-th comparison (oldest first), so the newest comparison is the least
//! significant bit. Sliding the window by one frame shifts the pattern left and
//! appends one new bit: every category has exactly two possible successors.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::preprocess::Window;

#[derive(Debug, Error)]
pub enum CategorizeError {
    #[error("window has {got} values, scheme expects {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("bit count {k} is invalid for window length {n} (must be n-1 or n-2, at least 1)")]
    InvalidScheme { n: usize, k: usize },
    #[error("category {category} is out of range for {bits} bits")]
    OutOfRange { category: u32, bits: usize },
    #[error("category {0} has no windows (category unseen in training data)")]
    EmptyBucket(CategoryId),
    #[error("unknown basis {0:?}")]
    UnknownBasis(String),
    #[error("dataset file {file}: {message}")]
    Format { file: String, message: String },
    #[error("dataset content hash mismatch: manifest {expected}, computed {computed}")]
    HashMismatch { expected: String, computed: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which binary comparison defines a category bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `values[i+1] > values[i]`: the rate of change accelerates.
    #[default]
    VolatilityChange,
    /// `values[i] > 0`: the close went up.
    PriceDirection,
}

impl FromStr for Basis {
    type Err = CategorizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "volatility_change" => Ok(Basis::VolatilityChange),
            "price_direction" => Ok(Basis::PriceDirection),
            other => Err(CategorizeError::UnknownBasis(other.to_string())),
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::VolatilityChange => "volatility_change",
            Basis::PriceDirection => "price_direction",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CategoryScheme {
    window_len: usize,
    bit_count: usize,
    basis: Basis,
}

impl CategoryScheme {
    pub fn new(window_len: usize, bit_count: usize, basis: Basis) -> Result<Self, CategorizeError> {
        let valid = bit_count >= 1
            && bit_count < 32
            && (bit_count + 1 == window_len || bit_count + 2 == window_len);
        if !valid {
            return Err(CategorizeError::InvalidScheme {
                n: window_len,
                k: bit_count,
            });
        }
        Ok(Self {
            window_len,
            bit_count,
            basis,
        })
    }

    /// `k = n - 1`, used with a next-category selector.
    pub fn with_selector(window_len: usize, basis: Basis) -> Result<Self, CategorizeError> {
        Self::new(window_len, window_len.saturating_sub(1), basis)
    }

    /// `k = n - 2`: the category ignores the value being forecast.
    pub fn without_selector(window_len: usize, basis: Basis) -> Result<Self, CategorizeError> {
        Self::new(window_len, window_len.saturating_sub(2), basis)
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn bit_count(&self) -> usize {
        self.bit_count
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    /// Number of categories, `2^k`.
    pub fn category_count(&self) -> usize {
        1usize << self.bit_count
    }

    /// Leading values of a window that determine its category.
    pub fn prefix_len(&self) -> usize {
        match self.basis {
            Basis::VolatilityChange => self.bit_count + 1,
            Basis::PriceDirection => self.bit_count,
        }
    }

    pub fn check(&self, c: CategoryId) -> Result<CategoryId, CategorizeError> {
        if (c.0 as usize) < self.category_count() {
            Ok(c)
        } else {
            Err(CategorizeError::OutOfRange {
                category: c.0,
                bits: self.bit_count,
            })
        }
    }
}

impl Default for CategoryScheme {
    fn default() -> Self {
        Self {
            window_len: 8,
            bit_count: 7,
            basis: Basis::VolatilityChange,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(pub u32);

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

fn encode_bits(values: &[f64], scheme: &CategoryScheme) -> CategoryId {
    let mut id = 0u32;
    for i in 0..scheme.bit_count {
        let bit = match scheme.basis {
            Basis::VolatilityChange => values[i + 1] > values[i],
            Basis::PriceDirection => values[i] > 0.0,
        };
        id = (id << 1) | bit as u32;
    }
    CategoryId(id)
}

/// Category of a full window of `n` values. Ties encode bit 0.
pub fn categorize_values(values: &[f64], scheme: &CategoryScheme) -> Result<CategoryId, CategorizeError> {
    if values.len() != scheme.window_len {
        return Err(CategorizeError::WrongLength {
            expected: scheme.window_len,
            got: values.len(),
        });
    }
    Ok(encode_bits(values, scheme))
}

pub fn categorize(window: &Window, scheme: &CategoryScheme) -> Result<CategoryId, CategorizeError> {
    categorize_values(&window.values, scheme)
}

/// Category from only the leading values that determine it (at least
/// [`CategoryScheme::prefix_len`]). Used when the final value is still unknown.
pub fn categorize_prefix(values: &[f64], scheme: &CategoryScheme) -> Result<CategoryId, CategorizeError> {
    if values.len() < scheme.prefix_len() || values.len() > scheme.window_len {
        return Err(CategorizeError::WrongLength {
            expected: scheme.prefix_len(),
            got: values.len(),
        });
    }
    Ok(encode_bits(values, scheme))
}

/// The two categories reachable by sliding one frame: new bit 0, then new bit 1.
pub fn successors(c: CategoryId, scheme: &CategoryScheme) -> (CategoryId, CategoryId) {
    let mask = (scheme.category_count() - 1) as u32;
    let base = (c.0 << 1) & mask;
    (CategoryId(base), CategoryId(base | 1))
}

/// Which new bit leads from `from` to `to`, if `to` is a successor.
pub fn successor_bit(from: CategoryId, to: CategoryId, scheme: &CategoryScheme) -> Option<usize> {
    let (zero, one) = successors(from, scheme);
    if to == zero {
        Some(0)
    } else if to == one {
        Some(1)
    } else {
        None
    }
}

/// Windows pooled across assets by category, plus each asset's category sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CategorizedDataset {
    pub scheme: CategoryScheme,
    pub buckets: BTreeMap<CategoryId, Vec<Window>>,
    pub sequences: BTreeMap<String, Vec<CategoryId>>,
    /// Asset ids in insertion order.
    pub assets: Vec<String>,
}

impl CategorizedDataset {
    pub fn total_windows(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn bucket(&self, c: CategoryId) -> &[Window] {
        self.buckets.get(&c).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Categories in `0..2^k` with no windows.
    pub fn empty_categories(&self) -> Vec<CategoryId> {
        (0..self.scheme.category_count() as u32)
            .map(CategoryId)
            .filter(|c| self.bucket(*c).is_empty())
            .collect()
    }
}

/// Categorizes every window of every asset. `window_sets` pairs an asset id with
/// its stride-1 windows in time order.
pub fn build_dataset(
    window_sets: &[(String, Vec<Window>)],
    scheme: &CategoryScheme,
) -> Result<CategorizedDataset, CategorizeError> {
    let mut buckets: BTreeMap<CategoryId, Vec<Window>> = BTreeMap::new();
    let mut sequences = BTreeMap::new();
    let mut assets = Vec::new();
    for (pair_id, windows) in window_sets {
        let mut seq = Vec::with_capacity(windows.len());
        for w in windows {
            let c = categorize(w, scheme)?;
            seq.push(c);
            buckets.entry(c).or_default().push(w.clone());
        }
        assets.push(pair_id.clone());
        sequences.insert(pair_id.clone(), seq);
    }
    Ok(CategorizedDataset {
        scheme: *scheme,
        buckets,
        sequences,
        assets,
    })
}

/// One category's windows concatenated, with 1-based in-window positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryTrainingSeries {
    pub category: CategoryId,
    pub window_len: usize,
    pub values: Vec<f64>,
    pub positions: Vec<u32>,
}

impl CategoryTrainingSeries {
    pub fn window_count(&self) -> usize {
        self.values.len() / self.window_len
    }

    /// Window-aligned chunks of `(values, positions)`.
    pub fn windows(&self) -> impl Iterator<Item = (&[f64], &[u32])> {
        self.values
            .chunks_exact(self.window_len)
            .zip(self.positions.chunks_exact(self.window_len))
    }
}

pub fn training_series(
    dataset: &CategorizedDataset,
    c: CategoryId,
) -> Result<CategoryTrainingSeries, CategorizeError> {
    let windows = dataset.bucket(c);
    if windows.is_empty() {
        return Err(CategorizeError::EmptyBucket(c));
    }
    let n = dataset.scheme.window_len;
    let values = windows.iter().flat_map(|w| w.values.iter().copied()).collect();
    let positions = (0..windows.len()).flat_map(|_| 1..=n as u32).collect();
    Ok(CategoryTrainingSeries {
        category: c,
        window_len: n,
        values,
        positions,
    })
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    scheme: CategoryScheme,
    assets: Vec<AssetEntry>,
    categories: Vec<CategoryEntry>,
    content_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AssetEntry {
    pair_id: String,
    window_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CategoryEntry {
    category: CategoryId,
    file: String,
    window_count: usize,
}

fn category_file(c: CategoryId) -> String {
    format!("category_{:04}.csv", c.0)
}

const SEQUENCES_FILE: &str = "sequences.csv";
const MANIFEST_FILE: &str = "manifest.json";

fn window_line(w: &Window) -> String {
    let mut line = format!("{},{}", w.pair_id, w.start);
    for v in &w.values {
        line.push(',');
        line.push_str(&v.to_string());
    }
    line
}

impl CategorizedDataset {
    /// Writes one CSV per non-empty category (`pair_id,start,v0..v{n-1}` per line),
    /// `sequences.csv` (`pair_id,index,category`), and `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<(), CategorizeError> {
        fs::create_dir_all(dir)?;
        let mut hasher = Sha256::new();
        let mut categories = Vec::new();
        for (c, windows) in &self.buckets {
            let name = category_file(*c);
            let mut text = String::new();
            for w in windows {
                text.push_str(&window_line(w));
                text.push('\n');
            }
            hasher.update(name.as_bytes());
            hasher.update(text.as_bytes());
            fs::write(dir.join(&name), &text)?;
            categories.push(CategoryEntry {
                category: *c,
                file: name,
                window_count: windows.len(),
            });
        }
        let mut seq_text = String::new();
        for pair in &self.assets {
            for (i, c) in self.sequences[pair].iter().enumerate() {
                seq_text.push_str(&format!("{pair},{i},{c}\n"));
            }
        }
        hasher.update(SEQUENCES_FILE.as_bytes());
        hasher.update(seq_text.as_bytes());
        fs::write(dir.join(SEQUENCES_FILE), &seq_text)?;
        let manifest = DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            scheme: self.scheme,
            assets: self
                .assets
                .iter()
                .map(|p| AssetEntry {
                    pair_id: p.clone(),
                    window_count: self.sequences[p].len(),
                })
                .collect(),
            categories,
            content_hash: hex::encode(hasher.finalize()),
        };
        let mut out = BufWriter::new(fs::File::create(dir.join(MANIFEST_FILE))?);
        serde_json::to_writer_pretty(&mut out, &manifest)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CategorizeError> {
        let manifest: DatasetManifest =
            serde_json::from_reader(BufReader::new(fs::File::open(dir.join(MANIFEST_FILE))?))?;
        let format_err = |file: &str, message: String| CategorizeError::Format {
            file: file.to_string(),
            message,
        };
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(format_err(
                MANIFEST_FILE,
                format!(
                    "format version {} is not supported (expected {DATASET_FORMAT_VERSION})",
                    manifest.format_version
                ),
            ));
        }
        let scheme = manifest.scheme;
        let n = scheme.window_len;
        let mut hasher = Sha256::new();
        let mut interned: BTreeMap<String, Arc<str>> = BTreeMap::new();
        let mut buckets = BTreeMap::new();
        for entry in &manifest.categories {
            let text = fs::read_to_string(dir.join(&entry.file))?;
            hasher.update(entry.file.as_bytes());
            hasher.update(text.as_bytes());
            let mut windows = Vec::with_capacity(entry.window_count);
            for (i, line) in text.lines().enumerate() {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != n + 2 {
                    return Err(format_err(&entry.file, format!("line {}: expected {} fields", i + 1, n + 2)));
                }
                let pair = interned
                    .entry(fields[0].to_string())
                    .or_insert_with(|| Arc::from(fields[0]))
                    .clone();
                let start = fields[1]
                    .parse()
                    .map_err(|_| format_err(&entry.file, format!("line {}: bad start index", i + 1)))?;
                let values = fields[2..]
                    .iter()
                    .map(|f| f.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| format_err(&entry.file, format!("line {}: bad value", i + 1)))?;
                windows.push(Window {
                    values,
                    pair_id: pair,
                    start,
                });
            }
            if windows.len() != entry.window_count {
                return Err(format_err(&entry.file, "window count differs from manifest".into()));
            }
            buckets.insert(entry.category, windows);
        }
        let seq_text = fs::read_to_string(dir.join(SEQUENCES_FILE))?;
        hasher.update(SEQUENCES_FILE.as_bytes());
        hasher.update(seq_text.as_bytes());
        let computed = hex::encode(hasher.finalize());
        if computed != manifest.content_hash {
            return Err(CategorizeError::HashMismatch {
                expected: manifest.content_hash,
                computed,
            });
        }
        let mut sequences: BTreeMap<String, Vec<CategoryId>> = BTreeMap::new();
        for line in BufReader::new(seq_text.as_bytes()).lines() {
            let line = line?;
            let mut parts = line.rsplitn(3, ',');
            let c = parts.next().and_then(|s| s.parse().ok());
            let _index = parts.next();
            let pair = parts.next();
            match (pair, c) {
                (Some(p), Some(c)) => sequences.entry(p.to_string()).or_default().push(CategoryId(c)),
                _ => return Err(format_err(SEQUENCES_FILE, format!("bad line {line:?}"))),
            }
        }
        let assets = manifest.assets.iter().map(|a| a.pair_id.clone()).collect();
        for a in &manifest.assets {
            sequences.entry(a.pair_id.clone()).or_default();
        }
        Ok(Self {
            scheme,
            buckets,
            sequences,
            assets,
        })
    }
}
