//! Text persistence of forecaster weights and the per-category model store.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layout::Layout;
use super::{ForecasterConfig, ForecasterError, ForecasterParams, TrainingMeta};
use crate::categorize::{CategoryId, CategoryScheme};

pub const FORECASTER_FORMAT_VERSION: u32 = 1;
pub const STORE_FORMAT_VERSION: u32 = 1;
const FORECASTER_FORMAT: &str = "catforecast-forecaster";

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsFile {
    format: String,
    version: u32,
    config: ForecasterConfig,
    training: TrainingMeta,
    tensors: Vec<TensorRecord>,
}

impl ForecasterParams {
    pub fn to_json(&self) -> Result<String, ForecasterError> {
        let tensors = self
            .layout
            .specs
            .iter()
            .map(|s| TensorRecord {
                name: s.name.clone(),
                shape: s.shape.clone(),
                data: self.values[s.offset..s.offset + s.len()].to_vec(),
            })
            .collect();
        let file = ParamsFile {
            format: FORECASTER_FORMAT.into(),
            version: FORECASTER_FORMAT_VERSION,
            config: self.config.clone(),
            training: self.meta.clone(),
            tensors,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ForecasterError> {
        let file: ParamsFile = serde_json::from_str(text)?;
        if file.format != FORECASTER_FORMAT {
            return Err(ForecasterError::Format(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != FORECASTER_FORMAT_VERSION {
            return Err(ForecasterError::Version {
                found: file.version,
                expected: FORECASTER_FORMAT_VERSION,
            });
        }
        file.config.validate()?;
        let layout = Arc::new(Layout::new(&file.config));
        if file.tensors.len() != layout.specs.len() {
            return Err(ForecasterError::Format(format!(
                "expected {} tensors, found {}",
                layout.specs.len(),
                file.tensors.len()
            )));
        }
        let mut values = vec![0.0; layout.total];
        for (spec, rec) in layout.specs.iter().zip(&file.tensors) {
            if rec.name != spec.name || rec.shape != spec.shape || rec.data.len() != spec.len() {
                return Err(ForecasterError::Format(format!(
                    "tensor {} has shape {:?} with {} values, expected {} with shape {:?}",
                    rec.name,
                    rec.shape,
                    rec.data.len(),
                    spec.name,
                    spec.shape
                )));
            }
            values[spec.offset..spec.offset + spec.len()].copy_from_slice(&rec.data);
        }
        let params = Self {
            config: file.config,
            layout,
            values,
            meta: file.training,
        };
        if !params.is_finite() {
            return Err(ForecasterError::NonFinite);
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), ForecasterError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ForecasterError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Per-category training outcome recorded in the store manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub category: CategoryId,
    pub sample_count: usize,
    pub final_loss: Option<f64>,
}

/// The trained forecaster of every non-empty category.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelStore {
    pub scheme: CategoryScheme,
    pub config: ForecasterConfig,
    pub models: BTreeMap<CategoryId, ForecasterParams>,
    pub empty_categories: Vec<CategoryId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreManifest {
    format_version: u32,
    scheme: CategoryScheme,
    config: ForecasterConfig,
    config_hash: String,
    models: Vec<ModelEntry>,
    empty_categories: Vec<CategoryId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelEntry {
    #[serde(flatten)]
    summary: ModelSummary,
    file: String,
}

pub fn config_hash(config: &ForecasterConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

impl ModelStore {
    pub fn new(scheme: CategoryScheme, config: ForecasterConfig) -> Self {
        Self {
            scheme,
            config,
            models: BTreeMap::new(),
            empty_categories: Vec::new(),
        }
    }

    pub fn get(&self, c: CategoryId) -> Option<&ForecasterParams> {
        self.models.get(&c)
    }

    /// Next-value forecast from the model of category `c`, positions `1..n-1`.
    pub fn predict_step(&self, c: CategoryId, values: &[f64]) -> Result<f64, ForecasterError> {
        self.get(c).ok_or(ForecasterError::MissingModel(c))?.predict(values)
    }

    pub fn summaries(&self) -> Vec<ModelSummary> {
        self.models
            .iter()
            .map(|(c, p)| ModelSummary {
                category: *c,
                sample_count: p.meta.sample_count,
                final_loss: p.meta.final_loss,
            })
            .collect()
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }

    /// Writes `manifest.json` and one `models/category_NNNN.json` per model.
    pub fn save(&self, dir: &Path) -> Result<(), ForecasterError> {
        let models_dir = dir.join("models");
        fs::create_dir_all(&models_dir)?;
        let mut entries = Vec::new();
        for (summary, params) in self.summaries().into_iter().zip(self.models.values()) {
            let file = format!("models/category_{:04}.json", summary.category.0);
            params.save(&dir.join(&file))?;
            entries.push(ModelEntry { summary, file });
        }
        let manifest = StoreManifest {
            format_version: STORE_FORMAT_VERSION,
            scheme: self.scheme,
            config: self.config.clone(),
            config_hash: self.config_hash(),
            models: entries,
            empty_categories: self.empty_categories.clone(),
        };
        let mut out = BufWriter::new(fs::File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut out, &manifest)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ForecasterError> {
        let manifest: StoreManifest = serde_json::from_reader(BufReader::new(fs::File::open(dir.join("manifest.json"))?))?;
        if manifest.format_version != STORE_FORMAT_VERSION {
            return Err(ForecasterError::Version {
                found: manifest.format_version,
                expected: STORE_FORMAT_VERSION,
            });
        }
        if manifest.config_hash != config_hash(&manifest.config) {
            return Err(ForecasterError::Format("store config hash does not match its config".into()));
        }
        let mut models = BTreeMap::new();
        for entry in &manifest.models {
            let params = ForecasterParams::load(&dir.join(&entry.file))?;
            if !params.config().same_architecture(&manifest.config) {
                return Err(ForecasterError::Format(format!(
                    "{} does not match the store architecture",
                    entry.file
                )));
            }
            models.insert(entry.summary.category, params);
        }
        Ok(Self {
            scheme: manifest.scheme,
            config: manifest.config,
            models,
            empty_categories: manifest.empty_categories,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ForecasterConfig {
        ForecasterConfig {
            hidden_size: 6,
            recurrent_layers: 1,
            attention_heads: 2,
            ..ForecasterConfig::default()
        }
    }

    #[test]
    fn params_round_trip_bit_exact() {
        let mut p = ForecasterParams::init(&small()).unwrap();
        p.meta.final_loss = Some(0.1 + 0.2);
        p.meta.sample_count = 3;
        let back = ForecasterParams::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(back.values().iter().zip(p.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corrupted_shape_rejected() {
        let p = ForecasterParams::init(&small()).unwrap();
        let text = p.to_json().unwrap().replacen("\"shape\":[6,2]", "\"shape\":[2,6]", 1);
        assert!(matches!(ForecasterParams::from_json(&text), Err(ForecasterError::Format(_))));
    }

    #[test]
    fn version_bump_rejected() {
        let p = ForecasterParams::init(&small()).unwrap();
        let text = p.to_json().unwrap().replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            ForecasterParams::from_json(&text),
            Err(ForecasterError::Version { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn store_round_trip_and_missing_model() {
        let cfg = small();
        let mut store = ModelStore::new(CategoryScheme::default(), cfg.clone());
        store.models.insert(CategoryId(3), ForecasterParams::init(&cfg).unwrap());
        store.models.insert(CategoryId(90), ForecasterParams::init(&ForecasterConfig { seed: 9, ..cfg }).unwrap());
        store.empty_categories = vec![CategoryId(0)];
        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        let loaded = ModelStore::load(dir.path()).unwrap();
        assert_eq!(loaded, store);
        let inputs = [0.1; 7];
        assert_eq!(
            loaded.predict_step(CategoryId(3), &inputs).unwrap(),
            store.models[&CategoryId(3)].predict(&inputs).unwrap()
        );
        assert!(matches!(
            loaded.predict_step(CategoryId(4), &inputs),
            Err(ForecasterError::MissingModel(CategoryId(4)))
        ));
    }
}
