use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Booster, GbdtError, GbdtModel, GbdtParams, TrainingMeta, Tree};
use crate::features::FeatureSpec;

pub const MODEL_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u64,
    params: GbdtParams,
    base_logit: f64,
    catalog: Vec<FeatureSpec>,
    training_meta: TrainingMeta,
    trees: Vec<Tree>,
}

impl GbdtModel {
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_VERSION,
            params: self.params.clone(),
            base_logit: self.booster.base_logit,
            catalog: self.catalog.clone(),
            training_meta: self.training_meta.clone(),
            trees: self.booster.trees.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, GbdtError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| GbdtError::CorruptFile(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| GbdtError::CorruptFile("missing version".into()))?;
        if version != MODEL_VERSION {
            return Err(GbdtError::SchemaVersionMismatch {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| GbdtError::CorruptFile(e.to_string()))?;
        for (i, t) in file.trees.iter().enumerate() {
            t.check(file.catalog.len())
                .map_err(|e| GbdtError::CorruptFile(format!("tree {i}: {e}")))?;
        }
        Ok(Self {
            params: file.params,
            catalog: file.catalog,
            training_meta: file.training_meta,
            booster: Booster {
                base_logit: file.base_logit,
                trees: file.trees,
            },
        })
    }
}

pub fn save(model: &GbdtModel, path: &Path) -> Result<(), GbdtError> {
    fs::write(path, model.to_json()).map_err(|source| GbdtError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<GbdtModel, GbdtError> {
    let text = fs::read_to_string(path).map_err(|source| GbdtError::Io {
        path: path.display().to_string(),
        source,
    })?;
    GbdtModel::from_json(&text)
}
