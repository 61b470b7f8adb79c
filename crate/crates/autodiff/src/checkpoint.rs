//! Parameter checkpoints.
//!
//! A checkpoint is a JSON document:
//!
//! ```text
//! {
//!   "format": "GRIDPATCH-CKPT-1",
//!   "meta":   { "<key>": "<value>", ... },
//!   "params": [ { "name": "...", "shape": [r, c], "values": [...] }, ... ]
//! }
//! ```
//!
//! Parameters keep their registration order; values are written with
//! shortest round-trip formatting so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_HEADER: &str = "GRIDPATCH-CKPT-1";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    params: Vec<Entry>,
}

/// Parameters plus free-form string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_HEADER.to_string(),
            meta: self.meta.clone(),
            params: self
                .params
                .iter()
                .map(|(name, t)| Entry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_HEADER {
            return Err(AutodiffError::Checkpoint(format!(
                "expected header {CHECKPOINT_HEADER}, found {:?}",
                file.format
            )));
        }
        let mut params = ParamSet::new();
        for e in file.params {
            if params.id(&e.name).is_some() {
                return Err(AutodiffError::Checkpoint(format!(
                    "duplicate entry {}",
                    e.name
                )));
            }
            let t = Tensor::new(e.shape, e.values)
                .map_err(|err| AutodiffError::Checkpoint(format!("{}: {err}", e.name)))?;
            params.add(e.name, t);
        }
        Ok(Self {
            meta: file.meta,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut params = ParamSet::new();
        params.add(
            "a",
            Tensor::matrix(1, 3, vec![0.1, -1e-300, 1.0 / 3.0]).unwrap(),
        );
        params.add("b", Tensor::vector(vec![std::f64::consts::PI]));
        let mut ck = Checkpoint {
            params,
            ..Default::default()
        };
        ck.meta.insert("kind".into(), "test".into());
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let text = r#"{"format":"OTHER","params":[]}"#;
        assert!(matches!(
            Checkpoint::from_json(text),
            Err(AutodiffError::Checkpoint(_))
        ));
    }
}
