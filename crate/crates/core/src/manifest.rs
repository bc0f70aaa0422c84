//! Run manifests: what produced an artifact.
//!
//! Artifacts carry the manifest hash, which covers everything except the
//! timestamps, so reruns with the same inputs and settings hash identically.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::learners::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub command: String,
    /// effective settings after config file and flags
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub taxonomy_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_hash: Option<String>,
    /// sha256 of other input files, keyed by role
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// seconds since the Unix epoch
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished: Option<u64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, taxonomy_hash: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            taxonomy_hash: taxonomy_hash.to_string(),
            ..RunManifest::default()
        }
    }

    /// `sha256:<hex>` over the canonical JSON without timestamps.
    pub fn hash(&self) -> String {
        let stamped = RunManifest {
            started: None,
            finished: None,
            ..self.clone()
        };
        let json = serde_json::to_vec(&stamped).expect("manifest serializes");
        format!("sha256:{}", sha256_hex(&json))
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct WithHash<'a> {
            hash: String,
            #[serde(flatten)]
            manifest: &'a RunManifest,
        }
        let mut s = serde_json::to_string_pretty(&WithHash {
            hash: self.hash(),
            manifest: self,
        })
        .expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(bytes: &[u8]) -> Result<RunManifest, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}
