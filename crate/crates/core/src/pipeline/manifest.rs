use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One generated sample. Paths are relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleManifest {
    pub id: String,
    pub scene: String,
    pub trajectory: usize,
    pub seed: u64,
    pub split: Split,
    /// Top-left corner of the crop in the source images.
    pub crop: [usize; 2],
    pub sharp: String,
    pub blurry: String,
    pub consistency: String,
    pub events_clean: String,
    pub events_noisy: String,
    pub voxels_clean: String,
    pub voxels_noisy: String,
}

impl SampleManifest {
    pub fn artifacts(&self) -> [&str; 7] {
        [
            &self.sharp,
            &self.blurry,
            &self.consistency,
            &self.events_clean,
            &self.events_noisy,
            &self.voxels_clean,
            &self.voxels_noisy,
        ]
    }
}

pub fn write_manifest(records: &[SampleManifest], mut w: impl Write) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::format("manifest", e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads JSON-lines records; blank lines are skipped.
pub fn read_manifest(r: impl Read) -> Result<Vec<SampleManifest>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
