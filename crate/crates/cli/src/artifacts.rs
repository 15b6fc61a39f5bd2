//! Artifact paths, manifest-hash stamping and provenance records.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const RUNS: &str = "runs.json";
pub const FEATURES: &str = "features.csv";
pub const WEIBAYES: &str = "weibayes.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const TRAIN_CURVES: &str = "train_curves.csv";
pub const RESULTS: &str = "results.csv";
pub const FILTERED: &str = "filtered.csv";
pub const REPORT_DIR: &str = "report";
pub const PROVENANCE: &str = "provenance.json";

const HASH_PREFIX: &str = "# manifest_hash=";

/// Fails with a hint naming the subcommand that produces `path`.
pub fn require(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {}; run `bearing-rul {producer}` first", path.display());
    }
    Ok(())
}

pub fn check_hash(path: &Path, found: &str, expected: &str, producer: &str) -> Result<()> {
    if found != expected {
        bail!(
            "{} was produced under manifest hash {found}, but the current manifest hash is {expected}; \
             re-run `bearing-rul {producer}`",
            path.display()
        );
    }
    Ok(())
}

/// Writes delimited text preceded by a manifest-hash comment line.
pub fn write_stamped_text(path: &Path, hash: &str, body: &str) -> Result<()> {
    fs::write(path, format!("{HASH_PREFIX}{hash}\n{body}")).with_context(|| format!("writing {}", path.display()))
}

/// Reads text written by [`write_stamped_text`], checking its hash.
pub fn read_stamped_text(path: &Path, expected: &str, producer: &str) -> Result<String> {
    require(path, producer)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let Some(found) = first.strip_prefix(HASH_PREFIX) else {
        bail!("{} has no manifest hash line", path.display());
    };
    check_hash(path, found, expected, producer)?;
    Ok(body.to_string())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub manifest_hash: String,
    pub data: T,
}

pub fn write_stamped_json<T: Serialize>(path: &Path, hash: &str, data: &T) -> Result<()> {
    let text = serde_json::to_string(&Stamped { manifest_hash: hash.to_string(), data })?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_stamped_json<T: DeserializeOwned>(path: &Path, expected: &str, producer: &str) -> Result<T> {
    require(path, producer)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let stamped: Stamped<T> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    check_hash(path, &stamped.manifest_hash, expected, producer)?;
    Ok(stamped.data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub manifest: PathBuf,
    pub manifest_hash: String,
    pub seed: u64,
    /// Settings taken from command-line flags rather than the manifest.
    pub overrides: BTreeMap<String, String>,
    pub workers: usize,
    pub version: String,
    pub artifacts: Vec<String>,
}

/// Records `record` under `command` in the output directory's provenance file.
pub fn record_provenance(out: &Path, command: &str, record: ProvenanceRecord) -> Result<()> {
    let path = out.join(PROVENANCE);
    let mut all: BTreeMap<String, ProvenanceRecord> = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
        Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
    };
    all.insert(command.to_string(), record);
    fs::write(&path, serde_json::to_string_pretty(&all)? + "\n").with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamped_text_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_stamped_text(&p, "abc", "a,b\n1,2\n").unwrap();
        assert_eq!(read_stamped_text(&p, "abc", "search").unwrap(), "a,b\n1,2\n");
        let err = read_stamped_text(&p, "xyz", "search").unwrap_err().to_string();
        assert!(err.contains("re-run `bearing-rul search`"), "{err}");
        let missing = read_stamped_text(&dir.path().join("none"), "abc", "filter").unwrap_err().to_string();
        assert!(missing.contains("run `bearing-rul filter` first"), "{missing}");
    }

    #[test]
    fn stamped_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_stamped_json(&p, "h", &vec![0.1f64, 1e-300]).unwrap();
        let back: Vec<f64> = read_stamped_json(&p, "h", "synth").unwrap();
        assert_eq!(back, vec![0.1, 1e-300]);
        assert!(read_stamped_json::<Vec<f64>>(&p, "g", "synth").is_err());
    }
}
