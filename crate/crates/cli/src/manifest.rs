//! Experiment manifest (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bearing_rul::dataset::{assign_by_counts, IngestConfig, Run, Split, SplitAssignment, SynthesisSpec};
use bearing_rul::losses::LossKind;
use bearing_rul::search::{SearchSpace, Thresholds};
use bearing_rul::signal::SignalConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Master seed; every other seed is derived from it.
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the manifest file.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub splits: SplitsSection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub weibull: WeibullSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub filter: Thresholds,
    #[serde(default)]
    pub report: ReportSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSection {
    Synthetic {
        #[serde(default)]
        spec: SynthesisSpec,
    },
    Recorded {
        ingest: IngestConfig,
        runs: Vec<RunSource>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSource {
    pub id: String,
    /// Directory of snapshot files, relative to the manifest file.
    pub path: PathBuf,
    /// Overrides `ingest.failed` for this run.
    #[serde(default)]
    pub failed: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitsSection {
    /// Train, validation and test run counts.
    pub counts: Option<[usize; 3]>,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitsSection {
    pub fn assign(&self, runs: &[Run]) -> Result<SplitAssignment> {
        let listed = !(self.train.is_empty() && self.validation.is_empty() && self.test.is_empty());
        match (self.counts, listed) {
            (Some(_), true) => bail!("splits: give either `counts` or run lists, not both"),
            (Some(counts), false) => Ok(assign_by_counts(runs, counts).context("splits.counts")?),
            (None, true) => {
                let mut out = SplitAssignment::new();
                for (split, ids) in [(Split::Train, &self.train), (Split::Validation, &self.validation), (Split::Test, &self.test)] {
                    for id in ids {
                        if out.insert(id.clone(), split).is_some() {
                            bail!("splits: run {id:?} listed twice");
                        }
                    }
                }
                Ok(out)
            }
            (None, false) => bail!("splits: set `counts` or list run ids per split"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub bin_count: usize,
    pub kaiser_shape: f64,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        let s = SignalConfig::default();
        Self { bin_count: s.bin_count, kaiser_shape: s.kaiser_shape }
    }
}

impl FeaturesSection {
    pub fn signal(&self) -> SignalConfig {
        SignalConfig { bin_count: self.bin_count, kaiser_shape: self.kaiser_shape }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeibullSection {
    pub beta: f64,
}

impl Default for WeibullSection {
    fn default() -> Self {
        Self { beta: bearing_rul::weibull::BALL_BEARING_BETA }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub loss: LossKind,
    pub lambda: f64,
    pub hidden_layers: usize,
    pub units_per_layer: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            loss: LossKind::WeibullMseComb,
            lambda: 1.0,
            hidden_layers: 3,
            units_per_layer: 64,
            dropout: 0.25,
            batch_size: 32,
            learning_rate: 0.001,
            max_epochs: bearing_rul::trainer::DEFAULT_MAX_EPOCHS,
            patience: bearing_rul::trainer::DEFAULT_PATIENCE,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub architectures: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub space: SearchSpace,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            architectures: 40,
            max_epochs: bearing_rul::trainer::DEFAULT_MAX_EPOCHS,
            patience: bearing_rul::trainer::DEFAULT_PATIENCE,
            space: SearchSpace::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Trailing window for the prediction rolling average.
    pub rolling_window: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { rolling_window: 5 }
    }
}

/// A parsed manifest with the bytes and location it came from.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub path: PathBuf,
    pub bytes: Vec<u8>,
}

impl LoadedManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let text = std::str::from_utf8(&bytes).context("manifest is not valid UTF-8")?;
        let manifest: Manifest = toml::from_str(text).with_context(|| format!("invalid manifest {}", path.display()))?;
        manifest.validate()?;
        Ok(Self { manifest, path: path.to_path_buf(), bytes })
    }

    pub fn base_dir(&self) -> PathBuf {
        self.path.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base_dir().join(p) }
    }
}

/// sha256 over the manifest bytes and the effective master seed.
pub fn manifest_hash(bytes: &[u8], seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.update(format!("\nseed={seed}").as_bytes());
    hex::encode(h.finalize())
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSection::Synthetic { spec } => spec.validate().context("data.spec")?,
            DataSection::Recorded { runs, .. } => {
                if runs.is_empty() {
                    bail!("data.runs: at least one run is required");
                }
            }
        }
        if self.features.bin_count == 0 {
            bail!("features.bin_count must be >= 1");
        }
        if !(self.features.kaiser_shape.is_finite() && self.features.kaiser_shape >= 0.0) {
            bail!("features.kaiser_shape must be >= 0");
        }
        bearing_rul::weibull::WeibullParams::new(self.weibull.beta, 1.0).context("weibull.beta")?;
        self.search.space.validate().context("search.space")?;
        if self.search.architectures == 0 || self.search.max_epochs == 0 || self.search.patience == 0 {
            bail!("search: architectures, max_epochs and patience must be >= 1");
        }
        if self.train.max_epochs == 0 || self.train.patience == 0 || self.train.batch_size == 0 {
            bail!("train: batch_size, max_epochs and patience must be >= 1");
        }
        if self.report.rolling_window == 0 {
            bail!("report.rolling_window must be >= 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYNTH: &str = r#"
seed = 3
[data]
source = "synthetic"
[data.spec]
runs = 4
[splits]
counts = [2, 1, 1]
"#;

    #[test]
    fn parses_minimal_synthetic_manifest() {
        let m: Manifest = toml::from_str(SYNTH).unwrap();
        m.validate().unwrap();
        assert_eq!(m.seed, 3);
        assert_eq!(m.search.architectures, 40);
        assert_eq!(m.splits.counts, Some([2, 1, 1]));
        match m.data {
            DataSection::Synthetic { spec } => assert_eq!(spec.runs, 4),
            _ => panic!("expected synthetic data"),
        }
    }

    #[test]
    fn unknown_fields_name_their_path() {
        let err = toml::from_str::<Manifest>(&SYNTH.replace("runs = 4", "runz = 4")).unwrap_err().to_string();
        assert!(err.contains("runz"), "{err}");
        let err = toml::from_str::<Manifest>(&format!("{SYNTH}\n[train]\nloss = \"Huber\"\n")).unwrap_err().to_string();
        assert!(err.contains("Huber") || err.contains("loss"), "{err}");
    }

    #[test]
    fn hash_depends_on_bytes_and_seed() {
        let a = manifest_hash(b"x", 1);
        assert_eq!(a, manifest_hash(b"x", 1));
        assert_ne!(a, manifest_hash(b"x", 2));
        assert_ne!(a, manifest_hash(b"y", 1));
        assert_eq!(a.len(), 64);
    }
}
