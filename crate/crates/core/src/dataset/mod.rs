//! Runs, labels, scaling and split assembly.
//!
//! A [`Run`] is one run-to-failure (or censored) recording. Each window is
//! turned into a binned spectrum, labelled with its life fraction
//! `t_i / t_N`, and routed to the split its run is assigned to. Min/max
//! scaling is fitted on the training rows only and applied unclamped to the
//! other splits. Weibayes records come from training runs only.

mod cache;
mod ingest;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::signal::{build_spectrogram, RawWindow, SignalConfig};
use crate::weibull::{weibayes, FailureRecord, WeibullParams};
use crate::{Error, Result};

pub use cache::{read_feature_cache, write_feature_cache, CacheMeta, FeatureCache};
pub use ingest::{ingest_run, DataFormat, IngestConfig, TimeUnit};
pub use synth::{synthesize_runs, SynthesisSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub id: String,
    pub windows: Vec<RawWindow>,
    /// Absolute run-time of each window.
    pub times: Vec<f64>,
    /// `t_N`, the total run-time of the unit.
    pub total_runtime: f64,
    pub failed: bool,
}

impl Run {
    pub fn new(
        id: impl Into<String>,
        windows: Vec<RawWindow>,
        times: Vec<f64>,
        total_runtime: f64,
        failed: bool,
    ) -> Result<Self> {
        let run = Self { id: id.into(), windows, times, total_runtime, failed };
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<()> {
        if self.windows.len() != self.times.len() {
            return Err(Error::InvalidParameter(format!(
                "run {}: {} windows but {} times",
                self.id,
                self.windows.len(),
                self.times.len()
            )));
        }
        if !(self.total_runtime.is_finite() && self.total_runtime > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "run {}: total runtime must be > 0, got {}",
                self.id, self.total_runtime
            )));
        }
        if self.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidParameter(format!("run {}: negative or non-finite time", self.id)));
        }
        if self.times.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidParameter(format!("run {}: times must strictly increase", self.id)));
        }
        if let Some(&last) = self.times.last() {
            if last > self.total_runtime {
                return Err(Error::InvalidParameter(format!(
                    "run {}: last time {last} exceeds total runtime {}",
                    self.id, self.total_runtime
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn failure_record(&self) -> Result<FailureRecord> {
        FailureRecord::new(self.total_runtime, self.failed)
    }
}

/// Life-fraction labels `t_i / t_N` in `[0, 1]`.
pub fn label_life_fraction(run: &Run) -> Result<Vec<f64>> {
    if !(run.total_runtime.is_finite() && run.total_runtime > 0.0) {
        return Err(Error::Domain(format!(
            "run {}: total runtime must be > 0 to label, got {}",
            run.id, run.total_runtime
        )));
    }
    Ok(run.times.iter().map(|t| (t / run.total_runtime).clamp(0.0, 1.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Feature rows for one split. `run_lengths` carries `t_N` of each row's run
/// so predicted life fractions can be mapped back to absolute time.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub split: Split,
    pub features: Array2<f64>,
    pub labels: Vec<f64>,
    pub sample_times: Vec<f64>,
    pub run_lengths: Vec<f64>,
    pub run_ids: Vec<String>,
}

impl FeatureSet {
    pub fn empty(split: Split, bin_count: usize) -> Self {
        Self {
            split,
            features: Array2::zeros((0, bin_count)),
            labels: Vec::new(),
            sample_times: Vec::new(),
            run_lengths: Vec::new(),
            run_ids: Vec::new(),
        }
    }

    /// Unscaled features for the given runs, in run order then time order.
    pub fn from_runs<'a>(
        split: Split,
        runs: impl IntoIterator<Item = &'a Run>,
        config: SignalConfig,
    ) -> Result<Self> {
        let mut rows: Vec<f64> = Vec::new();
        let mut fs = Self::empty(split, config.bin_count);
        for run in runs {
            run.validate()?;
            let spectra = build_spectrogram(run, config)
                .map_err(|e| Error::InvalidParameter(format!("run {}: {e}", run.id)))?;
            let labels = label_life_fraction(run)?;
            for (spec, (&t, y)) in spectra.iter().zip(run.times.iter().zip(labels)) {
                rows.extend_from_slice(&spec.values);
                fs.labels.push(y);
                fs.sample_times.push(t);
                fs.run_lengths.push(run.total_runtime);
                fs.run_ids.push(run.id.clone());
            }
        }
        fs.features = Array2::from_shape_vec((fs.labels.len(), config.bin_count), rows)
            .expect("row-major feature buffer matches shape");
        fs.check()?;
        Ok(fs)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn bin_count(&self) -> usize {
        self.features.ncols()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.features.nrows();
        for (name, len) in [
            ("labels", self.labels.len()),
            ("sample_times", self.sample_times.len()),
            ("run_lengths", self.run_lengths.len()),
            ("run_ids", self.run_ids.len()),
        ] {
            if len != n {
                return Err(Error::InvalidParameter(format!(
                    "{} feature set: {name} has {len} rows, features have {n}",
                    self.split
                )));
            }
        }
        if self.labels.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::InvalidParameter(format!("{} feature set: label outside [0, 1]", self.split)));
        }
        Ok(())
    }

    pub fn distinct_run_ids(&self) -> BTreeSet<&str> {
        self.run_ids.iter().map(String::as_str).collect()
    }

    /// Row subset, preserving order.
    pub fn select(&self, rows: &[usize]) -> FeatureSet {
        FeatureSet {
            split: self.split,
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            sample_times: rows.iter().map(|&i| self.sample_times[i]).collect(),
            run_lengths: rows.iter().map(|&i| self.run_lengths[i]).collect(),
            run_ids: rows.iter().map(|&i| self.run_ids[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(train: &FeatureSet) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidParameter("cannot fit a scaler on an empty training set".into()));
        }
        let mut mins = Vec::with_capacity(train.bin_count());
        let mut maxs = Vec::with_capacity(train.bin_count());
        for (j, col) in train.features.columns().into_iter().enumerate() {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi == lo {
                log::warn!("feature column {j} is constant ({lo}); it will scale to 0");
            }
            mins.push(lo);
            maxs.push(hi);
        }
        Ok(Self { mins, maxs })
    }

    /// `(x - min) / (max - min)` per column, unclamped; constant columns map to 0.
    pub fn apply(&self, fs: &FeatureSet) -> Result<FeatureSet> {
        if fs.bin_count() != self.mins.len() {
            return Err(Error::DimensionMismatch { expected: self.mins.len(), actual: fs.bin_count() });
        }
        let mut out = fs.clone();
        for (j, mut col) in out.features.columns_mut().into_iter().enumerate() {
            let (lo, hi) = (self.mins[j], self.maxs[j]);
            let span = hi - lo;
            col.mapv_inplace(|x| if span > 0.0 { (x - lo) / span } else { 0.0 });
        }
        Ok(out)
    }

    pub fn is_degenerate(&self, column: usize) -> bool {
        self.maxs[column] == self.mins[column]
    }
}

pub fn fit_scaler(train: &FeatureSet) -> Result<MinMaxScaler> {
    MinMaxScaler::fit(train)
}

pub fn apply_scaler(scaler: &MinMaxScaler, fs: &FeatureSet) -> Result<FeatureSet> {
    scaler.apply(fs)
}

/// Which split each run belongs to, keyed by run id.
pub type SplitAssignment = BTreeMap<String, Split>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub record: FailureRecord,
}

/// Scaled train/validation/test sets plus the training-run failure records.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub train: FeatureSet,
    pub validation: FeatureSet,
    pub test: FeatureSet,
    pub scaler: MinMaxScaler,
    pub records: Vec<RunRecord>,
    pub signal: SignalConfig,
}

impl ExperimentData {
    pub fn split(&self, split: Split) -> &FeatureSet {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn failure_records(&self) -> Vec<FailureRecord> {
        self.records.iter().map(|r| r.record).collect()
    }

    /// Weibayes parameters from the training records for the given shape.
    pub fn weibull(&self, beta: f64) -> Result<WeibullParams> {
        weibayes(&self.failure_records(), beta)
    }
}

/// Assigns runs to splits by count, taking censored runs into training first
/// and otherwise keeping input order.
pub fn assign_by_counts(runs: &[Run], counts: [usize; 3]) -> Result<SplitAssignment> {
    let total: usize = counts.iter().sum();
    if total != runs.len() {
        return Err(Error::Config(format!("split counts sum to {total} but there are {} runs", runs.len())));
    }
    let censored = runs.iter().filter(|r| !r.failed).count();
    if censored > counts[0] {
        return Err(Error::Config(format!("{censored} censored runs do not fit in {} training slots", counts[0])));
    }
    let mut ordered: Vec<&Run> = runs.iter().collect();
    ordered.sort_by_key(|r| r.failed);
    let labels = Split::ALL.iter().zip(counts).flat_map(|(&s, n)| std::iter::repeat_n(s, n));
    Ok(ordered.into_iter().zip(labels).map(|(r, s)| (r.id.clone(), s)).collect())
}

pub fn assemble(runs: &[Run], splits: &SplitAssignment, config: SignalConfig) -> Result<ExperimentData> {
    let mut ids = BTreeSet::new();
    for run in runs {
        if !ids.insert(run.id.as_str()) {
            return Err(Error::Config(format!("duplicate run id {:?}", run.id)));
        }
        if !splits.contains_key(&run.id) {
            return Err(Error::Config(format!("run {:?} has no split assignment", run.id)));
        }
    }
    if let Some(missing) = splits.keys().find(|k| !ids.contains(k.as_str())) {
        return Err(Error::Config(format!("split assignment names unknown run {missing:?}")));
    }
    let of = |s: Split| runs.iter().filter(move |r| splits[&r.id] == s);
    if !of(Split::Train).any(|r| r.failed) {
        return Err(Error::Estimation("no failed run in the training split, weibayes undefined".into()));
    }

    let raw_train = FeatureSet::from_runs(Split::Train, of(Split::Train), config)?;
    let raw_val = FeatureSet::from_runs(Split::Validation, of(Split::Validation), config)?;
    let raw_test = FeatureSet::from_runs(Split::Test, of(Split::Test), config)?;
    let scaler = MinMaxScaler::fit(&raw_train)?;

    let records = of(Split::Train)
        .map(|r| Ok(RunRecord { run_id: r.id.clone(), record: r.failure_record()? }))
        .collect::<Result<Vec<_>>>()?;

    Ok(ExperimentData {
        train: scaler.apply(&raw_train)?,
        validation: scaler.apply(&raw_val)?,
        test: scaler.apply(&raw_test)?,
        scaler,
        records,
        signal: config,
    })
}
