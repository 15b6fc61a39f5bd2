//! Random hyperparameter search and the statistics used to compare losses.
//!
//! Each architecture draw is trained once per loss kind. All nine trials of
//! an architecture share its seed, so they start from identical weights and
//! see identical shuffles; only the loss differs.

mod report;
mod stats;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{
    parse_results_csv, prediction_points, render_curves_csv, render_predictions_csv, render_results_csv,
    rolling_mean, AnalysisTables, PredictionPoint, ReportContext,
};
pub use stats::{
    best_trial, describe, early_stop_summary, filter_results, FrequencyRow, point_biserial, point_biserial_groups,
    point_biserial_permutation, point_biserial_table, rank_loss_frequency, Describe, LossFrequency, PointBiserial,
    StopGroup, StopSummary, Thresholds,
};

use crate::dataset::{ExperimentData, Split};
use crate::losses::{LossKind, LossSpec, LAMBDA_MAX};
use crate::network::{NetworkArchitecture, NetworkState};
use crate::trainer::{self, evaluate, FitOutcome, Metrics, TrainConfig};
use crate::weibull::WeibullParams;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    /// λ is uniform on `[0, lambda_max]`.
    pub lambda_max: f64,
    pub min_layers: usize,
    pub max_layers: usize,
    pub units: Vec<usize>,
    pub dropouts: Vec<f64>,
    pub losses: Vec<LossKind>,
    /// Draw a fresh λ for every loss instead of once per architecture.
    pub lambda_per_trial: bool,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            batch_sizes: vec![32, 64, 128, 256, 512],
            learning_rates: vec![0.1, 0.01, 0.001, 0.0001],
            lambda_max: LAMBDA_MAX,
            min_layers: 2,
            max_layers: 7,
            units: vec![16, 32, 64, 128, 256],
            dropouts: vec![0.1, 0.2, 0.25, 0.4, 0.5, 0.6],
            losses: LossKind::ALL.to_vec(),
            lambda_per_trial: false,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("search space: {m}")));
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return bad("batch_sizes must be non-empty and positive");
        }
        if self.learning_rates.is_empty() || self.learning_rates.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return bad("learning_rates must be non-empty and positive");
        }
        if !(0.0..=LAMBDA_MAX).contains(&self.lambda_max) {
            return bad("lambda_max must lie in [0, 3]");
        }
        if self.min_layers == 0 || self.min_layers > self.max_layers {
            return bad("layer range must satisfy 1 <= min_layers <= max_layers");
        }
        if self.units.is_empty() || self.units.contains(&0) {
            return bad("units must be non-empty and positive");
        }
        if self.dropouts.is_empty() || self.dropouts.iter().any(|d| !(0.0..1.0).contains(d)) {
            return bad("dropouts must be non-empty and lie in [0, 1)");
        }
        if self.losses.is_empty() {
            return bad("losses must be non-empty");
        }
        Ok(())
    }
}

/// Stateless 64-bit mixer (splitmix64 finaliser).
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix(mix(master) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureDraw {
    pub arch_index: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub hidden_layers: usize,
    pub units_per_layer: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub trial_id: usize,
    pub arch_index: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub lambda: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_layers: usize,
    pub units_per_layer: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl TrialConfig {
    pub fn architecture(&self, input_dim: usize) -> Result<NetworkArchitecture> {
        NetworkArchitecture::new(input_dim, self.hidden_layers, self.units_per_layer, self.dropout)
    }

    pub fn train_config(&self, weibull: WeibullParams) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            loss: LossSpec::new(self.loss, self.lambda, Some(weibull))?,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, set: &[T]) -> T {
    set[rng.random_range(0..set.len())]
}

/// One uniform draw per dimension for architecture `arch_index`.
pub fn sample_architecture(space: &SearchSpace, master_seed: u64, arch_index: usize) -> ArchitectureDraw {
    let seed = derive_seed(master_seed, arch_index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ArchitectureDraw {
        arch_index,
        seed,
        batch_size: pick(&mut rng, &space.batch_sizes),
        learning_rate: pick(&mut rng, &space.learning_rates),
        lambda: rng.random::<f64>() * space.lambda_max,
        hidden_layers: rng.random_range(space.min_layers..=space.max_layers),
        units_per_layer: pick(&mut rng, &space.units),
        dropout: pick(&mut rng, &space.dropouts),
    }
}

/// The draw paired with every loss kind of the space.
pub fn expand_architecture(
    space: &SearchSpace,
    draw: &ArchitectureDraw,
    max_epochs: usize,
    patience: usize,
) -> Vec<TrialConfig> {
    let per_arch = space.losses.len();
    space
        .losses
        .iter()
        .enumerate()
        .map(|(k, &loss)| {
            let lambda = if space.lambda_per_trial {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(draw.seed, k as u64 + 1));
                rng.random::<f64>() * space.lambda_max
            } else {
                draw.lambda
            };
            TrialConfig {
                trial_id: draw.arch_index * per_arch + k,
                arch_index: draw.arch_index,
                seed: draw.seed,
                loss,
                lambda,
                batch_size: draw.batch_size,
                learning_rate: draw.learning_rate,
                hidden_layers: draw.hidden_layers,
                units_per_layer: draw.units_per_layer,
                dropout: draw.dropout,
                max_epochs,
                patience,
            }
        })
        .collect()
}

pub fn plan_search(
    space: &SearchSpace,
    n_architectures: usize,
    master_seed: u64,
    max_epochs: usize,
    patience: usize,
) -> Result<Vec<TrialConfig>> {
    space.validate()?;
    if n_architectures == 0 {
        return Err(Error::Config("at least one architecture is required".into()));
    }
    Ok((0..n_architectures)
        .flat_map(|a| expand_architecture(space, &sample_architecture(space, master_seed, a), max_epochs, patience))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    /// Non-finite loss, gradient or metric during training.
    Diverged,
    /// Any other error, including a panic inside the trial.
    Failed,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::Diverged => "diverged",
            TrialStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub train: Metrics,
    pub validation: Metrics,
    pub test: Metrics,
}

impl SplitMetrics {
    pub fn get(&self, split: Split) -> &Metrics {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: TrialConfig,
    pub status: TrialStatus,
    /// Epoch of the restored snapshot, or of the divergence.
    pub stop_epoch: usize,
    pub epochs_run: usize,
    /// Present exactly when `status` is `Ok`.
    pub metrics: Option<SplitMetrics>,
    pub message: Option<String>,
}

impl TrialResult {
    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok
    }

    pub fn test(&self) -> Option<&Metrics> {
        self.metrics.as_ref().map(|m| &m.test)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrialJob<'a> {
    pub config: TrialConfig,
    pub data: &'a ExperimentData,
    pub weibull: WeibullParams,
}

/// Trains the configured model and returns the fit with its metrics.
pub fn train_trial(job: &TrialJob<'_>) -> Result<(FitOutcome, SplitMetrics)> {
    let arch = job.config.architecture(job.data.train.bin_count())?;
    let cfg = job.config.train_config(job.weibull)?;
    let state = NetworkState::init(arch, job.config.seed)?;
    let fit = trainer::fit(state, &job.data.train, &job.data.validation, &cfg)?;
    let metrics = SplitMetrics {
        train: evaluate(&fit.state, &job.data.train)?,
        validation: evaluate(&fit.state, &job.data.validation)?,
        test: evaluate(&fit.state, &job.data.test)?,
    };
    Ok((fit, metrics))
}

pub fn run_trial(job: &TrialJob<'_>) -> TrialResult {
    let config = job.config;
    let failed = |status, epoch, message: String| TrialResult {
        config,
        status,
        stop_epoch: epoch,
        epochs_run: epoch,
        metrics: None,
        message: Some(message),
    };
    match catch_unwind(AssertUnwindSafe(|| train_trial(job))) {
        Ok(Ok((fit, metrics))) => {
            if [metrics.train, metrics.validation, metrics.test].iter().all(Metrics::all_finite) {
                TrialResult {
                    config,
                    status: TrialStatus::Ok,
                    stop_epoch: fit.stop_epoch,
                    epochs_run: fit.epochs_run,
                    metrics: Some(metrics),
                    message: None,
                }
            } else {
                failed(TrialStatus::Diverged, fit.epochs_run, "non-finite evaluation metric".into())
            }
        }
        Ok(Err(Error::Diverged { epoch, message })) => failed(TrialStatus::Diverged, epoch, message),
        Ok(Err(e)) => failed(TrialStatus::Failed, 0, e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            failed(TrialStatus::Failed, 0, format!("panic: {msg}"))
        }
    }
}

/// Runs `jobs` on a pool of `workers` threads. Trials not yet started when
/// `cancel` is raised are skipped; the rest are returned sorted by trial id.
pub fn run_trials(jobs: &[TrialJob<'_>], workers: usize, cancel: Option<&AtomicBool>) -> Result<Vec<TrialResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let total = jobs.len();
    let mut results: Vec<TrialResult> = pool.install(|| {
        jobs.par_iter()
            .filter_map(|job| {
                if cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
                    return None;
                }
                let r = run_trial(job);
                log::info!(
                    "trial {}/{total} {} {}: stop epoch {}",
                    r.config.trial_id + 1,
                    r.config.loss,
                    r.status.as_str(),
                    r.stop_epoch
                );
                Some(r)
            })
            .collect()
    });
    results.sort_by_key(|r| r.config.trial_id);
    Ok(results)
}

#[allow(clippy::too_many_arguments)]
pub fn run_search(
    space: &SearchSpace,
    data: &ExperimentData,
    weibull: WeibullParams,
    n_architectures: usize,
    master_seed: u64,
    max_epochs: usize,
    patience: usize,
    workers: usize,
) -> Result<Vec<TrialResult>> {
    let plan = plan_search(space, n_architectures, master_seed, max_epochs, patience)?;
    let jobs: Vec<TrialJob<'_>> = plan.into_iter().map(|config| TrialJob { config, data, weibull }).collect();
    run_trials(&jobs, workers, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{assemble, synthesize_runs, SplitAssignment, SynthesisSpec};
    use crate::signal::SignalConfig;
    use std::collections::BTreeSet;
    use std::sync::OnceLock;

    #[test]
    fn draws_stay_inside_the_space() {
        let space = SearchSpace::default();
        for a in 0..10_000 {
            let d = sample_architecture(&space, 77, a);
            assert!(space.batch_sizes.contains(&d.batch_size));
            assert!(space.learning_rates.contains(&d.learning_rate));
            assert!((2..=7).contains(&d.hidden_layers));
            assert!(space.units.contains(&d.units_per_layer));
            assert!(space.dropouts.contains(&d.dropout));
            assert!((0.0..=3.0).contains(&d.lambda));
        }
    }

    #[test]
    fn lambda_is_uniform_by_ks() {
        let space = SearchSpace::default();
        let n = 10_000;
        let mut l: Vec<f64> = (0..n).map(|a| sample_architecture(&space, 0, a).lambda / 3.0).collect();
        l.sort_by(f64::total_cmp);
        let d = l
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).max(x - i as f64 / n as f64))
            .fold(0.0, f64::max);
        let critical = 1.628 / (n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    #[test]
    fn one_draw_gives_nine_trials() {
        let space = SearchSpace::default();
        let draw = sample_architecture(&space, 1, 3);
        let trials = expand_architecture(&space, &draw, 100, 10);
        assert_eq!(trials.len(), 9);
        let kinds: BTreeSet<_> = trials.iter().map(|t| t.loss).collect();
        assert_eq!(kinds.len(), 9);
        for t in &trials {
            let same = TrialConfig { trial_id: trials[0].trial_id, loss: trials[0].loss, ..*t };
            assert_eq!(same, trials[0]);
        }
        assert_eq!(trials[0].trial_id, 27);
        let per = SearchSpace { lambda_per_trial: true, ..SearchSpace::default() };
        let lambdas: BTreeSet<u64> =
            expand_architecture(&per, &draw, 100, 10).iter().map(|t| t.lambda.to_bits()).collect();
        assert_eq!(lambdas.len(), 9);
    }

    #[test]
    fn plan_has_distinct_architectures() {
        let plan = plan_search(&SearchSpace::default(), 3, 9, 10, 2).unwrap();
        assert_eq!(plan.len(), 27);
        let seeds: BTreeSet<u64> = plan.iter().map(|t| t.seed).collect();
        assert_eq!(seeds.len(), 3);
        assert!(plan.iter().enumerate().all(|(i, t)| t.trial_id == i));
        assert!(plan_search(&SearchSpace::default(), 0, 9, 10, 2).is_err());
        assert!(plan_search(&SearchSpace { units: vec![], ..Default::default() }, 1, 9, 10, 2).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: BTreeSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }

    fn data() -> &'static ExperimentData {
        static DATA: OnceLock<ExperimentData> = OnceLock::new();
        DATA.get_or_init(|| {
            let spec = SynthesisSpec { runs: 4, windows_per_run: 12, window_len: 256, censor_time: None, ..Default::default() };
            let runs = synthesize_runs(&spec, 21).unwrap();
            let splits: SplitAssignment = runs
                .iter()
                .zip([Split::Train, Split::Train, Split::Validation, Split::Test])
                .map(|(r, s)| (r.id.clone(), s))
                .collect();
            assemble(&runs, &splits, SignalConfig::default()).unwrap()
        })
    }

    fn small_space() -> SearchSpace {
        SearchSpace { units: vec![8, 16], min_layers: 2, max_layers: 3, batch_sizes: vec![8, 16], ..Default::default() }
    }

    #[test]
    fn search_is_independent_of_worker_count() {
        let d = data();
        let w = d.weibull(2.0).unwrap();
        let one = run_search(&small_space(), d, w, 2, 11, 8, 3, 1).unwrap();
        let four = run_search(&small_space(), d, w, 2, 11, 8, 3, 4).unwrap();
        assert_eq!(one.len(), 18);
        assert_eq!(one, four);
        assert!(one.iter().all(|r| r.is_ok() == r.metrics.is_some()));
    }

    #[test]
    fn poisoned_trial_is_contained() {
        let d = data();
        let w = d.weibull(2.0).unwrap();
        let mut poisoned = d.clone();
        poisoned.train.features[[0, 0]] = f64::NAN;
        let plan = plan_search(&small_space(), 1, 3, 5, 2).unwrap();
        let clean_jobs: Vec<_> = plan.iter().map(|&config| TrialJob { config, data: d, weibull: w }).collect();
        let mut mixed = clean_jobs.clone();
        mixed[4].data = &poisoned;
        let clean = run_trials(&clean_jobs, 2, None).unwrap();
        let hit = run_trials(&mixed, 2, None).unwrap();
        assert_eq!(hit[4].status, TrialStatus::Diverged);
        assert!(hit[4].metrics.is_none());
        for i in (0..9).filter(|&i| i != 4) {
            assert_eq!(hit[i], clean[i]);
        }
    }

    #[test]
    fn cancelled_search_returns_nothing_new() {
        let d = data();
        let w = d.weibull(2.0).unwrap();
        let plan = plan_search(&small_space(), 1, 3, 5, 2).unwrap();
        let jobs: Vec<_> = plan.iter().map(|&config| TrialJob { config, data: d, weibull: w }).collect();
        let flag = AtomicBool::new(true);
        assert!(run_trials(&jobs, 1, Some(&flag)).unwrap().is_empty());
    }
}
