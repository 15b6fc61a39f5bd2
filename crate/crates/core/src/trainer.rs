//! Mini-batch training with validation early stopping, and evaluation metrics.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSet;
use crate::losses::{self, loss_gradient, loss_value, LossSpec};
use crate::network::{Mode, NetworkState};
use crate::{Error, Result};

pub const DEFAULT_PATIENCE: usize = 50;
pub const DEFAULT_MAX_EPOCHS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss: LossSpec,
    /// Drives shuffling and dropout masks.
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(batch_size: usize, learning_rate: f64, loss: LossSpec, seed: u64) -> Self {
        Self { batch_size, learning_rate, max_epochs: DEFAULT_MAX_EPOCHS, patience: DEFAULT_PATIENCE, loss, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub state: NetworkState,
    /// 1-indexed epoch of the restored snapshot.
    pub stop_epoch: usize,
    pub epochs_run: usize,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    /// Mini-batches whose gradient hit a square-root singularity.
    pub degenerate_batches: usize,
}

/// Loss of `spec` over a whole feature set in eval mode.
pub fn dataset_loss(state: &NetworkState, fs: &FeatureSet, spec: &LossSpec) -> Result<f64> {
    let yhat = state.predict(fs.features.view())?;
    let yhat = yhat.as_slice().expect("contiguous predictions");
    let times_pred: Vec<f64> = yhat.iter().zip(&fs.run_lengths).map(|(p, tn)| p * tn).collect();
    loss_value(spec, &fs.labels, yhat, &fs.sample_times, &times_pred)
}

fn diverged(epoch: usize, message: impl Into<String>) -> Error {
    Error::Diverged { epoch, message: message.into() }
}

pub fn fit(state: NetworkState, train: &FeatureSet, val: &FeatureSet, cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    train.check()?;
    val.check()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut state = state;
    let mut best = state.clone();
    let mut best_val = f64::INFINITY;
    let mut stop_epoch = 0;
    let mut since_best = 0;
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut degenerate_batches = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.features.select(Axis(0), chunk);
            let y: Vec<f64> = chunk.iter().map(|&i| train.labels[i]).collect();
            let t: Vec<f64> = chunk.iter().map(|&i| train.sample_times[i]).collect();
            let tn: Vec<f64> = chunk.iter().map(|&i| train.run_lengths[i]).collect();

            let cache = state.forward(x.view(), Mode::Train, &mut rng)?;
            let yhat = cache.predictions.as_slice().expect("contiguous predictions");
            if yhat.iter().any(|v| !v.is_finite()) {
                return Err(diverged(epoch, "non-finite prediction"));
            }
            let t_pred: Vec<f64> = yhat.iter().zip(&tn).map(|(p, n)| p * n).collect();
            let grad = loss_gradient(&cfg.loss, &y, yhat, &t, &t_pred, &tn).map_err(|e| diverged(epoch, e.to_string()))?;
            if grad.gradient.iter().any(|g| !g.is_finite()) {
                return Err(diverged(epoch, "non-finite loss gradient"));
            }
            degenerate_batches += usize::from(grad.degenerate);
            let grads = state.backward(&cache, &grad.gradient)?;
            state.adam_step(&grads, cfg.learning_rate)?;
        }
        if !state.all_finite() {
            return Err(diverged(epoch, "non-finite parameters"));
        }

        let train_loss = dataset_loss(&state, train, &cfg.loss).map_err(|e| diverged(epoch, e.to_string()))?;
        let val_loss = dataset_loss(&state, val, &cfg.loss).map_err(|e| diverged(epoch, e.to_string()))?;
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(diverged(epoch, format!("loss train={train_loss} val={val_loss}")));
        }
        train_curve.push(train_loss);
        val_curve.push(val_loss);

        if val_loss < best_val {
            best_val = val_loss;
            best = state.clone();
            stop_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let epochs_run = val_curve.len();
    Ok(FitOutcome { state: best, stop_epoch, epochs_run, train_curve, val_curve, degenerate_batches })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub rmse: f64,
    pub rmsle: f64,
    /// `None` when the labels are constant.
    pub r2: Option<f64>,
}

impl Metrics {
    pub fn from_predictions(y: &[f64], yhat: &[f64]) -> Result<Self> {
        let mse = losses::mse(y, yhat)?;
        Ok(Self { mse, rmse: mse.sqrt(), rmsle: losses::rmsle(y, yhat)?, r2: r_squared(y, yhat)? })
    }

    pub fn all_finite(&self) -> bool {
        [self.mse, self.rmse, self.rmsle, self.r2.unwrap_or(0.0)].iter().all(|v| v.is_finite())
    }
}

/// `1 - SS_res / SS_tot`; `None` when `SS_tot = 0`.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<Option<f64>> {
    if y.is_empty() {
        return Err(Error::InvalidParameter("r squared of an empty set".into()));
    }
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), actual: yhat.len() });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot))
}

/// Eval-mode predictions for every row of `fs`.
pub fn predict_set(state: &NetworkState, fs: &FeatureSet) -> Result<Vec<f64>> {
    Ok(state.predict(fs.features.view())?.to_vec())
}

pub fn evaluate(state: &NetworkState, fs: &FeatureSet) -> Result<Metrics> {
    Metrics::from_predictions(&fs.labels, &predict_set(state, fs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{assemble, synthesize_runs, ExperimentData, Split, SplitAssignment, SynthesisSpec};
    use crate::losses::LossKind;
    use crate::network::NetworkArchitecture;
    use crate::signal::SignalConfig;
    use std::sync::OnceLock;

    fn data() -> &'static ExperimentData {
        static DATA: OnceLock<ExperimentData> = OnceLock::new();
        DATA.get_or_init(|| {
            let spec = SynthesisSpec { runs: 4, windows_per_run: 16, window_len: 256, censor_time: None, ..Default::default() };
            let runs = synthesize_runs(&spec, 9).unwrap();
            let splits: SplitAssignment = runs
                .iter()
                .zip([Split::Train, Split::Train, Split::Validation, Split::Test])
                .map(|(r, s)| (r.id.clone(), s))
                .collect();
            assemble(&runs, &splits, SignalConfig::default()).unwrap()
        })
    }

    fn net(seed: u64) -> NetworkState {
        NetworkState::init(NetworkArchitecture::new(20, 2, 16, 0.1).unwrap(), seed).unwrap()
    }

    fn cfg(kind: LossKind, lr: f64, epochs: usize, patience: usize) -> TrainConfig {
        let w = data().weibull(2.0).unwrap();
        let loss = LossSpec::new(kind, 0.53, Some(w)).unwrap();
        TrainConfig { max_epochs: epochs, patience, ..TrainConfig::new(8, lr, loss, 3) }
    }

    #[test]
    fn r_squared_examples() {
        let r = r_squared(&[0.0, 0.5, 1.0], &[0.1, 0.5, 0.9]).unwrap().unwrap();
        assert!((r - 0.96).abs() < 1e-12);
        assert_eq!(r_squared(&[0.0, 0.5, 1.0], &[0.5; 3]).unwrap(), Some(0.0));
        assert_eq!(r_squared(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), Some(1.0));
        assert_eq!(r_squared(&[0.3, 0.3], &[0.1, 0.5]).unwrap(), None);
        assert!(r_squared(&[], &[]).is_err());
    }

    #[test]
    fn metrics_consistency() {
        let m = Metrics::from_predictions(&[0.1, 0.4, 0.9], &[0.2, 0.35, 0.7]).unwrap();
        assert!((m.rmse * m.rmse - m.mse).abs() <= 1e-12 * m.mse);
        assert!(m.r2.unwrap() <= 1.0);
        let perfect = Metrics::from_predictions(&[0.1, 0.4], &[0.1, 0.4]).unwrap();
        assert_eq!((perfect.mse, perfect.rmse, perfect.rmsle, perfect.r2), (0.0, 0.0, 0.0, Some(1.0)));
    }

    #[test]
    fn config_validation() {
        let c = cfg(LossKind::Mse, 0.01, 5, 2);
        assert!(TrainConfig { max_epochs: 0, ..c }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..c }.validate().is_err());
        assert!(TrainConfig { learning_rate: f64::NAN, ..c }.validate().is_err());
        assert_eq!(TrainConfig::new(32, 0.1, c.loss, 0).patience, DEFAULT_PATIENCE);
    }

    #[test]
    fn one_epoch() {
        let d = data();
        let out = fit(net(1), &d.train, &d.validation, &cfg(LossKind::Rmse, 0.01, 1, 5)).unwrap();
        assert_eq!(out.epochs_run, 1);
        assert_eq!(out.stop_epoch, 1);
        assert_eq!(out.train_curve.len(), 1);
        let steps = d.train.len().div_ceil(8) as u64;
        assert_eq!(out.state.adam.step, steps);
    }

    #[test]
    fn early_stopping_restores_best_snapshot() {
        let d = data();
        for kind in LossKind::ALL {
            let out = fit(net(2), &d.train, &d.validation, &cfg(kind, 0.1, 60, 3)).unwrap();
            let best = out.val_curve.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(out.val_curve[out.stop_epoch - 1], best, "{kind}");
            assert!(out.epochs_run <= out.stop_epoch + 3);
            let restored = dataset_loss(&out.state, &d.validation, &cfg(kind, 0.1, 1, 1).loss).unwrap();
            assert_eq!(restored, best);
        }
    }

    #[test]
    fn patience_one_stops_after_first_worsening() {
        let d = data();
        let out = fit(net(4), &d.train, &d.validation, &cfg(LossKind::Mse, 0.1, 200, 1)).unwrap();
        let k = out.stop_epoch;
        assert_eq!(out.epochs_run, k + 1);
        assert!(out.val_curve[k] >= out.val_curve[k - 1]);
        assert!(out.val_curve[..k].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn training_reduces_loss() {
        let d = data();
        let c = cfg(LossKind::WeibullMseComb, 0.001, 150, 150);
        let before = dataset_loss(&net(5), &d.train, &c.loss).unwrap();
        let out = fit(net(5), &d.train, &d.validation, &c).unwrap();
        assert!(out.train_curve.last().unwrap() < &(0.5 * before));
    }

    #[test]
    fn deterministic() {
        let d = data();
        let c = cfg(LossKind::WeibullRmsle, 0.01, 20, 20);
        let a = fit(net(6), &d.train, &d.validation, &c).unwrap();
        let b = fit(net(6), &d.train, &d.validation, &c).unwrap();
        assert_eq!(a, b);
        let other = fit(net(6), &d.train, &d.validation, &TrainConfig { seed: 4, ..c }).unwrap();
        assert_ne!(a.train_curve, other.train_curve);
    }

    #[test]
    fn non_finite_features_diverge() {
        let d = data();
        let mut train = d.train.clone();
        train.features[[0, 0]] = f64::NAN;
        let err = fit(net(7), &train, &d.validation, &cfg(LossKind::Mse, 0.01, 5, 5)).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 1, .. }), "{err}");
    }

    #[test]
    fn evaluate_matches_manual_metrics() {
        let d = data();
        let n = net(8);
        let m = evaluate(&n, &d.test).unwrap();
        let p = predict_set(&n, &d.test).unwrap();
        assert_eq!(m.mse, losses::mse(&d.test.labels, &p).unwrap());
        assert_eq!(m.r2, r_squared(&d.test.labels, &p).unwrap());
    }
}
