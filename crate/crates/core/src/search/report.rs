//! Delimited result tables, the analysis bundle and plot-ready series.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{
    best_trial, early_stop_summary, point_biserial_table, rank_loss_frequency, Thresholds,
};
use super::{SplitMetrics, TrialConfig, TrialResult, TrialStatus};
use crate::dataset::{ExperimentData, Split};
use crate::losses::LossKind;
use crate::network::NetworkState;
use crate::trainer::{predict_set, FitOutcome, Metrics};
use crate::{Error, Result};

/// One flat row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResultRow {
    trial_id: usize,
    arch_index: usize,
    seed: u64,
    loss: LossKind,
    lambda: f64,
    batch_size: usize,
    learning_rate: f64,
    hidden_layers: usize,
    units_per_layer: usize,
    dropout: f64,
    max_epochs: usize,
    patience: usize,
    status: TrialStatus,
    stop_epoch: usize,
    epochs_run: usize,
    train_mse: Option<f64>,
    train_rmse: Option<f64>,
    train_rmsle: Option<f64>,
    train_r2: Option<f64>,
    validation_mse: Option<f64>,
    validation_rmse: Option<f64>,
    validation_rmsle: Option<f64>,
    validation_r2: Option<f64>,
    test_mse: Option<f64>,
    test_rmse: Option<f64>,
    test_rmsle: Option<f64>,
    test_r2: Option<f64>,
    message: Option<String>,
}

impl From<&TrialResult> for ResultRow {
    fn from(r: &TrialResult) -> Self {
        let c = &r.config;
        let m = |s: Split| r.metrics.as_ref().map(|m| *m.get(s));
        let (tr, va, te) = (m(Split::Train), m(Split::Validation), m(Split::Test));
        Self {
            trial_id: c.trial_id,
            arch_index: c.arch_index,
            seed: c.seed,
            loss: c.loss,
            lambda: c.lambda,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            hidden_layers: c.hidden_layers,
            units_per_layer: c.units_per_layer,
            dropout: c.dropout,
            max_epochs: c.max_epochs,
            patience: c.patience,
            status: r.status,
            stop_epoch: r.stop_epoch,
            epochs_run: r.epochs_run,
            train_mse: tr.map(|m| m.mse),
            train_rmse: tr.map(|m| m.rmse),
            train_rmsle: tr.map(|m| m.rmsle),
            train_r2: tr.and_then(|m| m.r2),
            validation_mse: va.map(|m| m.mse),
            validation_rmse: va.map(|m| m.rmse),
            validation_rmsle: va.map(|m| m.rmsle),
            validation_r2: va.and_then(|m| m.r2),
            test_mse: te.map(|m| m.mse),
            test_rmse: te.map(|m| m.rmse),
            test_rmsle: te.map(|m| m.rmsle),
            test_r2: te.and_then(|m| m.r2),
            message: r.message.clone(),
        }
    }
}

impl TryFrom<ResultRow> for TrialResult {
    type Error = Error;

    fn try_from(row: ResultRow) -> Result<Self> {
        let metric = |mse: Option<f64>, rmse: Option<f64>, rmsle: Option<f64>, r2| match (mse, rmse, rmsle) {
            (Some(mse), Some(rmse), Some(rmsle)) => Ok(Some(Metrics { mse, rmse, rmsle, r2 })),
            (None, None, None) => Ok(None),
            _ => Err(Error::Config(format!("trial {}: partial metrics", row.trial_id))),
        };
        let tr = metric(row.train_mse, row.train_rmse, row.train_rmsle, row.train_r2)?;
        let va = metric(row.validation_mse, row.validation_rmse, row.validation_rmsle, row.validation_r2)?;
        let te = metric(row.test_mse, row.test_rmse, row.test_rmsle, row.test_r2)?;
        let metrics = match (tr, va, te) {
            (Some(train), Some(validation), Some(test)) => Some(SplitMetrics { train, validation, test }),
            (None, None, None) => None,
            _ => return Err(Error::Config(format!("trial {}: metrics missing for some splits", row.trial_id))),
        };
        if (row.status == TrialStatus::Ok) != metrics.is_some() {
            return Err(Error::Config(format!("trial {}: status {:?} disagrees with metrics", row.trial_id, row.status)));
        }
        Ok(TrialResult {
            config: TrialConfig {
                trial_id: row.trial_id,
                arch_index: row.arch_index,
                seed: row.seed,
                loss: row.loss,
                lambda: row.lambda,
                batch_size: row.batch_size,
                learning_rate: row.learning_rate,
                hidden_layers: row.hidden_layers,
                units_per_layer: row.units_per_layer,
                dropout: row.dropout,
                max_epochs: row.max_epochs,
                patience: row.patience,
            },
            status: row.status,
            stop_epoch: row.stop_epoch,
            epochs_run: row.epochs_run,
            metrics,
            message: row.message,
        })
    }
}

pub fn render_results_csv(results: &[TrialResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(ResultRow::from(r))?;
    }
    if results.is_empty() {
        let mut probe = csv::Writer::from_writer(Vec::new());
        probe.serialize(ResultRow::from(&placeholder()))?;
        let text = String::from_utf8(probe.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf8");
        return Ok(text.lines().next().map(|h| format!("{h}\n")).unwrap_or_default());
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf8"))
}

fn placeholder() -> TrialResult {
    TrialResult {
        config: TrialConfig {
            trial_id: 0,
            arch_index: 0,
            seed: 0,
            loss: LossKind::Mse,
            lambda: 0.0,
            batch_size: 1,
            learning_rate: 1.0,
            hidden_layers: 1,
            units_per_layer: 1,
            dropout: 0.0,
            max_epochs: 1,
            patience: 1,
        },
        status: TrialStatus::Failed,
        stop_epoch: 0,
        epochs_run: 0,
        metrics: None,
        message: None,
    }
}

pub fn parse_results_csv(text: &str) -> Result<Vec<TrialResult>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize::<ResultRow>().map(|row| TrialResult::try_from(row?)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportContext {
    pub manifest_hash: String,
    pub beta: f64,
    pub eta: f64,
    pub thresholds: Thresholds,
}

/// The delimited analysis tables and plain-text summary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisTables {
    pub loss_frequency_csv: String,
    pub correlations_csv: String,
    pub early_stop_csv: String,
    pub summary_txt: String,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl AnalysisTables {
    /// `all` is every trial; `filtered` the ones passing the thresholds.
    pub fn build(all: &[TrialResult], filtered: &[TrialResult], ctx: &ReportContext) -> Self {
        let freq = rank_loss_frequency(filtered);
        let mut loss_frequency_csv = String::from("loss,count,percent\n");
        for row in &freq.rows {
            let _ = writeln!(loss_frequency_csv, "{},{},{}", row.loss, row.count, row.percent);
        }

        let correlations = point_biserial_table(filtered);
        let mut correlations_csv = String::from("loss,n_with,n_without,r_pb,p_value,flag\n");
        for c in &correlations {
            let flag = c.flag.as_deref().unwrap_or("").replace(',', ";");
            let _ = writeln!(correlations_csv, "{},{},{},{},{},{flag}", c.loss, c.n1, c.n0, opt(c.r), opt(c.p_value));
        }

        let mut early_stop_csv = String::from("group,count,mean,std,min,25%,50%,75%,max\n");
        for s in early_stop_summary(filtered) {
            match s.stats {
                Some(d) => {
                    let _ = writeln!(
                        early_stop_csv,
                        "{},{},{},{},{},{},{},{},{}",
                        s.group.as_str(),
                        d.count,
                        d.mean,
                        opt(d.std),
                        d.min,
                        d.q25,
                        d.q50,
                        d.q75,
                        d.max
                    );
                }
                None => {
                    let _ = writeln!(early_stop_csv, "{},0,,,,,,,", s.group.as_str());
                }
            }
        }

        let summary_txt = summary(all, filtered, ctx);
        Self { loss_frequency_csv, correlations_csv, early_stop_csv, summary_txt }
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("loss_frequency.csv"), &self.loss_frequency_csv)?;
        fs::write(dir.join("correlations.csv"), &self.correlations_csv)?;
        fs::write(dir.join("early_stop.csv"), &self.early_stop_csv)?;
        fs::write(dir.join("summary.txt"), &self.summary_txt)?;
        Ok(())
    }
}

fn summary(all: &[TrialResult], filtered: &[TrialResult], ctx: &ReportContext) -> String {
    let count = |s: TrialStatus| all.iter().filter(|r| r.status == s).count();
    let mut out = String::new();
    let _ = writeln!(out, "manifest hash: {}", ctx.manifest_hash);
    let _ = writeln!(
        out,
        "trials: {} (ok {}, diverged {}, failed {})",
        all.len(),
        count(TrialStatus::Ok),
        count(TrialStatus::Diverged),
        count(TrialStatus::Failed)
    );
    let _ = writeln!(
        out,
        "passing R2 > {} and RMSE < {} on every split: {}",
        ctx.thresholds.min_r2,
        ctx.thresholds.max_rmse,
        filtered.len()
    );
    out.push('\n');
    match best_trial(filtered) {
        Some(best) => {
            let c = &best.config;
            let t = best.test().expect("ok results carry metrics");
            let _ = writeln!(out, "best model (highest test R2)");
            let _ = writeln!(out, "  trial: {}", c.trial_id);
            let _ = writeln!(out, "  loss: {}", c.loss);
            let _ = writeln!(out, "  layers: {}", c.hidden_layers);
            let _ = writeln!(out, "  units: {}", c.units_per_layer);
            let _ = writeln!(out, "  dropout: {}", c.dropout);
            let _ = writeln!(out, "  lambda: {:.2}", c.lambda);
            let _ = writeln!(out, "  beta: {}", ctx.beta);
            let _ = writeln!(out, "  eta: {:.4}", ctx.eta);
            let _ = writeln!(out, "  test R2: {:.4}", t.r2.unwrap_or(f64::NAN));
            let _ = writeln!(out, "  test RMSE: {:.4}", t.rmse);
            let _ = writeln!(out, "  stop epoch: {}", best.stop_epoch);
        }
        None => {
            let _ = writeln!(out, "best model: none passed the thresholds");
        }
    }
    out.push('\n');
    let freq = rank_loss_frequency(filtered);
    let _ = writeln!(out, "winning loss per architecture ({} architectures)", freq.architectures);
    for row in freq.rows.iter().filter(|r| r.count > 0) {
        let _ = writeln!(out, "  {:<13} {:>4}  {:>6.2}%", row.loss.name(), row.count, row.percent);
    }
    let weibull_wins: usize = freq.rows.iter().filter(|r| r.loss.uses_weibull()).map(|r| r.count).sum();
    if freq.architectures > 0 {
        let _ = writeln!(
            out,
            "  Weibull-based losses won {weibull_wins} of {} architectures ({:.2}%)",
            freq.architectures,
            100.0 * weibull_wins as f64 / freq.architectures as f64
        );
    }
    out
}

/// Trailing mean over the last `window` values (fewer at the start).
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut sum = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            sum += v;
            if i >= window {
                sum -= values[i - window];
            }
            sum / (i + 1).min(window) as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPoint {
    pub split: Split,
    pub run_id: String,
    pub time: f64,
    pub label: f64,
    pub prediction: f64,
}

pub fn prediction_points(state: &NetworkState, data: &ExperimentData) -> Result<Vec<PredictionPoint>> {
    let mut out = Vec::new();
    for split in Split::ALL {
        let fs = data.split(split);
        let preds = predict_set(state, fs)?;
        for (i, p) in preds.into_iter().enumerate() {
            out.push(PredictionPoint {
                split,
                run_id: fs.run_ids[i].clone(),
                time: fs.sample_times[i],
                label: fs.labels[i],
                prediction: p,
            });
        }
    }
    Ok(out)
}

/// Prediction traces with a per-run trailing mean of the predictions.
pub fn render_predictions_csv(points: &[PredictionPoint], window: usize) -> String {
    let mut out = String::from("split,run_id,time,label,prediction,rolling_mean\n");
    let mut start = 0;
    while start < points.len() {
        let end = start
            + points[start..]
                .iter()
                .take_while(|p| p.split == points[start].split && p.run_id == points[start].run_id)
                .count();
        let run = &points[start..end];
        let preds: Vec<f64> = run.iter().map(|p| p.prediction).collect();
        for (p, avg) in run.iter().zip(rolling_mean(&preds, window)) {
            let _ = writeln!(out, "{},{},{},{},{},{avg}", p.split, p.run_id, p.time, p.label, p.prediction);
        }
        start = end;
    }
    out
}

pub fn render_curves_csv(fit: &FitOutcome) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,restored\n");
    for (i, (t, v)) in fit.train_curve.iter().zip(&fit.val_curve).enumerate() {
        let epoch = i + 1;
        let _ = writeln!(out, "{epoch},{t},{v},{}", u8::from(epoch == fit.stop_epoch));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: usize, status: TrialStatus) -> TrialResult {
        let mut r = placeholder();
        r.config.trial_id = id;
        r.config.arch_index = id / 9;
        r.config.loss = LossKind::ALL[id % 9];
        r.config.lambda = 0.1 + 2.0 / 3.0 * id as f64;
        r.config.learning_rate = 1e-4;
        r.config.seed = u64::MAX - id as u64;
        r.status = status;
        r.stop_epoch = 3 + id;
        r.epochs_run = 9 + id;
        if status == TrialStatus::Ok {
            let m = Metrics { mse: 0.01 / 3.0, rmse: (0.01f64 / 3.0).sqrt(), rmsle: 1e-17, r2: Some(0.3) };
            let constant = Metrics { r2: None, ..m };
            r.metrics = Some(SplitMetrics { train: m, validation: constant, test: m });
        } else {
            r.message = Some("loss train=NaN, val=inf".into());
        }
        r
    }

    #[test]
    fn results_round_trip_exactly() {
        let all = vec![sample(0, TrialStatus::Ok), sample(1, TrialStatus::Diverged), sample(10, TrialStatus::Ok)];
        let text = render_results_csv(&all).unwrap();
        assert_eq!(parse_results_csv(&text).unwrap(), all);
        assert!(text.starts_with("trial_id,arch_index,seed,loss,lambda"));
        assert!(text.contains("W-MSE-Comb") || text.contains(",MSE,"));
        let empty = render_results_csv(&[]).unwrap();
        assert_eq!(empty.lines().count(), 1);
        assert!(parse_results_csv(&empty).unwrap().is_empty());
    }

    #[test]
    fn inconsistent_rows_rejected() {
        let text = render_results_csv(&[sample(0, TrialStatus::Ok)]).unwrap();
        let broken = text.replace(",ok,", ",diverged,");
        assert!(parse_results_csv(&broken).is_err());
    }

    #[test]
    fn rolling_mean_examples() {
        assert_eq!(rolling_mean(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.0, 1.5, 2.5, 3.5]);
        assert_eq!(rolling_mean(&[2.0, 4.0], 5), vec![2.0, 3.0]);
        assert!(rolling_mean(&[], 3).is_empty());
    }

    #[test]
    fn tables_have_expected_shape() {
        let all: Vec<TrialResult> = (0..18).map(|i| sample(i, TrialStatus::Ok)).collect();
        let ctx = ReportContext { manifest_hash: "h".into(), beta: 2.0, eta: 84.0, thresholds: Thresholds::default() };
        let t = AnalysisTables::build(&all, &all, &ctx);
        assert_eq!(t.loss_frequency_csv.lines().count(), 10);
        assert_eq!(t.correlations_csv.lines().count(), 10);
        assert_eq!(t.early_stop_csv.lines().count(), 3);
        assert!(t.summary_txt.contains("best model"));
        assert_eq!(AnalysisTables::build(&all, &all, &ctx), t);
    }

    #[test]
    fn prediction_csv_groups_runs() {
        let pts: Vec<PredictionPoint> = (0..4)
            .map(|i| PredictionPoint {
                split: Split::Test,
                run_id: if i < 2 { "a".into() } else { "b".into() },
                time: i as f64,
                label: 0.0,
                prediction: i as f64,
            })
            .collect();
        let csv = render_predictions_csv(&pts, 3);
        let last: Vec<&str> = csv.lines().map(|l| l.rsplit(',').next().unwrap()).collect();
        assert_eq!(last, vec!["rolling_mean", "0", "0.5", "2", "2.5"]);
    }
}
