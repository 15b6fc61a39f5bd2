//! Filtering, per-architecture ranking, point-biserial correlation and
//! early-stopping summaries over trial results.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::TrialResult;
use crate::dataset::Split;
use crate::losses::LossKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Strict lower bound on R² for every split.
    pub min_r2: f64,
    /// Strict upper bound on RMSE for every split.
    pub max_rmse: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { min_r2: 0.2, max_rmse: 0.35 }
    }
}

impl Thresholds {
    pub fn passes(&self, result: &TrialResult) -> bool {
        let Some(m) = result.metrics.as_ref().filter(|_| result.is_ok()) else {
            return false;
        };
        Split::ALL.iter().all(|&s| {
            let s = m.get(s);
            s.r2.is_some_and(|r2| r2 > self.min_r2) && s.rmse < self.max_rmse
        })
    }
}

pub fn filter_results(results: &[TrialResult], thresholds: &Thresholds) -> Vec<TrialResult> {
    results.iter().filter(|r| thresholds.passes(r)).cloned().collect()
}

/// Higher test R², then lower test RMSE, then earlier loss kind, then lower trial id.
fn rank_order(a: &TrialResult, b: &TrialResult) -> Ordering {
    let key = |r: &TrialResult| {
        let t = r.test().expect("ranked results carry metrics");
        (t.r2.unwrap_or(f64::NEG_INFINITY), t.rmse)
    };
    let (ra, ea) = key(a);
    let (rb, eb) = key(b);
    rb.total_cmp(&ra)
        .then(ea.total_cmp(&eb))
        .then(a.config.loss.cmp(&b.config.loss))
        .then(a.config.trial_id.cmp(&b.config.trial_id))
}

/// The best successful result by test R².
pub fn best_trial(results: &[TrialResult]) -> Option<&TrialResult> {
    results.iter().filter(|r| r.is_ok() && r.metrics.is_some()).min_by(|a, b| rank_order(a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub loss: LossKind,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFrequency {
    /// Number of architectures with at least one surviving result.
    pub architectures: usize,
    /// Every loss kind, most frequent winner first, ties in declaration order.
    pub rows: Vec<FrequencyRow>,
}

impl LossFrequency {
    pub fn count(&self, loss: LossKind) -> usize {
        self.rows.iter().find(|r| r.loss == loss).map_or(0, |r| r.count)
    }
}

/// Counts how often each loss kind wins its architecture on test R².
pub fn rank_loss_frequency(results: &[TrialResult]) -> LossFrequency {
    let mut groups: BTreeMap<usize, Vec<&TrialResult>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.is_ok() && r.metrics.is_some()) {
        groups.entry(r.config.arch_index).or_default().push(r);
    }
    let mut counts = [0usize; 9];
    for group in groups.values() {
        let winner = group.iter().min_by(|a, b| rank_order(a, b)).expect("non-empty group");
        counts[winner.config.loss.index()] += 1;
    }
    let total = groups.len();
    let mut rows: Vec<FrequencyRow> = LossKind::ALL
        .iter()
        .map(|&loss| {
            let count = counts[loss.index()];
            let percent = if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 };
            FrequencyRow { loss, count, percent }
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.loss.cmp(&b.loss)));
    LossFrequency { architectures: total, rows }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(r_pb, two-sided p)` for values split by membership. Uses the population
/// standard deviation of the pooled values.
pub fn point_biserial_groups(group1: &[f64], group0: &[f64]) -> Result<(f64, f64)> {
    if group1.len() < 2 || group0.len() < 2 {
        return Err(Error::Estimation(format!(
            "point-biserial needs at least 2 values per group, got {} and {}",
            group1.len(),
            group0.len()
        )));
    }
    let (n1, n0) = (group1.len() as f64, group0.len() as f64);
    let n = n1 + n0;
    let all: Vec<f64> = group1.iter().chain(group0).copied().collect();
    let m = mean(&all);
    let s = (all.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    if s == 0.0 || !s.is_finite() {
        return Err(Error::Estimation("point-biserial undefined for zero variance".into()));
    }
    let r = ((mean(group1) - mean(group0)) / s * (n1 * n0 / (n * n)).sqrt()).clamp(-1.0, 1.0);
    let df = n - 2.0;
    let p = if 1.0 - r * r <= 0.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Estimation(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
    };
    Ok((r, p))
}

/// Permutation p-value for the same statistic: the share of random relabelings
/// whose |r| reaches the observed |r|, with the usual +1 correction.
pub fn point_biserial_permutation(group1: &[f64], group0: &[f64], permutations: usize, seed: u64) -> Result<f64> {
    let (observed, _) = point_biserial_groups(group1, group0)?;
    let mut pooled: Vec<f64> = group1.iter().chain(group0).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..permutations {
        pooled.shuffle(&mut rng);
        let (a, b) = pooled.split_at(group1.len());
        let (r, _) = point_biserial_groups(a, b)?;
        if r.abs() >= observed.abs() - 1e-12 {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (permutations + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointBiserial {
    pub loss: LossKind,
    pub n1: usize,
    pub n0: usize,
    pub r: Option<f64>,
    pub p_value: Option<f64>,
    /// Why `r` is absent.
    pub flag: Option<String>,
}

/// Correlation between "trained with `loss`" and test R².
pub fn point_biserial(results: &[TrialResult], loss: LossKind) -> PointBiserial {
    let (mut g1, mut g0) = (Vec::new(), Vec::new());
    for r in results {
        if let Some(r2) = r.test().and_then(|t| t.r2).filter(|_| r.is_ok()) {
            if r.config.loss == loss { g1.push(r2) } else { g0.push(r2) }
        }
    }
    let (n1, n0) = (g1.len(), g0.len());
    match point_biserial_groups(&g1, &g0) {
        Ok((r, p)) => PointBiserial { loss, n1, n0, r: Some(r), p_value: Some(p), flag: None },
        Err(e) => PointBiserial { loss, n1, n0, r: None, p_value: None, flag: Some(e.to_string()) },
    }
}

pub fn point_biserial_table(results: &[TrialResult]) -> Vec<PointBiserial> {
    LossKind::ALL.iter().map(|&k| point_biserial(results, k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Describe {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; absent for a single value.
    pub std: Option<f64>,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

/// Count, mean, sample std, min, quartiles and max, with quantiles linearly
/// interpolated at rank `(n - 1) p`. `None` for an empty slice.
pub fn describe(values: &[f64]) -> Option<Describe> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let q = |p: f64| {
        let pos = (n - 1) as f64 * p;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    let m = mean(&v);
    let std = (n > 1).then(|| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Some(Describe { count: n, mean: m, std, min: v[0], q25: q(0.25), q50: q(0.5), q75: q(0.75), max: v[n - 1] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopGroup {
    Traditional,
    Weibull,
}

impl StopGroup {
    pub fn of(loss: LossKind) -> Self {
        if loss.is_traditional() { StopGroup::Traditional } else { StopGroup::Weibull }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StopGroup::Traditional => "traditional",
            StopGroup::Weibull => "weibull",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopSummary {
    pub group: StopGroup,
    /// `None` when the group has no successful results.
    pub stats: Option<Describe>,
}

/// Stop-epoch statistics of successful results, traditional group first.
pub fn early_stop_summary(results: &[TrialResult]) -> [StopSummary; 2] {
    [StopGroup::Traditional, StopGroup::Weibull].map(|group| {
        let epochs: Vec<f64> = results
            .iter()
            .filter(|r| r.is_ok() && StopGroup::of(r.config.loss) == group)
            .map(|r| r.stop_epoch as f64)
            .collect();
        StopSummary { group, stats: describe(&epochs) }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{SplitMetrics, TrialConfig, TrialStatus};
    use crate::trainer::Metrics;
    use proptest::prelude::*;

    fn metrics(r2: f64, rmse: f64) -> Metrics {
        Metrics { mse: rmse * rmse, rmse, rmsle: rmse, r2: Some(r2) }
    }

    fn result(arch: usize, loss: LossKind, test_r2: f64, test_rmse: f64) -> TrialResult {
        TrialResult {
            config: TrialConfig {
                trial_id: arch * 9 + loss.index(),
                arch_index: arch,
                seed: arch as u64,
                loss,
                lambda: 1.0,
                batch_size: 32,
                learning_rate: 0.01,
                hidden_layers: 2,
                units_per_layer: 16,
                dropout: 0.1,
                max_epochs: 10,
                patience: 2,
            },
            status: TrialStatus::Ok,
            stop_epoch: 3,
            epochs_run: 5,
            metrics: Some(SplitMetrics {
                train: metrics(0.5, 0.1),
                validation: metrics(0.5, 0.1),
                test: metrics(test_r2, test_rmse),
            }),
            message: None,
        }
    }

    #[test]
    fn filter_is_strict_on_every_split() {
        let good = result(0, LossKind::Mse, 0.5, 0.1);
        assert!(Thresholds::default().passes(&good));
        assert!(!Thresholds::default().passes(&result(0, LossKind::Mse, 0.19, 0.1)));
        assert!(!Thresholds::default().passes(&result(0, LossKind::Mse, 0.2, 0.1)));
        assert!(!Thresholds::default().passes(&result(0, LossKind::Mse, 0.5, 0.35)));
        let mut val_bad = good.clone();
        val_bad.metrics.as_mut().unwrap().validation.r2 = Some(0.1);
        assert!(!Thresholds::default().passes(&val_bad));
        let mut undefined = good.clone();
        undefined.metrics.as_mut().unwrap().train.r2 = None;
        assert!(!Thresholds::default().passes(&undefined));
        let mut diverged = good.clone();
        diverged.status = TrialStatus::Diverged;
        assert!(!Thresholds::default().passes(&diverged));
    }

    #[test]
    fn filter_fixture_with_known_survivors() {
        let mut all = Vec::new();
        for i in 0..20 {
            let r2 = if i % 4 == 0 { 0.1 } else { 0.3 + 0.01 * i as f64 };
            let rmse = if i % 5 == 0 { 0.4 } else { 0.2 };
            all.push(result(i, LossKind::ALL[i % 9], r2, rmse));
        }
        let kept = filter_results(&all, &Thresholds::default());
        let expected = (0..20).filter(|i| i % 4 != 0 && i % 5 != 0).count();
        assert_eq!(kept.len(), expected);
        assert_eq!(filter_results(&kept, &Thresholds::default()), kept);
    }

    #[test]
    fn ranking_fixture() {
        // Winners by architecture: 0..4 W-MSE-Comb, 5..7 MSE, 8 W-RMSE (tie on R²,
        // lower RMSE), 9 RMSE (full tie, earlier kind).
        let mut all = Vec::new();
        for a in 0..5 {
            all.push(result(a, LossKind::WeibullMseComb, 0.9, 0.1));
            all.push(result(a, LossKind::Mse, 0.8, 0.1));
        }
        for a in 5..8 {
            all.push(result(a, LossKind::Mse, 0.7, 0.2));
            all.push(result(a, LossKind::WeibullRmsle, 0.6, 0.1));
        }
        all.push(result(8, LossKind::Rmse, 0.7, 0.2));
        all.push(result(8, LossKind::WeibullRmse, 0.7, 0.15));
        all.push(result(9, LossKind::WeibullRmse, 0.7, 0.2));
        all.push(result(9, LossKind::Rmse, 0.7, 0.2));

        let f = rank_loss_frequency(&all);
        assert_eq!(f.architectures, 10);
        assert_eq!(f.count(LossKind::WeibullMseComb), 5);
        assert_eq!(f.count(LossKind::Mse), 3);
        assert_eq!(f.count(LossKind::WeibullRmse), 1);
        assert_eq!(f.count(LossKind::Rmse), 1);
        assert_eq!(f.rows[0].loss, LossKind::WeibullMseComb);
        assert_eq!(f.rows[0].percent, 50.0);
        assert_eq!(f.rows.len(), 9);
        let total: f64 = f.rows.iter().map(|r| r.percent).sum();
        assert!((total - 100.0).abs() < 1e-9);

        let mut reversed = all.clone();
        reversed.reverse();
        assert_eq!(rank_loss_frequency(&reversed), f);
        assert_eq!(rank_loss_frequency(&[]).architectures, 0);
        assert_eq!(best_trial(&all).unwrap().config.loss, LossKind::WeibullMseComb);
        assert_eq!(best_trial(&all).unwrap().config.arch_index, 0);
    }

    #[test]
    fn point_biserial_examples() {
        let (r, p) = point_biserial_groups(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(r, 1.0);
        assert_eq!(p, 0.0);
        assert!(point_biserial_groups(&[0.5, 0.5], &[0.5, 0.5]).is_err());
        assert!(point_biserial_groups(&[0.5], &[0.1, 0.2]).is_err());

        let (r, p) = point_biserial_groups(&[0.9, 0.7, 0.8, 0.6], &[0.5, 0.65, 0.4, 0.55, 0.3]).unwrap();
        assert!((r - 0.753_937_034_925_051_9).abs() < 1e-12);
        assert!((p - 0.018_943_756_166_672_45).abs() < 1e-9);
    }

    // Pearson correlation of a 0/1 indicator with the values.
    fn pearson_oracle(g1: &[f64], g0: &[f64]) -> f64 {
        let x: Vec<f64> = g1.iter().map(|_| 1.0).chain(g0.iter().map(|_| 0.0)).collect();
        let y: Vec<f64> = g1.iter().chain(g0).copied().collect();
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    proptest! {
        #[test]
        fn point_biserial_matches_pearson(
            g1 in prop::collection::vec(-1.0f64..1.0, 2..30),
            g0 in prop::collection::vec(-1.0f64..1.0, 2..30),
        ) {
            let (r, p) = point_biserial_groups(&g1, &g0).unwrap();
            prop_assert!((r - pearson_oracle(&g1, &g0)).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((0.0..=1.0).contains(&p));
            let (swapped, p2) = point_biserial_groups(&g0, &g1).unwrap();
            prop_assert!((swapped + r).abs() < 1e-12);
            prop_assert!((p - p2).abs() < 1e-12);
        }

        #[test]
        fn ranking_invariant_under_reordering(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut all: Vec<TrialResult> = (0..30)
                .map(|i| {
                    let r2 = [0.3, 0.5, 0.7][rand::Rng::random_range(&mut rng, 0..3)];
                    result(i % 6, LossKind::ALL[i % 9], r2, 0.1 + 0.01 * (i % 3) as f64)
                })
                .collect();
            let f = rank_loss_frequency(&all);
            all.shuffle(&mut rng);
            prop_assert_eq!(rank_loss_frequency(&all), f.clone());
            let total: f64 = f.rows.iter().map(|r| r.percent).sum();
            prop_assert!((total - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn permutation_p_value_agrees_with_t_test() {
        let g1 = [0.9, 0.7, 0.8, 0.6, 0.75];
        let g0 = [0.5, 0.65, 0.4, 0.55, 0.3, 0.6];
        let (_, p) = point_biserial_groups(&g1, &g0).unwrap();
        let perm = point_biserial_permutation(&g1, &g0, 4000, 1).unwrap();
        assert!((perm - p).abs() < 0.02, "{perm} vs {p}");
    }

    #[test]
    fn point_biserial_flags_missing_group() {
        let all = vec![result(0, LossKind::Mse, 0.5, 0.1), result(1, LossKind::Rmse, 0.6, 0.1)];
        let pb = point_biserial(&all, LossKind::WeibullMse);
        assert_eq!(pb.n1, 0);
        assert!(pb.r.is_none() && pb.flag.is_some());
        assert_eq!(point_biserial_table(&all).len(), 9);
    }

    #[test]
    fn describe_examples() {
        let d = describe(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((d.count, d.mean, d.min, d.max), (4, 2.5, 1.0, 4.0));
        assert_eq!((d.q25, d.q50, d.q75), (1.75, 2.5, 3.25));
        assert!((d.std.unwrap() - 1.290_994_448_735_805_6).abs() < 1e-15);
        let one = describe(&[5.0]).unwrap();
        assert_eq!((one.count, one.min, one.q25, one.q50, one.q75, one.max), (1, 5.0, 5.0, 5.0, 5.0, 5.0));
        assert_eq!(one.std, None);
        assert!(describe(&[]).is_none());
    }

    #[test]
    fn stop_summary_with_a_long_tail() {
        // 373 traditional stop epochs: 100 at 1, 50 at 3, 60 at 5, then 6, 18, ..., 1950.
        let mut epochs = vec![1usize; 100];
        epochs.extend([3; 50]);
        epochs.extend([5; 60]);
        epochs.extend((0..163).map(|k| 6 + 12 * k));
        let all: Vec<TrialResult> = epochs
            .iter()
            .enumerate()
            .map(|(i, &e)| {
                let mut r = result(i, LossKind::ALL[i % 3], 0.5, 0.1);
                r.stop_epoch = e;
                r
            })
            .collect();
        let [trad, weib] = early_stop_summary(&all);
        assert!(weib.stats.is_none());
        let s = trad.stats.unwrap();
        assert_eq!(s.count, 373);
        assert_eq!(s.q50, 5.0);
        assert_eq!(s.q25, 1.0);
        assert_eq!(s.q75, 834.0);
        assert_eq!((s.min, s.max), (1.0, 1950.0));
        let sum = 100.0 + 150.0 + 300.0 + (0..163).map(|k| 6.0 + 12.0 * k as f64).sum::<f64>();
        assert!((s.mean - sum / 373.0).abs() < 1e-12);
    }
}
