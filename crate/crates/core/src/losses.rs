//! The nine training losses and their gradients with respect to predictions.
//!
//! | kind           | value                                   |
//! |----------------|-----------------------------------------|
//! | `MSE`          | mean (y - ŷ)²                           |
//! | `RMSE`         | √MSE                                    |
//! | `RMSLE`        | √ mean (ln(y+1) - ln(ŷ+1))²             |
//! | `W-MSE`        | λ · mean (F(t) - F(t̂))²                 |
//! | `W-RMSE`       | λ · √ mean (F(t) - F(t̂))²               |
//! | `W-RMSLE`      | λ · √ mean (ln(F(t)+1) - ln(F(t̂)+1))²   |
//! | `W-X-Comb`     | X + λ · (Weibull term of W-X)           |
//!
//! `F` is the Weibull CDF, `t` the true sample time and `t̂ = ŷ · t_N` the
//! predicted time, with `t_N` the total runtime of the sample's run.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::weibull::WeibullParams;
use crate::{Error, Result};

pub const LAMBDA_MAX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "RMSE")]
    Rmse,
    #[serde(rename = "RMSLE")]
    Rmsle,
    #[serde(rename = "W-MSE")]
    WeibullMse,
    #[serde(rename = "W-RMSE")]
    WeibullRmse,
    #[serde(rename = "W-RMSLE")]
    WeibullRmsle,
    #[serde(rename = "W-MSE-Comb")]
    WeibullMseComb,
    #[serde(rename = "W-RMSE-Comb")]
    WeibullRmseComb,
    #[serde(rename = "W-RMSLE-Comb")]
    WeibullRmsleComb,
}

/// The metric a loss is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mse,
    Rmse,
    Rmsle,
}

impl LossKind {
    /// Declaration order; also the final tie-break when ranking.
    pub const ALL: [LossKind; 9] = [
        LossKind::Mse,
        LossKind::Rmse,
        LossKind::Rmsle,
        LossKind::WeibullMse,
        LossKind::WeibullRmse,
        LossKind::WeibullRmsle,
        LossKind::WeibullMseComb,
        LossKind::WeibullRmseComb,
        LossKind::WeibullRmsleComb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "MSE",
            LossKind::Rmse => "RMSE",
            LossKind::Rmsle => "RMSLE",
            LossKind::WeibullMse => "W-MSE",
            LossKind::WeibullRmse => "W-RMSE",
            LossKind::WeibullRmsle => "W-RMSLE",
            LossKind::WeibullMseComb => "W-MSE-Comb",
            LossKind::WeibullRmseComb => "W-RMSE-Comb",
            LossKind::WeibullRmsleComb => "W-RMSLE-Comb",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn metric(self) -> Metric {
        match self {
            LossKind::Mse | LossKind::WeibullMse | LossKind::WeibullMseComb => Metric::Mse,
            LossKind::Rmse | LossKind::WeibullRmse | LossKind::WeibullRmseComb => Metric::Rmse,
            LossKind::Rmsle | LossKind::WeibullRmsle | LossKind::WeibullRmsleComb => Metric::Rmsle,
        }
    }

    pub fn is_traditional(self) -> bool {
        matches!(self, LossKind::Mse | LossKind::Rmse | LossKind::Rmsle)
    }

    pub fn is_weibull_only(self) -> bool {
        matches!(self, LossKind::WeibullMse | LossKind::WeibullRmse | LossKind::WeibullRmsle)
    }

    pub fn is_combined(self) -> bool {
        !self.is_traditional() && !self.is_weibull_only()
    }

    pub fn uses_weibull(self) -> bool {
        !self.is_traditional()
    }

    /// The traditional loss built on the same metric.
    pub fn traditional(self) -> LossKind {
        match self.metric() {
            Metric::Mse => LossKind::Mse,
            Metric::Rmse => LossKind::Rmse,
            Metric::Rmsle => LossKind::Rmsle,
        }
    }

    /// The Weibull-only loss built on the same metric.
    pub fn weibull_only(self) -> LossKind {
        match self.metric() {
            Metric::Mse => LossKind::WeibullMse,
            Metric::Rmse => LossKind::WeibullRmse,
            Metric::Rmsle => LossKind::WeibullRmsle,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub lambda: f64,
    pub weibull: Option<WeibullParams>,
}

impl LossSpec {
    pub fn new(kind: LossKind, lambda: f64, weibull: Option<WeibullParams>) -> Result<Self> {
        let spec = Self { kind, lambda, weibull };
        spec.validate()?;
        Ok(spec)
    }

    pub fn traditional(kind: LossKind) -> Result<Self> {
        Self::new(kind, 0.0, None)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=LAMBDA_MAX).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, {LAMBDA_MAX}], got {}", self.lambda)));
        }
        if self.kind.uses_weibull() && self.weibull.is_none() {
            return Err(Error::Config(format!("loss {} needs weibull parameters", self.kind)));
        }
        Ok(())
    }

    fn params(&self) -> Result<WeibullParams> {
        self.weibull
            .ok_or_else(|| Error::Config(format!("loss {} needs weibull parameters", self.kind)))
    }
}

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::InvalidParameter("loss over an empty batch".into()));
    }
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), actual: yhat.len() });
    }
    Ok(())
}

fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

fn log1p_all(v: &[f64]) -> Result<Vec<f64>> {
    v.iter()
        .map(|&x| {
            if x > -1.0 {
                Ok(x.ln_1p())
            } else {
                Err(Error::Domain(format!("log(1 + x) needs x > -1, got {x}")))
            }
        })
        .collect()
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    Ok(mean_sq(y, yhat))
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    Ok(mse(y, yhat)?.sqrt())
}

pub fn rmsle(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    Ok(mean_sq(&log1p_all(y)?, &log1p_all(yhat)?).sqrt())
}

fn metric_value(metric: Metric, a: &[f64], b: &[f64]) -> Result<f64> {
    match metric {
        Metric::Mse => mse(a, b),
        Metric::Rmse => rmse(a, b),
        Metric::Rmsle => rmsle(a, b),
    }
}

/// Elementwise Weibull CDF of absolute times.
pub fn weibull_fraction_failing(times: &[f64], params: &WeibullParams) -> Result<Vec<f64>> {
    times.iter().map(|&t| params.cdf(t)).collect()
}

pub fn loss_value(spec: &LossSpec, y: &[f64], yhat: &[f64], times_true: &[f64], times_pred: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let metric = spec.kind.metric();
    let label_term = || metric_value(metric, y, yhat);
    let weibull_term = || -> Result<f64> {
        let params = spec.params()?;
        check_pair(times_true, times_pred)?;
        if times_true.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: y.len(), actual: times_true.len() });
        }
        let f = weibull_fraction_failing(times_true, &params)?;
        let fhat = weibull_fraction_failing(times_pred, &params)?;
        metric_value(metric, &f, &fhat)
    };
    if spec.kind.is_traditional() {
        label_term()
    } else if spec.kind.is_weibull_only() {
        Ok(spec.lambda * weibull_term()?)
    } else {
        Ok(label_term()? + spec.lambda * weibull_term()?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub gradient: Vec<f64>,
    /// A square-root term sat exactly at zero, where its derivative is
    /// undefined; that term contributed zero.
    pub degenerate: bool,
}

/// Value and gradient of one metric term, given `d(compared value)/d(y_hat)`.
struct TermGrad {
    grad: Vec<f64>,
    degenerate: bool,
}

fn metric_gradient(metric: Metric, a: &[f64], b: &[f64], db_dyhat: &[f64]) -> Result<TermGrad> {
    let n = a.len() as f64;
    match metric {
        Metric::Mse => Ok(TermGrad {
            grad: a.iter().zip(b).zip(db_dyhat).map(|((x, y), d)| 2.0 * (y - x) / n * d).collect(),
            degenerate: false,
        }),
        Metric::Rmse => {
            let r = mean_sq(a, b).sqrt();
            if r == 0.0 {
                return Ok(TermGrad { grad: vec![0.0; a.len()], degenerate: true });
            }
            Ok(TermGrad {
                grad: a.iter().zip(b).zip(db_dyhat).map(|((x, y), d)| (y - x) / (n * r) * d).collect(),
                degenerate: false,
            })
        }
        Metric::Rmsle => {
            let la = log1p_all(a)?;
            let lb = log1p_all(b)?;
            let r = mean_sq(&la, &lb).sqrt();
            if r == 0.0 {
                return Ok(TermGrad { grad: vec![0.0; a.len()], degenerate: true });
            }
            Ok(TermGrad {
                grad: la
                    .iter()
                    .zip(&lb)
                    .zip(b)
                    .zip(db_dyhat)
                    .map(|(((x, y), bv), d)| (y - x) / (n * r) / (1.0 + bv) * d)
                    .collect(),
                degenerate: false,
            })
        }
    }
}

/// Exact derivative of [`loss_value`] with respect to each prediction, chaining
/// through `t̂ = ŷ · t_N` and `dF/dt̂ = pdf(t̂)` for the Weibull terms.
pub fn loss_gradient(
    spec: &LossSpec,
    y: &[f64],
    yhat: &[f64],
    times_true: &[f64],
    times_pred: &[f64],
    run_lengths: &[f64],
) -> Result<LossGradient> {
    check_pair(y, yhat)?;
    let n = y.len();
    let metric = spec.kind.metric();
    let mut gradient = vec![0.0; n];
    let mut degenerate = false;

    if !spec.kind.is_weibull_only() {
        let ones = vec![1.0; n];
        let term = metric_gradient(metric, y, yhat, &ones)?;
        gradient = term.grad;
        degenerate |= term.degenerate;
    }
    if spec.kind.uses_weibull() {
        let params = spec.params()?;
        for (name, v) in [("times_true", times_true), ("times_pred", times_pred), ("run_lengths", run_lengths)] {
            if v.len() != n {
                return Err(Error::InvalidParameter(format!("{name} has {} entries, batch has {n}", v.len())));
            }
        }
        let f = weibull_fraction_failing(times_true, &params)?;
        let fhat = weibull_fraction_failing(times_pred, &params)?;
        let dfhat: Vec<f64> = times_pred
            .iter()
            .zip(run_lengths)
            .map(|(&t, &tn)| params.cdf_time_gradient(t).map(|g| g * tn))
            .collect::<Result<_>>()?;
        let term = metric_gradient(metric, &f, &fhat, &dfhat)?;
        degenerate |= term.degenerate;
        for (g, w) in gradient.iter_mut().zip(term.grad) {
            *g += spec.lambda * w;
        }
    }
    Ok(LossGradient { gradient, degenerate })
}
