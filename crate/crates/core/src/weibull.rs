//! Two-parameter Weibull distribution and Weibayes estimation.
//!
//! `beta` is the shape (dimensionless) and `eta` the characteristic life,
//! expressed in whatever time unit the runs use. The CDF at `eta` is always
//! `1 - 1/e`, the age by which 63.2% of a population has failed.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Shape used for ball bearings when no better estimate exists.
pub const BALL_BEARING_BETA: f64 = 2.0;
/// Shape used for roller bearings when no better estimate exists.
pub const ROLLER_BEARING_BETA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct WeibullParams {
    beta: f64,
    eta: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    beta: f64,
    eta: f64,
}

impl TryFrom<RawParams> for WeibullParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        WeibullParams::new(raw.beta, raw.eta)
    }
}

impl From<WeibullParams> for RawParams {
    fn from(p: WeibullParams) -> Self {
        RawParams { beta: p.beta, eta: p.eta }
    }
}

impl WeibullParams {
    pub fn new(beta: f64, eta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weibull shape must be finite and > 0, got {beta}"
            )));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weibull characteristic life must be finite and > 0, got {eta}"
            )));
        }
        Ok(Self { beta, eta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Fraction failing by time `t`: `1 - exp(-(t/eta)^beta)`.
    pub fn cdf(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.cdf_unchecked(t))
    }

    /// Probability density at `t`. Diverges at the origin when `beta < 1`.
    pub fn pdf(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        if t == 0.0 {
            return self.density_at_origin();
        }
        Ok(self.pdf_unchecked(t))
    }

    /// Derivative of the CDF with respect to time. Equal to the density, but
    /// kept as its own entry point because training differentiates through
    /// the CDF of predicted times.
    pub fn cdf_time_gradient(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        if t == 0.0 {
            return self.density_at_origin();
        }
        Ok(self.pdf_unchecked(t))
    }

    /// Time by which fraction `p` of the population has failed.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Domain(format!("quantile probability must lie in [0, 1), got {p}")));
        }
        Ok(self.eta * (-(-p).ln_1p()).powf(1.0 / self.beta))
    }

    pub fn median(&self) -> f64 {
        self.eta * std::f64::consts::LN_2.powf(1.0 / self.beta)
    }

    fn density_at_origin(&self) -> Result<f64> {
        if self.beta < 1.0 {
            Err(Error::Divergent(format!(
                "weibull density is infinite at t = 0 for beta = {} < 1",
                self.beta
            )))
        } else if self.beta == 1.0 {
            Ok(1.0 / self.eta)
        } else {
            Ok(0.0)
        }
    }

    // expm1 keeps precision when only a tiny fraction has failed.
    pub(crate) fn cdf_unchecked(&self, t: f64) -> f64 {
        -(-(t / self.eta).powf(self.beta)).exp_m1()
    }

    pub(crate) fn pdf_unchecked(&self, t: f64) -> f64 {
        let z = t / self.eta;
        (self.beta / self.eta) * z.powf(self.beta - 1.0) * (-z.powf(self.beta)).exp()
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    Ok(())
}

/// One unit's observed life: either a run to failure or a censored run that
/// was stopped while the unit was still healthy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub time: f64,
    pub failed: bool,
}

impl FailureRecord {
    pub fn new(time: f64, failed: bool) -> Result<Self> {
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "failure record time must be finite and > 0, got {time}"
            )));
        }
        Ok(Self { time, failed })
    }

    pub fn failed(time: f64) -> Result<Self> {
        Self::new(time, true)
    }

    pub fn censored(time: f64) -> Result<Self> {
        Self::new(time, false)
    }
}

/// Weibayes characteristic life for an assumed shape:
/// `eta = (sum_i t_i^beta / r)^(1/beta)`, summing over every record and
/// dividing by the number of failures `r`.
pub fn weibayes_eta(records: &[FailureRecord], beta: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Estimation("no records supplied to weibayes".into()));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidParameter(format!("weibayes shape must be > 0, got {beta}")));
    }
    if let Some(bad) = records.iter().find(|r| !(r.time.is_finite() && r.time > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "weibayes record time must be > 0, got {}",
            bad.time
        )));
    }
    let failures = records.iter().filter(|r| r.failed).count();
    if failures == 0 {
        return Err(Error::Estimation("no failures, weibayes undefined".into()));
    }
    let total: f64 = records.iter().map(|r| r.time.powf(beta)).sum();
    Ok((total / failures as f64).powf(1.0 / beta))
}

/// Weibayes estimate packaged as distribution parameters.
pub fn weibayes(records: &[FailureRecord], beta: f64) -> Result<WeibullParams> {
    WeibullParams::new(beta, weibayes_eta(records, beta)?)
}
