//! Synthetic run-to-failure recordings for desk-scale experiments.
//!
//! Each run's life is drawn from a Weibull law. A run whose life exceeds the
//! optional test-end time is censored there. The signal is a constant shaft
//! tone, a wear tone whose amplitude grows linearly with true age fraction,
//! and a fault tone that appears at `onset_fraction` of life and grows
//! quadratically until failure, plus Gaussian noise that swells with damage.

use std::f64::consts::TAU;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Run;
use crate::signal::RawWindow;
use crate::weibull::WeibullParams;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSpec {
    pub runs: usize,
    pub windows_per_run: usize,
    pub window_len: usize,
    /// Hz.
    pub sample_rate: f64,
    pub noise_level: f64,
    /// Shape of the life law.
    pub life_beta: f64,
    /// Characteristic life, in run time units (hours by convention).
    pub life_eta: f64,
    /// Test-end time; lives beyond it are censored.
    pub censor_time: Option<f64>,
    /// Fault onset as a fraction of the run's true life.
    pub onset_fraction: f64,
    pub shaft_hz: f64,
    pub wear_hz: f64,
    pub fault_hz: f64,
    pub shaft_amplitude: f64,
    pub wear_gain: f64,
    pub fault_gain: f64,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        Self {
            runs: 12,
            windows_per_run: 40,
            window_len: 1024,
            sample_rate: 20_480.0,
            noise_level: 0.05,
            life_beta: 2.0,
            life_eta: 100.0,
            censor_time: Some(134.0),
            onset_fraction: 0.6,
            shaft_hz: 240.0,
            wear_hz: 2_600.0,
            fault_hz: 6_100.0,
            shaft_amplitude: 1.0,
            wear_gain: 0.4,
            fault_gain: 2.0,
        }
    }
}

impl SynthesisSpec {
    pub fn life_law(&self) -> Result<WeibullParams> {
        WeibullParams::new(self.life_beta, self.life_eta)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthesis: {m}")));
        if self.runs == 0 {
            return bad("run count must be >= 1".into());
        }
        if self.windows_per_run < 2 {
            return bad(format!("windows_per_run must be >= 2, got {}", self.windows_per_run));
        }
        if self.window_len < 2 {
            return bad(format!("window_len must be >= 2, got {}", self.window_len));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return bad(format!("sample_rate must be > 0, got {}", self.sample_rate));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return bad(format!("noise_level must be >= 0, got {}", self.noise_level));
        }
        if !(0.0..1.0).contains(&self.onset_fraction) {
            return bad(format!("onset_fraction must lie in [0, 1), got {}", self.onset_fraction));
        }
        if let Some(c) = self.censor_time {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("censor_time must be > 0, got {c}"));
            }
        }
        let nyquist = self.sample_rate / 2.0;
        for (name, f) in [("shaft_hz", self.shaft_hz), ("wear_hz", self.wear_hz), ("fault_hz", self.fault_hz)] {
            if !(f.is_finite() && f >= 0.0 && f < nyquist) {
                return bad(format!("{name} = {f} must lie in [0, {nyquist})"));
            }
        }
        self.life_law().map(|_| ()).map_err(|e| Error::Config(format!("synthesis: {e}")))
    }
}

/// Deterministic synthetic runs named `run-00`, `run-01`, ...
pub fn synthesize_runs(spec: &SynthesisSpec, seed: u64) -> Result<Vec<Run>> {
    spec.validate()?;
    let law = spec.life_law()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = spec.runs.saturating_sub(1).to_string().len().max(2);
    (0..spec.runs)
        .map(|i| {
            let u: f64 = rng.random();
            let life = law.quantile(u)?.max(f64::MIN_POSITIVE);
            let phases = [rng.random::<f64>() * TAU, rng.random::<f64>() * TAU, rng.random::<f64>() * TAU];
            let noise_seed = rng.next_u64();
            synthesize_one(spec, format!("run-{i:0width$}"), life, phases, noise_seed)
        })
        .collect()
}

fn synthesize_one(spec: &SynthesisSpec, id: String, life: f64, phases: [f64; 3], noise_seed: u64) -> Result<Run> {
    let (total_runtime, failed) = match spec.censor_time {
        Some(c) if life > c => (c, false),
        _ => (life, true),
    };
    let n = spec.windows_per_run;
    let times: Vec<f64> = (0..n).map(|k| total_runtime * (k as f64 / (n - 1) as f64)).collect();
    let onset = spec.onset_fraction * life;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);

    let windows = times
        .iter()
        .map(|&t| {
            let age = t / life;
            let damage = if t > onset { ((t - onset) / (life - onset)).powi(2) } else { 0.0 };
            let wear = spec.wear_gain * age;
            let fault = spec.fault_gain * damage;
            let sigma = spec.noise_level * (1.0 + damage);
            let samples = (0..spec.window_len)
                .map(|j| {
                    let s = j as f64 / spec.sample_rate;
                    let mut v = spec.shaft_amplitude * (TAU * spec.shaft_hz * s + phases[0]).sin()
                        + wear * (TAU * spec.wear_hz * s + phases[1]).sin()
                        + fault * (TAU * spec.fault_hz * s + phases[2]).sin();
                    if sigma > 0.0 {
                        v += sigma * noise.sample(&mut rng);
                    }
                    v
                })
                .collect();
            RawWindow::new(samples, spec.sample_rate)
        })
        .collect::<Result<Vec<_>>>()?;
    Run::new(id, windows, times, total_runtime, failed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{build_spectrogram, segment_lengths, SignalConfig};

    fn small() -> SynthesisSpec {
        SynthesisSpec { runs: 4, windows_per_run: 12, window_len: 256, ..SynthesisSpec::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synthesize_runs(&small(), 7).unwrap();
        let b = synthesize_runs(&small(), 7).unwrap();
        assert_eq!(a, b);
        let c = synthesize_runs(&small(), 8).unwrap();
        assert_ne!(a, c);
        assert_eq!(a[0].id, "run-00");
    }

    #[test]
    fn rejects_invalid_spec() {
        for spec in [
            SynthesisSpec { runs: 0, ..small() },
            SynthesisSpec { windows_per_run: 1, ..small() },
            SynthesisSpec { sample_rate: 0.0, ..small() },
            SynthesisSpec { life_eta: -1.0, ..small() },
            SynthesisSpec { fault_hz: 1e6, ..small() },
        ] {
            assert!(synthesize_runs(&spec, 1).is_err());
        }
    }

    #[test]
    fn fault_band_grows_after_onset_without_noise() {
        let spec = SynthesisSpec { noise_level: 0.0, censor_time: None, windows_per_run: 30, ..small() };
        let cfg = SignalConfig::default();
        let lines = spec.window_len / 2 + 1;
        let fault_line = (spec.fault_hz * spec.window_len as f64 / spec.sample_rate).round() as usize;
        let mut start = 0;
        let bin = segment_lengths(lines, cfg.bin_count)
            .iter()
            .position(|&len| {
                start += len;
                fault_line < start
            })
            .unwrap();
        for run in synthesize_runs(&spec, 3).unwrap() {
            let spectra = build_spectrogram(&run, cfg).unwrap();
            let onset = spec.onset_fraction * run.total_runtime;
            let after: Vec<f64> = run
                .times
                .iter()
                .zip(&spectra)
                .filter(|(t, _)| **t > onset)
                .map(|(_, s)| s.values[bin])
                .collect();
            assert!(after.len() > 3);
            assert!(after.windows(2).all(|p| p[1] > p[0]), "{after:?}");
        }
    }

    #[test]
    fn life_law_monte_carlo() {
        let spec = SynthesisSpec {
            runs: 1000,
            windows_per_run: 2,
            window_len: 8,
            censor_time: None,
            ..SynthesisSpec::default()
        };
        let runs = synthesize_runs(&spec, 2024).unwrap();
        let failed_by_eta = runs.iter().filter(|r| r.total_runtime <= 100.0).count() as f64 / 1000.0;
        assert!((failed_by_eta - 0.632).abs() < 0.05, "{failed_by_eta}");
    }

    #[test]
    fn censoring_caps_runtime() {
        let spec = SynthesisSpec { runs: 200, windows_per_run: 2, window_len: 8, censor_time: Some(90.0), ..small() };
        let runs = synthesize_runs(&spec, 5).unwrap();
        assert!(runs.iter().any(|r| !r.failed));
        for r in &runs {
            assert!(r.total_runtime <= 90.0);
            if !r.failed {
                assert_eq!(r.total_runtime, 90.0);
            }
        }
    }
}
