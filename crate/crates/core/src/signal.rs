//! Vibration window to binned spectrum: linear detrend, Kaiser taper,
//! one-sided FFT magnitude, then the maximum magnitude of each of
//! `bin_count` contiguous frequency segments.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dataset::Run;
use crate::{Error, Result};

pub const DEFAULT_BIN_COUNT: usize = 20;
pub const DEFAULT_KAISER_SHAPE: f64 = 14.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawWindow {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl RawWindow {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "a window needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sample rate must be > 0, got {sample_rate}"
            )));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Window length in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedSpectrum {
    pub values: Vec<f64>,
}

impl BinnedSpectrum {
    pub fn bin_count(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    pub bin_count: usize,
    pub kaiser_shape: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self { bin_count: DEFAULT_BIN_COUNT, kaiser_shape: DEFAULT_KAISER_SHAPE }
    }
}

/// Removes the least-squares straight line from the window.
pub fn detrend_linear(w: &RawWindow) -> Result<RawWindow> {
    Ok(RawWindow { samples: detrend_samples(&w.samples)?, sample_rate: w.sample_rate })
}

pub fn detrend_samples(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("detrend needs at least 2 samples, got {n}")));
    }
    // Center the abscissa so slope and intercept decouple.
    let mid = (n - 1) as f64 / 2.0;
    let mean = x.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let u = i as f64 - mid;
        sxy += u * (v - mean);
        sxx += u * u;
    }
    let slope = sxy / sxx;
    Ok(x.iter()
        .enumerate()
        .map(|(i, &v)| v - mean - slope * (i as f64 - mid))
        .collect())
}

/// Modified Bessel function of the first kind, order zero, by power series.
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        k += 1.0;
    }
    sum
}

/// Symmetric Kaiser window of length `n`.
pub fn kaiser_window(n: usize, shape: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("kaiser window length must be >= 1".into()));
    }
    if !(shape.is_finite() && shape >= 0.0) {
        return Err(Error::InvalidParameter(format!("kaiser shape must be >= 0, got {shape}")));
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let denom = bessel_i0(shape);
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for k in 0..half {
        let r = 2.0 * k as f64 / (n - 1) as f64 - 1.0;
        let v = bessel_i0(shape * (1.0 - r * r).max(0.0).sqrt()) / denom;
        w[k] = v;
        w[n - 1 - k] = v;
    }
    if n % 2 == 1 {
        w[n / 2] = 1.0;
    }
    Ok(w)
}

/// Magnitudes of the one-sided DFT, length `n/2 + 1`.
pub fn fft_magnitude(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::InvalidParameter("cannot transform an empty window".into()));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(x.len());
    Ok(magnitude_with(&*fft, x))
}

fn magnitude_with(fft: &dyn Fft<f64>, x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf[..x.len() / 2 + 1].iter().map(|c| c.norm()).collect()
}

/// Segment lengths for splitting `len` values into `bins` parts, remainder to the front.
pub fn segment_lengths(len: usize, bins: usize) -> Vec<usize> {
    let base = len / bins;
    let rem = len % bins;
    (0..bins).map(|i| base + usize::from(i < rem)).collect()
}

pub fn bin_spectrum(spectrum: &[f64], bin_count: usize) -> Result<BinnedSpectrum> {
    if bin_count == 0 || bin_count > spectrum.len() {
        return Err(Error::InvalidParameter(format!(
            "bin count {bin_count} invalid for a spectrum of length {}",
            spectrum.len()
        )));
    }
    let mut values = Vec::with_capacity(bin_count);
    let mut start = 0;
    for len in segment_lengths(spectrum.len(), bin_count) {
        let seg = &spectrum[start..start + len];
        values.push(seg.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        start += len;
    }
    Ok(BinnedSpectrum { values })
}

/// Reusable detrend → taper → FFT → bin chain for windows of one length.
pub struct SpectralPipeline {
    config: SignalConfig,
    taper: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl SpectralPipeline {
    pub fn new(window_len: usize, config: SignalConfig) -> Result<Self> {
        if window_len < 2 {
            return Err(Error::InvalidParameter(format!(
                "window length must be >= 2, got {window_len}"
            )));
        }
        if config.bin_count == 0 || config.bin_count > window_len / 2 + 1 {
            return Err(Error::InvalidParameter(format!(
                "bin count {} exceeds the {} one-sided spectrum lines of a {window_len}-sample window",
                config.bin_count,
                window_len / 2 + 1
            )));
        }
        let taper = kaiser_window(window_len, config.kaiser_shape)?;
        let fft = FftPlanner::<f64>::new().plan_fft_forward(window_len);
        Ok(Self { config, taper, fft })
    }

    pub fn process(&self, w: &RawWindow) -> Result<BinnedSpectrum> {
        if w.len() != self.taper.len() {
            return Err(Error::DimensionMismatch { expected: self.taper.len(), actual: w.len() });
        }
        let mut x = detrend_samples(&w.samples)?;
        x.iter_mut().zip(&self.taper).for_each(|(v, t)| *v *= t);
        let spectrum = magnitude_with(&*self.fft, &x);
        bin_spectrum(&spectrum, self.config.bin_count)
    }
}

/// Binned spectrum of every window of `run`, in time order.
pub fn build_spectrogram(run: &Run, config: SignalConfig) -> Result<Vec<BinnedSpectrum>> {
    build_spectrogram_windows(&run.windows, config)
}

pub fn build_spectrogram_windows(
    windows: &[RawWindow],
    config: SignalConfig,
) -> Result<Vec<BinnedSpectrum>> {
    let first = windows
        .first()
        .ok_or_else(|| Error::InvalidParameter("run has no windows".into()))?;
    let pipeline = SpectralPipeline::new(first.len(), config)
        .map_err(|e| Error::Window { index: 0, source: Box::new(e) })?;
    windows
        .par_iter()
        .enumerate()
        .map(|(index, w)| {
            pipeline.process(w).map_err(|e| Error::Window { index, source: Box::new(e) })
        })
        .collect()
}
