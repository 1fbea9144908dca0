//! Fourier-domain test for "only noise remains in this residual segment".
//!
//! A segment of `K` i.i.d. unit-variance complex Gaussian samples has unit
//! variance in every bin of its unitary DFT, so each squared bin magnitude is
//! Exp(1). The maximum over `K` bins stays below `tau` with probability
//! `(1 - exp(-tau))^K`; setting that to `1 - P_fa` gives the threshold.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// `tau = -ln(1 - (1 - P_fa)^(1/K))`.
pub fn noise_floor_threshold(segment_len: usize, false_alarm_rate: f64) -> Result<f64> {
    if segment_len == 0 {
        return Err(Error::domain("segment length must be at least 1"));
    }
    if !(false_alarm_rate > 0.0 && false_alarm_rate < 1.0) {
        return Err(Error::domain(format!(
            "false alarm rate {false_alarm_rate} not in (0, 1)"
        )));
    }
    let log_keep = (-false_alarm_rate).ln_1p() / segment_len as f64;
    let tau = -(-log_keep.exp_m1()).ln();
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::domain(format!(
            "degenerate threshold {tau} for P_fa = {false_alarm_rate}"
        )));
    }
    Ok(tau)
}

/// One-shot form of [`NoiseTest::is_noise`]; plans a fresh FFT.
pub fn residual_is_noise(segment: &[Complex64], threshold: f64) -> bool {
    if segment.is_empty() {
        return true;
    }
    NoiseTest::with_threshold(segment.len(), threshold).is_noise(segment)
}

/// Reusable stopping test for segments of a fixed length.
#[derive(Clone)]
pub struct NoiseTest {
    threshold: f64,
    len: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for NoiseTest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NoiseTest")
            .field("threshold", &self.threshold)
            .field("len", &self.len)
            .finish()
    }
}

impl NoiseTest {
    pub fn new(segment_len: usize, false_alarm_rate: f64) -> Result<Self> {
        let threshold = noise_floor_threshold(segment_len, false_alarm_rate)?;
        Ok(Self::with_threshold(segment_len, threshold))
    }

    pub fn with_threshold(segment_len: usize, threshold: f64) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(segment_len.max(1));
        NoiseTest {
            threshold,
            len: segment_len,
            fft,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Largest squared magnitude among the unitary DFT bins of `segment`.
    pub fn peak_bin_power(&self, segment: &[Complex64]) -> f64 {
        assert_eq!(segment.len(), self.len, "segment length mismatch");
        let mut buf = segment.to_vec();
        self.fft.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        buf.iter().map(|c| c.norm_sqr() * scale).fold(0.0, f64::max)
    }

    /// True when every bin stays below the threshold.
    pub fn is_noise(&self, segment: &[Complex64]) -> bool {
        self.peak_bin_power(segment) < self.threshold
    }
}
