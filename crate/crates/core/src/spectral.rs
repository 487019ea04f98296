//! Welch-averaged one-sided periodograms.

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::error::{Error, Result};

/// Streaming Welch estimator with a Hann window and per-segment mean removal.
/// Segments are pushed one at a time so that long records never need to be
/// held in memory.
pub struct Welch {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    window_power: f64,
    sample_rate: f64,
    accum: Vec<f64>,
    segments: usize,
    buf: Vec<Complex<f64>>,
}

impl Welch {
    pub fn new(segment_len: usize, sample_rate: f64) -> Result<Self> {
        if segment_len < 8 || !(sample_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Welch needs segment_len >= 8 and sample_rate > 0 (got {segment_len}, {sample_rate})"
            )));
        }
        let window: Vec<f64> = (0..segment_len)
            .map(|i| {
                let x = std::f64::consts::PI * i as f64 / segment_len as f64;
                x.sin().powi(2)
            })
            .collect();
        let window_power = window.iter().map(|w| w * w).sum();
        Ok(Self {
            fft: FftPlanner::new().plan_fft_forward(segment_len),
            window,
            window_power,
            sample_rate,
            accum: vec![0.0; segment_len / 2 + 1],
            segments: 0,
            buf: vec![Complex::default(); segment_len],
        })
    }

    pub fn segment_len(&self) -> usize {
        self.window.len()
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn push_segment(&mut self, samples: &[f64]) {
        assert_eq!(samples.len(), self.window.len(), "segment length mismatch");
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        for ((b, &x), &w) in self.buf.iter_mut().zip(samples).zip(&self.window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        self.fft.process(&mut self.buf);
        for (a, b) in self.accum.iter_mut().zip(&self.buf) {
            *a += b.norm_sqr();
        }
        self.segments += 1;
    }

    /// `(frequencies Hz, one-sided PSD in units²/Hz)`, excluding DC.
    pub fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.window.len();
        let norm = 1.0 / (self.sample_rate * self.window_power * self.segments.max(1) as f64);
        let last = n / 2;
        let mut freqs = Vec::with_capacity(last);
        let mut psd = Vec::with_capacity(last);
        for k in 1..=last {
            let scale = if k == last && n.is_multiple_of(2) { 1.0 } else { 2.0 };
            freqs.push(k as f64 * self.sample_rate / n as f64);
            psd.push(scale * self.accum[k] * norm);
        }
        (freqs, psd)
    }
}

/// Welch PSD of a full record with non-overlapping segments.
pub fn welch_psd(samples: &[f64], segment_len: usize, sample_rate: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut w = Welch::new(segment_len, sample_rate)?;
    if samples.len() < segment_len {
        return Err(Error::InsufficientData(format!(
            "record of {} samples is shorter than one segment ({segment_len})",
            samples.len()
        )));
    }
    for chunk in samples.chunks_exact(segment_len) {
        w.push_segment(chunk);
    }
    Ok(w.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn white_noise_level() {
        let mut rng = crate::seed::rng(1);
        let fs = 1000.0;
        let x: Vec<f64> = (0..1 << 18).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (f, p) = welch_psd(&x, 1024, fs).unwrap();
        assert_eq!(f.len(), 512);
        // Unit-variance white noise: one-sided level 2/fs.
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        assert!((mean * fs / 2.0 - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn sinusoid_power_lands_in_its_bin() {
        let fs = 256.0;
        let n = 256;
        let x: Vec<f64> = (0..n * 16)
            .map(|i| (2.0 * std::f64::consts::PI * 32.0 * i as f64 / fs).sin())
            .collect();
        let (f, p) = welch_psd(&x, n, fs).unwrap();
        let df = f[1] - f[0];
        let total: f64 = p.iter().sum::<f64>() * df;
        assert!((total - 0.5).abs() < 1e-9, "{total}");
        let peak = p
            .iter()
            .cloned()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert_eq!(f[peak], 32.0);
    }

    #[test]
    fn short_record_is_rejected() {
        assert!(welch_psd(&[0.0; 10], 16, 1.0).is_err());
    }
}
