//! Noise spectra from dynamical-decoupling decays, and power-law fits.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocols::PulseSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandTag {
    NearDc,
    SubMhzDd,
    MhzDq,
    GhzEpr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpectrumEstimate {
    /// Ascending filter centers ω₀/2π, Hz.
    pub frequencies: Vec<f64>,
    pub psd: Vec<f64>,
    /// One standard deviation; NaN where no coherence error was supplied.
    pub uncertainties: Vec<f64>,
    pub units: String,
    pub band_tag: BandTag,
    /// Input indices rejected because C was outside (0, 1].
    pub dropped: Vec<usize>,
}

/// One measured coherence value of a decoupling sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdPoint {
    pub sequence: PulseSequence,
    pub coherence: f64,
    pub coherence_error: Option<f64>,
}

/// Weight of the fundamental filter lobe: for a ±1 square wave the first
/// harmonic carries `8/π²` of the filter's power, so `χ ≈ S(ω₀)·8T/π²`.
pub const DELTA_FILTER_WEIGHT: f64 = 8.0 / (std::f64::consts::PI * std::f64::consts::PI);

/// Delta-function filter inversion `S(ω₀) = −ln C · π²/(8T)`, ω₀ = π/τ.
///
/// The PSD is in the angular convention of
/// [`crate::protocols::sequences::AngularPsd`], (rad/s)²·s.
pub fn invert_dd_spectrum(points: &[DdPoint]) -> Result<NoiseSpectrumEstimate> {
    let mut rows = Vec::with_capacity(points.len());
    let mut dropped = Vec::new();
    for (i, pt) in points.iter().enumerate() {
        pt.sequence.validate()?;
        if pt.sequence.n_pulses() == 0 || !(pt.sequence.total_time > 0.0) {
            return Err(Error::InvalidParameter(
                "spectrum inversion needs echo sequences with T > 0".into(),
            ));
        }
        if !(pt.coherence > 0.0 && pt.coherence <= 1.0) {
            dropped.push(i);
            continue;
        }
        let t = pt.sequence.total_time;
        let scale = 1.0 / (DELTA_FILTER_WEIGHT * t);
        let s = -pt.coherence.ln() * scale;
        let err = pt.coherence_error.map_or(f64::NAN, |e| scale * e / pt.coherence);
        let f = pt.sequence.center_frequency() / (2.0 * std::f64::consts::PI);
        rows.push((f, s.max(0.0), err));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(NoiseSpectrumEstimate {
        frequencies: rows.iter().map(|r| r.0).collect(),
        psd: rows.iter().map(|r| r.1).collect(),
        uncertainties: rows.iter().map(|r| r.2).collect(),
        units: "rad^2/s".into(),
        band_tag: BandTag::SubMhzDd,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// `y = amplitude · x^(−exponent)`.
    pub amplitude: f64,
    pub exponent: f64,
    /// Covariance of `(ln amplitude, exponent)`.
    pub covariance: [[f64; 2]; 2],
    pub amplitude_error: f64,
    pub exponent_error: f64,
}

/// Weighted least squares of `ln y = ln A − k ln x`.
///
/// With `sigma_y` the weights are `(y/σ_y)²` and the covariance is absolute;
/// without, unit weights are used and the covariance is scaled by the
/// residual variance.
pub fn fit_power_law(x: &[f64], y: &[f64], sigma_y: Option<&[f64]>) -> Result<PowerLawFit> {
    if x.len() != y.len() || sigma_y.is_some_and(|s| s.len() != x.len()) {
        return Err(Error::InvalidParameter(
            "x, y and sigma_y must have equal lengths".into(),
        ));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "power-law fit needs >= 3 points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("power-law data must be finite and > 0".into()));
    }
    let w: Vec<f64> = match sigma_y {
        Some(s) => {
            if s.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidParameter("sigma_y must be > 0".into()));
            }
            y.iter().zip(s).map(|(y, s)| (y / s).powi(2)).collect()
        }
        None => vec![1.0; x.len()],
    };
    let mut a = Matrix2::zeros();
    let mut b = Vector2::zeros();
    for ((xi, yi), wi) in x.iter().zip(y).zip(&w) {
        let row = Vector2::new(1.0, -xi.ln());
        a += row * row.transpose() * *wi;
        b += row * (wi * yi.ln());
    }
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::NonIdentifiable("all x values coincide; exponent undetermined".into()))?;
    let sol = inv * b;
    let mut cov = inv;
    if sigma_y.is_none() {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| (yi.ln() - sol[0] + sol[1] * xi.ln()).powi(2))
            .sum();
        cov *= rss / (x.len() - 2) as f64;
    }
    let amplitude = sol[0].exp();
    Ok(PowerLawFit {
        amplitude,
        exponent: sol[1],
        covariance: [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]],
        amplitude_error: amplitude * cov[(0, 0)].max(0.0).sqrt(),
        exponent_error: cov[(1, 1)].max(0.0).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::sequences::{dephasing, CoherenceOptions, PeakedPsd, WhitePsd};
    use crate::protocols::SequenceKind;

    fn sweep(psd: &dyn crate::protocols::AngularPsd, n: usize, taus: &[f64]) -> Vec<DdPoint> {
        taus.iter()
            .map(|&tau| {
                let seq = PulseSequence::with_spacing(SequenceKind::Xy8, n, tau).unwrap();
                let chi = dephasing(&seq, psd, &CoherenceOptions::default()).unwrap();
                DdPoint {
                    sequence: seq,
                    coherence: (-chi).exp(),
                    coherence_error: None,
                }
            })
            .collect()
    }

    #[test]
    fn white_noise_reconstructs_flat() {
        let s0 = 2e3;
        let taus: Vec<f64> = (0..12).map(|i| 1e-7 * 1.4f64.powi(i)).collect();
        let est = invert_dd_spectrum(&sweep(&WhitePsd(s0), 2, &taus)).unwrap();
        let max = est.psd.iter().cloned().fold(0.0, f64::max);
        let min = est.psd.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min - 1.0 < 0.15, "{min}..{max}");
        // Harmonics outside the fundamental lobe add a known excess of π²/8.
        for s in &est.psd {
            assert!(
                (s / (s0 * std::f64::consts::PI.powi(2) / 8.0) - 1.0).abs() < 0.02,
                "{s}"
            );
        }
        assert!(est.frequencies.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(est.band_tag, BandTag::SubMhzDd);
    }

    #[test]
    fn in_band_peak_recovered() {
        let center = 2.0 * std::f64::consts::PI * 1e6;
        let psd = PeakedPsd {
            peak: 1e3,
            center,
            hwhm: 0.15 * center,
        };
        let taus: Vec<f64> = (0..60).map(|i| 0.5 / 1e6 * 0.6 * 1.02f64.powi(i)).collect();
        let est = invert_dd_spectrum(&sweep(&psd, 4, &taus)).unwrap();
        let (i, top) = est
            .psd
            .iter()
            .cloned()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!((top / 1e3 - 1.0).abs() < 0.25, "{top}");
        // XY8-4: 32 pulses, filter half width ≈ ω₀/32.
        let f = est.frequencies[i];
        assert!((f / 1e6 - 1.0).abs() < 0.5 / 32.0 + 0.02, "{f}");
    }

    #[test]
    fn edge_coherences() {
        let seq = PulseSequence::xy8(1, 8e-6);
        let pts = [
            DdPoint {
                sequence: seq,
                coherence: 1.0,
                coherence_error: Some(0.01),
            },
            DdPoint {
                sequence: seq,
                coherence: 0.0,
                coherence_error: None,
            },
            DdPoint {
                sequence: seq,
                coherence: 1.2,
                coherence_error: None,
            },
        ];
        let est = invert_dd_spectrum(&pts).unwrap();
        assert_eq!(est.psd, vec![0.0]);
        assert_eq!(est.dropped, vec![1, 2]);
        assert!(est.uncertainties[0] > 0.0);
    }

    #[test]
    fn power_law_recovery() {
        let x: Vec<f64> = (1..10).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|x| 2.0 * x.powf(-0.8)).collect();
        let fit = fit_power_law(&x, &y, None).unwrap();
        assert!((fit.exponent - 0.8).abs() < 1e-12);
        assert!((fit.amplitude - 2.0).abs() < 1e-12);
        let flat = fit_power_law(&x, &vec![3.0; x.len()], None).unwrap();
        assert!(flat.exponent.abs() < 1e-12);
        assert!(fit_power_law(&x[..2], &y[..2], None).is_err());
        assert!(fit_power_law(&[1.0, -1.0, 2.0], &[1.0, 1.0, 1.0], None).is_err());
    }

    #[test]
    fn power_law_weights_give_absolute_errors() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|x: &f64| x.powf(-1.0)).collect();
        let s: Vec<f64> = y.iter().map(|v| 0.01 * v).collect();
        let fit = fit_power_law(&x, &y, Some(&s)).unwrap();
        // Relative 1% errors → σ(ln y) = 0.01; σ_k = 0.01/√Σ(ln x − mean)².
        let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let m = lx.iter().sum::<f64>() / 4.0;
        let sxx: f64 = lx.iter().map(|v| (v - m).powi(2)).sum();
        assert!((fit.exponent_error - 0.01 / sxx.sqrt()).abs() < 1e-12);
    }
}
