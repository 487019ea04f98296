//! Constrained multi-Gaussian fit of a field-scanned relaxation spectrum:
//! three equal Gaussians at `c − δ, c, c + δ`, an independent central
//! Gaussian at `c`, and a constant baseline.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::lm::{self, LmOptions, Problem};
use crate::numerics::{gaussian, median};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EprFit {
    /// `[c − δ, c, c + δ]`, G.
    pub positions: [f64; 3],
    pub position_errors: [f64; 3],
    /// Shared width (σ) of the triplet, G.
    pub width: f64,
    pub triplet_amplitude: f64,
    pub central_amplitude: f64,
    pub central_width: f64,
    pub baseline: f64,
    pub reduced_chi_squared: f64,
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum EprOutcome {
    Resonance(EprFit),
    NoResonance { snr: f64 },
}

const MIN_SNR: f64 = 3.0;

/// Parameter vector: `[c, δ, A₃, w₃, A_c, w_c, baseline]`.
fn model(p: &[f64], b: f64) -> f64 {
    let (c, d, a3, w3, ac, wc, base) = (p[0], p[1], p[2], p[3], p[4], p[5], p[6]);
    base + a3 * (gaussian(b, c - d, w3) + gaussian(b, c, w3) + gaussian(b, c + d, w3)) + ac * gaussian(b, c, wc)
}

struct Triplet<'a> {
    b: &'a [f64],
    y: &'a [f64],
    span: f64,
    /// Widths below half the field step are not resolved by the data.
    min_width: f64,
}

impl Problem for Triplet<'_> {
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.b.len(),
            self.b.iter().zip(self.y).map(|(&b, &y)| model(p.as_slice(), b) - y),
        )
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        lm::finite_difference_jacobian(|q| self.residuals(q), p)
    }

    fn project(&self, p: &mut DVector<f64>) {
        p[1] = p[1].abs().max(1e-6 * self.span);
        p[3] = p[3].abs().clamp(self.min_width, self.span);
        p[5] = p[5].abs().clamp(self.min_width, self.span);
    }
}

/// Robust white-noise level from first differences.
fn noise_level(y: &[f64]) -> f64 {
    let d: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    median(&d) / (0.674_489_75 * std::f64::consts::SQRT_2)
}

/// Best linear `(A₃, A_c, baseline)` and SSE for fixed nonlinear parameters.
fn linear_amplitudes(b: &[f64], y: &[f64], c: f64, d: f64, w3: f64, wc: f64) -> Option<([f64; 3], f64)> {
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    let rows: Vec<Vector3<f64>> = b
        .iter()
        .map(|&x| {
            Vector3::new(
                gaussian(x, c - d, w3) + gaussian(x, c, w3) + gaussian(x, c + d, w3),
                gaussian(x, c, wc),
                1.0,
            )
        })
        .collect();
    for (r, &yi) in rows.iter().zip(y) {
        ata += r * r.transpose();
        aty += r * yi;
    }
    let sol = ata.try_inverse()? * aty;
    let sse = rows.iter().zip(y).map(|(r, yi)| (r.dot(&sol) - yi).powi(2)).sum();
    Some(([sol[0], sol[1], sol[2]], sse))
}

pub fn fit_epr_spectrum(fields: &[f64], gamma: &[f64]) -> Result<EprOutcome> {
    if fields.len() != gamma.len() {
        return Err(Error::InvalidParameter("fields and rates differ in length".into()));
    }
    if fields.len() < 20 {
        return Err(Error::InsufficientData(format!(
            "EPR fit needs >= 20 field points, got {}",
            fields.len()
        )));
    }
    if fields.windows(2).any(|w| !(w[1] > w[0])) || gamma.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidParameter(
            "fields must ascend strictly and rates be finite".into(),
        ));
    }
    let base0 = median(gamma);
    let noise = noise_level(gamma);
    // Peak height from a 5-point running mean, so isolated noise spikes do
    // not pass as resonances.
    let smooth: Vec<f64> = (0..gamma.len())
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 2).min(gamma.len() - 1);
            gamma[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let (imax, peak) = smooth
        .iter()
        .map(|g| g - base0)
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty");
    let scale = gamma.iter().map(|g| g.abs()).fold(0.0, f64::max).max(1e-300);
    let snr = if noise > 0.0 { peak / noise } else { f64::INFINITY };
    if peak <= 1e-9 * scale || snr < MIN_SNR {
        return Ok(EprOutcome::NoResonance {
            snr: if peak > 0.0 { snr } else { 0.0 },
        });
    }

    let span = fields[fields.len() - 1] - fields[0];
    let step = span / (fields.len() - 1) as f64;
    // Candidate centers: the strongest local maxima.
    let mut maxima: Vec<usize> = (1..gamma.len() - 1)
        .filter(|&i| gamma[i] >= gamma[i - 1] && gamma[i] >= gamma[i + 1])
        .collect();
    maxima.sort_by(|&a, &b| gamma[b].total_cmp(&gamma[a]));
    maxima.truncate(3);
    if maxima.is_empty() {
        maxima.push(imax);
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for &ic in &maxima {
        let c = fields[ic];
        let mut d = 2.0 * step;
        while d < 0.45 * span {
            let mut w = step;
            while w < 0.25 * d.max(4.0 * step) {
                if let Some((amp, sse)) = linear_amplitudes(fields, gamma, c, d, w, w) {
                    if best.as_ref().is_none_or(|(s, _)| sse < *s) {
                        best = Some((sse, vec![c, d, amp[0], w, amp[1], w, amp[2]]));
                    }
                }
                w *= 1.3;
            }
            d += step;
        }
    }
    let (_, init) = best.ok_or_else(|| Error::Fit("no usable initialization for the EPR model".into()))?;
    let rep = lm::minimize(
        &Triplet {
            b: fields,
            y: gamma,
            span,
            min_width: 0.5 * step,
        },
        DVector::from_vec(init),
        LmOptions::default(),
    )?;
    let p = rep.params.as_slice().to_vec();
    let chi2 = rep.reduced_chi_squared();
    let cov = rep.covariance() * if chi2.is_finite() { chi2 } else { 0.0 };
    let var_c = cov[(0, 0)].max(0.0);
    let var_d = cov[(1, 1)].max(0.0);
    let cross = cov[(0, 1)];
    let edge = |sign: f64| (var_c + var_d + 2.0 * sign * cross).max(0.0).sqrt();
    Ok(EprOutcome::Resonance(EprFit {
        positions: [p[0] - p[1], p[0], p[0] + p[1]],
        position_errors: [edge(-1.0), var_c.sqrt(), edge(1.0)],
        width: p[3],
        triplet_amplitude: p[2],
        central_amplitude: p[4],
        central_width: p[5],
        baseline: p[6],
        reduced_chi_squared: chi2,
        snr,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn grid() -> Vec<f64> {
        (0..=240).map(|i| 215.0 + 0.25 * i as f64).collect()
    }

    fn synth(c: f64, d: f64, noise: f64, seed: u64) -> Vec<f64> {
        let mut rng = crate::seed::rng(seed);
        grid()
            .iter()
            .map(|&b| model(&[c, d, 300.0, 1.2, 500.0, 1.0, 1500.0], b) + noise * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    #[test]
    fn recovers_triplet_positions() {
        let y = synth(242.6, 12.5, 0.0, 0);
        let EprOutcome::Resonance(fit) = fit_epr_spectrum(&grid(), &y).unwrap() else {
            panic!("expected a resonance");
        };
        for (got, want) in fit.positions.iter().zip([230.1, 242.6, 255.1]) {
            assert!((got - want).abs() < 1e-4, "{got}");
        }
        assert!((fit.baseline - 1500.0).abs() < 1e-3);
    }

    #[test]
    fn paper_shaped_positions_with_noise() {
        // Asymmetric truth: the symmetric triplet must land within the errors.
        let y: Vec<f64> = {
            let mut rng = crate::seed::rng(5);
            grid()
                .iter()
                .map(|&b| {
                    1500.0
                        + 300.0 * (gaussian(b, 229.7, 1.5) + gaussian(b, 242.3, 1.5) + gaussian(b, 255.9, 1.5))
                        + 400.0 * gaussian(b, 242.3, 1.0)
                        + 20.0 * rng.sample::<f64, _>(StandardNormal)
                })
                .collect()
        };
        let EprOutcome::Resonance(fit) = fit_epr_spectrum(&grid(), &y).unwrap() else {
            panic!("expected a resonance");
        };
        for (i, want) in [229.7, 242.3, 255.9].iter().enumerate() {
            assert!((fit.positions[i] - want).abs() < 0.8, "{:?}", fit.positions);
        }
    }

    #[test]
    fn baseline_shift_only_moves_baseline() {
        let y = synth(242.6, 12.5, 5.0, 3);
        let shifted: Vec<f64> = y.iter().map(|v| v + 250.0).collect();
        let (EprOutcome::Resonance(a), EprOutcome::Resonance(b)) = (
            fit_epr_spectrum(&grid(), &y).unwrap(),
            fit_epr_spectrum(&grid(), &shifted).unwrap(),
        ) else {
            panic!("expected resonances");
        };
        for i in 0..3 {
            assert!((a.positions[i] - b.positions[i]).abs() < 1e-6);
        }
        assert!((b.baseline - a.baseline - 250.0).abs() < 1e-5);
    }

    #[test]
    fn flat_and_noise_only_curves_have_no_resonance() {
        let flat = vec![1500.0; grid().len()];
        assert!(matches!(
            fit_epr_spectrum(&grid(), &flat).unwrap(),
            EprOutcome::NoResonance { .. }
        ));
        let mut rng = crate::seed::rng(1);
        let noisy: Vec<f64> = grid()
            .iter()
            .map(|_| 1500.0 + rng.sample::<f64, _>(StandardNormal))
            .collect();
        assert!(matches!(
            fit_epr_spectrum(&grid(), &noisy).unwrap(),
            EprOutcome::NoResonance { .. }
        ));
        assert!(fit_epr_spectrum(&grid()[..10], &flat[..10]).is_err());
    }
}
