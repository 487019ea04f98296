//! Joint fit of the four relaxometry signals to the three-level rate model.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::fit_exponential;
use crate::numerics::lm::{self, LmOptions, Problem};
use crate::protocols::relax::{level, Propagator, RateMatrix, RelaxationDataset, SIGNAL_SCHEME};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rates: RateMatrix,
    /// Standard errors of `(Ω₊, Ω₋, γ)`; Ω₊ and Ω₋ coincide in symmetric mode.
    pub rate_errors: [f64; 3],
    /// Covariance of the fitted rate parameters (`[Ω, γ]` in symmetric mode).
    pub covariance: Vec<Vec<f64>>,
    pub amplitudes: [f64; 4],
    pub offsets: [f64; 4],
    pub reduced_chi_squared: f64,
    /// Rates are zero or indistinguishable from zero, so relative errors are
    /// unbounded.
    pub unbounded_relative_covariance: bool,
    pub symmetric: bool,
}

struct Joint<'a> {
    data: &'a RelaxationDataset,
    symmetric: bool,
    sigma: f64,
}

impl Joint<'_> {
    fn n_rates(&self) -> usize {
        if self.symmetric {
            2
        } else {
            3
        }
    }

    /// Rates enter as magnitudes so finite differences may straddle zero.
    fn rates(&self, p: &DVector<f64>) -> RateMatrix {
        if self.symmetric {
            RateMatrix::symmetric(p[0].abs(), p[1].abs())
        } else {
            RateMatrix {
                omega_plus: p[0].abs(),
                omega_minus: p[1].abs(),
                gamma_dq: p[2].abs(),
            }
        }
    }
}

impl Problem for Joint<'_> {
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let nr = self.n_rates();
        let prop = Propagator::new(&self.rates(p)).expect("projected rates are valid");
        let n = self.data.wait_times.len();
        let mut r = DVector::zeros(4 * n);
        for (k, &(init, read)) in SIGNAL_SCHEME.iter().enumerate() {
            let mut r0 = Vector3::zeros();
            r0[level(init)] = 1.0;
            let (a, b) = (p[nr + k], p[nr + 4 + k]);
            for (i, &t) in self.data.wait_times.iter().enumerate() {
                let pop = prop.propagate(&r0, t)[level(read)];
                r[k * n + i] = (a * (pop - 1.0 / 3.0) + b - self.data.signals[k][i]) / self.sigma;
            }
        }
        r
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        lm::finite_difference_jacobian(|q| self.residuals(q), p)
    }

    fn project(&self, p: &mut DVector<f64>) {
        for i in 0..self.n_rates() {
            p[i] = p[i].abs();
        }
    }
}

fn is_flat(y: &[f64], sigma: f64) -> bool {
    let k = (y.len() / 5).max(1);
    let head = y[..k].iter().sum::<f64>() / k as f64;
    let tail = y[y.len() - k..].iter().sum::<f64>() / k as f64;
    (head - tail).abs() <= (3.0 * sigma * (2.0 / k as f64).sqrt()).max(1e-9)
}

/// Fit S1..S4 with shared rates and per-curve `a·(P(t) − 1/3) + b`.
pub fn extract_rates(data: &RelaxationDataset, symmetric: bool) -> Result<RateFit> {
    data.validate()?;
    let n = data.wait_times.len();
    let nr = if symmetric { 2 } else { 3 };
    if n < 5 || 4 * n <= nr + 8 {
        return Err(Error::InsufficientData(format!(
            "{n} wait times cannot constrain the rate model"
        )));
    }
    let sq = data.difference(1, 2);
    let dq = data.difference(3, 4);
    let noise = data.readout_sigma;
    if is_flat(&sq, noise) && is_flat(&dq, noise) {
        let mean = |s: &Vec<f64>| s.iter().sum::<f64>() / n as f64;
        return Ok(RateFit {
            rates: RateMatrix::symmetric(0.0, 0.0),
            rate_errors: [f64::INFINITY; 3],
            covariance: vec![vec![f64::INFINITY; nr]; nr],
            amplitudes: [f64::NAN; 4],
            offsets: [
                mean(&data.signals[0]),
                mean(&data.signals[1]),
                mean(&data.signals[2]),
                mean(&data.signals[3]),
            ],
            reduced_chi_squared: f64::NAN,
            unbounded_relative_covariance: true,
            symmetric,
        });
    }

    // Initial rates from the two single-exponential differences.
    let (_, k_sq, _) = fit_exponential(&data.wait_times, &sq)?;
    let (_, k_dq, _) = fit_exponential(&data.wait_times, &dq)?;
    let omega0 = (k_sq / 3.0).abs().max(1e-9);
    let gamma0 = ((k_dq - omega0) / 2.0).abs().max(1e-3 * omega0);
    let mut init = if symmetric {
        vec![omega0, gamma0]
    } else {
        vec![omega0, omega0, gamma0]
    };
    init.extend([1.0; 4]);
    init.extend([1.0 / 3.0; 4]);

    let problem = Joint {
        data,
        symmetric,
        sigma: if noise > 0.0 { noise } else { 1.0 },
    };
    let rep = lm::minimize(&problem, DVector::from_vec(init), LmOptions::default())
        .map_err(|e| Error::NonIdentifiable(format!("rate fit failed: {e}")))?;
    let mut cov = rep.covariance();
    let chi2 = rep.reduced_chi_squared();
    if noise <= 0.0 && chi2.is_finite() {
        cov *= chi2;
    }
    let p = &rep.params;
    let rates = problem.rates(p);
    let se: Vec<f64> = (0..nr).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let rate_errors = if symmetric {
        [se[0], se[0], se[1]]
    } else {
        [se[0], se[1], se[2]]
    };
    if rate_errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonIdentifiable(format!(
            "rate covariance is singular (rates {rates:?}); curves do not constrain all rates"
        )));
    }
    let unbounded = (0..nr).any(|i| p[i] <= 2.0 * se[i] && p[i] < 1e-6 * p.rows(0, nr).amax().max(1e-300));
    Ok(RateFit {
        rates,
        rate_errors,
        covariance: (0..nr).map(|i| (0..nr).map(|j| cov[(i, j)]).collect()).collect(),
        amplitudes: [p[nr], p[nr + 1], p[nr + 2], p[nr + 3]],
        offsets: [p[nr + 4], p[nr + 5], p[nr + 6], p[nr + 7]],
        reduced_chi_squared: chi2,
        unbounded_relative_covariance: unbounded,
        symmetric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::relaxometry_signals;

    fn times() -> Vec<f64> {
        (0..30).map(|i| i as f64 * 5e-5).collect()
    }

    #[test]
    fn noiseless_recovery_general_model() {
        let truth = RateMatrix::symmetric(500.0, 1200.0);
        let data = relaxometry_signals(&truth, &times(), 0.0, 0.0, 0).unwrap();
        let fit = extract_rates(&data, false).unwrap();
        assert!((fit.rates.omega_plus / 500.0 - 1.0).abs() < 1e-4, "{:?}", fit.rates);
        assert!((fit.rates.omega_minus / 500.0 - 1.0).abs() < 1e-4);
        assert!((fit.rates.gamma_dq / 1200.0 - 1.0).abs() < 1e-4);
        assert!(!fit.unbounded_relative_covariance);
    }

    #[test]
    fn noisy_recovery_symmetric_model() {
        let truth = RateMatrix::symmetric(500.0, 1200.0);
        let t: Vec<f64> = (0..60).map(|i| i as f64 * 5e-5).collect();
        let data = relaxometry_signals(&truth, &t, 0.0, 0.01, 4).unwrap();
        let fit = extract_rates(&data, true).unwrap();
        assert!((fit.rates.omega_plus / 500.0 - 1.0).abs() < 0.05, "{:?}", fit.rates);
        assert!((fit.rates.gamma_dq / 1200.0 - 1.0).abs() < 0.05);
        assert!(fit.rate_errors[0] > 0.0);
    }

    #[test]
    fn no_dq_channel_gives_omega_from_dq_difference() {
        let truth = RateMatrix::symmetric(800.0, 0.0);
        let data = relaxometry_signals(&truth, &times(), 0.0, 0.0, 0).unwrap();
        let (_, k, _) = fit_exponential(&data.wait_times, &data.difference(3, 4)).unwrap();
        assert!((k / 800.0 - 1.0).abs() < 1e-8);
        let fit = extract_rates(&data, true).unwrap();
        assert!(fit.rates.gamma_dq < 1.0, "{:?}", fit.rates);
    }

    #[test]
    fn zero_rates_flag_unbounded_covariance() {
        let data = relaxometry_signals(&RateMatrix::symmetric(0.0, 0.0), &times(), 0.0, 0.0, 0).unwrap();
        let fit = extract_rates(&data, false).unwrap();
        assert_eq!(fit.rates, RateMatrix::symmetric(0.0, 0.0));
        assert!(fit.unbounded_relative_covariance);
    }

    #[test]
    fn too_short_is_an_error() {
        let data = relaxometry_signals(&RateMatrix::symmetric(1.0, 1.0), &times()[..3], 0.0, 0.0, 0).unwrap();
        assert!(extract_rates(&data, true).is_err());
    }
}
