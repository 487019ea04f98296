//! Three-level population rate equations and relaxometry signals.
//!
//! Populations are ordered `(+1, 0, −1)`. Signals follow the usual
//! double-quantum relaxometry convention:
//!
//! | signal | init | readout |
//! |--------|------|---------|
//! | S1     | 0    | 0       |
//! | S2     | 0    | +1      |
//! | S3     | +1   | +1      |
//! | S4     | +1   | −1      |
//!
//! With symmetric single-quantum rates Ω, `S1 − S2 = e^{−3Ωt}` and
//! `S3 − S4 = e^{−(Ω+2γ)t}`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateMatrix {
    /// |0⟩ ↔ |+1⟩, 1/s.
    pub omega_plus: f64,
    /// |0⟩ ↔ |−1⟩, 1/s.
    pub omega_minus: f64,
    /// |+1⟩ ↔ |−1⟩, 1/s.
    pub gamma_dq: f64,
}

impl RateMatrix {
    pub fn symmetric(omega: f64, gamma_dq: f64) -> Self {
        Self {
            omega_plus: omega,
            omega_minus: omega,
            gamma_dq,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.omega_plus, self.omega_minus, self.gamma_dq];
        if all.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "rates must be finite and >= 0, got {all:?}"
            )));
        }
        Ok(())
    }

    /// Generator Γ with `ρ̇ = Γρ`; columns sum to zero.
    pub fn generator(&self) -> Matrix3<f64> {
        let (op, om, g) = (self.omega_plus, self.omega_minus, self.gamma_dq);
        Matrix3::new(-op - g, op, g, op, -op - om, om, g, om, -om - g)
    }
}

/// Precomputed eigendecomposition for repeated propagation.
#[derive(Debug, Clone)]
pub struct Propagator {
    eig: SymmetricEigen<f64, nalgebra::U3>,
}

impl Propagator {
    pub fn new(rates: &RateMatrix) -> Result<Self> {
        rates.validate()?;
        Ok(Self {
            eig: SymmetricEigen::new(rates.generator()),
        })
    }

    /// Decay rates of the three modes (≥ 0), ascending.
    pub fn mode_rates(&self) -> [f64; 3] {
        let mut r: Vec<f64> = self.eig.eigenvalues.iter().map(|v| -v).collect();
        r.sort_by(f64::total_cmp);
        [r[0].max(0.0), r[1], r[2]]
    }

    pub fn propagate(&self, rho0: &Vector3<f64>, t: f64) -> Vector3<f64> {
        let v = &self.eig.eigenvectors;
        let coeffs = v.transpose() * rho0;
        let scaled = Vector3::from_iterator(
            coeffs
                .iter()
                .zip(self.eig.eigenvalues.iter())
                .map(|(c, l)| c * (l * t).exp()),
        );
        v * scaled
    }
}

pub fn t1_propagate(rates: &RateMatrix, rho0: [f64; 3], times: &[f64]) -> Result<Vec<[f64; 3]>> {
    if rho0.iter().any(|p| !(*p >= 0.0)) || (rho0.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "initial populations must be >= 0 and sum to 1, got {rho0:?}"
        )));
    }
    let prop = Propagator::new(rates)?;
    let r0 = Vector3::from(rho0);
    Ok(times
        .iter()
        .map(|&t| {
            let r = prop.propagate(&r0, t);
            [r[0], r[1], r[2]]
        })
        .collect())
}

/// Index of a spin projection in the population vector.
pub const fn level(m: i8) -> usize {
    match m {
        1 => 0,
        0 => 1,
        _ => 2,
    }
}

/// `(init, readout)` projections of S1..S4.
pub const SIGNAL_SCHEME: [(i8, i8); 4] = [(0, 0), (0, 1), (1, 1), (1, -1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationDataset {
    pub wait_times: Vec<f64>,
    pub signals: [Vec<f64>; 4],
    pub field_bz: f64,
    pub readout_sigma: f64,
}

impl RelaxationDataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.wait_times.len();
        if self.signals.iter().any(|s| s.len() != n) {
            return Err(Error::InvalidParameter(
                "all four signals must match wait_times in length".into(),
            ));
        }
        if self.wait_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("wait_times must be strictly ascending".into()));
        }
        if self
            .wait_times
            .iter()
            .chain(self.signals.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter("relaxation data must be finite".into()));
        }
        Ok(())
    }

    /// Pointwise difference `S_a − S_b` (1-based signal numbers).
    pub fn difference(&self, a: usize, b: usize) -> Vec<f64> {
        self.signals[a - 1]
            .iter()
            .zip(&self.signals[b - 1])
            .map(|(x, y)| x - y)
            .collect()
    }
}

/// Noiseless S1..S4 at each wait time.
pub fn signal_curves(rates: &RateMatrix, times: &[f64]) -> Result<[Vec<f64>; 4]> {
    let prop = Propagator::new(rates)?;
    let mut out: [Vec<f64>; 4] = Default::default();
    for (k, &(init, read)) in SIGNAL_SCHEME.iter().enumerate() {
        let mut r0 = Vector3::zeros();
        r0[level(init)] = 1.0;
        out[k] = times.iter().map(|&t| prop.propagate(&r0, t)[level(read)]).collect();
    }
    Ok(out)
}

/// S1..S4 with optional Gaussian readout noise of standard deviation
/// `readout_sigma`.
pub fn relaxometry_signals(
    rates: &RateMatrix,
    times: &[f64],
    field_bz: f64,
    readout_sigma: f64,
    rng_seed: u64,
) -> Result<RelaxationDataset> {
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("wait times must be strictly ascending".into()));
    }
    if !(readout_sigma >= 0.0) {
        return Err(Error::InvalidParameter("readout sigma must be >= 0".into()));
    }
    let mut signals = signal_curves(rates, times)?;
    if readout_sigma > 0.0 {
        let normal = Normal::new(0.0, readout_sigma).expect("valid sigma");
        for (k, s) in signals.iter_mut().enumerate() {
            let mut rng = crate::seed::rng(crate::seed::substream(rng_seed, "readout", k as u64));
            for v in s.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok(RelaxationDataset {
        wait_times: times.to_vec(),
        signals,
        field_bz,
        readout_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<f64> {
        (0..30).map(|i| i as f64 * 1e-4).collect()
    }

    #[test]
    fn symmetric_mode_rates() {
        let (o, g) = (500.0, 1200.0);
        let r = Propagator::new(&RateMatrix::symmetric(o, g)).unwrap().mode_rates();
        assert!(r[0].abs() < 1e-9);
        let mut expect = [3.0 * o, o + 2.0 * g];
        expect.sort_by(f64::total_cmp);
        assert!((r[1] - expect[0]).abs() < 1e-9 * expect[0]);
        assert!((r[2] - expect[1]).abs() < 1e-9 * expect[1]);
    }

    #[test]
    fn populations_conserved_and_bounded() {
        let rates = RateMatrix {
            omega_plus: 300.0,
            omega_minus: 900.0,
            gamma_dq: 50.0,
        };
        for p in t1_propagate(&rates, [0.2, 0.5, 0.3], &grid()).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(p.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        }
        let late = t1_propagate(&rates, [1.0, 0.0, 0.0], &[1.0]).unwrap()[0];
        assert!(late.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-10));
    }

    #[test]
    fn zero_rates_freeze_populations() {
        let p = t1_propagate(&RateMatrix::symmetric(0.0, 0.0), [0.1, 0.6, 0.3], &grid()).unwrap();
        assert!(p
            .iter()
            .all(|x| (x[0] - 0.1).abs() < 1e-15 && (x[1] - 0.6).abs() < 1e-15));
    }

    #[test]
    fn invalid_inputs() {
        assert!(t1_propagate(&RateMatrix::symmetric(-1.0, 0.0), [1.0, 0.0, 0.0], &[0.0]).is_err());
        assert!(t1_propagate(&RateMatrix::symmetric(1.0, 0.0), [0.5, 0.0, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn signal_differences_match_closed_forms() {
        let (o, g) = (500.0, 1200.0);
        let data = relaxometry_signals(&RateMatrix::symmetric(o, g), &grid(), 0.0, 0.0, 0).unwrap();
        let dq = data.difference(3, 4);
        let sq = data.difference(1, 2);
        let mixed = data.difference(1, 3);
        for (i, t) in data.wait_times.iter().enumerate() {
            assert!((dq[i] - (-(o + 2.0 * g) * t).exp()).abs() < 1e-12);
            assert!((sq[i] - (-3.0 * o * t).exp()).abs() < 1e-12);
            let two_mode = 0.5 * ((-3.0 * o * t).exp() - (-(o + 2.0 * g) * t).exp());
            assert!((mixed[i] - two_mode).abs() < 1e-12);
        }
    }

    #[test]
    fn readout_noise_is_seeded() {
        let r = RateMatrix::symmetric(500.0, 1200.0);
        let a = relaxometry_signals(&r, &grid(), 0.0, 0.01, 7).unwrap();
        let b = relaxometry_signals(&r, &grid(), 0.0, 0.01, 7).unwrap();
        assert_eq!(a, b);
        let clean = relaxometry_signals(&r, &grid(), 0.0, 0.0, 7).unwrap();
        let dev: f64 = a.signals[0]
            .iter()
            .zip(&clean.signals[0])
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / 30.0;
        assert!(dev.sqrt() > 0.005 && dev.sqrt() < 0.02);
    }
}
