//! Field-scanned relaxometry: cross-relaxation with bath spins enhances the
//! sensor's single-quantum rate whenever its lower branch matches a bath line.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_env::{dipolar_coupling_g, SpinBathSpec};
use crate::numerics::{fit_exponential, gaussian};
use crate::protocols::relax::{signal_curves, RateMatrix};
use crate::seed::substream;
use crate::spin_model::{bath_transitions, transition_set, FieldState, SensorParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EprScanConfig {
    /// Relaxometry wait times used to extract Γ_eff at each field, s.
    pub wait_times: Vec<f64>,
}

impl EprScanConfig {
    /// 30 wait times spanning 1.5 decay lengths of the unenhanced S1−S2 curve.
    pub fn for_base_rates(base: &RateMatrix) -> Self {
        let slowest = (base.omega_plus + base.omega_minus).max(1e-12) * 1.5;
        let t_max = 1.5 / slowest;
        Self {
            wait_times: (0..30).map(|i| t_max * i as f64 / 29.0).collect(),
        }
    }
}

/// Γ_eff(B) together with the underlying enhanced Ω₋(B).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EprScan {
    pub fields: Vec<f64>,
    /// Single-exponential decay rate of S1 − S2, 1/s.
    pub gamma_eff: Vec<f64>,
    pub omega_minus: Vec<f64>,
}

/// Peak cross-relaxation rate contributed by one bath line, 1/s:
/// `w·Σ (2π b)² / (√(2π)·2πσ)` with couplings `b` and Gaussian linewidth σ in Hz.
pub fn line_amplitude(p: &SensorParams, bath: &SpinBathSpec, rng_seed: u64) -> Result<f64> {
    bath.validate()?;
    let two_pi = 2.0 * std::f64::consts::PI;
    let sigma_ang = two_pi * bath.linewidth * 1e6;
    let norm = (two_pi).sqrt() * sigma_ang;
    let mut total = 0.0;
    for pos in bath.positions(rng_seed) {
        let b = two_pi * 1e6 * dipolar_coupling_g(pos, p.axis, bath.species.g_factor)?;
        total += b * b / norm;
    }
    Ok(bath.species.concentration_weight * total)
}

/// Sweep the axial field and report the effective relaxation rate.
pub fn epr_field_scan(
    p: &SensorParams,
    baths: &[SpinBathSpec],
    base: &RateMatrix,
    fields: &[f64],
    cfg: &EprScanConfig,
    rng_seed: u64,
) -> Result<EprScan> {
    p.validate()?;
    base.validate()?;
    if cfg.wait_times.len() < 3 {
        return Err(Error::InvalidParameter("EPR scan needs >= 3 wait times".into()));
    }
    let amplitudes = baths
        .iter()
        .enumerate()
        .map(|(i, b)| line_amplitude(p, b, substream(rng_seed, "bath", i as u64)))
        .collect::<Result<Vec<f64>>>()?;

    let rows = fields
        .par_iter()
        .map(|&bz| {
            let f_minus = transition_set(p, &FieldState::axial(p, bz))?.f_minus;
            let enhancement: f64 = baths
                .iter()
                .zip(&amplitudes)
                .map(|(b, a)| {
                    bath_transitions(&b.species, bz)
                        .iter()
                        .map(|&line| a * gaussian(f_minus, line, b.linewidth))
                        .sum::<f64>()
                })
                .sum();
            let rates = RateMatrix {
                omega_minus: base.omega_minus + enhancement,
                ..*base
            };
            let s = signal_curves(&rates, &cfg.wait_times)?;
            let diff: Vec<f64> = s[0].iter().zip(&s[1]).map(|(a, b)| a - b).collect();
            let (_, k, _) = fit_exponential(&cfg.wait_times, &diff)?;
            Ok((k, rates.omega_minus))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EprScan {
        fields: fields.to_vec(),
        gamma_eff: rows.iter().map(|r| r.0).collect(),
        omega_minus: rows.iter().map(|r| r.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_env::BathPlacement;
    use crate::spin_model::{resonance_fields, BathSpecies, DEFAULT_RESONANCE_WINDOW_G};

    fn base() -> RateMatrix {
        RateMatrix::symmetric(500.0, 1200.0)
    }

    fn grid() -> Vec<f64> {
        (0..=200).map(|i| 220.0 + 0.25 * i as f64).collect()
    }

    #[test]
    fn empty_bath_gives_flat_scan() {
        let p = SensorParams::default();
        let cfg = EprScanConfig::for_base_rates(&base());
        let scan = epr_field_scan(&p, &[], &base(), &grid(), &cfg, 1).unwrap();
        let first = scan.gamma_eff[0];
        assert!((first - 1500.0).abs() < 1e-6, "{first}");
        assert!(scan.gamma_eff.iter().all(|g| (g - first).abs() < 1e-9));
    }

    #[test]
    fn peaks_sit_at_resonance_fields() {
        let p = SensorParams::default();
        let bath = SpinBathSpec {
            species: BathSpecies::v2(70.0),
            placement: BathPlacement::Positions(vec![[10.0, 0.0, 0.0]]),
            linewidth: 0.5,
        };
        let amp = line_amplitude(&p, &bath, 0).unwrap();
        assert!(amp > 100.0 && amp < 1e5, "{amp}");
        let cfg = EprScanConfig::for_base_rates(&base());
        let fields = grid();
        let scan = epr_field_scan(&p, std::slice::from_ref(&bath), &base(), &fields, &cfg, 1).unwrap();
        let expected = resonance_fields(&p, &bath.species, DEFAULT_RESONANCE_WINDOW_G).unwrap();
        let peaks: Vec<f64> = (1..fields.len() - 1)
            .filter(|&i| {
                scan.omega_minus[i] > scan.omega_minus[i - 1]
                    && scan.omega_minus[i] >= scan.omega_minus[i + 1]
                    && scan.omega_minus[i] > base().omega_minus + 0.1 * amp
            })
            .map(|i| fields[i])
            .collect();
        assert_eq!(peaks.len(), 3, "{peaks:?}");
        for (got, want) in peaks.iter().zip(&expected) {
            assert!((got - want).abs() <= 0.25, "{got} vs {want}");
        }
        let top = scan.gamma_eff.iter().cloned().fold(0.0, f64::max);
        assert!(top > 1500.0 * 1.05);
    }
}
