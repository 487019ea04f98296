//! Charge-trap localization from Stark splittings.
//!
//! A point charge `q` at distance `r` shifts the transverse zero-field term
//! by `d⊥·E·sinθ`, with `E = k q / (ε_r r²)` and θ the angle from the sensor
//! axis. The longitudinal coefficient is neglected. Solving for `r` gives
//! `r = √(d⊥ k q sinθ / (ε_r Δf))`.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::quantile_sorted;
use crate::physics::{COULOMB_V_NM, STARK_HZ_TO_MHZ, V_PER_NM_TO_V_PER_CM};
use crate::seed::{self, substream};
use crate::spin_model::SensorParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationAssumptions {
    pub charge: i32,
    pub epsilon_r: f64,
    pub draws: usize,
}

impl Default for LocalizationAssumptions {
    fn default() -> Self {
        Self {
            charge: 1,
            epsilon_r: crate::physics::DEFAULT_EPSILON_R,
            draws: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapLocalization {
    /// Candidate trap positions relative to the sensor, lab frame, nm.
    pub samples: Vec<[f64; 3]>,
    /// Central 95% of the sampled distances, nm.
    pub distance_interval_95: (f64, f64),
    /// Distance for a trap perpendicular to the axis at the nominal splitting, nm.
    pub on_axis_distance: f64,
    pub assumed_charge: i32,
    pub assumed_epsilon: f64,
    /// The splitting is consistent with zero at 95%: no upper bound exists.
    pub unbounded: bool,
}

/// Distance (nm) at which a perpendicular trap produces `splitting` MHz.
pub fn perpendicular_distance(p: &SensorParams, splitting: f64, charge: i32, epsilon_r: f64) -> f64 {
    let mhz_per_v_per_nm = p.d_perp * STARK_HZ_TO_MHZ * V_PER_NM_TO_V_PER_CM;
    (mhz_per_v_per_nm * COULOMB_V_NM * charge.unsigned_abs() as f64 / (epsilon_r * splitting)).sqrt()
}

/// Monte Carlo over the splitting uncertainty and an isotropic trap direction.
pub fn localize_trap(
    splitting: f64,
    splitting_sigma: f64,
    p: &SensorParams,
    assumptions: &LocalizationAssumptions,
    rng_seed: u64,
) -> Result<TrapLocalization> {
    p.validate()?;
    if !(splitting > 0.0) || !(splitting_sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "splitting must be > 0 with sigma >= 0, got {splitting} ± {splitting_sigma}"
        )));
    }
    if assumptions.charge == 0 || !(assumptions.epsilon_r > 1.0) || assumptions.draws < 40 {
        return Err(Error::InvalidParameter(
            "need nonzero charge, epsilon_r > 1 and >= 40 draws".into(),
        ));
    }
    if !(p.d_perp > 0.0) {
        return Err(Error::InvalidParameter(
            "transverse Stark coefficient must be > 0".into(),
        ));
    }
    let unbounded = splitting - 1.96 * splitting_sigma <= 0.0;
    let axis = Vector3::from(p.axis);
    let draw = Normal::new(splitting, splitting_sigma.max(1e-300)).expect("valid normal");
    let (q, eps) = (assumptions.charge, assumptions.epsilon_r);

    let chunk = 1024;
    let samples: Vec<[f64; 3]> = (0..assumptions.draws.div_ceil(chunk))
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = seed::rng(substream(rng_seed, "localize", c as u64));
            let count = chunk.min(assumptions.draws - c * chunk);
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let df = if splitting_sigma > 0.0 {
                    draw.sample(&mut rng)
                } else {
                    splitting
                };
                let dir = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                )
                .normalize();
                let sin_theta = dir.cross(&axis).norm();
                if df <= 0.0 || sin_theta < 1e-9 {
                    // No finite distance for this draw; covered by the unbounded flag.
                    continue;
                }
                let r = perpendicular_distance(p, df, q, eps) * sin_theta.sqrt();
                let v = dir * r;
                out.push([v.x, v.y, v.z]);
            }
            out
        })
        .collect();

    let mut dist: Vec<f64> = samples.iter().map(|v| Vector3::from(*v).norm()).collect();
    dist.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&dist, 0.025);
    let hi = if unbounded {
        f64::INFINITY
    } else {
        quantile_sorted(&dist, 0.975)
    };
    Ok(TrapLocalization {
        samples,
        distance_interval_95: (lo, hi),
        on_axis_distance: perpendicular_distance(p, splitting, q, eps),
        assumed_charge: q,
        assumed_epsilon: eps,
        unbounded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_distances() {
        let p = SensorParams::default();
        assert!((perpendicular_distance(&p, 3.0, 1, 9.7) - 4.0103).abs() < 1e-3);
        assert!((perpendicular_distance(&p, 0.48, 1, 9.7) - 10.0).abs() < 0.03);
    }

    #[test]
    fn three_mhz_interval_stays_below_ten_nm() {
        let p = SensorParams::default();
        let loc = localize_trap(3.0, 0.3, &p, &LocalizationAssumptions::default(), 1).unwrap();
        assert!((loc.on_axis_distance - 4.0).abs() < 0.2);
        assert!(loc.distance_interval_95.0 < loc.distance_interval_95.1);
        assert!(loc.distance_interval_95.1 < 10.0, "{:?}", loc.distance_interval_95);
        assert!(!loc.unbounded);
        assert_eq!(loc.samples.len(), 20_000);
    }

    #[test]
    fn distances_scale_with_root_d_perp() {
        let p = SensorParams::default();
        let p2 = SensorParams {
            d_perp: 2.0 * p.d_perp,
            ..p
        };
        let a = localize_trap(3.0, 0.3, &p, &LocalizationAssumptions::default(), 9).unwrap();
        let b = localize_trap(3.0, 0.3, &p2, &LocalizationAssumptions::default(), 9).unwrap();
        let r = std::f64::consts::SQRT_2;
        assert!((b.on_axis_distance / a.on_axis_distance - r).abs() < 1e-12);
        assert!((b.distance_interval_95.1 / a.distance_interval_95.1 - r).abs() < 1e-9);
    }

    #[test]
    fn splitting_consistent_with_zero_is_unbounded() {
        let p = SensorParams::default();
        let loc = localize_trap(0.2, 0.2, &p, &LocalizationAssumptions::default(), 2).unwrap();
        assert!(loc.unbounded);
        assert!(loc.distance_interval_95.1.is_infinite());
    }
}
