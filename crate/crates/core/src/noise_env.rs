//! Ground-truth noise environment: charge traps switching as two-level
//! fluctuators, their Coulomb fields at the sensor, 1/f^α ensembles built from
//! many fluctuators, and the geometry of paramagnetic bath spins.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{dipolar_prefactor_mhz_nm3, gyro_for_g, COULOMB_V_NM, GYRO_MHZ_PER_G, V_PER_NM_TO_V_PER_CM};
use crate::seed;
use crate::spin_model::BathSpecies;

/// Closest approach for which the point-charge field is trusted, nm.
pub const NEAR_FIELD_LIMIT_NM: f64 = 0.2;

/// Closest approach for the point-dipole coupling, nm.
pub const DIPOLE_LIMIT_NM: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeTrap {
    /// Position relative to the sensor, nm.
    pub position: [f64; 3],
    /// Trapped charge in units of e.
    pub charge: i32,
    /// Empty → occupied rate, 1/s.
    pub rate_capture: f64,
    /// Occupied → empty rate, 1/s.
    pub rate_release: f64,
    pub initially_occupied: bool,
}

impl ChargeTrap {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_capture > 0.0 && self.rate_release > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "trap rates must be > 0 (capture {}, release {})",
                self.rate_capture, self.rate_release
            )));
        }
        if self.charge == 0 {
            return Err(Error::InvalidParameter("trap charge must be nonzero".into()));
        }
        if Vector3::from(self.position).norm() == 0.0 || !self.position.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "trap position must be finite and away from the sensor".into(),
            ));
        }
        Ok(())
    }

    /// Long-run probability of being occupied.
    pub fn stationary_occupancy(&self) -> f64 {
        self.rate_capture / (self.rate_capture + self.rate_release)
    }

    /// Correlation time τ_c = 1/(k_capture + k_release), s.
    pub fn correlation_time(&self) -> f64 {
        1.0 / (self.rate_capture + self.rate_release)
    }
}

/// Event-driven occupancy history of one trap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelegraphTrajectory {
    pub switch_times: Vec<f64>,
    pub initial_state: bool,
    pub duration: f64,
}

impl TelegraphTrajectory {
    pub fn constant(state: bool, duration: f64) -> Self {
        Self {
            switch_times: Vec::new(),
            initial_state: state,
            duration,
        }
    }

    pub fn state_at(&self, t: f64) -> bool {
        let flips = self.switch_times.partition_point(|&s| s <= t);
        self.initial_state ^ (flips % 2 == 1)
    }

    /// Time spent occupied within `[t0, t1]`.
    pub fn occupied_time(&self, t0: f64, t1: f64) -> f64 {
        let mut state = self.state_at(t0);
        let start = self.switch_times.partition_point(|&s| s <= t0);
        let mut last = t0;
        let mut total = 0.0;
        for &s in &self.switch_times[start..] {
            if s >= t1 {
                break;
            }
            if state {
                total += s - last;
            }
            state = !state;
            last = s;
        }
        if state {
            total += t1 - last;
        }
        total
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.occupied_time(0.0, self.duration) / self.duration
    }

    /// Switch times falling strictly inside `(t0, t1)`.
    pub fn switches_in(&self, t0: f64, t1: f64) -> &[f64] {
        let a = self.switch_times.partition_point(|&s| s <= t0);
        let b = self.switch_times.partition_point(|&s| s < t1);
        &self.switch_times[a..b.max(a)]
    }

    /// Point samples of the occupancy (0 or 1) at `t0 + i·dt`.
    pub fn sample_into(&self, t0: f64, dt: f64, out: &mut [f64]) {
        let mut idx = self.switch_times.partition_point(|&s| s <= t0);
        let mut state = self.initial_state ^ (idx % 2 == 1);
        for (i, v) in out.iter_mut().enumerate() {
            let t = t0 + dt * i as f64;
            while idx < self.switch_times.len() && self.switch_times[idx] <= t {
                state = !state;
                idx += 1;
            }
            *v = if state { 1.0 } else { 0.0 };
        }
    }
}

/// Exact event-driven simulation of a two-state Markov process.
pub fn simulate_switching<R: Rng>(
    rate_capture: f64,
    rate_release: f64,
    initial: bool,
    duration: f64,
    rng: &mut R,
) -> TelegraphTrajectory {
    let fill = Exp::new(rate_capture).expect("positive capture rate");
    let empty = Exp::new(rate_release).expect("positive release rate");
    let mut t = 0.0;
    let mut state = initial;
    let mut switch_times = Vec::new();
    loop {
        let dwell: f64 = if state { empty.sample(rng) } else { fill.sample(rng) };
        t += dwell;
        if t >= duration {
            break;
        }
        switch_times.push(t);
        state = !state;
    }
    TelegraphTrajectory {
        switch_times,
        initial_state: initial,
        duration,
    }
}

pub fn simulate_telegraph(trap: &ChargeTrap, duration: f64, rng_seed: u64) -> Result<TelegraphTrajectory> {
    trap.validate()?;
    if !(duration > 0.0) {
        return Err(Error::InvalidParameter(format!("duration must be > 0, got {duration}")));
    }
    let mut rng = seed::rng(rng_seed);
    Ok(simulate_switching(
        trap.rate_capture,
        trap.rate_release,
        trap.initially_occupied,
        duration,
        &mut rng,
    ))
}

/// One-sided Lorentzian spectrum of a random telegraph signal with jump
/// `amplitude` between its two levels.
///
/// `S(f) = 4 Δ² k₁k₂/(k₁+k₂)² · τ_c / (1 + (2π f τ_c)²)`, which integrates
/// over `f ≥ 0` to the stationary variance `Δ² k₁k₂/(k₁+k₂)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelegraphPsd {
    pub amplitude: f64,
    pub rate_up: f64,
    pub rate_down: f64,
}

impl TelegraphPsd {
    pub fn correlation_time(&self) -> f64 {
        1.0 / (self.rate_up + self.rate_down)
    }

    pub fn variance(&self) -> f64 {
        let s = self.rate_up + self.rate_down;
        self.amplitude * self.amplitude * self.rate_up * self.rate_down / (s * s)
    }

    /// Corner frequency 1/(2π τ_c), Hz.
    pub fn corner_hz(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.correlation_time())
    }

    pub fn eval(&self, f_hz: f64) -> f64 {
        let tc = self.correlation_time();
        let x = 2.0 * std::f64::consts::PI * f_hz * tc;
        4.0 * self.variance() * tc / (1.0 + x * x)
    }
}

pub fn telegraph_psd_analytic(trap: &ChargeTrap, amplitude_step: f64) -> TelegraphPsd {
    TelegraphPsd {
        amplitude: amplitude_step,
        rate_up: trap.rate_capture,
        rate_down: trap.rate_release,
    }
}

/// Electric field at the sensor (V/cm, lab frame) produced by the trap's
/// charge when occupied; zero when empty.
pub fn coulomb_field(trap: &ChargeTrap, occupied: bool, epsilon_r: f64) -> Result<[f64; 3]> {
    if !(epsilon_r > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon_r must be > 1, got {epsilon_r}"
        )));
    }
    let r = Vector3::from(trap.position);
    let dist = r.norm();
    if dist < NEAR_FIELD_LIMIT_NM {
        return Err(Error::ModelInvalid(format!(
            "trap at {dist} nm is inside the {NEAR_FIELD_LIMIT_NM} nm near-field limit"
        )));
    }
    if !occupied {
        return Ok([0.0; 3]);
    }
    // Field points from the charge towards the sensor for q > 0.
    let magnitude = COULOMB_V_NM * trap.charge as f64 / (epsilon_r * dist * dist) * V_PER_NM_TO_V_PER_CM;
    let e = -r / dist * magnitude;
    Ok([e.x, e.y, e.z])
}

/// A symmetric or asymmetric two-level fluctuator acting directly on a
/// transition frequency, with jump `amplitude` in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fluctuator {
    pub rate_up: f64,
    pub rate_down: f64,
    pub amplitude: f64,
}

impl Fluctuator {
    pub fn psd(&self) -> TelegraphPsd {
        TelegraphPsd {
            amplitude: self.amplitude,
            rate_up: self.rate_up,
            rate_down: self.rate_down,
        }
    }

    pub fn mean_occupancy(&self) -> f64 {
        self.rate_up / (self.rate_up + self.rate_down)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneOverFBath {
    pub alpha: f64,
    /// One-sided PSD at 1 MHz, MHz²/Hz.
    pub amplitude: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// `None` selects ten fluctuators per decade.
    pub n_fluctuators: Option<usize>,
}

impl OneOverFBath {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_min > 0.0 && self.f_max > self.f_min) {
            return Err(Error::InvalidParameter(format!(
                "1/f band must satisfy 0 < f_min < f_max, got [{}, {}]",
                self.f_min, self.f_max
            )));
        }
        if !(self.amplitude >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(
                "1/f amplitude must be >= 0 and alpha finite".into(),
            ));
        }
        if self.n_fluctuators == Some(0) {
            return Err(Error::InvalidParameter("need at least one fluctuator".into()));
        }
        Ok(())
    }

    pub fn decades(&self) -> f64 {
        (self.f_max / self.f_min).log10()
    }

    /// Target one-sided PSD, MHz²/Hz.
    pub fn target_psd(&self, f_hz: f64) -> f64 {
        self.amplitude * (1.0e6 / f_hz).powf(self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneOverFSynthesis {
    pub fluctuators: Vec<Fluctuator>,
    pub warning: Option<String>,
}

impl OneOverFSynthesis {
    /// Summed one-sided PSD of all fluctuators, MHz²/Hz.
    pub fn psd(&self, f_hz: f64) -> f64 {
        self.fluctuators.iter().map(|fl| fl.psd().eval(f_hz)).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let s = factor.sqrt();
        Self {
            fluctuators: self
                .fluctuators
                .iter()
                .map(|f| Fluctuator {
                    amplitude: f.amplitude * s,
                    ..*f
                })
                .collect(),
            warning: self.warning.clone(),
        }
    }
}

/// Build an ensemble of symmetric fluctuators whose summed Lorentzians follow
/// `amplitude·(1 MHz/f)^α` across the band.
///
/// Relaxation rates `k_up + k_down` are stratified log-uniformly over
/// `[2π f_min, 2π f_max]` (one seeded draw per log cell). Each fluctuator's
/// variance is weighted by `rate^(1−α)` and the ensemble is scaled to hit
/// the target at the band's geometric center.
pub fn synthesize_one_over_f(bath: &OneOverFBath, rng_seed: u64) -> Result<OneOverFSynthesis> {
    bath.validate()?;
    let decades = bath.decades();
    let default_n = (10.0 * decades).ceil().max(1.0) as usize;
    let n = bath.n_fluctuators.unwrap_or(default_n);
    let mut warnings = Vec::new();
    if decades < 1.0 {
        warnings.push(format!(
            "band spans only {decades:.2} decades; 1/f shape is not resolved"
        ));
    }
    if n < default_n {
        warnings.push(format!("{n} fluctuators is below 10 per decade ({default_n})"));
    }

    let two_pi = 2.0 * std::f64::consts::PI;
    let ln_lo = (two_pi * bath.f_min).ln();
    let ln_hi = (two_pi * bath.f_max).ln();
    let cell = (ln_hi - ln_lo) / n as f64;
    let mut rng = seed::rng(rng_seed);
    let mut rates = Vec::with_capacity(n);
    let mut variances = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = if n == 1 { 0.5 } else { rng.random() };
        let rate = (ln_lo + cell * (i as f64 + u)).exp();
        rates.push(rate);
        variances.push(rate.powf(1.0 - bath.alpha));
    }

    let unit = |f: f64| -> f64 {
        rates
            .iter()
            .zip(&variances)
            .map(|(&lam, &v)| {
                let x = two_pi * f / lam;
                4.0 * v / lam / (1.0 + x * x)
            })
            .sum()
    };
    let f_ref = (bath.f_min * bath.f_max).sqrt();
    let scale = bath.target_psd(f_ref) / unit(f_ref);

    let fluctuators = rates
        .iter()
        .zip(&variances)
        .map(|(&lam, &v)| Fluctuator {
            rate_up: 0.5 * lam,
            rate_down: 0.5 * lam,
            // Symmetric telegraph variance is Δ²/4.
            amplitude: 2.0 * (v * scale).sqrt(),
        })
        .collect();
    Ok(OneOverFSynthesis {
        fluctuators,
        warning: if warnings.is_empty() {
            None
        } else {
            Some(warnings.join("; "))
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BathPlacement {
    Positions(Vec<[f64; 3]>),
    /// Uniform density (1/nm³) inside a sphere of `radius` nm.
    Density {
        density: f64,
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinBathSpec {
    pub species: BathSpecies,
    pub placement: BathPlacement,
    /// Gaussian standard deviation of each bath line, MHz.
    pub linewidth: f64,
}

impl SpinBathSpec {
    pub fn validate(&self) -> Result<()> {
        self.species.validate()?;
        if !(self.linewidth > 0.0) {
            return Err(Error::InvalidParameter("bath linewidth must be > 0".into()));
        }
        match &self.placement {
            BathPlacement::Positions(p) if p.is_empty() => {
                Err(Error::InvalidParameter("spin bath needs at least one position".into()))
            }
            BathPlacement::Density { density, radius } if !(*density > 0.0 && *radius > DIPOLE_LIMIT_NM) => Err(
                Error::InvalidParameter("spin bath density and radius must be positive".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Bath spin positions; density placements are sampled deterministically
    /// from `rng_seed` with the expected count rounded to an integer.
    pub fn positions(&self, rng_seed: u64) -> Vec<[f64; 3]> {
        match &self.placement {
            BathPlacement::Positions(p) => p.clone(),
            BathPlacement::Density { density, radius } => {
                let volume = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
                let count = (density * volume).round() as usize;
                let mut rng = seed::rng(rng_seed);
                let mut out = Vec::with_capacity(count);
                while out.len() < count {
                    let v = Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ) * *radius;
                    let r = v.norm();
                    if r <= *radius && r >= DIPOLE_LIMIT_NM {
                        out.push([v.x, v.y, v.z]);
                    }
                }
                out
            }
        }
    }
}

/// Secular dipolar coupling magnitude (MHz) between the sensor and an
/// electron spin at `bath_position` (nm), both quantized along `axis`.
pub fn dipolar_coupling(bath_position: [f64; 3], axis: [f64; 3]) -> Result<f64> {
    dipolar_coupling_g(bath_position, axis, crate::physics::G_REFERENCE)
}

/// As [`dipolar_coupling`] for a bath spin with g-factor `g_bath`.
pub fn dipolar_coupling_g(bath_position: [f64; 3], axis: [f64; 3], g_bath: f64) -> Result<f64> {
    let r = Vector3::from(bath_position);
    let dist = r.norm();
    if dist < DIPOLE_LIMIT_NM {
        return Err(Error::InvalidParameter(format!(
            "bath spin at {dist} nm is closer than {DIPOLE_LIMIT_NM} nm"
        )));
    }
    let a = Vector3::from(axis).normalize();
    let cos = r.dot(&a) / dist;
    let scale = gyro_for_g(g_bath) / GYRO_MHZ_PER_G;
    Ok(dipolar_prefactor_mhz_nm3() * scale / dist.powi(3) * (1.0 - 3.0 * cos * cos).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quad::{integrate_breaks, QuadOptions};

    fn trap(kc: f64, kr: f64) -> ChargeTrap {
        ChargeTrap {
            position: [10.0, 0.0, 0.0],
            charge: 1,
            rate_capture: kc,
            rate_release: kr,
            initially_occupied: false,
        }
    }

    #[test]
    fn symmetric_trap_is_half_occupied() {
        let traj = simulate_telegraph(&trap(10.0, 10.0), 1000.0, 11).unwrap();
        let frac = traj.occupied_fraction();
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
        assert!(traj.switch_times.windows(2).all(|w| w[0] < w[1]));
        assert!(traj.switch_times.iter().all(|&t| t > 0.0 && t < 1000.0));
    }

    #[test]
    fn fast_release_keeps_trap_empty() {
        let traj = simulate_telegraph(&trap(1.0, 1e6), 100.0, 3).unwrap();
        assert!(traj.occupied_fraction() < 1e-4);
    }

    #[test]
    fn seed_fixes_trajectory() {
        let a = simulate_telegraph(&trap(3.0, 5.0), 50.0, 99).unwrap();
        let b = simulate_telegraph(&trap(3.0, 5.0), 50.0, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_telegraph(&trap(3.0, 5.0), 50.0, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn occupied_time_accounts_partial_windows() {
        let traj = TelegraphTrajectory {
            switch_times: vec![1.0, 3.0, 4.5],
            initial_state: false,
            duration: 6.0,
        };
        assert_eq!(traj.occupied_time(0.0, 6.0), 2.0 + 1.5);
        assert_eq!(traj.occupied_time(2.0, 4.0), 1.0);
        assert_eq!(traj.occupied_time(3.5, 4.0), 0.0);
        assert!(traj.state_at(1.0));
        assert!(!traj.state_at(0.999));
        assert_eq!(traj.switches_in(0.5, 3.0), &[1.0]);
        let mut s = [0.0; 6];
        traj.sample_into(0.0, 1.0, &mut s);
        assert_eq!(s, [0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn telegraph_psd_limits() {
        let k = 40.0;
        let d = 1.5;
        let s = telegraph_psd_analytic(&trap(k, k), d);
        assert!((s.eval(0.0) - d * d / (2.0 * k)).abs() < 1e-15);
        // 1/f² asymptote.
        let fc = s.corner_hz();
        let r = s.eval(1e3 * fc) / s.eval(2e3 * fc);
        assert!((r - 4.0).abs() < 1e-5);
    }

    #[test]
    fn telegraph_psd_integrates_to_variance() {
        let s = telegraph_psd_analytic(&trap(3.0, 17.0), 2.0);
        let fc = s.corner_hz();
        let top = 1e5 * fc;
        let breaks: Vec<f64> = std::iter::once(0.0)
            .chain((0..=60).map(|i| fc * 10f64.powf(-1.0 + i as f64 / 10.0)))
            .filter(|&f| f <= top)
            .collect();
        let body = integrate_breaks(|f| s.eval(f), &breaks, QuadOptions::default())
            .unwrap()
            .value;
        // ∫_F^∞ c/f² df = c/F with c = lim f²S(f).
        let tail = s.eval(top) * top;
        let total = body + tail;
        let var = 4.0 * 3.0 * 17.0 / 400.0;
        assert!((total - var).abs() / var < 1e-5, "{total} vs {var}");
        assert!((s.variance() - var).abs() < 1e-15);
    }

    #[test]
    fn coulomb_field_magnitude_and_sign() {
        let t = trap(1.0, 1.0);
        let e = coulomb_field(&t, true, 9.7).unwrap();
        let mag = Vector3::from(e).norm();
        assert!((mag - 1.4845e4).abs() / 1.4845e4 < 1e-3, "{mag}");
        // Positive charge at +x pushes the field towards −x at the origin.
        assert!(e[0] < 0.0);
        let neg = ChargeTrap { charge: -1, ..t };
        assert!(coulomb_field(&neg, true, 9.7).unwrap()[0] > 0.0);
        assert_eq!(coulomb_field(&t, false, 9.7).unwrap(), [0.0; 3]);
        let near = ChargeTrap {
            position: [0.1, 0.0, 0.0],
            ..t
        };
        assert!(matches!(coulomb_field(&near, true, 9.7), Err(Error::ModelInvalid(_))));
    }

    #[test]
    fn coulomb_field_decreases_with_distance() {
        let mut last = f64::INFINITY;
        for i in 1..50 {
            let t = ChargeTrap {
                position: [0.0, 0.3 * i as f64, 0.2],
                ..trap(1.0, 1.0)
            };
            let m = Vector3::from(coulomb_field(&t, true, 9.7).unwrap()).norm();
            assert!(m < last);
            last = m;
        }
    }

    #[test]
    fn one_over_f_tracks_target_over_central_decades() {
        let bath = OneOverFBath {
            alpha: 1.0,
            amplitude: 1e-8,
            f_min: 1e2,
            f_max: 1e6,
            n_fluctuators: Some(40),
        };
        let synth = synthesize_one_over_f(&bath, 5).unwrap();
        assert!(synth.warning.is_none());
        let mut worst = 0.0f64;
        for i in 0..=40 {
            let f = 1e3 * 10f64.powf(i as f64 / 20.0);
            let dev = (synth.psd(f) / bath.target_psd(f) - 1.0).abs();
            worst = worst.max(dev);
        }
        assert!(worst < 0.2, "max deviation {worst}");
    }

    #[test]
    fn one_over_f_supports_other_exponents() {
        for alpha in [0.5, 1.5] {
            let bath = OneOverFBath {
                alpha,
                amplitude: 1e-8,
                f_min: 1e1,
                f_max: 1e7,
                n_fluctuators: None,
            };
            let synth = synthesize_one_over_f(&bath, 2).unwrap();
            assert_eq!(synth.fluctuators.len(), 60);
            for i in 0..=20 {
                let f = 1e3 * 10f64.powf(i as f64 / 10.0);
                let dev = (synth.psd(f) / bath.target_psd(f) - 1.0).abs();
                assert!(dev < 0.2, "alpha {alpha} f {f}: {dev}");
            }
        }
    }

    #[test]
    fn single_fluctuator_is_a_lorentzian() {
        let bath = OneOverFBath {
            alpha: 2.0,
            amplitude: 1e-6,
            f_min: 1e3,
            f_max: 1e5,
            n_fluctuators: Some(1),
        };
        let synth = synthesize_one_over_f(&bath, 1).unwrap();
        assert!(synth.warning.is_some());
        assert_eq!(synth.fluctuators.len(), 1);
        let r = synth.psd(1e8) / synth.psd(2e8);
        assert!((r - 4.0).abs() < 1e-4);
    }

    #[test]
    fn narrow_band_warns() {
        let bath = OneOverFBath {
            alpha: 1.0,
            amplitude: 1e-6,
            f_min: 1e3,
            f_max: 5e3,
            n_fluctuators: None,
        };
        let synth = synthesize_one_over_f(&bath, 1).unwrap();
        assert!(synth.warning.unwrap().contains("decades"));
    }

    #[test]
    fn one_over_f_scales_linearly_and_reproducibly() {
        let bath = OneOverFBath {
            alpha: 1.0,
            amplitude: 1e-8,
            f_min: 1e2,
            f_max: 1e6,
            n_fluctuators: None,
        };
        let a = synthesize_one_over_f(&bath, 8).unwrap();
        let b = synthesize_one_over_f(
            &OneOverFBath {
                amplitude: 4e-8,
                ..bath
            },
            8,
        )
        .unwrap();
        for f in [1e2, 1e4, 3e5] {
            assert!((b.psd(f) / a.psd(f) - 4.0).abs() < 1e-12);
        }
        let again = synthesize_one_over_f(&bath, 8).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn dipolar_coupling_values() {
        let c = dipolar_coupling([5.0, 0.0, 0.0], [0.0, 0.0, 1.0]).unwrap();
        assert!((c - 0.4163).abs() < 1e-3, "{c}");
        let magic = 54.735_610_317_245_35f64.to_radians();
        let m = dipolar_coupling([5.0 * magic.sin(), 0.0, 5.0 * magic.cos()], [0.0, 0.0, 1.0]).unwrap();
        assert!(m < 1e-12);
        let far = dipolar_coupling([10.0, 0.0, 0.0], [0.0, 0.0, 1.0]).unwrap();
        assert!((c / far - 8.0).abs() < 1e-12);
        assert!(dipolar_coupling([0.3, 0.0, 0.0], [0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn density_placement_is_deterministic() {
        let spec = SpinBathSpec {
            species: BathSpecies::spin_half(2.0028),
            placement: BathPlacement::Density {
                density: 0.01,
                radius: 8.0,
            },
            linewidth: 1.0,
        };
        let a = spec.positions(4);
        assert_eq!(
            a.len(),
            (0.01 * 4.0 / 3.0 * std::f64::consts::PI * 512.0f64).round() as usize
        );
        assert_eq!(a, spec.positions(4));
        assert!(a.iter().all(|p| Vector3::from(*p).norm() <= 8.0));
    }
}
