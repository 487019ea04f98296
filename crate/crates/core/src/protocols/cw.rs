//! Continuous-wave ODMR spectra, time-resolved tracking under switching
//! charge traps, and two-point frequency tracking.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_env::{coulomb_field, simulate_switching, ChargeTrap, Fluctuator, TelegraphTrajectory};
use crate::numerics::lorentzian;
use crate::seed::{self, substream};
use crate::spin_model::{transition_set, FieldState, SensorParams};

/// Line shape and photon budget of a CW measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrConfig {
    /// Strictly ascending microwave frequencies, MHz.
    pub scan_frequencies: Vec<f64>,
    pub contrast: f64,
    /// Lorentzian FWHM, MHz.
    pub linewidth: f64,
    /// Off-resonant count rate, counts/s.
    pub base_rate: f64,
}

impl OdmrConfig {
    pub fn linear_scan(start: f64, stop: f64, points: usize, contrast: f64, linewidth: f64, base_rate: f64) -> Self {
        let step = (stop - start) / (points.max(2) - 1) as f64;
        Self {
            scan_frequencies: (0..points).map(|i| start + step * i as f64).collect(),
            contrast,
            linewidth,
            base_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scan_frequencies.len() < 2 || self.scan_frequencies.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "scan frequencies must be strictly ascending (>= 2 points)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.contrast) {
            return Err(Error::InvalidParameter(format!(
                "contrast must lie in [0, 1), got {}",
                self.contrast
            )));
        }
        if !(self.linewidth > 0.0 && self.base_rate > 0.0) {
            return Err(Error::InvalidParameter("linewidth and base rate must be > 0".into()));
        }
        Ok(())
    }

    /// Relative fluorescence `1 − Σ c·L(f; branch)`.
    pub fn relative_rate(&self, f: f64, branches: &[f64]) -> f64 {
        1.0 - branches
            .iter()
            .map(|&b| self.contrast * lorentzian(f, b, self.linewidth))
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrRecord {
    pub scan_frequencies: Vec<f64>,
    pub window_start: f64,
    pub window_end: f64,
    pub counts: Vec<u64>,
    pub contrast: f64,
    pub linewidth: f64,
    pub base_rate: f64,
}

impl OdmrRecord {
    /// Integration time per frequency bin, s.
    pub fn dwell(&self) -> f64 {
        (self.window_end - self.window_start) / self.scan_frequencies.len() as f64
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
    } else {
        0
    }
}

/// Resonances to draw dips for: both branches, or one when degenerate.
fn branches_for(p: &SensorParams, f: &FieldState) -> Result<Vec<f64>> {
    let ts = transition_set(p, f)?;
    Ok(if ts.degenerate {
        vec![ts.f_minus]
    } else {
        vec![ts.f_minus, ts.f_plus]
    })
}

fn sample_record<R: Rng>(cfg: &OdmrConfig, mixture: &[(f64, Vec<f64>)], window: (f64, f64), rng: &mut R) -> OdmrRecord {
    let dwell = (window.1 - window.0) / cfg.scan_frequencies.len() as f64;
    let counts = cfg
        .scan_frequencies
        .iter()
        .map(|&f| {
            let rel: f64 = mixture.iter().map(|(w, b)| w * cfg.relative_rate(f, b)).sum();
            poisson(cfg.base_rate * dwell * rel, rng)
        })
        .collect();
    OdmrRecord {
        scan_frequencies: cfg.scan_frequencies.clone(),
        window_start: window.0,
        window_end: window.1,
        counts,
        contrast: cfg.contrast,
        linewidth: cfg.linewidth,
        base_rate: cfg.base_rate,
    }
}

/// One CW spectrum at fixed fields, integrated for `integration_time` s.
pub fn cw_spectrum(
    p: &SensorParams,
    fields: &FieldState,
    cfg: &OdmrConfig,
    integration_time: f64,
    rng_seed: u64,
) -> Result<OdmrRecord> {
    cfg.validate()?;
    if !(integration_time > 0.0) {
        return Err(Error::InvalidParameter("integration time must be > 0".into()));
    }
    let branches = branches_for(p, fields)?;
    let mut rng = seed::rng(rng_seed);
    Ok(sample_record(
        cfg,
        &[(1.0, branches)],
        (0.0, integration_time),
        &mut rng,
    ))
}

/// Sources of spectral wandering seen by a tracked sensor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackEnvironment {
    /// Static axial field, G.
    pub bz: f64,
    pub epsilon_r: f64,
    pub traps: Vec<ChargeTrap>,
    /// Fluctuators shifting both branches directly (MHz jump, zero mean).
    pub fluctuators: Vec<Fluctuator>,
}

/// Fluctuators switching more than this many times per window are replaced
/// by their mean.
pub const FAST_SWITCHES_PER_WINDOW: f64 = 1e3;

impl TrackEnvironment {
    pub fn validate(&self) -> Result<()> {
        for t in &self.traps {
            t.validate()?;
        }
        for f in &self.fluctuators {
            if !(f.rate_up > 0.0 && f.rate_down > 0.0 && f.amplitude.is_finite()) {
                return Err(Error::InvalidParameter("fluctuator rates must be > 0".into()));
            }
        }
        if !(self.epsilon_r > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon_r must be > 1, got {}",
                self.epsilon_r
            )));
        }
        Ok(())
    }

    /// Branch frequencies for given trap occupancies and fluctuator states.
    pub fn branches(&self, p: &SensorParams, traps: &[bool], fluct: &[Option<bool>]) -> Result<Vec<f64>> {
        let mut e = [0.0; 3];
        for (t, &occ) in self.traps.iter().zip(traps) {
            let f = coulomb_field(t, occ, self.epsilon_r)?;
            for k in 0..3 {
                e[k] += f[k];
            }
        }
        let shift: f64 = self
            .fluctuators
            .iter()
            .zip(fluct)
            .map(|(f, s)| match s {
                Some(true) => f.amplitude * (1.0 - f.mean_occupancy()),
                Some(false) => -f.amplitude * f.mean_occupancy(),
                None => 0.0,
            })
            .sum();
        let fields = FieldState::axial(p, self.bz).with_electric(e);
        Ok(branches_for(p, &fields)?.into_iter().map(|b| b + shift).collect())
    }

    /// Reference branches: every trap empty, fluctuators at their mean.
    pub fn reference_branches(&self, p: &SensorParams) -> Result<Vec<f64>> {
        self.branches(p, &vec![false; self.traps.len()], &vec![None; self.fluctuators.len()])
    }
}

/// Ground-truth histories driving a tracking run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentHistory {
    pub traps: Vec<TelegraphTrajectory>,
    /// `None` for fluctuators averaged out as too fast.
    pub fluctuators: Vec<Option<TelegraphTrajectory>>,
}

impl EnvironmentHistory {
    pub fn simulate(env: &TrackEnvironment, total_time: f64, window_len: f64, rng_seed: u64) -> Self {
        let traps = env
            .traps
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let mut rng = seed::rng(substream(rng_seed, "trap", i as u64));
                simulate_switching(
                    t.rate_capture,
                    t.rate_release,
                    t.initially_occupied,
                    total_time,
                    &mut rng,
                )
            })
            .collect();
        let fluctuators = env
            .fluctuators
            .par_iter()
            .enumerate()
            .map(|(i, f)| {
                if (f.rate_up + f.rate_down) * window_len > FAST_SWITCHES_PER_WINDOW {
                    return None;
                }
                let mut rng = seed::rng(substream(rng_seed, "fluctuator", i as u64));
                let init = rng.random::<f64>() < f.mean_occupancy();
                Some(simulate_switching(f.rate_up, f.rate_down, init, total_time, &mut rng))
            })
            .collect();
        Self { traps, fluctuators }
    }

    fn all_trajectories(&self) -> impl Iterator<Item = &TelegraphTrajectory> {
        self.traps.iter().chain(self.fluctuators.iter().flatten())
    }

    /// Piecewise-constant environment inside `[t0, t1]` as
    /// `(weight, branches)` pairs, weights summing to 1.
    pub fn mixture(&self, env: &TrackEnvironment, p: &SensorParams, t0: f64, t1: f64) -> Result<Vec<(f64, Vec<f64>)>> {
        let mut cuts: Vec<f64> = self
            .all_trajectories()
            .flat_map(|t| t.switches_in(t0, t1).iter().copied())
            .collect();
        cuts.sort_by(f64::total_cmp);
        let mut edges = Vec::with_capacity(cuts.len() + 2);
        edges.push(t0);
        edges.extend(cuts);
        edges.push(t1);
        let span = t1 - t0;
        let mut out = Vec::with_capacity(edges.len() - 1);
        for w in edges.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            let mid = 0.5 * (w[0] + w[1]);
            let traps: Vec<bool> = self.traps.iter().map(|t| t.state_at(mid)).collect();
            let fl: Vec<Option<bool>> = self
                .fluctuators
                .iter()
                .map(|t| t.as_ref().map(|t| t.state_at(mid)))
                .collect();
            out.push(((w[1] - w[0]) / span, env.branches(p, &traps, &fl)?));
        }
        Ok(out)
    }

    /// Time-averaged shift of branch `index` relative to the reference.
    pub fn mean_shift(&self, env: &TrackEnvironment, p: &SensorParams, t0: f64, t1: f64, index: usize) -> Result<f64> {
        let reference = env.reference_branches(p)?[index];
        Ok(self
            .mixture(env, p, t0, t1)?
            .iter()
            .map(|(w, b)| w * (b[index] - reference))
            .sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRun {
    pub records: Vec<OdmrRecord>,
    pub history: EnvironmentHistory,
}

/// Consecutive CW spectra of length `window_len` covering `total_time`.
pub fn track_odmr(
    p: &SensorParams,
    env: &TrackEnvironment,
    cfg: &OdmrConfig,
    total_time: f64,
    window_len: f64,
    rng_seed: u64,
) -> Result<TrackRun> {
    cfg.validate()?;
    env.validate()?;
    p.validate()?;
    if !(window_len > 0.0 && total_time >= window_len) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < window_len <= total_time (got {window_len}, {total_time})"
        )));
    }
    let n = (total_time / window_len + 1e-9).floor() as usize;
    let history = EnvironmentHistory::simulate(env, total_time, window_len, substream(rng_seed, "environment", 0));
    let records = (0..n)
        .into_par_iter()
        .map(|w| {
            let t0 = w as f64 * window_len;
            let t1 = t0 + window_len;
            let mix = history.mixture(env, p, t0, t1)?;
            let mut rng = seed::rng(substream(rng_seed, "window", w as u64));
            Ok(sample_record(cfg, &mix, (t0, t1), &mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrackRun { records, history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPointTrace {
    /// Bin start times, s.
    pub times: Vec<f64>,
    /// Frequency shift estimates, MHz.
    pub delta_f: Vec<f64>,
    /// Time-averaged true shift of the probed branch per bin, MHz.
    pub true_shift: Vec<f64>,
    /// MHz per unit of normalized count imbalance.
    pub calibration_slope: f64,
    /// Imbalance at the calibration point.
    pub offset: f64,
    pub counts: Vec<[u64; 2]>,
}

/// Probe the dip at two frequencies on opposite slopes and convert the
/// normalized count imbalance into a frequency shift.
pub fn two_point_track(
    p: &SensorParams,
    env: &TrackEnvironment,
    cfg: &OdmrConfig,
    probes: (f64, f64),
    bin_time: f64,
    total_time: f64,
    rng_seed: u64,
) -> Result<TwoPointTrace> {
    env.validate()?;
    if !(bin_time > 0.0 && total_time >= bin_time) {
        return Err(Error::InvalidParameter("need 0 < bin_time <= total_time".into()));
    }
    if !(cfg.contrast > 0.0 && cfg.contrast < 1.0 && cfg.linewidth > 0.0 && cfg.base_rate > 0.0) {
        return Err(Error::InvalidParameter(
            "two-point tracking needs 0 < contrast < 1 and positive width/rate".into(),
        ));
    }
    let (f1, f2) = if probes.0 < probes.1 {
        probes
    } else {
        (probes.1, probes.0)
    };
    let reference = env.reference_branches(p)?;
    let mid = 0.5 * (f1 + f2);
    let index = (0..reference.len())
        .min_by(|&a, &b| (reference[a] - mid).abs().total_cmp(&(reference[b] - mid).abs()))
        .expect("at least one branch");
    let f0 = reference[index];
    let w = cfg.linewidth;
    let in_linear = |d: f64| (0.1 * w..=w).contains(&d);
    if !(f1 < f0 && f0 < f2 && in_linear(f0 - f1) && in_linear(f2 - f0)) {
        return Err(Error::Calibration(format!(
            "probes ({f1}, {f2}) MHz must straddle the dip at {f0:.4} MHz within 0.1–1.0 linewidth ({w} MHz)"
        )));
    }

    let imbalance = |shift: f64| {
        let mut b = reference.clone();
        b[index] += shift;
        let r1 = cfg.relative_rate(f1, &b);
        let r2 = cfg.relative_rate(f2, &b);
        (r1 - r2) / (r1 + r2)
    };
    let h = 1e-4 * w;
    let dr = (imbalance(h) - imbalance(-h)) / (2.0 * h);
    if !(dr.abs() > 0.0) {
        return Err(Error::Calibration(
            "zero imbalance slope at the calibration point".into(),
        ));
    }
    let slope = 1.0 / dr;
    let offset = imbalance(0.0);

    let n = (total_time / bin_time + 1e-9).floor() as usize;
    let history = EnvironmentHistory::simulate(env, total_time, bin_time, substream(rng_seed, "environment", 0));
    let dwell = 0.5 * bin_time;
    let rows = (0..n)
        .into_par_iter()
        .map(|k| {
            let t0 = k as f64 * bin_time;
            let t1 = t0 + bin_time;
            let mix = history.mixture(env, p, t0, t1)?;
            let mut rng = seed::rng(substream(rng_seed, "bin", k as u64));
            let mut counts = [0u64; 2];
            for (c, f) in counts.iter_mut().zip([f1, f2]) {
                let rel: f64 = mix.iter().map(|(wt, b)| wt * cfg.relative_rate(f, b)).sum();
                *c = poisson(cfg.base_rate * dwell * rel, &mut rng);
            }
            let total = (counts[0] + counts[1]) as f64;
            let r = if total > 0.0 {
                (counts[0] as f64 - counts[1] as f64) / total
            } else {
                offset
            };
            let truth: f64 = mix.iter().map(|(wt, b)| wt * (b[index] - f0)).sum();
            Ok((t0, (r - offset) * slope, truth, counts))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut trace = TwoPointTrace {
        times: Vec::with_capacity(n),
        delta_f: Vec::with_capacity(n),
        true_shift: Vec::with_capacity(n),
        calibration_slope: slope,
        offset,
        counts: Vec::with_capacity(n),
    };
    for (t, d, s, c) in rows {
        trace.times.push(t);
        trace.delta_f.push(d);
        trace.true_shift.push(s);
        trace.counts.push(c);
    }
    Ok(trace)
}
