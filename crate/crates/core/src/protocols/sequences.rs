//! Pulse sequences, their modulation functions and filter functions, and
//! Gaussian-phase coherence decay.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_env::{OneOverFSynthesis, TelegraphTrajectory};
use crate::numerics::quad::{integrate, integrate_breaks, QuadOptions};
use crate::numerics::roots::brent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Ramsey,
    Hahn,
    /// CPMG with `n` π pulses.
    Cpmg,
    /// XY8 repeated `n` times (8n π pulses).
    Xy8,
}

/// Ideal instantaneous-pulse sequence of total free-evolution time `total_time` (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub kind: SequenceKind,
    pub n: usize,
    pub total_time: f64,
}

impl PulseSequence {
    pub fn new(kind: SequenceKind, n: usize, total_time: f64) -> Result<Self> {
        let seq = Self { kind, n, total_time };
        seq.validate()?;
        Ok(seq)
    }

    pub fn ramsey(t: f64) -> Self {
        Self {
            kind: SequenceKind::Ramsey,
            n: 0,
            total_time: t,
        }
    }

    pub fn hahn(t: f64) -> Self {
        Self {
            kind: SequenceKind::Hahn,
            n: 1,
            total_time: t,
        }
    }

    pub fn cpmg(n: usize, t: f64) -> Self {
        Self {
            kind: SequenceKind::Cpmg,
            n,
            total_time: t,
        }
    }

    pub fn xy8(n: usize, t: f64) -> Self {
        Self {
            kind: SequenceKind::Xy8,
            n,
            total_time: t,
        }
    }

    /// Sequence of the same family with inter-pulse spacing `tau`.
    pub fn with_spacing(kind: SequenceKind, n: usize, tau: f64) -> Result<Self> {
        let mut seq = Self::new(kind, n, 1.0)?;
        seq.total_time = tau * seq.n_pulses().max(1) as f64;
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_time >= 0.0) || !self.total_time.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sequence time must be >= 0, got {}",
                self.total_time
            )));
        }
        let ok = match self.kind {
            SequenceKind::Ramsey => self.n == 0,
            SequenceKind::Hahn => self.n == 1,
            SequenceKind::Cpmg | SequenceKind::Xy8 => self.n >= 1,
        };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "{:?} cannot have n = {}",
                self.kind, self.n
            )));
        }
        Ok(())
    }

    pub fn n_pulses(&self) -> usize {
        match self.kind {
            SequenceKind::Ramsey => 0,
            SequenceKind::Hahn => 1,
            SequenceKind::Cpmg => self.n,
            SequenceKind::Xy8 => 8 * self.n,
        }
    }

    /// Inter-pulse spacing τ = T/N (T for Ramsey).
    pub fn spacing(&self) -> f64 {
        self.total_time / self.n_pulses().max(1) as f64
    }

    /// Filter center ω₀ = π/τ, rad/s.
    pub fn center_frequency(&self) -> f64 {
        std::f64::consts::PI / self.spacing()
    }

    pub fn with_total_time(&self, t: f64) -> Self {
        Self { total_time: t, ..*self }
    }

    pub fn modulation(&self) -> ModulationFunction {
        modulation_function(self)
    }
}

/// Piecewise ±1 sign of the accumulated phase, starting at +1.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationFunction {
    pub flip_times: Vec<f64>,
    pub total_time: f64,
}

impl ModulationFunction {
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.flip_times.partition_point(|&s| s <= t);
        if k % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `(start, end, sign)` for every constant-sign segment.
    pub fn segments(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.flip_times.len() + 1);
        let mut start = 0.0;
        let mut sign = 1.0;
        for &f in &self.flip_times {
            out.push((start, f, sign));
            start = f;
            sign = -sign;
        }
        out.push((start, self.total_time, sign));
        out
    }

    pub fn integral(&self) -> f64 {
        self.segments().iter().map(|(a, b, s)| s * (b - a)).sum()
    }

    /// `∫₀ᵀ f(t)·(x(t) − offset) dt` for a 0/1 telegraph occupancy `x`.
    pub fn integrate_telegraph(&self, traj: &TelegraphTrajectory, offset: f64) -> f64 {
        let mut total = 0.0;
        for (a, b, s) in self.segments() {
            total += s * (traj.occupied_time(a, b) - offset * (b - a));
        }
        total
    }
}

pub fn modulation_function(seq: &PulseSequence) -> ModulationFunction {
    let n = seq.n_pulses();
    let t = seq.total_time;
    ModulationFunction {
        flip_times: (1..=n).map(|k| (k as f64 - 0.5) * t / n as f64).collect(),
        total_time: t,
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `W(ω) = ∫₀ᵀ f(t) e^{iωt} dt`, summed in closed form per segment.
pub fn filter_amplitude(m: &ModulationFunction, omega: f64) -> Complex<f64> {
    m.segments()
        .iter()
        .map(|&(a, b, s)| {
            let len = b - a;
            Complex::from_polar(s * len * sinc(0.5 * omega * len), 0.5 * omega * (a + b))
        })
        .sum()
}

/// `|W(ω)|²` in s².
pub fn filter_weight(seq: &PulseSequence, omega: f64) -> f64 {
    filter_amplitude(&seq.modulation(), omega).norm_sqr()
}

/// Sum of squared jumps of `f` (including the switch-on/off at 0 and T),
/// giving the incoherent high-frequency asymptote `|W|² → J/ω²`.
fn jump_weight(m: &ModulationFunction) -> f64 {
    2.0 + 4.0 * m.flip_times.len() as f64
}

/// Angular-frequency noise PSD in (rad/s)²·s, normalized so that a white
/// level `S₀` dephases as `χ(T) = S₀·T`.
pub trait AngularPsd: Sync {
    fn eval(&self, omega: f64) -> f64;

    /// Characteristic angular frequencies worth placing quadrature breaks at.
    fn features(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl<F: Fn(f64) -> f64 + Sync> AngularPsd for F {
    fn eval(&self, omega: f64) -> f64 {
        self(omega)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhitePsd(pub f64);

impl AngularPsd for WhitePsd {
    fn eval(&self, _omega: f64) -> f64 {
        self.0
    }
}

/// `σ²τ_c/(1+ω²τ_c²)`: a telegraph fluctuator whose angular detuning has
/// variance `σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianPsd {
    pub variance: f64,
    pub tau_c: f64,
}

impl LorentzianPsd {
    /// Telegraph process with jump `amplitude_mhz` and the given rates.
    pub fn from_telegraph(amplitude_mhz: f64, rate_up: f64, rate_down: f64) -> Self {
        let d = 2.0 * std::f64::consts::PI * 1e6 * amplitude_mhz;
        let s = rate_up + rate_down;
        Self {
            variance: d * d * rate_up * rate_down / (s * s),
            tau_c: 1.0 / s,
        }
    }
}

impl AngularPsd for LorentzianPsd {
    fn eval(&self, omega: f64) -> f64 {
        let x = omega * self.tau_c;
        self.variance * self.tau_c / (1.0 + x * x)
    }

    fn features(&self) -> Vec<f64> {
        vec![0.1 / self.tau_c, 1.0 / self.tau_c, 10.0 / self.tau_c]
    }
}

/// Lorentzian peak of height `peak` at `center` rad/s with half width `hwhm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakedPsd {
    pub peak: f64,
    pub center: f64,
    pub hwhm: f64,
}

impl AngularPsd for PeakedPsd {
    fn eval(&self, omega: f64) -> f64 {
        let u = (omega - self.center) / self.hwhm;
        self.peak / (1.0 + u * u)
    }

    fn features(&self) -> Vec<f64> {
        [-3.0, -1.0, 0.0, 1.0, 3.0]
            .iter()
            .map(|k| self.center + k * self.hwhm)
            .filter(|&w| w > 0.0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LorentzianSum(pub Vec<LorentzianPsd>);

impl LorentzianSum {
    /// Angular PSD of a synthesized fluctuator ensemble acting on a
    /// frequency in MHz.
    pub fn from_synthesis(s: &OneOverFSynthesis) -> Self {
        Self(
            s.fluctuators
                .iter()
                .map(|f| LorentzianPsd::from_telegraph(f.amplitude, f.rate_up, f.rate_down))
                .collect(),
        )
    }
}

impl AngularPsd for LorentzianSum {
    fn eval(&self, omega: f64) -> f64 {
        self.0.iter().map(|l| l.eval(omega)).sum()
    }

    fn features(&self) -> Vec<f64> {
        self.0.iter().map(|l| 1.0 / l.tau_c).collect()
    }
}

/// Convert a one-sided PSD of a frequency in MHz²/Hz to the angular convention.
pub fn angular_from_one_sided_mhz(s_one_sided: f64) -> f64 {
    let a = 2.0 * std::f64::consts::PI * 1e6;
    a * a * s_one_sided / 4.0
}

#[derive(Debug, Clone, Copy)]
pub struct CoherenceOptions {
    pub rel_tol: f64,
    /// Direct integration runs to `cutoff_factor · π(N+1)/T`; beyond that the
    /// filter is replaced by its incoherent average.
    pub cutoff_factor: f64,
    pub max_intervals: usize,
}

impl Default for CoherenceOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            cutoff_factor: 400.0,
            max_intervals: 400_000,
        }
    }
}

/// Dephasing exponent `χ = (1/π)∫₀^∞ S(ω)|W(ω)|² dω`.
pub fn dephasing(seq: &PulseSequence, psd: &dyn AngularPsd, opts: &CoherenceOptions) -> Result<f64> {
    seq.validate()?;
    let t = seq.total_time;
    if t == 0.0 {
        return Ok(0.0);
    }
    let m = seq.modulation();
    let step = std::f64::consts::PI / t;
    let cutoff = opts.cutoff_factor * step * (seq.n_pulses() + 1) as f64;
    let panels = (cutoff / step).ceil() as usize;
    let mut breaks: Vec<f64> = (0..=panels).map(|k| k as f64 * step).collect();
    breaks.extend(psd.features().into_iter().filter(|&w| w > 0.0 && w < cutoff));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * cutoff);

    let q = QuadOptions {
        rel_tol: opts.rel_tol,
        abs_tol: 0.0,
        max_intervals: opts.max_intervals.max(4 * breaks.len()),
    };
    let body = integrate_breaks(|w| psd.eval(w) * filter_amplitude(&m, w).norm_sqr(), &breaks, q)
        .map_err(|e| Error::Quadrature(format!("{seq:?}: {e}")))?;
    // ∫_Ω^∞ S(ω) J/ω² dω with u = 1/ω.
    let jumps = jump_weight(&m);
    let tail = integrate(
        |u| if u == 0.0 { 0.0 } else { psd.eval(1.0 / u) * jumps },
        0.0,
        1.0 / cutoff,
        q,
    )
    .map_err(|e| Error::Quadrature(format!("{seq:?} tail: {e}")))?;
    Ok((body.value + tail.value) / std::f64::consts::PI)
}

/// `C(T) = exp(−χ(T))` for the sequence family of `seq` stretched to each time.
pub fn coherence_decay(
    seq: &PulseSequence,
    psd: &dyn AngularPsd,
    times: &[f64],
    opts: &CoherenceOptions,
) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    times
        .par_iter()
        .map(|&t| {
            if !(t >= 0.0) {
                return Err(Error::InvalidParameter(format!("time must be >= 0, got {t}")));
            }
            dephasing(&seq.with_total_time(t), psd, opts).map(|chi| (-chi).exp())
        })
        .collect()
}

/// Time `T` at which the sequence family of `seq` decays to `C = 1/e`,
/// i.e. `χ(T) = 1`, found by bracketing in `ln T` and Brent refinement.
pub fn coherence_time(seq: &PulseSequence, psd: &dyn AngularPsd, opts: &CoherenceOptions) -> Result<f64> {
    seq.validate()?;
    let g = |ln_t: f64| -> Result<f64> { Ok(dephasing(&seq.with_total_time(ln_t.exp()), psd, opts)?.ln()) };
    let (lo_lim, hi_lim) = (1e-12f64.ln(), 1e6f64.ln());
    let mut a = 1e-6f64.ln();
    let mut ga = g(a)?;
    let step = std::f64::consts::LN_2 * 2.0;
    let mut b = a;
    let mut gb = ga;
    while ga > 0.0 || !ga.is_finite() {
        if a <= lo_lim {
            return Err(Error::InvalidParameter("coherence decays faster than 1 ps".into()));
        }
        (b, gb) = (a, ga);
        a -= step;
        ga = g(a)?;
    }
    while gb <= 0.0 {
        if b >= hi_lim {
            return Err(Error::InvalidParameter("no decay to 1/e within 1e6 s".into()));
        }
        a = b;
        b += step;
        gb = g(b)?;
    }
    // Errors inside the closure surface as NaN and stop the search.
    let root = brent(|x| g(x).unwrap_or(f64::NAN), a, b, 1e-10)
        .ok_or_else(|| Error::Quadrature("1/e crossing could not be refined".into()))?;
    Ok(root.exp())
}

/// Monte Carlo coherence of a single telegraph fluctuator with jump
/// `amplitude_mhz`, averaging `cos φ` over stationary trajectories.
pub fn monte_carlo_coherence(
    seq: &PulseSequence,
    amplitude_mhz: f64,
    rate_up: f64,
    rate_down: f64,
    times: &[f64],
    trajectories: usize,
    rng_seed: u64,
) -> Result<Vec<f64>> {
    use rand::Rng;
    use rayon::prelude::*;

    if !(rate_up > 0.0 && rate_down > 0.0) || trajectories == 0 {
        return Err(Error::InvalidParameter(
            "rates must be > 0 and trajectories >= 1".into(),
        ));
    }
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let p = rate_up / (rate_up + rate_down);
    let d = 2.0 * std::f64::consts::PI * 1e6 * amplitude_mhz;
    let mods: Vec<ModulationFunction> = times.iter().map(|&t| seq.with_total_time(t).modulation()).collect();
    let sums = (0..trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::seed::rng(crate::seed::substream(rng_seed, "mc_coherence", i as u64));
            let initial = rng.random::<f64>() < p;
            let traj = crate::noise_env::simulate_switching(rate_up, rate_down, initial, t_max.max(1e-300), &mut rng);
            mods.iter()
                .map(|m| (d * m.integrate_telegraph(&traj, p)).cos())
                .collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>();
    let mut out = vec![0.0; times.len()];
    for s in &sums {
        for (o, v) in out.iter_mut().zip(s) {
            *o += v;
        }
    }
    Ok(out.into_iter().map(|v| v / trajectories as f64).collect())
}
