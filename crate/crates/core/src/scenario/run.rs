//! Dispatch a scenario to its simulation and estimation chain.
//!
//! Every random stream is derived from the scenario seed by name, so the
//! tables do not depend on the number of worker threads.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::table::{Metadata, ResultBundle, Table, SCHEMA_VERSION};
use super::{CwTrackSpec, DdSweepSpec, EprScanSpec, NoiseMapSpec, OdmrSpec, Protocol, Scenario, T1ScanSpec};
use crate::error::{Error, Result};
use crate::estimation::{
    detect_states, extract_rates, fit_epr_spectrum, fit_power_law, interpolate_noise_map, invert_dd_spectrum,
    localize_trap, peak_trace, sigma_f, DdPoint, EprOutcome, LocalizationAssumptions, PeakTrace,
};
use crate::noise_env::{synthesize_one_over_f, OneOverFSynthesis};
use crate::numerics::fit_exponential;
use crate::protocols::sequences::{dephasing, LorentzianPsd, LorentzianSum};
use crate::protocols::{
    coherence_time, epr_field_scan, relaxometry_signals, track_odmr, AngularPsd, CoherenceOptions, EprScanConfig,
    PulseSequence, TrackEnvironment, TrackRun,
};
use crate::seed::{self, substream};
use crate::spin_model::{resonance_fields, SensorParams};

/// What to compute from a scenario. Each stage accepts specific protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Raw CW spectra and the ground-truth shifts (cw_track).
    SimulateOdmr,
    /// Peak trace, σ_f and detected states (cw_track).
    Track,
    /// Tracking followed by trap localization (cw_track).
    Localize,
    /// Coherence decays and the inverted noise spectrum (dd_sweep).
    DdSpectrum,
    /// Relaxometry rates or a field-scanned relaxation spectrum (t1_scan, epr_scan).
    T1Epr,
    /// Per-site σ_f and T₂ with an interpolated map (noise_map).
    NoiseMap,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::SimulateOdmr => "simulate-odmr",
            Stage::Track => "track",
            Stage::Localize => "localize",
            Stage::DdSpectrum => "dd-spectrum",
            Stage::T1Epr => "t1-epr",
            Stage::NoiseMap => "noise-map",
        }
    }

    /// The full chain for a protocol.
    pub fn default_for(protocol: &Protocol) -> Stage {
        match protocol {
            Protocol::CwTrack(c) if c.localize.is_some() => Stage::Localize,
            Protocol::CwTrack(_) => Stage::Track,
            Protocol::DdSweep(_) => Stage::DdSpectrum,
            Protocol::T1Scan(_) | Protocol::EprScan(_) => Stage::T1Epr,
            Protocol::NoiseMap(_) => Stage::NoiseMap,
        }
    }

    fn accepts(self, protocol: &Protocol) -> bool {
        matches!(
            (self, protocol),
            (
                Stage::SimulateOdmr | Stage::Track | Stage::Localize,
                Protocol::CwTrack(_)
            ) | (Stage::DdSpectrum, Protocol::DdSweep(_))
                | (Stage::T1Epr, Protocol::T1Scan(_) | Protocol::EprScan(_))
                | (Stage::NoiseMap, Protocol::NoiseMap(_))
        )
    }
}

pub fn run(sc: &Scenario) -> Result<ResultBundle> {
    run_stage(sc, Stage::default_for(&sc.protocol))
}

/// Run inside a dedicated pool of `threads` workers (0: the global pool).
pub fn run_with_threads(sc: &Scenario, stage: Stage, threads: usize) -> Result<ResultBundle> {
    if threads == 0 {
        return run_stage(sc, stage);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| run_stage(sc, stage))
}

pub fn run_stage(sc: &Scenario, stage: Stage) -> Result<ResultBundle> {
    sc.validate()?;
    if !stage.accepts(&sc.protocol) {
        return Err(Error::scenario(
            "protocol.kind",
            format!("`{}` cannot run a {} scenario", stage.name(), sc.protocol.kind()),
        ));
    }
    let mut out = Output::default();
    let result = match &sc.protocol {
        Protocol::CwTrack(spec) => cw_track(sc, spec, stage, &mut out),
        Protocol::DdSweep(spec) => dd_sweep(sc, spec, &mut out),
        Protocol::T1Scan(spec) => t1_scan(sc, spec, &mut out),
        Protocol::EprScan(spec) => epr_scan(sc, spec, &mut out),
        Protocol::NoiseMap(spec) => noise_map(sc, spec, &mut out),
    };
    result.map_err(|e| e.context(format!("{} scenario {}", sc.protocol.kind(), &sc.hash()[..12])))?;
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    Ok(ResultBundle {
        schema_version: SCHEMA_VERSION,
        scenario_hash: sc.hash(),
        metadata: Metadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_s: created,
            protocol: sc.protocol.kind().to_string(),
            stage: stage.name().to_string(),
            warnings: out.warnings,
            scenario: serde_json::to_value(sc).expect("scenario serializes"),
        },
        tables: out.tables,
    })
}

#[derive(Default)]
struct Output {
    tables: Vec<Table>,
    warnings: Vec<String>,
}

impl Output {
    fn push(&mut self, t: Table) {
        self.tables.push(t);
    }

    fn warn(&mut self, w: impl Into<String>) {
        self.warnings.push(w.into());
    }
}

/// The scenario's fluctuator bath with every amplitude multiplied by `scale`.
struct Bath {
    env: TrackEnvironment,
    psd: LorentzianSum,
}

fn synthesized(sc: &Scenario, out: &mut Output) -> Result<Option<OneOverFSynthesis>> {
    let Some(spec) = &sc.environment.one_over_f else {
        return Ok(None);
    };
    let s = synthesize_one_over_f(&spec.bath(), substream(sc.seed.0, "one_over_f", 0))?;
    if let Some(w) = &s.warning {
        out.warn(w.clone());
    }
    Ok(Some(s))
}

fn bath(sc: &Scenario, synth: Option<&OneOverFSynthesis>, scale: f64) -> Bath {
    let mut env = sc.track_environment();
    for f in &mut env.fluctuators {
        f.amplitude *= scale;
    }
    if let Some(s) = synth {
        env.fluctuators.extend(s.scaled(scale * scale).fluctuators);
    }
    let psd = LorentzianSum(
        env.fluctuators
            .iter()
            .map(|f| LorentzianPsd::from_telegraph(f.amplitude, f.rate_up, f.rate_down))
            .collect(),
    );
    Bath { env, psd }
}

fn n_dips(p: &SensorParams, env: &TrackEnvironment, spec: &OdmrSpec) -> Result<usize> {
    let n = match spec.n_dips {
        Some(n) => n,
        None => env.reference_branches(p)?.len(),
    };
    if spec.track_dip >= n {
        return Err(Error::scenario(
            "protocol.odmr.track_dip",
            format!("dip {} requested but only {n} dips are fitted", spec.track_dip),
        ));
    }
    Ok(n)
}

fn odmr_tables(p: &SensorParams, env: &TrackEnvironment, run: &TrackRun, out: &mut Output) -> Result<()> {
    let nf = run.records.first().map_or(0, |r| r.scan_frequencies.len());
    let rows = run.records.len() * nf;
    let (mut win, mut f, mut c) = (
        Vec::with_capacity(rows),
        Vec::with_capacity(rows),
        Vec::with_capacity(rows),
    );
    for (w, r) in run.records.iter().enumerate() {
        for (fi, ci) in r.scan_frequencies.iter().zip(&r.counts) {
            win.push(w as i64);
            f.push(*fi);
            c.push(*ci as i64);
        }
    }
    out.push(
        Table::new("odmr_spectra")
            .i64("window", win)
            .f64("frequency_mhz", f)
            .i64("counts", c),
    );

    let reference = env.reference_branches(p)?;
    let mut truth = Table::new("environment_truth")
        .i64("window", (0..run.records.len() as i64).collect())
        .f64("t_start_s", run.records.iter().map(|r| r.window_start).collect())
        .f64("t_end_s", run.records.iter().map(|r| r.window_end).collect());
    for (b, f0) in reference.iter().enumerate() {
        let shifts = run
            .records
            .par_iter()
            .map(|r| run.history.mean_shift(env, p, r.window_start, r.window_end, b))
            .collect::<Result<Vec<f64>>>()?;
        truth = truth.f64(&format!("branch{b}_mhz"), shifts.iter().map(|s| f0 + s).collect());
    }
    out.push(truth);
    Ok(())
}

fn trace_table(trace: &PeakTrace) -> Table {
    Table::new("peak_trace")
        .f64("time_s", trace.window_times.clone())
        .f64("center_mhz", trace.centers.clone())
        .f64("center_error_mhz", trace.center_uncertainties.clone())
        .f64("reduced_chi_squared", trace.fit_quality.clone())
}

fn cw_track(sc: &Scenario, spec: &CwTrackSpec, stage: Stage, out: &mut Output) -> Result<()> {
    let p = sc.sensor.params();
    let synth = synthesized(sc, out)?;
    let Bath { env, .. } = bath(sc, synth.as_ref(), 1.0);
    let o = &spec.odmr;
    let run = track_odmr(
        &p,
        &env,
        &o.config(),
        o.total_time.0,
        o.window.0,
        substream(sc.seed.0, "cw_track", 0),
    )?;
    odmr_tables(&p, &env, &run, out)?;
    if stage == Stage::SimulateOdmr {
        return Ok(());
    }

    let trace = peak_trace(&run.records, n_dips(&p, &env, o)?, o.track_dip)?;
    out.push(trace_table(&trace));
    let mut summary = vec![
        ("windows_fitted", trace.len() as f64),
        ("windows_dropped", trace.dropped as f64),
    ];
    match sigma_f(&trace) {
        Ok(s) => {
            summary.push(("sigma_f_mhz", s.sigma_f));
            summary.push(("shot_noise_floor_mhz", s.shot_noise_floor));
        }
        Err(e) => out.warn(format!("sigma_f skipped: {e}")),
    }
    let states = match detect_states(&trace, spec.max_states) {
        Ok(m) => Some(m),
        Err(e) => {
            out.warn(format!("state detection skipped: {e}"));
            None
        }
    };
    if let Some(m) = &states {
        summary.push(("n_states", m.n_states as f64));
        out.push(
            Table::new("states")
                .i64("state", (0..m.n_states as i64).collect())
                .f64("mean_mhz", m.means.clone())
                .f64("weight", m.weights.clone())
                .f64("width_mhz", m.widths.clone())
                .f64("splitting_from_lowest_mhz", m.splittings[0].clone())
                .f64("splitting_error_mhz", m.splitting_uncertainties[0].clone()),
        );
    }
    out.push(Table::key_values("track_summary", &summary));

    if stage != Stage::Localize {
        return Ok(());
    }
    let m = states.ok_or_else(|| Error::InsufficientData("localization needs detected states".into()))?;
    if m.n_states < 2 {
        return Err(Error::NonIdentifiable(
            "a single spectral state was detected; no splitting to localize".into(),
        ));
    }
    let l = spec.localize.clone().unwrap_or_default();
    let assumptions = LocalizationAssumptions {
        charge: l.charge,
        epsilon_r: l.epsilon_r.unwrap_or(sc.environment.epsilon_r),
        draws: l.draws,
    };
    let mut loc = Table::new("localization");
    let mut cols: [Vec<f64>; 6] = Default::default();
    let mut unbounded = Vec::new();
    let mut samples = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for j in 1..m.n_states {
        let split = m.splittings[0][j].abs();
        let sigma = m.splitting_uncertainties[0][j];
        let r = localize_trap(
            split,
            sigma,
            &p,
            &assumptions,
            substream(sc.seed.0, "localize", j as u64),
        )?;
        for (c, v) in cols.iter_mut().zip([
            j as f64,
            split,
            sigma,
            r.on_axis_distance,
            r.distance_interval_95.0,
            r.distance_interval_95.1,
        ]) {
            c.push(v);
        }
        unbounded.push(r.unbounded as i64);
        for s in &r.samples {
            samples.0.push(j as i64);
            samples.1.push(s[0]);
            samples.2.push(s[1]);
            samples.3.push(s[2]);
        }
    }
    let [state, split, sigma, on_axis, lo, hi] = cols;
    loc = loc
        .i64("state", state.iter().map(|v| *v as i64).collect())
        .f64("splitting_mhz", split)
        .f64("splitting_error_mhz", sigma)
        .f64("perpendicular_distance_nm", on_axis)
        .f64("distance_lo95_nm", lo)
        .f64("distance_hi95_nm", hi)
        .i64("unbounded", unbounded);
    out.push(loc);
    out.push(
        Table::new("localization_samples")
            .i64("state", samples.0)
            .f64("x_nm", samples.1)
            .f64("y_nm", samples.2)
            .f64("z_nm", samples.3),
    );
    Ok(())
}

struct WithWhite<'a> {
    lorentz: &'a LorentzianSum,
    white: f64,
}

impl AngularPsd for WithWhite<'_> {
    fn eval(&self, omega: f64) -> f64 {
        self.white + self.lorentz.eval(omega)
    }

    fn features(&self) -> Vec<f64> {
        self.lorentz.features()
    }
}

fn dd_sweep(sc: &Scenario, spec: &DdSweepSpec, out: &mut Output) -> Result<()> {
    let synth = synthesized(sc, out)?;
    let Bath { psd: lorentz, .. } = bath(sc, synth.as_ref(), 1.0);
    let psd = WithWhite {
        lorentz: &lorentz,
        white: spec.white_psd.0,
    };
    let seqs = spec
        .tau
        .values()
        .iter()
        .map(|&tau| PulseSequence::with_spacing(spec.sequence.kind(), spec.n, tau))
        .collect::<Result<Vec<_>>>()?;
    let opts = CoherenceOptions::default();
    let chis = seqs
        .par_iter()
        .map(|s| dephasing(s, &psd, &opts))
        .collect::<Result<Vec<f64>>>()?;
    let sigma = spec.coherence_noise;
    let measured: Vec<f64> = chis
        .iter()
        .enumerate()
        .map(|(i, chi)| {
            let c = (-chi).exp();
            if sigma > 0.0 {
                let mut rng = seed::rng(substream(sc.seed.0, "dd_readout", i as u64));
                c + sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                c
            }
        })
        .collect();
    out.push(
        Table::new("coherence")
            .f64("tau_s", seqs.iter().map(|s| s.spacing()).collect())
            .f64("total_time_s", seqs.iter().map(|s| s.total_time).collect())
            .i64("n_pulses", seqs.iter().map(|s| s.n_pulses() as i64).collect())
            .f64("chi", chis.clone())
            .f64("coherence", measured.clone()),
    );
    // A coherence within 3σ of zero only bounds the spectrum from below.
    let saturated = measured.iter().filter(|&&c| c < 3.0 * sigma).count();
    if saturated > 0 {
        out.warn(format!(
            "{saturated} coherence values within 3σ of zero were excluded from the inversion"
        ));
    }
    let points: Vec<DdPoint> = seqs
        .iter()
        .zip(&measured)
        .filter(|(_, &c)| c >= 3.0 * sigma)
        .map(|(s, &c)| DdPoint {
            sequence: *s,
            coherence: c,
            coherence_error: (sigma > 0.0).then_some(sigma),
        })
        .collect();
    let est = invert_dd_spectrum(&points)?;
    if !est.dropped.is_empty() {
        out.warn(format!(
            "{} coherence values outside (0, 1] were dropped",
            est.dropped.len()
        ));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    out.push(
        Table::new("noise_spectrum")
            .f64("frequency_hz", est.frequencies.clone())
            .f64("psd_rad2_per_s", est.psd.clone())
            .f64("psd_error_rad2_per_s", est.uncertainties.clone())
            .f64(
                "true_psd_rad2_per_s",
                est.frequencies.iter().map(|f| psd.eval(two_pi * f)).collect(),
            ),
    );
    let (x, y): (Vec<f64>, Vec<f64>) = est
        .frequencies
        .iter()
        .zip(&est.psd)
        .filter(|(_, s)| **s > 0.0)
        .map(|(f, s)| (*f, *s))
        .unzip();
    match fit_power_law(&x, &y, None) {
        Ok(fit) => out.push(Table::key_values(
            "spectrum_power_law",
            &[
                ("amplitude", fit.amplitude),
                ("exponent", fit.exponent),
                ("amplitude_error", fit.amplitude_error),
                ("exponent_error", fit.exponent_error),
            ],
        )),
        Err(e) => out.warn(format!("power-law fit skipped: {e}")),
    }
    Ok(())
}

fn t1_scan(sc: &Scenario, spec: &T1ScanSpec, out: &mut Output) -> Result<()> {
    let times = spec.wait_times.values();
    let data = relaxometry_signals(
        &spec.rates.rates(),
        &times,
        sc.environment.bz.0,
        spec.readout_sigma,
        substream(sc.seed.0, "t1", 0),
    )?;
    let mut t = Table::new("relaxation_signals").f64("wait_time_s", times.clone());
    for (k, s) in data.signals.iter().enumerate() {
        t = t.f64(&format!("s{}", k + 1), s.clone());
    }
    out.push(t);
    let diff_rate = |a, b| fit_exponential(&times, &data.difference(a, b)).map_or(f64::NAN, |r| r.1);
    let fit = extract_rates(&data, spec.symmetric_fit)?;
    if fit.unbounded_relative_covariance {
        out.warn("fitted rates are consistent with zero; relative errors are unbounded");
    }
    out.push(Table::key_values(
        "rate_fit",
        &[
            ("omega_plus", fit.rates.omega_plus),
            ("omega_minus", fit.rates.omega_minus),
            ("gamma_dq", fit.rates.gamma_dq),
            ("omega_plus_error", fit.rate_errors[0]),
            ("omega_minus_error", fit.rate_errors[1]),
            ("gamma_dq_error", fit.rate_errors[2]),
            ("reduced_chi_squared", fit.reduced_chi_squared),
            ("sq_difference_rate", diff_rate(1, 2)),
            ("dq_difference_rate", diff_rate(3, 4)),
            ("unbounded", fit.unbounded_relative_covariance as u8 as f64),
        ],
    ));
    Ok(())
}

fn epr_scan(sc: &Scenario, spec: &EprScanSpec, out: &mut Output) -> Result<()> {
    let p = sc.sensor.params();
    let baths = sc
        .environment
        .spin_bath
        .iter()
        .map(|b| b.spec())
        .collect::<Result<Vec<_>>>()?;
    if baths.is_empty() {
        out.warn("no spin bath configured; the scan is flat");
    }
    let base = spec.base_rates.rates();
    let cfg = match &spec.wait_times {
        Some(w) => EprScanConfig { wait_times: w.values() },
        None => EprScanConfig::for_base_rates(&base),
    };
    let fields = spec.fields.values();
    let scan = epr_field_scan(&p, &baths, &base, &fields, &cfg, substream(sc.seed.0, "epr", 0))?;
    let mut rng = seed::rng(substream(sc.seed.0, "epr_noise", 0));
    let measured: Vec<f64> = scan
        .gamma_eff
        .iter()
        .map(|g| {
            if spec.rate_noise.0 > 0.0 {
                g + spec.rate_noise.0 * rng.sample::<f64, _>(StandardNormal)
            } else {
                *g
            }
        })
        .collect();
    out.push(
        Table::new("epr_scan")
            .f64("field_g", fields.clone())
            .f64("gamma_eff", measured.clone())
            .f64("gamma_eff_true", scan.gamma_eff.clone())
            .f64("omega_minus", scan.omega_minus.clone()),
    );

    let window = (fields[0], fields[fields.len() - 1]);
    let (mut species, mut predicted) = (Vec::new(), Vec::new());
    for (i, (b, entry)) in baths.iter().zip(&sc.environment.spin_bath).enumerate() {
        let label = match entry.species {
            super::SpeciesKind::SpinHalf => "spin_half",
            super::SpeciesKind::V2 => "v2",
        };
        for f in resonance_fields(&p, &b.species, window)? {
            species.push(format!("{label}#{i}"));
            predicted.push(f);
        }
    }
    out.push(
        Table::new("predicted_resonances")
            .text("species", species)
            .f64("field_g", predicted),
    );

    match fit_epr_spectrum(&fields, &measured)? {
        EprOutcome::Resonance(fit) => out.push(Table::key_values(
            "epr_fit",
            &[
                ("resonance", 1.0),
                ("position_low_g", fit.positions[0]),
                ("position_center_g", fit.positions[1]),
                ("position_high_g", fit.positions[2]),
                ("position_low_error_g", fit.position_errors[0]),
                ("position_center_error_g", fit.position_errors[1]),
                ("position_high_error_g", fit.position_errors[2]),
                ("satellite_spacing_g", 0.5 * (fit.positions[2] - fit.positions[0])),
                ("width_g", fit.width),
                ("triplet_amplitude", fit.triplet_amplitude),
                ("central_amplitude", fit.central_amplitude),
                ("central_width_g", fit.central_width),
                ("baseline", fit.baseline),
                ("reduced_chi_squared", fit.reduced_chi_squared),
                ("snr", fit.snr),
            ],
        )),
        EprOutcome::NoResonance { snr } => {
            out.warn(format!("no resonance found (peak SNR {snr:.2})"));
            out.push(Table::key_values("epr_fit", &[("resonance", 0.0), ("snr", snr)]));
        }
    }
    Ok(())
}

fn noise_map(sc: &Scenario, spec: &NoiseMapSpec, out: &mut Output) -> Result<()> {
    let p = sc.sensor.params();
    let synth = synthesized(sc, out)?;
    let o = &spec.odmr;
    let cfg = o.config();
    // One bath realization shared by all sites; only its amplitude differs.
    let track_seed = substream(sc.seed.0, "noise_map", 0);
    let rows = spec
        .sensors
        .iter()
        .map(|site| {
            let Bath { env, psd } = bath(sc, synth.as_ref(), site.scale);
            let run = track_odmr(&p, &env, &cfg, o.total_time.0, o.window.0, track_seed)?;
            let trace = peak_trace(&run.records, n_dips(&p, &env, o)?, o.track_dip)?;
            let sf = sigma_f(&trace)?;
            let t2 = if spec.hahn_t2 && !psd.0.is_empty() {
                coherence_time(&PulseSequence::hahn(1.0), &psd, &CoherenceOptions::default())?
            } else {
                f64::NAN
            };
            Ok((sf, t2))
        })
        .collect::<Result<Vec<_>>>()?;
    if spec.hahn_t2 && rows.iter().any(|r| r.1.is_nan()) {
        out.warn("no fluctuators in the environment; T2 is not defined");
    }
    let positions: Vec<[f64; 2]> = spec
        .sensors
        .iter()
        .map(|s| [s.position[0].0, s.position[1].0])
        .collect();
    let sigma: Vec<f64> = rows.iter().map(|r| r.0.sigma_f).collect();
    let t2: Vec<f64> = rows.iter().map(|r| r.1).collect();
    out.push(
        Table::new("sensors")
            .f64("x_um", positions.iter().map(|v| v[0]).collect())
            .f64("y_um", positions.iter().map(|v| v[1]).collect())
            .f64("scale", spec.sensors.iter().map(|s| s.scale).collect())
            .f64("sigma_f_mhz", sigma.clone())
            .f64(
                "shot_noise_floor_mhz",
                rows.iter().map(|r| r.0.shot_noise_floor).collect(),
            )
            .i64("windows", rows.iter().map(|r| r.0.windows as i64).collect())
            .f64("t2_s", t2.clone()),
    );
    match interpolate_noise_map(&positions, &sigma, &spec.grid.grid()) {
        Ok(map) => {
            let (mut x, mut y, mut v) = (Vec::new(), Vec::new(), Vec::new());
            for (iy, row) in map.grid.iter().enumerate() {
                for (ix, val) in row.iter().enumerate() {
                    x.push(map.grid_x[ix]);
                    y.push(map.grid_y[iy]);
                    v.push(*val);
                }
            }
            out.push(
                Table::new("noise_map")
                    .f64("x_um", x)
                    .f64("y_um", y)
                    .f64("sigma_f_mhz", v),
            );
        }
        Err(e) => out.warn(format!("map interpolation skipped: {e}")),
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = sigma
        .iter()
        .zip(&t2)
        .filter(|(_, t)| t.is_finite())
        .map(|(s, t)| (*s, *t))
        .unzip();
    if xs.len() >= 3 {
        match fit_power_law(&xs, &ys, None) {
            Ok(fit) => out.push(Table::key_values(
                "t2_power_law",
                &[
                    ("amplitude", fit.amplitude),
                    ("exponent", fit.exponent),
                    ("amplitude_error", fit.amplitude_error),
                    ("exponent_error", fit.exponent_error),
                ],
            )),
            Err(e) => out.warn(format!("T2 power-law fit skipped: {e}")),
        }
    }
    Ok(())
}
