//! Declarative scenarios: parsing, canonical form, execution and export.
//!
//! A scenario is a TOML document with a mandatory top-level `seed`, optional
//! `[sensor]`, `[environment]` and `[output]` sections, and exactly one
//! `[protocol]` table whose `kind` selects the measurement.

pub mod run;
pub mod table;
pub mod units;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimation::{GridSpec, LocalizationAssumptions};
use crate::noise_env::{BathPlacement, ChargeTrap, Fluctuator, OneOverFBath, SpinBathSpec};
use crate::protocols::{OdmrConfig, PulseSequence, RateMatrix, SequenceKind, TrackEnvironment};
use crate::spin_model::{BathSpecies, SensorParams};

pub use run::{run, run_stage, run_with_threads, Stage};
pub use table::{Column, ColumnData, Metadata, OutputFormat, ResultBundle, Table};
use units::*;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub seed: Seed,
    #[serde(default)]
    pub sensor: SensorSpec,
    #[serde(default)]
    pub environment: EnvironmentSpec,
    pub protocol: Protocol,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSpec {
    pub d: Mhz,
    pub ex: Mhz,
    pub gyro: MhzPerGauss,
    pub d_perp: StarkCoef,
    pub d_par: StarkCoef,
    /// Any nonzero vector; normalized on parse.
    pub axis: [f64; 3],
    pub frame_angle: Radians,
}

impl Default for SensorSpec {
    fn default() -> Self {
        let p = SensorParams::default();
        Self {
            d: Mhz(p.d),
            ex: Mhz(p.ex),
            gyro: MhzPerGauss(p.gyro),
            d_perp: StarkCoef(p.d_perp),
            d_par: StarkCoef(p.d_par),
            axis: p.axis,
            frame_angle: Radians(p.frame_angle),
        }
    }
}

impl SensorSpec {
    pub fn params(&self) -> SensorParams {
        SensorParams {
            d: self.d.0,
            ex: self.ex.0,
            gyro: self.gyro.0,
            d_perp: self.d_perp.0,
            d_par: self.d_par.0,
            axis: self.axis,
            frame_angle: self.frame_angle.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentSpec {
    /// Static axial bias field.
    pub bz: Gauss,
    pub epsilon_r: f64,
    pub traps: Vec<TrapSpec>,
    pub fluctuators: Vec<FluctuatorSpec>,
    pub one_over_f: Option<OneOverFSpec>,
    pub spin_bath: Vec<SpinBathEntry>,
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        Self {
            bz: Gauss(0.0),
            epsilon_r: crate::physics::DEFAULT_EPSILON_R,
            traps: Vec::new(),
            fluctuators: Vec::new(),
            one_over_f: None,
            spin_bath: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSpec {
    pub position: [Nm; 3],
    #[serde(default = "one")]
    pub charge: i32,
    pub rate_capture: PerSecond,
    pub rate_release: PerSecond,
    #[serde(default)]
    pub initially_occupied: bool,
}

fn one() -> i32 {
    1
}

impl TrapSpec {
    pub fn trap(&self) -> ChargeTrap {
        ChargeTrap {
            position: self.position.map(|v| v.0),
            charge: self.charge,
            rate_capture: self.rate_capture.0,
            rate_release: self.rate_release.0,
            initially_occupied: self.initially_occupied,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctuatorSpec {
    pub rate_up: PerSecond,
    pub rate_down: PerSecond,
    /// Jump of both transition branches.
    pub amplitude: Mhz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneOverFSpec {
    pub alpha: f64,
    /// One-sided PSD at 1 MHz.
    pub amplitude: MhzSqPerHz,
    pub f_min: PerSecond,
    pub f_max: PerSecond,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_fluctuators: Option<usize>,
}

impl OneOverFSpec {
    pub fn bath(&self) -> OneOverFBath {
        OneOverFBath {
            alpha: self.alpha,
            amplitude: self.amplitude.0,
            f_min: self.f_min.0,
            f_max: self.f_max.0,
            n_fluctuators: self.n_fluctuators,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeciesKind {
    SpinHalf,
    V2,
}

/// One paramagnetic bath species. Placement is either explicit `positions`
/// or a uniform `density` inside `radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinBathEntry {
    pub species: SpeciesKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_factor: Option<f64>,
    /// Zero-field splitting 2D of a V2 species; 70 MHz if omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zfs_2d: Option<Mhz>,
    #[serde(default = "unit_weight")]
    pub concentration_weight: f64,
    /// Gaussian σ of each bath line.
    pub linewidth: Mhz,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[Nm; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<PerNm3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<Nm>,
}

fn unit_weight() -> f64 {
    1.0
}

pub const DEFAULT_V2_ZFS_MHZ: f64 = 70.0;

impl SpinBathEntry {
    pub fn spec(&self) -> Result<SpinBathSpec> {
        let mut species = match self.species {
            SpeciesKind::SpinHalf => {
                if self.zfs_2d.is_some() {
                    return Err(Error::scenario(
                        "zfs_2d",
                        "a spin-1/2 species has no zero-field splitting",
                    ));
                }
                BathSpecies::spin_half(self.g_factor.unwrap_or(crate::physics::G_REFERENCE))
            }
            SpeciesKind::V2 => {
                let mut s = BathSpecies::v2(self.zfs_2d.map_or(DEFAULT_V2_ZFS_MHZ, |z| z.0));
                if let Some(g) = self.g_factor {
                    s.g_factor = g;
                }
                s
            }
        };
        species.concentration_weight = self.concentration_weight;
        let placement = match (&self.positions, self.density, self.radius) {
            (Some(p), None, None) => BathPlacement::Positions(p.iter().map(|v| v.map(|x| x.0)).collect()),
            (None, Some(d), Some(r)) => BathPlacement::Density {
                density: d.0,
                radius: r.0,
            },
            _ => {
                return Err(Error::scenario(
                    "positions",
                    "give either `positions`, or both `density` and `radius`",
                ))
            }
        };
        let spec = SpinBathSpec {
            species,
            placement,
            linewidth: self.linewidth.0,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

macro_rules! range_spec {
    ($name:ident, $q:ty) => {
        /// `points` values from `start` to `stop` inclusive.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            pub start: $q,
            pub stop: $q,
            pub points: usize,
            #[serde(default)]
            pub spacing: Spacing,
        }

        impl $name {
            pub fn values(&self) -> Vec<f64> {
                sample_range(self.start.0, self.stop.0, self.points, self.spacing)
            }
        }
    };
}

range_spec!(FrequencyRange, Mhz);
range_spec!(FieldRange, Gauss);
range_spec!(TimeRange, Seconds);

fn sample_range(a: f64, b: f64, n: usize, spacing: Spacing) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| {
            let x = i as f64 / (n - 1) as f64;
            match spacing {
                Spacing::Linear => a + (b - a) * x,
                Spacing::Log => (a.ln() + (b.ln() - a.ln()) * x).exp(),
            }
        })
        .collect()
}

fn check_range(path: &str, start: f64, stop: f64, points: usize, spacing: Spacing) -> Result<()> {
    if points == 0 || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::scenario(path, "need points >= 1 and finite start <= stop"));
    }
    if spacing == Spacing::Log && !(start > 0.0) {
        return Err(Error::scenario(path, "log spacing needs start > 0"));
    }
    if points > 1 && stop == start {
        return Err(Error::scenario(path, "start == stop with more than one point"));
    }
    Ok(())
}

/// CW-ODMR acquisition shared by tracking and noise mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdmrSpec {
    pub scan: FrequencyRange,
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    /// Lorentzian FWHM.
    #[serde(default = "default_linewidth")]
    pub linewidth: Mhz,
    #[serde(default = "default_base_rate")]
    pub base_rate: CountsPerS,
    /// Integration time per spectrum.
    pub window: Seconds,
    pub total_time: Seconds,
    /// Dips fitted per spectrum; by default one per resolved branch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_dips: Option<usize>,
    /// Dip followed across windows, counted from low frequency.
    #[serde(default)]
    pub track_dip: usize,
}

fn default_contrast() -> f64 {
    0.1
}

fn default_linewidth() -> Mhz {
    Mhz(5.0)
}

fn default_base_rate() -> CountsPerS {
    CountsPerS(2.5e5)
}

impl OdmrSpec {
    pub fn config(&self) -> OdmrConfig {
        OdmrConfig {
            scan_frequencies: self.scan.values(),
            contrast: self.contrast,
            linewidth: self.linewidth.0,
            base_rate: self.base_rate.0,
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        check_range(
            &format!("{path}.scan"),
            self.scan.start.0,
            self.scan.stop.0,
            self.scan.points,
            self.scan.spacing,
        )?;
        self.config().validate().map_err(|e| e.context(path.to_string()))?;
        if !(self.window.0 > 0.0 && self.total_time.0 >= self.window.0) {
            return Err(Error::scenario(
                format!("{path}.window"),
                "need 0 < window <= total_time",
            ));
        }
        if self.n_dips == Some(0) {
            return Err(Error::scenario(format!("{path}.n_dips"), "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeSpec {
    #[serde(default = "one")]
    pub charge: i32,
    /// Defaults to the environment permittivity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_r: Option<f64>,
    #[serde(default = "default_draws")]
    pub draws: usize,
}

fn default_draws() -> usize {
    LocalizationAssumptions::default().draws
}

impl Default for LocalizeSpec {
    fn default() -> Self {
        Self {
            charge: 1,
            epsilon_r: None,
            draws: default_draws(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwTrackSpec {
    pub odmr: OdmrSpec,
    #[serde(default = "default_max_states")]
    pub max_states: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localize: Option<LocalizeSpec>,
}

fn default_max_states() -> usize {
    6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceName {
    Ramsey,
    Hahn,
    Cpmg,
    Xy8,
}

impl SequenceName {
    pub fn kind(self) -> SequenceKind {
        match self {
            SequenceName::Ramsey => SequenceKind::Ramsey,
            SequenceName::Hahn => SequenceKind::Hahn,
            SequenceName::Cpmg => SequenceKind::Cpmg,
            SequenceName::Xy8 => SequenceKind::Xy8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdSweepSpec {
    pub sequence: SequenceName,
    /// CPMG pulse count or XY8 repetitions.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Inter-pulse spacing τ.
    pub tau: TimeRange,
    /// White floor added to the environment's spectrum.
    #[serde(default)]
    pub white_psd: RadSqPerS,
    /// Gaussian readout noise on each coherence value.
    #[serde(default)]
    pub coherence_noise: f64,
}

fn default_n() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSpec {
    pub omega_plus: PerSecond,
    pub omega_minus: PerSecond,
    pub gamma_dq: PerSecond,
}

impl RatesSpec {
    pub fn rates(&self) -> RateMatrix {
        RateMatrix {
            omega_plus: self.omega_plus.0,
            omega_minus: self.omega_minus.0,
            gamma_dq: self.gamma_dq.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct T1ScanSpec {
    pub rates: RatesSpec,
    pub wait_times: TimeRange,
    #[serde(default)]
    pub readout_sigma: f64,
    /// Fit with Ω₊ = Ω₋.
    #[serde(default)]
    pub symmetric_fit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EprScanSpec {
    pub fields: FieldRange,
    pub base_rates: RatesSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wait_times: Option<TimeRange>,
    /// Gaussian noise on each Γ_eff value.
    #[serde(default)]
    pub rate_noise: PerSecond,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSite {
    pub position: [Um; 2],
    /// Multiplies every fluctuator amplitude of the environment at this site.
    #[serde(default = "unit_weight")]
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub x_min: Um,
    pub x_max: Um,
    pub nx: usize,
    pub y_min: Um,
    pub y_max: Um,
    pub ny: usize,
}

impl GridSection {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            x_min: self.x_min.0,
            x_max: self.x_max.0,
            nx: self.nx,
            y_min: self.y_min.0,
            y_max: self.y_max.0,
            ny: self.ny,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseMapSpec {
    pub odmr: OdmrSpec,
    pub sensors: Vec<SensorSite>,
    pub grid: GridSection,
    /// Also compute the Hahn-echo T₂ of every site.
    #[serde(default = "yes")]
    pub hahn_t2: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    CwTrack(CwTrackSpec),
    DdSweep(DdSweepSpec),
    T1Scan(T1ScanSpec),
    EprScan(EprScanSpec),
    NoiseMap(NoiseMapSpec),
}

impl Protocol {
    pub fn kind(&self) -> &'static str {
        match self {
            Protocol::CwTrack(_) => "cw_track",
            Protocol::DdSweep(_) => "dd_sweep",
            Protocol::T1Scan(_) => "t1_scan",
            Protocol::EprScan(_) => "epr_scan",
            Protocol::NoiseMap(_) => "noise_map",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub path: String,
    pub format: OutputFormat,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            path: "out".into(),
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    seed: Seed,
    #[serde(default)]
    sensor: SensorSpec,
    #[serde(default)]
    environment: EnvironmentSpec,
    protocol: toml::Table,
    #[serde(default)]
    output: OutputSpec,
}

fn path_error(prefix: &str, e: serde_path_to_error::Error<toml::de::Error>) -> Error {
    let path = e.path().to_string();
    let path = match (prefix, path.as_str()) {
        ("", ".") => "<root>".to_string(),
        (p, ".") => p.to_string(),
        ("", q) => q.to_string(),
        (p, q) => format!("{p}.{q}"),
    };
    Error::scenario(path, e.into_inner().to_string())
}

fn protocol_from_table(mut table: toml::Table) -> Result<Protocol> {
    let kind = match table.remove("kind") {
        Some(toml::Value::String(k)) => k,
        Some(_) => return Err(Error::scenario("protocol.kind", "must be a string")),
        None => {
            return Err(Error::scenario(
                "protocol.kind",
                "missing; exactly one protocol is required",
            ))
        }
    };
    fn body<T: serde::de::DeserializeOwned>(t: toml::Table) -> Result<T> {
        serde_path_to_error::deserialize(toml::Value::Table(t)).map_err(|e| path_error("protocol", e))
    }
    Ok(match kind.as_str() {
        "cw_track" => Protocol::CwTrack(body(table)?),
        "dd_sweep" => Protocol::DdSweep(body(table)?),
        "t1_scan" => Protocol::T1Scan(body(table)?),
        "epr_scan" => Protocol::EprScan(body(table)?),
        "noise_map" => Protocol::NoiseMap(body(table)?),
        other => {
            return Err(Error::scenario(
                "protocol.kind",
                format!("unknown protocol {other:?} (expected cw_track, dd_sweep, t1_scan, epr_scan or noise_map)"),
            ))
        }
    })
}

/// Parse and validate a scenario; units are normalized and the sensor axis
/// is made a unit vector.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let value: toml::Value = toml::from_str(text).map_err(|e| Error::scenario("<document>", e.to_string()))?;
    let raw: RawScenario = serde_path_to_error::deserialize(value).map_err(|e| path_error("", e))?;
    let mut sc = Scenario {
        seed: raw.seed,
        sensor: raw.sensor,
        environment: raw.environment,
        protocol: protocol_from_table(raw.protocol)?,
        output: raw.output,
    };
    let n = sc.sensor.axis.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::scenario("sensor.axis", "must be a finite nonzero vector"));
    }
    sc.sensor.axis = sc.sensor.axis.map(|v| v / n);
    sc.validate()?;
    Ok(sc)
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let at = |p: &'static str| move |e: Error| e.context(p);
        self.sensor.params().validate().map_err(at("sensor"))?;
        let env = &self.environment;
        if !(env.epsilon_r > 1.0) {
            return Err(Error::scenario("environment.epsilon_r", "must be > 1"));
        }
        for (i, t) in env.traps.iter().enumerate() {
            t.trap()
                .validate()
                .map_err(|e| e.context(format!("environment.traps[{i}]")))?;
        }
        for (i, f) in env.fluctuators.iter().enumerate() {
            if !(f.rate_up.0 > 0.0 && f.rate_down.0 > 0.0 && f.amplitude.0.is_finite()) {
                return Err(Error::scenario(
                    format!("environment.fluctuators[{i}]"),
                    "rates must be > 0",
                ));
            }
        }
        if let Some(b) = &env.one_over_f {
            b.bath().validate().map_err(at("environment.one_over_f"))?;
        }
        for (i, b) in env.spin_bath.iter().enumerate() {
            b.spec().map_err(|e| e.context(format!("environment.spin_bath[{i}]")))?;
        }
        match &self.protocol {
            Protocol::CwTrack(c) => {
                c.odmr.validate("protocol.odmr")?;
                if c.max_states == 0 {
                    return Err(Error::scenario("protocol.max_states", "must be >= 1"));
                }
                if let Some(l) = &c.localize {
                    if l.charge == 0 || l.draws < 40 || l.epsilon_r.is_some_and(|e| !(e > 1.0)) {
                        return Err(Error::scenario(
                            "protocol.localize",
                            "need nonzero charge, >= 40 draws and epsilon_r > 1",
                        ));
                    }
                }
            }
            Protocol::DdSweep(d) => {
                let t = &d.tau;
                check_range("protocol.tau", t.start.0, t.stop.0, t.points, t.spacing)?;
                if !(t.start.0 > 0.0) {
                    return Err(Error::scenario("protocol.tau", "spacings must be > 0"));
                }
                if d.sequence == SequenceName::Ramsey {
                    return Err(Error::scenario(
                        "protocol.sequence",
                        "spectroscopy needs an echo sequence",
                    ));
                }
                PulseSequence::with_spacing(d.sequence.kind(), d.n, t.start.0).map_err(at("protocol"))?;
                if !(d.white_psd.0 >= 0.0) || !(d.coherence_noise >= 0.0) {
                    return Err(Error::scenario(
                        "protocol",
                        "white_psd and coherence_noise must be >= 0",
                    ));
                }
            }
            Protocol::T1Scan(t) => {
                t.rates.rates().validate().map_err(at("protocol.rates"))?;
                let w = &t.wait_times;
                check_range("protocol.wait_times", w.start.0, w.stop.0, w.points, w.spacing)?;
                if !(w.start.0 >= 0.0) || !(t.readout_sigma >= 0.0) {
                    return Err(Error::scenario("protocol", "wait times and readout_sigma must be >= 0"));
                }
            }
            Protocol::EprScan(e) => {
                e.base_rates.rates().validate().map_err(at("protocol.base_rates"))?;
                let f = &e.fields;
                check_range("protocol.fields", f.start.0, f.stop.0, f.points, f.spacing)?;
                if let Some(w) = &e.wait_times {
                    check_range("protocol.wait_times", w.start.0, w.stop.0, w.points, w.spacing)?;
                }
                if !(e.rate_noise.0 >= 0.0) {
                    return Err(Error::scenario("protocol.rate_noise", "must be >= 0"));
                }
            }
            Protocol::NoiseMap(m) => {
                m.odmr.validate("protocol.odmr")?;
                if m.sensors.is_empty() {
                    return Err(Error::scenario("protocol.sensors", "need at least one sensor"));
                }
                if m.sensors.iter().any(|s| !(s.scale >= 0.0)) {
                    return Err(Error::scenario("protocol.sensors", "scales must be >= 0"));
                }
                let g = m.grid.grid();
                if g.nx == 0 || g.ny == 0 || g.x_max < g.x_min || g.y_max < g.y_min {
                    return Err(Error::scenario(
                        "protocol.grid",
                        "need >= 1 point per axis and ordered bounds",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Canonical TOML: every quantity as a bare number in canonical units.
    pub fn to_canonical_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::scenario("<serialize>", e.to_string()))
    }

    /// SHA-256 over the canonical JSON of everything except `[output]`.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Semantic<'a> {
            seed: Seed,
            sensor: &'a SensorSpec,
            environment: &'a EnvironmentSpec,
            protocol: &'a Protocol,
        }
        let json = serde_json::to_vec(&Semantic {
            seed: self.seed,
            sensor: &self.sensor,
            environment: &self.environment,
            protocol: &self.protocol,
        })
        .expect("scenario serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn track_environment(&self) -> TrackEnvironment {
        TrackEnvironment {
            bz: self.environment.bz.0,
            epsilon_r: self.environment.epsilon_r,
            traps: self.environment.traps.iter().map(TrapSpec::trap).collect(),
            fluctuators: self
                .environment
                .fluctuators
                .iter()
                .map(|f| Fluctuator {
                    rate_up: f.rate_up.0,
                    rate_down: f.rate_down.0,
                    amplitude: f.amplitude.0,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[protocol]
kind = "cw_track"

[protocol.odmr]
scan = { start = "1330 MHz", stop = "1390 MHz", points = 121 }
window = "1 s"
total_time = "60 s"
"#;

    #[test]
    fn minimal_scenario_gets_defaults() {
        let sc = parse_scenario(MINIMAL).unwrap();
        assert_eq!(sc.sensor.d.0, 1360.0);
        assert_eq!(sc.sensor.ex.0, 16.0);
        assert_eq!(sc.seed, Seed(7));
        assert_eq!(sc.environment.epsilon_r, 9.7);
        assert_eq!(sc.protocol.kind(), "cw_track");
    }

    #[test]
    fn missing_seed_is_an_error() {
        let text = MINIMAL.replace("seed = 7", "");
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn unknown_keys_carry_their_path() {
        let text = format!("{MINIMAL}\n[sensor]\nd = 1360\nbogus = 1\n");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.starts_with("sensor"), "{err}");
        assert!(err.contains("bogus"), "{err}");
        let text = MINIMAL.replace("window = \"1 s\"", "window = \"1 s\"\nwindwo = 2");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.starts_with("protocol.odmr"), "{err}");
        assert!(err.contains("windwo"), "{err}");
    }

    #[test]
    fn unit_mismatch_is_path_qualified() {
        let text = format!("{MINIMAL}\n[sensor]\nex = \"16 G\"\n");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.starts_with("sensor.ex"), "{err}");
    }

    #[test]
    fn units_are_normalized() {
        let text = format!("{MINIMAL}\n[sensor]\nd = \"1.36 GHz\"\naxis = [0, 0, 2]\n[environment]\nbz = \"10 mT\"\n");
        let sc = parse_scenario(&text).unwrap();
        assert!((sc.sensor.d.0 - 1360.0).abs() < 1e-9);
        assert_eq!(sc.sensor.axis, [0.0, 0.0, 1.0]);
        assert_eq!(sc.environment.bz.0, 100.0);
    }

    #[test]
    fn canonical_round_trip_is_idempotent() {
        let text = format!(
            "{MINIMAL}\n[[environment.traps]]\nposition = [\"4 nm\", 0, 0]\nrate_capture = \"0.01 Hz\"\nrate_release = 0.02\n"
        );
        let sc = parse_scenario(&text).unwrap();
        let canon = sc.to_canonical_toml().unwrap();
        let again = parse_scenario(&canon).unwrap();
        assert_eq!(again, sc);
        assert_eq!(again.to_canonical_toml().unwrap(), canon);
        assert_eq!(again.hash(), sc.hash());
    }

    #[test]
    fn hash_ignores_formatting_but_not_values() {
        let a = parse_scenario(MINIMAL).unwrap();
        let b = parse_scenario(
            &MINIMAL
                .replace("\"60 s\"", "\"1 min\"")
                .replace("\n\n", "\n# comment\n\n"),
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = parse_scenario(&MINIMAL.replace("seed = 7", "seed = 8")).unwrap();
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.output.path = "elsewhere".into();
        assert_eq!(a.hash(), d.hash());
    }

    #[test]
    fn large_seeds() {
        let sc = parse_scenario(&MINIMAL.replace("seed = 7", "seed = \"0xffffffffffffffff\"")).unwrap();
        assert_eq!(sc.seed, Seed(u64::MAX));
        let back = parse_scenario(&sc.to_canonical_toml().unwrap()).unwrap();
        assert_eq!(back.seed, Seed(u64::MAX));
        assert!(parse_scenario(&MINIMAL.replace("seed = 7", "seed = -1")).is_err());
    }

    #[test]
    fn exactly_one_protocol() {
        let text = MINIMAL.replace("kind = \"cw_track\"", "kind = \"teleport\"");
        assert!(parse_scenario(&text).unwrap_err().to_string().starts_with("protocol"));
        let no_protocol = "seed = 1\n";
        assert!(parse_scenario(no_protocol)
            .unwrap_err()
            .to_string()
            .contains("protocol"));
    }

    #[test]
    fn bath_placement_must_be_unambiguous() {
        let text = r#"
seed = 1
[[environment.spin_bath]]
species = "v2"
linewidth = "0.5 MHz"
density = 1e-4
[protocol]
kind = "epr_scan"
fields = { start = 220, stop = 260, points = 41 }
base_rates = { omega_plus = 500, omega_minus = 500, gamma_dq = 1200 }
"#;
        let err = parse_scenario(text).unwrap_err().to_string();
        assert!(err.contains("spin_bath[0]"), "{err}");
        let ok = text.replace("density = 1e-4", "density = 1e-4\nradius = \"20 nm\"");
        assert!(parse_scenario(&ok).is_ok());
    }
}
