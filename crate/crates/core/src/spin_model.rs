//! Ground-state spin-1 Hamiltonian of the sensor and the transition energies
//! of paramagnetic bath species.
//!
//! Matrices are written in the `|+1⟩, |0⟩, |−1⟩` basis of the sensor frame,
//! in MHz. Fields are given in the lab frame and rotated into the sensor
//! frame through [`SensorParams::axis`] and [`SensorParams::frame_angle`].

use nalgebra::{Complex, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::roots::scan_roots;
use crate::physics::{gyro_for_g, GYRO_MHZ_PER_G, STARK_HZ_TO_MHZ};

pub type C64 = Complex<f64>;

/// Degeneracy threshold for transition branches, MHz.
pub const DEGENERACY_TOL_MHZ: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    /// Axial zero-field splitting D, MHz.
    pub d: f64,
    /// Transverse zero-field splitting Ex, MHz.
    pub ex: f64,
    /// Gyromagnetic ratio, MHz/G.
    pub gyro: f64,
    /// Transverse Stark coefficient, Hz·cm/V.
    pub d_perp: f64,
    /// Longitudinal Stark coefficient, Hz·cm/V.
    pub d_par: f64,
    /// Sensor principal axis in the lab frame.
    pub axis: [f64; 3],
    /// Rotation of the sensor x axis about `axis`, radians.
    pub frame_angle: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            d: 1360.0,
            ex: 16.0,
            gyro: GYRO_MHZ_PER_G,
            d_perp: 32.5,
            d_par: 3.0,
            axis: [0.0, 0.0, 1.0],
            frame_angle: 0.0,
        }
    }
}

impl SensorParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.d, self.ex, self.gyro, self.d_perp, self.d_par, self.frame_angle]
            .iter()
            .chain(self.axis.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("sensor parameters must be finite".into()));
        }
        if self.d <= 0.0 {
            return Err(Error::InvalidParameter(format!("D must be > 0, got {}", self.d)));
        }
        if self.ex < 0.0 {
            return Err(Error::InvalidParameter(format!("Ex must be >= 0, got {}", self.ex)));
        }
        if self.gyro <= 0.0 {
            return Err(Error::InvalidParameter(format!("gyro must be > 0, got {}", self.gyro)));
        }
        if self.d_perp < 0.0 || self.d_par < 0.0 {
            return Err(Error::InvalidParameter("Stark coefficients must be >= 0".into()));
        }
        let norm = Vector3::from(self.axis).norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "sensor axis must be a unit vector, |axis| = {norm}"
            )));
        }
        Ok(())
    }

    /// Orthonormal sensor frame `(x, y, z)` expressed in lab coordinates.
    pub fn frame(&self) -> [Vector3<f64>; 3] {
        let z = Vector3::from(self.axis);
        let mut x0 = Vector3::x() - z * z.x;
        if x0.norm() < 1e-6 {
            x0 = Vector3::y() - z * z.y;
        }
        let x0 = x0.normalize();
        let (s, c) = self.frame_angle.sin_cos();
        let x = x0 * c + z.cross(&x0) * s;
        let y = z.cross(&x);
        [x, y, z]
    }

    /// Components of a lab-frame vector in the sensor frame.
    pub fn to_sensor_frame(&self, v: [f64; 3]) -> Vector3<f64> {
        let v = Vector3::from(v);
        let [x, y, z] = self.frame();
        Vector3::new(v.dot(&x), v.dot(&y), v.dot(&z))
    }
}

/// Instantaneous lab-frame fields at the sensor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    /// Magnetic field, G.
    pub b: [f64; 3],
    /// Electric field, V/cm.
    pub e: [f64; 3],
}

impl FieldState {
    pub fn axial(p: &SensorParams, bz: f64) -> Self {
        Self {
            b: [p.axis[0] * bz, p.axis[1] * bz, p.axis[2] * bz],
            e: [0.0; 3],
        }
    }

    pub fn with_electric(mut self, e: [f64; 3]) -> Self {
        self.e = e;
        self
    }
}

/// Zero-field terms after the Stark shift: `(D', Ex', Ey')` in MHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarkShifted {
    pub d: f64,
    pub ex: f64,
    pub ey: f64,
}

impl StarkShifted {
    /// Branch splitting at zero magnetic field, `2√(Ex'² + Ey'²)`.
    pub fn zero_field_splitting(&self) -> f64 {
        2.0 * self.ex.hypot(self.ey)
    }
}

/// Stark-shifted zero-field parameters for a sensor-frame electric field (V/cm).
pub fn stark_effective_params(p: &SensorParams, e_sensor: [f64; 3]) -> StarkShifted {
    StarkShifted {
        d: p.d + p.d_par * e_sensor[2] * STARK_HZ_TO_MHZ,
        ex: p.ex + p.d_perp * e_sensor[0] * STARK_HZ_TO_MHZ,
        ey: p.d_perp * e_sensor[1] * STARK_HZ_TO_MHZ,
    }
}

/// Spin Hamiltonian in MHz for lab-frame fields.
pub fn build_hamiltonian(p: &SensorParams, f: &FieldState) -> Result<Matrix3<C64>> {
    p.validate()?;
    if !f.b.iter().chain(f.e.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("field components must be finite".into()));
    }
    let b = p.to_sensor_frame(f.b) * p.gyro;
    let e = p.to_sensor_frame(f.e);
    let zfs = stark_effective_params(p, [e.x, e.y, e.z]);

    let r = std::f64::consts::FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    let b_minus = C64::new(b.x, -b.y) * r; // γ(Bx − iBy)/√2
    let b_plus = b_minus.conj();
    let t = C64::new(-zfs.ex, zfs.ey); // −(Ex' − iEy')
    Ok(Matrix3::new(
        C64::new(zfs.d + b.z, 0.0),
        b_minus,
        t,
        b_plus,
        z,
        b_minus,
        t.conj(),
        b_plus,
        C64::new(zfs.d - b.z, 0.0),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransitionSet {
    /// Upper branch from the |0⟩-like level, MHz.
    pub f_plus: f64,
    /// Lower branch, MHz.
    pub f_minus: f64,
    /// Double-quantum gap `f_plus − f_minus`, MHz.
    pub f_dq: f64,
    pub degenerate: bool,
}

/// Sorted eigen-decomposition with the |0⟩-like level singled out.
#[derive(Debug, Clone)]
pub struct Eigenstructure {
    /// Eigenvalues in MHz: `[|0⟩-like, lower branch, upper branch]`.
    pub energies: [f64; 3],
    /// Matching eigenvectors (columns) in the `|+1⟩, |0⟩, |−1⟩` basis.
    pub vectors: [Vector3<C64>; 3],
}

pub fn eigenstructure(p: &SensorParams, f: &FieldState) -> Result<Eigenstructure> {
    let h = build_hamiltonian(p, f)?;
    let eig = SymmetricEigen::new(h);
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let cols: Vec<Vector3<C64>> = (0..3).map(|i| eig.eigenvectors.column(i).into_owned()).collect();

    let zero = (0..3)
        .max_by(|&a, &b| cols[a][1].norm_sqr().total_cmp(&cols[b][1].norm_sqr()))
        .expect("three eigenvectors");
    let mut rest: Vec<usize> = (0..3).filter(|&i| i != zero).collect();
    let plus_overlap = |i: usize| {
        let v = &cols[i];
        ((v[0] + v[2]) * std::f64::consts::FRAC_1_SQRT_2).norm_sqr()
    };
    rest.sort_by(|&a, &b| {
        if (vals[a] - vals[b]).abs() < DEGENERACY_TOL_MHZ {
            // |+⟩-like state is reported as the upper branch on a tie.
            plus_overlap(a).total_cmp(&plus_overlap(b))
        } else {
            vals[a].total_cmp(&vals[b])
        }
    });
    Ok(Eigenstructure {
        energies: [vals[zero], vals[rest[0]], vals[rest[1]]],
        vectors: [cols[zero], cols[rest[0]], cols[rest[1]]],
    })
}

pub fn transition_set(p: &SensorParams, f: &FieldState) -> Result<TransitionSet> {
    let es = eigenstructure(p, f)?;
    let f_minus = es.energies[1] - es.energies[0];
    let f_plus = es.energies[2] - es.energies[0];
    Ok(TransitionSet {
        f_plus,
        f_minus,
        f_dq: f_plus - f_minus,
        degenerate: (f_plus - f_minus).abs() < DEGENERACY_TOL_MHZ,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BathKind {
    SpinHalf,
    /// Spin-3/2 silicon vacancy modeled by three equally spaced lines.
    V2SpinThreeHalves,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathSpecies {
    pub kind: BathKind,
    pub g_factor: f64,
    /// Zero-field splitting 2D, MHz (zero for spin-1/2).
    pub zfs_2d: f64,
    pub concentration_weight: f64,
}

impl BathSpecies {
    pub fn spin_half(g_factor: f64) -> Self {
        Self {
            kind: BathKind::SpinHalf,
            g_factor,
            zfs_2d: 0.0,
            concentration_weight: 1.0,
        }
    }

    pub fn v2(zfs_2d: f64) -> Self {
        Self {
            kind: BathKind::V2SpinThreeHalves,
            g_factor: crate::physics::G_REFERENCE,
            zfs_2d,
            concentration_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g_factor > 0.0) || !(self.concentration_weight >= 0.0) {
            return Err(Error::InvalidParameter(
                "bath g-factor must be > 0 and concentration weight >= 0".into(),
            ));
        }
        match self.kind {
            BathKind::SpinHalf if self.zfs_2d != 0.0 => Err(Error::InvalidParameter(
                "spin-1/2 bath species cannot carry a zero-field splitting".into(),
            )),
            BathKind::V2SpinThreeHalves if !(self.zfs_2d > 0.0) => Err(Error::InvalidParameter(
                "V2 bath species needs a positive zero-field splitting".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn gyro(&self) -> f64 {
        gyro_for_g(self.g_factor)
    }

    /// Signed line offsets from the Larmor frequency, MHz.
    pub fn line_offsets(&self) -> Vec<f64> {
        match self.kind {
            BathKind::SpinHalf => vec![0.0],
            BathKind::V2SpinThreeHalves => vec![-self.zfs_2d, 0.0, self.zfs_2d],
        }
    }
}

/// Transition frequencies of a bath species at axial field `bz` (G), sorted
/// ascending, absolute-valued and deduplicated.
pub fn bath_transitions(s: &BathSpecies, bz: f64) -> Vec<f64> {
    let larmor = s.gyro() * bz;
    let mut lines: Vec<f64> = s.line_offsets().iter().map(|o| (larmor + o).abs()).collect();
    lines.sort_by(f64::total_cmp);
    lines.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    lines
}

pub const DEFAULT_RESONANCE_WINDOW_G: (f64, f64) = (0.0, 400.0);

/// Axial fields where the sensor's lower branch is degenerate with a bath
/// transition, sorted ascending.
pub fn resonance_fields(p: &SensorParams, s: &BathSpecies, window: (f64, f64)) -> Result<Vec<f64>> {
    p.validate()?;
    s.validate()?;
    let (lo, hi) = window;
    if !(hi > lo) || lo < 0.0 {
        return Err(Error::InvalidParameter(format!("invalid field window [{lo}, {hi}]")));
    }
    let lower_branch = |b: f64| {
        transition_set(p, &FieldState::axial(p, b))
            .map(|t| t.f_minus)
            .unwrap_or(f64::NAN)
    };
    let gyro_s = s.gyro();
    let steps = ((hi - lo) / 0.25).ceil().max(1.0) as usize;
    let mut fields = Vec::new();
    for offset in s.line_offsets() {
        let line = move |b: f64| (gyro_s * b + offset).abs();
        fields.extend(scan_roots(|b| lower_branch(b) - line(b), lo, hi, steps, 1e-11));
    }
    fields.sort_by(f64::total_cmp);
    fields.dedup_by(|a, b| (*a - *b).abs() < 1e-7);
    Ok(fields)
}
