//! Physical constants in the unit system used throughout the crate
//! (MHz, G, V/cm, nm, s).

/// Electron gyromagnetic ratio used for both the sensor and bath spins, MHz/G.
pub const GYRO_MHZ_PER_G: f64 = 2.8025;

/// g-factor that `GYRO_MHZ_PER_G` corresponds to. Bath species with another
/// g-factor are scaled linearly from this reference.
pub const G_REFERENCE: f64 = 2.0028;

/// e / (4π ε₀) in V·nm.
pub const COULOMB_V_NM: f64 = 1.439_964_548;

/// V/nm → V/cm.
pub const V_PER_NM_TO_V_PER_CM: f64 = 1.0e7;

/// Hz·cm/V × V/cm → MHz.
pub const STARK_HZ_TO_MHZ: f64 = 1.0e-6;

/// Default static relative permittivity of 4H-SiC (isotropic approximation).
pub const DEFAULT_EPSILON_R: f64 = 9.7;

const MU0_OVER_4PI: f64 = 1.0e-7;
const HBAR: f64 = 1.054_571_817e-34;

/// Point-dipole coupling prefactor μ₀ħγ²/(4π·2π) between two spins with
/// gyromagnetic ratio `GYRO_MHZ_PER_G`, expressed in MHz·nm³.
pub fn dipolar_prefactor_mhz_nm3() -> f64 {
    // γ in rad s⁻¹ T⁻¹ (1 T = 1e4 G).
    let gamma = 2.0 * std::f64::consts::PI * GYRO_MHZ_PER_G * 1.0e6 * 1.0e4;
    let hz_m3 = MU0_OVER_4PI * HBAR * gamma * gamma / (2.0 * std::f64::consts::PI);
    hz_m3 * 1.0e27 * 1.0e-6
}

/// Gyromagnetic ratio in MHz/G for a spin with the given g-factor.
pub fn gyro_for_g(g_factor: f64) -> f64 {
    g_factor * GYRO_MHZ_PER_G / G_REFERENCE
}
