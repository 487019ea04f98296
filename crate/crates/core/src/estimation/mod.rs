//! Inverse problems: from simulated or measured records back to physical
//! parameters.

pub mod epr_fit;
pub mod lineshape;
pub mod localize;
pub mod noise_map;
pub mod rates;
pub mod spectrum;
pub mod states;

pub use epr_fit::{fit_epr_spectrum, EprFit, EprOutcome};
pub use lineshape::{fit_lorentzian, peak_trace, DipFit, LorentzFit, PeakTrace};
pub use localize::{localize_trap, LocalizationAssumptions, TrapLocalization};
pub use noise_map::{idw_at, interpolate_noise_map, GridSpec, NoiseMap};
pub use rates::{extract_rates, RateFit};
pub use spectrum::{fit_power_law, invert_dd_spectrum, BandTag, DdPoint, NoiseSpectrumEstimate, PowerLawFit};
pub use states::{detect_states, sigma_f, SigmaF, StateModel};
