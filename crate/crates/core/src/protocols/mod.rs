//! Forward models of the measurement protocols.

pub mod cw;
pub mod epr;
pub mod relax;
pub mod sequences;

pub use cw::{
    cw_spectrum, track_odmr, two_point_track, OdmrConfig, OdmrRecord, TrackEnvironment, TrackRun, TwoPointTrace,
};
pub use epr::{epr_field_scan, EprScan, EprScanConfig};
pub use relax::{relaxometry_signals, t1_propagate, RateMatrix, RelaxationDataset};
pub use sequences::{
    coherence_decay, coherence_time, filter_weight, modulation_function, AngularPsd, CoherenceOptions, PulseSequence,
    SequenceKind,
};
