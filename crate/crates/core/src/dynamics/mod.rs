//! Open-system dynamics of the transmon–resonator node.
//!
//! Two model tiers share one solver: an effective sideband model in the
//! frame co-rotating with the modulation, and a full flux-modulated model in
//! the frame rotating at the resonator frequency. Both produce
//! [`SimResult`]s with an output-field record.

mod capture;
mod effective;
mod flux;
mod ops;
mod pitch_catch;
mod protocol;
mod solver;

pub use capture::{capture_mode, CapturedMode, CAPTURE_EPSILON};
pub use effective::{EffectiveModel, DEFAULT_EFFECTIVE_DT};
pub use flux::FluxModel;
pub use ops::{HilbertSpec, Jump, Observables, SparseOp};
pub use pitch_catch::{pitch_catch, PitchCatchConfig, PitchCatchResult, NODE_SPEC};
pub use protocol::{
    bin_photons, build_protocol, emission_pulse, run_protocol, run_sequence, Event, Model, Protocol,
    ProtocolOptions, PulseSequence, Rotation, Transition,
};
pub use solver::{evolve, ChannelIntegral, EvolveOptions, Generator, InvariantStats, SimResult, TimeGrid};
