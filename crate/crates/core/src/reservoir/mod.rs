//! Erase-and-write reservoir dynamics: input encoding, the reset-and-evolve
//! map, time multiplexing over virtual nodes, and feature extraction.

mod engine;
mod features;
mod observables;
mod state;

pub use engine::{run_sequence, EngineState, ReservoirEngine, ReservoirSpec};
pub use features::{apply_measurement_noise, feature_labels, FeatureMatrix, FeatureMetadata};
pub use observables::{Family, Observable, ObservableSet};
pub use state::{
    encode_input, inject_and_evolve, measure_features, partial_trace_site1, replace_site1, PropagatorCache, ReservoirState,
    HERMITICITY_TOLERANCE, IMAGINARY_TOLERANCE, POSITIVITY_TOLERANCE, TRACE_TOLERANCE,
};
