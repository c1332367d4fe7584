//! Circuit decomposition of each layer and the masked circuit-graph forward.

pub mod ablation;
pub mod dump;
pub mod engine;
pub mod layout;

pub use ablation::{ablate_value, AblationStrategy, ReceiverContext, DEFAULT_NOISE_VARIANCE};
pub use engine::{decompose_layer, masked_forward, CircuitActivations, CircuitEngine, LayerState, Suffix};
pub use layout::{CircuitId, CircuitKind, CircuitLayout};
