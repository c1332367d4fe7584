pub mod analytics;
pub mod circuit;
pub mod datagen;
pub mod error;
pub mod graph;
pub mod mediation;
pub mod model_io;
pub mod pruning;
pub mod reference;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision aliases used by the command-line driver.
pub type Params = model_io::ModelParams<f32>;
pub type Logits = reference::LogitsRow<f32>;
pub type Engine<'a> = circuit::CircuitEngine<'a, f32>;
/// Double-precision aliases for oracle checks.
pub type Params64 = model_io::ModelParams<f64>;
pub type Logits64 = reference::LogitsRow<f64>;
