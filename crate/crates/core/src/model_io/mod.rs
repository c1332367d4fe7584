//! Loading and saving model parameters, tokenization.

pub mod checkpoint;
pub mod params;
pub mod tokenizer;

pub use checkpoint::{load_params, params_to_bytes, save_params, LoadReport, ParamManifest};
pub use params::{
    AttentionParams, HeadParams, LayerNormParams, LayerParams, MlpParams, ModelConfig,
    ModelParams, TokenSequence,
};
pub use tokenizer::Gpt2Tokenizer;
