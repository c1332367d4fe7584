use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Architecture hyper-parameters of a GPT-2-family model.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub n_ctx: usize,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    pub fn gpt2_small() -> Self {
        ModelConfig {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            d_mlp: 3072,
            vocab_size: 50257,
            n_ctx: 1024,
            layer_norm_eps: 1e-5,
        }
    }

    /// Small config for tests: `d_mlp = 4 · d_model`.
    pub fn toy(n_layers: usize, n_heads: usize, d_model: usize, vocab_size: usize) -> Self {
        ModelConfig {
            n_layers,
            n_heads,
            d_model,
            d_mlp: 4 * d_model,
            vocab_size,
            n_ctx: 64,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.vocab_size == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_mlp != 4 * self.d_model {
            return Err(Error::Config(format!(
                "d_mlp {} must be 4 * d_model ({})",
                self.d_mlp,
                4 * self.d_model
            )));
        }
        if self.n_ctx == 0 {
            return Err(Error::Config("n_ctx must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// One attention head, sliced out of the fused `c_attn` / `c_proj` weights.
///
/// All matrices keep the `x · W` orientation of the checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    /// `d_model × d_head`
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub b_q: Vec<T>,
    pub b_k: Vec<T>,
    pub b_v: Vec<T>,
    /// `d_head × d_model`: this head's rows of the output projection.
    pub w_o: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub heads: Vec<HeadParams<T>>,
    /// Output projection bias, shared by all heads.
    pub b_o: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    /// `d_model × d_mlp` (`mlp.c_fc.weight`)
    pub w_in: Matrix<T>,
    pub b_in: Vec<T>,
    /// `d_mlp × d_model` (`mlp.c_proj.weight`)
    pub w_out: Matrix<T>,
    pub b_out: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub ln1: LayerNormParams<T>,
    pub attn: AttentionParams<T>,
    pub ln2: LayerNormParams<T>,
    pub mlp: MlpParams<T>,
}

/// All weights of a GPT-2-architecture model. Immutable after construction.
///
/// The unembedding is tied to the token embedding: `logits = h · wteᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    /// `vocab × d_model`
    pub token_embedding: Matrix<T>,
    /// `n_ctx × d_model`
    pub position_embedding: Matrix<T>,
    pub layers: Vec<LayerParams<T>>,
    pub ln_f: LayerNormParams<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn eps(&self) -> T {
        T::lit(self.config.layer_norm_eps)
    }

    /// Checks every tensor against the config.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let dh = c.d_head();
        let check = |name: String, found: (usize, usize), expected: (usize, usize)| {
            if found != expected {
                Err(Error::ShapeMismatch {
                    name,
                    expected: vec![expected.0, expected.1],
                    found: vec![found.0, found.1],
                })
            } else {
                Ok(())
            }
        };
        let check_vec = |name: String, found: usize, expected: usize| {
            if found != expected {
                Err(Error::ShapeMismatch {
                    name,
                    expected: vec![expected],
                    found: vec![found],
                })
            } else {
                Ok(())
            }
        };
        check(
            "wte.weight".into(),
            self.token_embedding.shape(),
            (c.vocab_size, c.d_model),
        )?;
        check(
            "wpe.weight".into(),
            self.position_embedding.shape(),
            (c.n_ctx, c.d_model),
        )?;
        if self.layers.len() != c.n_layers {
            return Err(Error::Config(format!(
                "config declares {} layers, found {}",
                c.n_layers,
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            check_vec(format!("h.{l}.ln_1.weight"), layer.ln1.weight.len(), c.d_model)?;
            check_vec(format!("h.{l}.ln_1.bias"), layer.ln1.bias.len(), c.d_model)?;
            check_vec(format!("h.{l}.ln_2.weight"), layer.ln2.weight.len(), c.d_model)?;
            check_vec(format!("h.{l}.ln_2.bias"), layer.ln2.bias.len(), c.d_model)?;
            if layer.attn.heads.len() != c.n_heads {
                return Err(Error::Config(format!(
                    "layer {l} has {} heads, config declares {}",
                    layer.attn.heads.len(),
                    c.n_heads
                )));
            }
            for (h, head) in layer.attn.heads.iter().enumerate() {
                let n = format!("h.{l}.attn.c_attn.weight[head {h}]");
                check(n.clone(), head.w_q.shape(), (c.d_model, dh))?;
                check(n.clone(), head.w_k.shape(), (c.d_model, dh))?;
                check(n, head.w_v.shape(), (c.d_model, dh))?;
                let n = format!("h.{l}.attn.c_attn.bias[head {h}]");
                check_vec(n.clone(), head.b_q.len(), dh)?;
                check_vec(n.clone(), head.b_k.len(), dh)?;
                check_vec(n, head.b_v.len(), dh)?;
                check(
                    format!("h.{l}.attn.c_proj.weight[head {h}]"),
                    head.w_o.shape(),
                    (dh, c.d_model),
                )?;
            }
            check_vec(format!("h.{l}.attn.c_proj.bias"), layer.attn.b_o.len(), c.d_model)?;
            check(
                format!("h.{l}.mlp.c_fc.weight"),
                layer.mlp.w_in.shape(),
                (c.d_model, c.d_mlp),
            )?;
            check_vec(format!("h.{l}.mlp.c_fc.bias"), layer.mlp.b_in.len(), c.d_mlp)?;
            check(
                format!("h.{l}.mlp.c_proj.weight"),
                layer.mlp.w_out.shape(),
                (c.d_mlp, c.d_model),
            )?;
            check_vec(format!("h.{l}.mlp.c_proj.bias"), layer.mlp.b_out.len(), c.d_model)?;
        }
        check_vec("ln_f.weight".into(), self.ln_f.weight.len(), c.d_model)?;
        check_vec("ln_f.bias".into(), self.ln_f.bias.len(), c.d_model)?;
        Ok(())
    }

    /// Gaussian-initialised model for tests and toy experiments.
    ///
    /// Weights are `N(0, scale²)`; layernorm gains are jittered around one so the
    /// affine part is exercised.
    pub fn random(config: ModelConfig, seed: u64, scale: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mat = |r: usize, c: usize, rng: &mut ChaCha8Rng| {
            let data = (0..r * c).map(|_| T::lit(normal.sample(rng))).collect();
            Matrix::from_vec(r, c, data).expect("sized")
        };
        let vec = |n: usize, rng: &mut ChaCha8Rng| -> Vec<T> {
            (0..n).map(|_| T::lit(normal.sample(rng))).collect()
        };
        let ln = |n: usize, rng: &mut ChaCha8Rng| LayerNormParams {
            weight: (0..n).map(|_| T::lit(1.0 + rng.random_range(-0.2..0.2))).collect(),
            bias: (0..n).map(|_| T::lit(rng.random_range(-0.1..0.1))).collect(),
        };
        let d = config.d_model;
        let dh = config.d_head();
        let token_embedding = mat(config.vocab_size, d, &mut rng);
        let position_embedding = mat(config.n_ctx, d, &mut rng);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let ln1 = ln(d, &mut rng);
            let heads = (0..config.n_heads)
                .map(|_| HeadParams {
                    w_q: mat(d, dh, &mut rng),
                    w_k: mat(d, dh, &mut rng),
                    w_v: mat(d, dh, &mut rng),
                    b_q: vec(dh, &mut rng),
                    b_k: vec(dh, &mut rng),
                    b_v: vec(dh, &mut rng),
                    w_o: mat(dh, d, &mut rng),
                })
                .collect();
            let b_o = vec(d, &mut rng);
            let ln2 = ln(d, &mut rng);
            let mlp = MlpParams {
                w_in: mat(d, config.d_mlp, &mut rng),
                b_in: vec(config.d_mlp, &mut rng),
                w_out: mat(config.d_mlp, d, &mut rng),
                b_out: vec(d, &mut rng),
            };
            layers.push(LayerParams {
                ln1,
                attn: AttentionParams { heads, b_o },
                ln2,
                mlp,
            });
        }
        let ln_f = ln(d, &mut rng);
        let params = ModelParams {
            config,
            token_embedding,
            position_embedding,
            layers,
            ln_f,
        };
        params.validate()?;
        Ok(params)
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let v = |x: &[T]| x.iter().map(|&a| U::lit(a.as_f64())).collect::<Vec<U>>();
        let ln = |p: &LayerNormParams<T>| LayerNormParams {
            weight: v(&p.weight),
            bias: v(&p.bias),
        };
        ModelParams {
            config: self.config.clone(),
            token_embedding: self.token_embedding.cast(),
            position_embedding: self.position_embedding.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1: ln(&l.ln1),
                    attn: AttentionParams {
                        heads: l
                            .attn
                            .heads
                            .iter()
                            .map(|h| HeadParams {
                                w_q: h.w_q.cast(),
                                w_k: h.w_k.cast(),
                                w_v: h.w_v.cast(),
                                b_q: v(&h.b_q),
                                b_k: v(&h.b_k),
                                b_v: v(&h.b_v),
                                w_o: h.w_o.cast(),
                            })
                            .collect(),
                        b_o: v(&l.attn.b_o),
                    },
                    ln2: ln(&l.ln2),
                    mlp: MlpParams {
                        w_in: l.mlp.w_in.cast(),
                        b_in: v(&l.mlp.b_in),
                        w_out: l.mlp.w_out.cast(),
                        b_out: v(&l.mlp.b_out),
                    },
                })
                .collect(),
            ln_f: ln(&self.ln_f),
        }
    }
}

/// Token ids fed to the model.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        TokenSequence(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Model-input precondition: nonempty, in-vocabulary, within the context window.
    pub fn check_input(&self, config: &ModelConfig) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::EmptySequence);
        }
        if self.0.len() > config.n_ctx {
            return Err(Error::SequenceTooLong {
                len: self.0.len(),
                max: config.n_ctx,
            });
        }
        if let Some(&id) = self.0.iter().find(|&&id| id as usize >= config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: config.vocab_size,
            });
        }
        Ok(())
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        TokenSequence(ids)
    }
}
