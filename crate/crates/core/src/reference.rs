//! Plain GPT-2 forward pass.
//!
//! The building blocks here (`head_output`, `mlp_activation`, ...) are shared
//! with the circuit decomposition so both paths perform identical arithmetic.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model_io::{HeadParams, LayerParams, MlpParams, ModelParams, TokenSequence};
use crate::scalar::Scalar;
use crate::tensor::{causal_softmax, dot, gelu, layer_norm, layer_norm_row, Matrix};

/// Final-position logits over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitsRow<T> {
    values: Vec<T>,
}

impl<T: Scalar> LogitsRow<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn logit(&self, id: u32) -> T {
        self.values[id as usize]
    }

    /// Highest logit, ties broken by the lowest id.
    pub fn argmax(&self) -> u32 {
        self.argmax_excluding(&BTreeSet::new())
            .expect("argmax of an empty logits row")
    }

    pub fn argmax_excluding(&self, banned: &BTreeSet<u32>) -> Option<u32> {
        let mut best: Option<(u32, T)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            let id = i as u32;
            if banned.contains(&id) {
                continue;
            }
            match best {
                Some((_, b)) if !(v > b) => {}
                _ => best = Some((id, v)),
            }
        }
        best.map(|(id, _)| id)
    }

    /// The `k` highest ids, descending by logit, ties by ascending id.
    pub fn top_k(&self, k: usize) -> Vec<u32> {
        let mut ids: Vec<u32> = (0..self.values.len() as u32).collect();
        let cmp = |a: &u32, b: &u32| {
            let (va, vb) = (self.values[*a as usize], self.values[*b as usize]);
            vb.partial_cmp(&va)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(b))
        };
        let k = k.min(ids.len());
        if k == 0 {
            return Vec::new();
        }
        if k < ids.len() {
            ids.select_nth_unstable_by(k - 1, cmp);
            ids.truncate(k);
        }
        ids.sort_by(cmp);
        ids
    }

    /// 1-based rank of `id` under the same ordering as [`Self::top_k`].
    pub fn rank_of(&self, id: u32) -> usize {
        let v = self.values[id as usize];
        1 + self
            .values
            .iter()
            .enumerate()
            .filter(|&(i, &w)| w > v || (w == v && (i as u32) < id))
            .count()
    }

    pub fn log_softmax(&self) -> Vec<f64> {
        let max = self
            .values
            .iter()
            .map(|v| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = self
            .values
            .iter()
            .map(|v| (v.as_f64() - max).exp())
            .sum::<f64>()
            .ln()
            + max;
        self.values.iter().map(|v| v.as_f64() - lse).collect()
    }

    pub fn softmax(&self) -> Vec<f64> {
        self.log_softmax().into_iter().map(f64::exp).collect()
    }

    /// `KL(self ‖ other)` over the full vocabulary, in nats.
    pub fn kl_divergence(&self, other: &LogitsRow<T>) -> f64 {
        let lp = self.log_softmax();
        let lq = other.log_softmax();
        lp.iter()
            .zip(&lq)
            .map(|(&a, &b)| if a == f64::NEG_INFINITY { 0.0 } else { a.exp() * (a - b) })
            .sum::<f64>()
            .max(0.0)
    }
}

/// Token plus positional embedding, `N × d_model`.
pub fn embed<T: Scalar>(params: &ModelParams<T>, tokens: &TokenSequence) -> Result<Matrix<T>> {
    tokens.check_input(&params.config)?;
    let d = params.config.d_model;
    let mut out = Matrix::zeros(tokens.len(), d);
    for (pos, &id) in tokens.ids().iter().enumerate() {
        let row = out.row_mut(pos);
        let te = params.token_embedding.row(id as usize);
        let pe = params.position_embedding.row(pos);
        for k in 0..d {
            row[k] = te[k] + pe[k];
        }
    }
    Ok(out)
}

/// `x · W + b` with `b` broadcast over rows.
pub fn affine<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: &[T]) -> Matrix<T> {
    let mut out = x.matmul(w);
    out.add_row_vector(b);
    out
}

/// Causal attention pattern of one head on already-normalised input.
pub fn head_pattern<T: Scalar>(head: &HeadParams<T>, normed: &Matrix<T>) -> Matrix<T> {
    let q = affine(normed, &head.w_q, &head.b_q);
    let k = affine(normed, &head.w_k, &head.b_k);
    let mut scores = q.matmul(&k.transpose());
    scores.scale(T::lit(1.0 / (head.w_q.cols() as f64).sqrt()));
    causal_softmax(&mut scores);
    scores
}

/// One head's contribution `A (x W_V + b_V) W_O` on already-normalised input.
pub fn head_output<T: Scalar>(head: &HeadParams<T>, normed: &Matrix<T>) -> Matrix<T> {
    let pattern = head_pattern(head, normed);
    let v = affine(normed, &head.w_v, &head.b_v);
    pattern.matmul(&v).matmul(&head.w_o)
}

/// Head output on raw residual input, applying `ln_1` first.
pub fn head_on_residual<T: Scalar>(layer: &LayerParams<T>, head: usize, x: &Matrix<T>, eps: T) -> Matrix<T> {
    let normed = layer_norm(x, &layer.ln1.weight, &layer.ln1.bias, eps);
    head_output(&layer.attn.heads[head], &normed)
}

/// `gelu(x W_1 + b_1) W_2`; the output bias `b_2` is not included.
pub fn mlp_activation<T: Scalar>(mlp: &MlpParams<T>, normed: &Matrix<T>) -> Matrix<T> {
    let mut hidden = affine(normed, &mlp.w_in, &mlp.b_in);
    hidden.map_inplace(gelu);
    hidden.matmul(&mlp.w_out)
}

/// `mlp_activation(ln_2(z))`.
pub fn mlp_on_residual<T: Scalar>(layer: &LayerParams<T>, z: &Matrix<T>, eps: T) -> Matrix<T> {
    let normed = layer_norm(z, &layer.ln2.weight, &layer.ln2.bias, eps);
    mlp_activation(&layer.mlp, &normed)
}

/// One full transformer block.
pub fn layer_forward<T: Scalar>(layer: &LayerParams<T>, x: &Matrix<T>, eps: T) -> Matrix<T> {
    let normed = layer_norm(x, &layer.ln1.weight, &layer.ln1.bias, eps);
    let mut mid = x.clone();
    for head in &layer.attn.heads {
        mid.add_assign(&head_output(head, &normed));
    }
    mid.add_row_vector(&layer.attn.b_o);
    let mut out = mid.clone();
    out.add_assign(&mlp_on_residual(layer, &mid, eps));
    out.add_row_vector(&layer.mlp.b_out);
    out
}

/// Unembedding of one hidden state; `final_ln` applies `ln_f` first.
pub fn project_to_vocab<T: Scalar>(
    params: &ModelParams<T>,
    hidden: &[T],
    final_ln: bool,
) -> Result<LogitsRow<T>> {
    let d = params.config.d_model;
    if hidden.len() != d {
        return Err(Error::DimensionMismatch {
            context: "project_to_vocab",
            expected: d,
            found: hidden.len(),
        });
    }
    let mut h = hidden.to_vec();
    if final_ln {
        layer_norm_row(&mut h, &params.ln_f.weight, &params.ln_f.bias, params.eps());
    }
    let wte = &params.token_embedding;
    let values = (0..wte.rows()).map(|v| dot(wte.row(v), &h)).collect();
    Ok(LogitsRow::new(values))
}

/// Residual stream at every layer boundary.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// `residuals[l]` is the input to layer `l`; the last entry is the final residual.
    pub residuals: Vec<Matrix<T>>,
    pub logits: LogitsRow<T>,
}

pub fn forward_with_states<T: Scalar>(
    params: &ModelParams<T>,
    tokens: &TokenSequence,
) -> Result<ForwardTrace<T>> {
    let eps = params.eps();
    let mut x = embed(params, tokens)?;
    let mut residuals = Vec::with_capacity(params.layers.len() + 1);
    for layer in &params.layers {
        let next = layer_forward(layer, &x, eps);
        residuals.push(x);
        x = next;
    }
    let logits = project_to_vocab(params, x.row(x.rows() - 1), true)?;
    residuals.push(x);
    Ok(ForwardTrace { residuals, logits })
}

pub fn forward<T: Scalar>(params: &ModelParams<T>, tokens: &TokenSequence) -> Result<LogitsRow<T>> {
    Ok(forward_with_states(params, tokens)?.logits)
}

/// Appends `n_steps` argmax tokens, never choosing a banned id.
pub fn greedy_continue<T: Scalar>(
    params: &ModelParams<T>,
    tokens: &TokenSequence,
    n_steps: usize,
    banned: &BTreeSet<u32>,
) -> Result<TokenSequence> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("greedy_continue needs n_steps >= 1".into()));
    }
    let mut ids = tokens.ids().to_vec();
    for _ in 0..n_steps {
        let logits = forward(params, &TokenSequence::new(ids.clone()))?;
        let next = logits.argmax_excluding(banned).ok_or_else(|| {
            Error::InvalidArgument("every vocabulary id is banned".into())
        })?;
        ids.push(next);
    }
    Ok(TokenSequence::new(ids))
}
