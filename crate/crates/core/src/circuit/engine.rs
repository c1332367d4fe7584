//! Per-layer circuit outputs and the masked circuit-graph forward.
//!
//! Writing `g(Z) = gelu(ln_2(Z) W_1 + b_1) W_2` and `head_h(R)` for head `h`
//! applied to `ln_1(R)` (value bias included), a layer with residual input
//! `X` and receiver inputs `R^j` produces
//!
//! ```text
//! C^{1+h}    = head_h(R^{1+h})
//! C^{H+1}    = g(R^{H+1})
//! C^{H+2+h}  = g(head_h(R^{H+2+h}))
//! C^{2H+2}   = g(S) - Σ_h g(C^{1+h})                 S = Σ_h C^{1+h}
//! C^{2H+3}   = g(X + S + b_O) - g(X) - g(S)
//! C^{2H+4}   = b_O + b_2
//! ```
//!
//! With every `R^j = X` the MLP terms telescope to `g(X + S + b_O)`, so
//! `X + Σ_i C^i` is exactly the block output. `b_1` sits inside every `g`
//! because it cannot be separated from the nonlinearity; only `b_O` and
//! `b_2` are collected by the bias circuit.
//!
//! Every receiver input is the embedding plus the outputs of all circuits
//! in earlier layers, summed layer-major, index-minor. Removed memory-circuit
//! edges contribute their ablation value instead. A receiver with no removed
//! edge sees exactly the residual `X`, accumulated in the same order.

use super::ablation::{ablate_value, mean_of, AblationStrategy, ReceiverContext};
use super::layout::{CircuitId, CircuitLayout};
use crate::error::{Error, Result};
use crate::graph::{EdgeId, EdgeMask, EdgeUniverse};
use crate::model_io::{ModelParams, TokenSequence};
use crate::reference::{embed, head_on_residual, mlp_on_residual, project_to_vocab, LogitsRow};
use crate::scalar::Scalar;
use crate::tensor::{layer_norm, Matrix};

/// Everything computed for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState<T> {
    /// Residual input `X` (circuit 0).
    pub residual: Matrix<T>,
    /// Outputs of circuits `1..=2H+4`; circuit `i` is at `outputs[i - 1]`.
    pub outputs: Vec<Matrix<T>>,
    /// `g(C^{1+h})` per head, kept for the head-synergy term.
    head_mlp: Vec<Matrix<T>>,
    /// `g(X)`.
    residual_mlp: Matrix<T>,
}

impl<T: Scalar> LayerState<T> {
    pub fn output(&self, index: usize) -> &Matrix<T> {
        if index == 0 {
            &self.residual
        } else {
            &self.outputs[index - 1]
        }
    }

    /// `X + Σ_i C^i` in index order: the next layer's residual.
    pub fn next_residual(&self) -> Matrix<T> {
        let mut x = self.residual.clone();
        for c in &self.outputs {
            x.add_assign(c);
        }
        x
    }
}

/// All circuit outputs of one (possibly masked) forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CircuitActivations<T> {
    pub embedding: Matrix<T>,
    pub layers: Vec<LayerState<T>>,
    pub final_residual: Matrix<T>,
}

impl<T: Scalar> CircuitActivations<T> {
    pub fn output(&self, c: CircuitId) -> &Matrix<T> {
        self.layers[c.layer].output(c.index)
    }

    /// Replaces layers from `suffix.start` upward.
    pub fn apply(&mut self, suffix: Suffix<T>) {
        self.layers.truncate(suffix.start);
        self.layers.extend(suffix.layers);
        self.final_residual = suffix.final_residual;
    }
}

/// Recomputed upper part of a forward pass, produced by a trial.
#[derive(Clone, Debug)]
pub struct Suffix<T> {
    pub start: usize,
    pub layers: Vec<LayerState<T>>,
    pub final_residual: Matrix<T>,
}

/// Lower layers from a cached pass followed by freshly computed ones.
struct Stack<'a, T> {
    prefix: &'a [LayerState<T>],
    suffix: &'a [LayerState<T>],
}

impl<'a, T> Stack<'a, T> {
    fn get(&self, layer: usize) -> &'a LayerState<T> {
        if layer < self.prefix.len() {
            &self.prefix[layer]
        } else {
            &self.suffix[layer - self.prefix.len()]
        }
    }
}

/// Masked forward over one token sequence.
pub struct CircuitEngine<'a, T> {
    params: &'a ModelParams<T>,
    universe: EdgeUniverse,
    layout: CircuitLayout,
    ablation: AblationStrategy,
    sample_id: u64,
    embedding: Matrix<T>,
    eps: T,
}

impl<'a, T: Scalar> CircuitEngine<'a, T> {
    pub fn new(
        params: &'a ModelParams<T>,
        tokens: &TokenSequence,
        universe: EdgeUniverse,
        ablation: AblationStrategy,
        sample_id: u64,
    ) -> Result<Self> {
        let c = &params.config;
        if universe.layers != c.n_layers || universe.heads != c.n_heads {
            return Err(Error::UniverseMismatch(format!(
                "universe has {} layers × {} heads, model has {} × {}",
                universe.layers, universe.heads, c.n_layers, c.n_heads
            )));
        }
        Ok(Self {
            params,
            universe,
            layout: CircuitLayout::new(c.n_heads),
            ablation,
            sample_id,
            embedding: embed(params, tokens)?,
            eps: params.eps(),
        })
    }

    pub fn universe(&self) -> &EdgeUniverse {
        &self.universe
    }

    pub fn layout(&self) -> CircuitLayout {
        self.layout
    }

    pub fn ablation(&self) -> &AblationStrategy {
        &self.ablation
    }

    pub fn n_tokens(&self) -> usize {
        self.embedding.rows()
    }

    fn check_mask(&self, mask: &EdgeMask) -> Result<()> {
        if mask.universe() != &self.universe {
            return Err(Error::UniverseMismatch(format!(
                "mask over {:?}, engine over {:?}",
                mask.universe(),
                self.universe
            )));
        }
        Ok(())
    }

    fn g(&self, layer: usize, z: &Matrix<T>) -> Matrix<T> {
        mlp_on_residual(&self.params.layers[layer], z, self.eps)
    }

    fn head(&self, layer: usize, head: usize, r: &Matrix<T>) -> Matrix<T> {
        head_on_residual(&self.params.layers[layer], head, r, self.eps)
    }

    /// Input of receiver `(layer, index)`, or `None` when it equals the residual.
    fn receiver_input(
        &self,
        mask: &EdgeMask,
        stack: &Stack<'_, T>,
        layer: usize,
        index: usize,
    ) -> Option<Matrix<T>> {
        if layer == 0 {
            return None;
        }
        let receiver = CircuitId::new(layer, index);
        let range = self.universe.receiver_range(receiver);
        if !mask.any_removed_in(range.clone()) {
            return None;
        }
        let first = self.universe.first_sender_layer(layer);
        let m = self.layout.n_memory();
        let kept: Vec<&Matrix<T>> = if matches!(self.ablation, AblationStrategy::Mean) {
            range
                .clone()
                .filter(|&i| !mask.is_removed(i))
                .map(|i| {
                    let rel = i - range.start;
                    stack.get(first + rel / m).output(rel % m + 1)
                })
                .collect()
        } else {
            Vec::new()
        };
        let mean = matches!(self.ablation, AblationStrategy::Mean)
            .then(|| mean_of(&kept, &self.embedding));
        let mut x = self.embedding.clone();
        for l in 0..layer {
            let state = stack.get(l);
            for i in 1..=self.layout.n_circuits() - 1 {
                let out = state.output(i);
                if l >= first && self.layout.is_memory(i) {
                    let idx = range.start + (l - first) * m + (i - 1);
                    if mask.is_removed(idx) {
                        match (&self.ablation, &mean) {
                            (AblationStrategy::Zero, _) => {}
                            (AblationStrategy::Mean, Some(mean)) => x.add_assign(mean),
                            (strategy, _) => {
                                let ctx = ReceiverContext {
                                    kept_senders: &kept,
                                    sample_id: self.sample_id,
                                    edge_index: idx,
                                };
                                x.add_assign(&ablate_value(strategy, out, &ctx));
                            }
                        }
                        continue;
                    }
                }
                x.add_assign(out);
            }
        }
        Some(x)
    }

    /// Head-synergy and residual-synergy terms.
    fn synergy(
        &self,
        layer: usize,
        residual: &Matrix<T>,
        residual_mlp: &Matrix<T>,
        heads: &[&Matrix<T>],
        head_mlp: &[Matrix<T>],
    ) -> (Matrix<T>, Matrix<T>) {
        let (n, d) = residual.shape();
        let mut s = Matrix::zeros(n, d);
        for h in heads {
            s.add_assign(h);
        }
        let gs = self.g(layer, &s);
        let mut c26 = gs.clone();
        for gh in head_mlp {
            c26.sub_assign(gh);
        }
        let mut mid = residual.clone();
        mid.add_assign(&s);
        mid.add_row_vector(&self.params.layers[layer].attn.b_o);
        let mut c27 = self.g(layer, &mid);
        c27.sub_assign(residual_mlp);
        c27.sub_assign(&gs);
        (c26, c27)
    }

    fn bias(&self, layer: usize) -> Matrix<T> {
        let p = &self.params.layers[layer];
        let b: Vec<T> = p
            .attn
            .b_o
            .iter()
            .zip(&p.mlp.b_out)
            .map(|(&a, &b)| a + b)
            .collect();
        Matrix::broadcast_row(self.n_tokens(), &b)
    }

    /// One layer from its residual and per-receiver inputs (`None` = residual).
    fn compute_layer(&self, layer: usize, residual: Matrix<T>, inputs: &[Option<Matrix<T>>]) -> LayerState<T> {
        let lay = self.layout;
        let h_count = lay.n_heads;
        let input = |j: usize| inputs[j - 1].as_ref();
        let p = &self.params.layers[layer];
        let shared_normed = layer_norm(&residual, &p.ln1.weight, &p.ln1.bias, self.eps);

        let head_out: Vec<Matrix<T>> = (0..h_count)
            .map(|h| match input(lay.attention(h)) {
                None => crate::reference::head_output(&p.attn.heads[h], &shared_normed),
                Some(r) => self.head(layer, h, r),
            })
            .collect();
        let residual_mlp = self.g(layer, &residual);
        let mlp_out = match input(lay.mlp()) {
            None => residual_mlp.clone(),
            Some(r) => self.g(layer, r),
        };
        let mut head_mlp = Vec::with_capacity(h_count);
        let mut att_mlp = Vec::with_capacity(h_count);
        for h in 0..h_count {
            let gh = self.g(layer, &head_out[h]);
            let own = match (input(lay.attention_mlp(h)), input(lay.attention(h))) {
                (None, None) => gh.clone(),
                (None, Some(_)) => {
                    let shared_head = crate::reference::head_output(&p.attn.heads[h], &shared_normed);
                    self.g(layer, &shared_head)
                }
                (Some(r), _) => self.g(layer, &self.head(layer, h, r)),
            };
            head_mlp.push(gh);
            att_mlp.push(own);
        }
        let head_refs: Vec<&Matrix<T>> = head_out.iter().collect();
        let (c26, c27) = self.synergy(layer, &residual, &residual_mlp, &head_refs, &head_mlp);

        let mut outputs = Vec::with_capacity(lay.n_circuits() - 1);
        outputs.extend(head_out);
        outputs.push(mlp_out);
        outputs.extend(att_mlp);
        outputs.push(c26);
        outputs.push(c27);
        outputs.push(self.bias(layer));
        LayerState {
            residual,
            outputs,
            head_mlp,
            residual_mlp,
        }
    }

    fn layer_from_stack(&self, mask: &EdgeMask, stack: &Stack<'_, T>, layer: usize, residual: Matrix<T>) -> LayerState<T> {
        let inputs: Vec<Option<Matrix<T>>> = (1..=self.layout.n_memory())
            .map(|j| self.receiver_input(mask, stack, layer, j))
            .collect();
        self.compute_layer(layer, residual, &inputs)
    }

    /// Recomputes layers `start..` on top of `prefix` (which holds layers `0..start`).
    fn run_from(&self, mask: &EdgeMask, prefix: &[LayerState<T>], start: usize, first: Option<LayerState<T>>) -> Suffix<T> {
        let n_layers = self.params.layers.len();
        let mut layers: Vec<LayerState<T>> = Vec::with_capacity(n_layers - start);
        let mut from = start;
        if let Some(state) = first {
            layers.push(state);
            from += 1;
        }
        for l in from..n_layers {
            let residual = match layers.last() {
                Some(s) => s.next_residual(),
                None if l == 0 => self.embedding.clone(),
                None => prefix[l - 1].next_residual(),
            };
            let state = {
                let stack = Stack {
                    prefix,
                    suffix: &layers,
                };
                self.layer_from_stack(mask, &stack, l, residual)
            };
            layers.push(state);
        }
        let final_residual = match layers.last() {
            Some(s) => s.next_residual(),
            None => prefix[n_layers - 1].next_residual(),
        };
        Suffix {
            start,
            layers,
            final_residual,
        }
    }

    /// Full masked forward.
    pub fn run(&self, mask: &EdgeMask) -> Result<CircuitActivations<T>> {
        self.check_mask(mask)?;
        let suffix = self.run_from(mask, &[], 0, None);
        Ok(CircuitActivations {
            embedding: self.embedding.clone(),
            layers: suffix.layers,
            final_residual: suffix.final_residual,
        })
    }

    /// Forward of `mask` reusing `base` (computed under `mask` minus `edge`).
    ///
    /// Only the receiver of `edge` changes at its layer, plus the synergy
    /// terms when that receiver is an attention head; every higher layer is
    /// recomputed in full.
    pub fn trial(&self, base: &CircuitActivations<T>, mask: &EdgeMask, edge: EdgeId) -> Result<Suffix<T>> {
        self.check_mask(mask)?;
        self.universe.index_of(edge)?;
        let l = edge.receiver.layer;
        let j = edge.receiver.index;
        let prefix = &base.layers[..l];
        let stack = Stack { prefix, suffix: &[] };
        let input = self
            .receiver_input(mask, &stack, l, j)
            .expect("receiver has a removed edge");
        let mut state = base.layers[l].clone();
        let lay = self.layout;
        let kind = lay.kind(j).expect("memory index");
        match kind {
            super::CircuitKind::Attention { head } => {
                let out = self.head(l, head, &input);
                state.head_mlp[head] = self.g(l, &out);
                state.outputs[j - 1] = out;
                let heads: Vec<&Matrix<T>> = (0..lay.n_heads)
                    .map(|h| &state.outputs[lay.attention(h) - 1])
                    .collect();
                let (c26, c27) = self.synergy(l, &state.residual, &state.residual_mlp, &heads, &state.head_mlp);
                state.outputs[lay.head_synergy() - 1] = c26;
                state.outputs[lay.residual_synergy() - 1] = c27;
            }
            super::CircuitKind::Mlp => {
                state.outputs[j - 1] = self.g(l, &input);
            }
            super::CircuitKind::AttentionMlp { head } => {
                state.outputs[j - 1] = self.g(l, &self.head(l, head, &input));
            }
            _ => unreachable!("edges only enter memory circuits"),
        }
        Ok(self.run_from(mask, prefix, l, Some(state)))
    }

    pub fn logits(&self, final_residual: &Matrix<T>) -> Result<LogitsRow<T>> {
        project_to_vocab(self.params, final_residual.row(final_residual.rows() - 1), true)
    }
}

/// Circuit outputs `C^0..=C^{2H+4}` of `layer` for residual input `x`.
pub fn decompose_layer<T: Scalar>(params: &ModelParams<T>, layer: usize, x: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
    let c = &params.config;
    if layer >= c.n_layers {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} out of range for {} layers",
            c.n_layers
        )));
    }
    if x.cols() != c.d_model {
        return Err(Error::DimensionMismatch {
            context: "decompose_layer",
            expected: c.d_model,
            found: x.cols(),
        });
    }
    if x.rows() == 0 || x.rows() > c.n_ctx {
        return Err(Error::DimensionMismatch {
            context: "decompose_layer rows",
            expected: c.n_ctx,
            found: x.rows(),
        });
    }
    let universe = EdgeUniverse::new(c.n_layers, c.n_heads, false);
    let tokens = TokenSequence::new(vec![0; x.rows()]);
    let engine = CircuitEngine::new(params, &tokens, universe, AblationStrategy::Zero, 0)?;
    let inputs = vec![None; engine.layout.n_memory()];
    let state = engine.compute_layer(layer, x.clone(), &inputs);
    let mut out = Vec::with_capacity(engine.layout.n_circuits());
    out.push(state.residual);
    out.extend(state.outputs);
    Ok(out)
}

/// Masked forward returning final logits and all circuit activations.
pub fn masked_forward<T: Scalar>(
    params: &ModelParams<T>,
    tokens: &TokenSequence,
    mask: &EdgeMask,
    ablation: AblationStrategy,
    sample_id: u64,
) -> Result<(LogitsRow<T>, CircuitActivations<T>)> {
    let engine = CircuitEngine::new(params, tokens, *mask.universe(), ablation, sample_id)?;
    let acts = engine.run(mask)?;
    Ok((engine.logits(&acts.final_residual)?, acts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::ModelConfig;
    use crate::reference::{forward, forward_with_states, layer_forward};

    fn toy() -> ModelParams<f64> {
        ModelParams::random(ModelConfig::toy(3, 2, 16, 23), 42, 0.3).unwrap()
    }

    fn tokens() -> TokenSequence {
        TokenSequence::new(vec![3, 17, 5, 5, 9, 1])
    }

    #[test]
    fn decomposition_sums_to_layer_output() {
        let p = toy();
        let trace = forward_with_states(&p, &tokens()).unwrap();
        for l in 0..3 {
            let x = &trace.residuals[l];
            let parts = decompose_layer(&p, l, x).unwrap();
            assert_eq!(parts.len(), 9);
            let mut sum = Matrix::zeros(x.rows(), x.cols());
            for c in &parts {
                sum.add_assign(c);
            }
            let expect = layer_forward(&p.layers[l], x, p.eps());
            assert!(sum.max_abs_diff(&expect) < 1e-12, "layer {l}");
        }
    }

    #[test]
    fn full_graph_matches_reference() {
        let p = toy();
        let mask = EdgeMask::empty(EdgeUniverse::new(3, 2, false));
        let (logits, _) = masked_forward(&p, &tokens(), &mask, AblationStrategy::Zero, 0).unwrap();
        let reference = forward(&p, &tokens()).unwrap();
        let diff = logits
            .values()
            .iter()
            .zip(reference.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn trial_equals_full_rerun() {
        let p = toy();
        let tokens = tokens();
        for strategy in [AblationStrategy::Zero, AblationStrategy::Mean, AblationStrategy::noise(3)] {
            for adjacent in [false, true] {
                let u = EdgeUniverse::new(3, 2, adjacent);
                let engine = CircuitEngine::new(&p, &tokens, u, strategy, 9).unwrap();
                let mut mask = EdgeMask::empty(u);
                let mut acts = engine.run(&mask).unwrap();
                for idx in (0..u.len()).step_by(7) {
                    mask.remove(idx);
                    let suffix = engine.trial(&acts, &mask, u.edge_at(idx)).unwrap();
                    acts.apply(suffix);
                    assert_eq!(acts, engine.run(&mask).unwrap(), "edge {idx}");
                }
            }
        }
    }

    #[test]
    fn lower_layers_untouched_by_removal() {
        let p = toy();
        let u = EdgeUniverse::new(3, 2, false);
        let engine = CircuitEngine::new(&p, &tokens(), u, AblationStrategy::Zero, 0).unwrap();
        let full = engine.run(&EdgeMask::empty(u)).unwrap();
        let mut mask = EdgeMask::empty(u);
        let e = EdgeId::from_array([0, 3, 2, 1]);
        mask.remove_edge(e).unwrap();
        let pruned = engine.run(&mask).unwrap();
        assert_eq!(full.layers[..2], pruned.layers[..2]);
        assert_ne!(full.layers[2], pruned.layers[2]);
    }

    #[test]
    fn bias_circuit_ignores_token_identity() {
        let p = toy();
        let a = masked_forward(&p, &tokens(), &EdgeMask::empty(EdgeUniverse::new(3, 2, false)), AblationStrategy::Zero, 0)
            .unwrap()
            .1;
        let other = TokenSequence::new(vec![0, 1, 2, 3, 4, 22]);
        let b = masked_forward(&p, &other, &EdgeMask::empty(EdgeUniverse::new(3, 2, false)), AblationStrategy::Zero, 0)
            .unwrap()
            .1;
        for l in 0..3 {
            assert_eq!(a.output(CircuitId::new(l, 8)), b.output(CircuitId::new(l, 8)));
        }
    }

    #[test]
    fn universe_must_match_model() {
        let p = toy();
        let mask = EdgeMask::empty(EdgeUniverse::new(12, 12, false));
        assert!(matches!(
            masked_forward(&p, &tokens(), &mask, AblationStrategy::Zero, 0),
            Err(Error::UniverseMismatch(_))
        ));
    }
}
