//! Independent nested-`Vec` implementation of the circuit graph, written
//! directly from the circuit definitions. Shared by several test targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use skillpath::circuit::CircuitId;
use skillpath::graph::{EdgeId, EdgeMask, EdgeUniverse};
use skillpath::model_io::{ModelConfig, ModelParams};
use skillpath::tensor::Matrix;

pub type M = Vec<Vec<f64>>;

pub fn from_matrix(m: &Matrix<f64>) -> M {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn zeros(n: usize, d: usize) -> M {
    vec![vec![0.0; d]; n]
}

pub fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn sub(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect()
}

pub fn scale(a: &M, s: f64) -> M {
    a.iter().map(|x| x.iter().map(|v| v * s).collect()).collect()
}

pub fn add_row(a: &M, b: &[f64]) -> M {
    a.iter().map(|x| x.iter().zip(b).map(|(p, q)| p + q).collect()).collect()
}

pub fn mm(a: &M, w: &Matrix<f64>) -> M {
    a.iter()
        .map(|row| {
            (0..w.cols())
                .map(|c| row.iter().enumerate().map(|(k, v)| v * w.get(k, c)).sum())
                .collect()
        })
        .collect()
}

pub fn ln(x: &M, g: &[f64], b: &[f64], eps: f64) -> M {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            row.iter().enumerate().map(|(k, v)| (v - mu) / (var + eps).sqrt() * g[k] + b[k]).collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub struct Oracle<'a> {
    pub p: &'a ModelParams<f64>,
}

impl Oracle<'_> {
    pub fn eps(&self) -> f64 {
        self.p.config.layer_norm_eps
    }

    pub fn embed(&self, tokens: &[u32]) -> M {
        tokens
            .iter()
            .enumerate()
            .map(|(pos, &t)| {
                let te = self.p.token_embedding.row(t as usize);
                let pe = self.p.position_embedding.row(pos);
                te.iter().zip(pe).map(|(a, b)| a + b).collect()
            })
            .collect()
    }

    pub fn head(&self, l: usize, h: usize, x: &M) -> M {
        let lp = &self.p.layers[l];
        let hp = &lp.attn.heads[h];
        let z = ln(x, &lp.ln1.weight, &lp.ln1.bias, self.eps());
        let q = add_row(&mm(&z, &hp.w_q), &hp.b_q);
        let k = add_row(&mm(&z, &hp.w_k), &hp.b_k);
        let v = add_row(&mm(&z, &hp.w_v), &hp.b_v);
        let dh = q[0].len() as f64;
        let n = x.len();
        let mut mixed = zeros(n, v[0].len());
        for i in 0..n {
            let s: Vec<f64> = (0..=i)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / dh.sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let tot: f64 = e.iter().sum();
            for j in 0..=i {
                for c in 0..v[0].len() {
                    mixed[i][c] += e[j] / tot * v[j][c];
                }
            }
        }
        mm(&mixed, &hp.w_o)
    }

    pub fn g(&self, l: usize, x: &M) -> M {
        let lp = &self.p.layers[l];
        let z = ln(x, &lp.ln2.weight, &lp.ln2.bias, self.eps());
        let mut hdn = add_row(&mm(&z, &lp.mlp.w_in), &lp.mlp.b_in);
        for row in &mut hdn {
            for v in row.iter_mut() {
                *v = gelu(*v);
            }
        }
        mm(&hdn, &lp.mlp.w_out)
    }

    /// Outputs `C^1..=C^{2H+4}` given the residual `x` and each memory receiver's input.
    pub fn layer(&self, l: usize, x: &M, inputs: &[M]) -> Vec<M> {
        let h_count = self.p.config.n_heads;
        let lp = &self.p.layers[l];
        let heads: Vec<M> = (0..h_count).map(|h| self.head(l, h, &inputs[h])).collect();
        let mlp = self.g(l, &inputs[h_count]);
        let head_mlp: Vec<M> = (0..h_count).map(|h| self.g(l, &self.head(l, h, &inputs[h_count + 1 + h]))).collect();
        let s = heads.iter().fold(zeros(x.len(), x[0].len()), |a, b| add(&a, b));
        let gs = self.g(l, &s);
        let c_hs = heads.iter().fold(gs.clone(), |a, h| sub(&a, &self.g(l, h)));
        let c_rs = sub(&sub(&self.g(l, &add_row(&add(x, &s), &lp.attn.b_o)), &self.g(l, x)), &gs);
        let bias: Vec<f64> = lp.attn.b_o.iter().zip(&lp.mlp.b_out).map(|(a, b)| a + b).collect();
        let mut out = heads;
        out.push(mlp);
        out.extend(head_mlp);
        out.push(c_hs);
        out.push(c_rs);
        out.push(vec![bias; x.len()]);
        out
    }

    /// Final-position logits with the removed edges ablated (zero or mean).
    pub fn masked_logits(&self, tokens: &[u32], u: &EdgeUniverse, removed: &BTreeSet<usize>, mean: bool) -> Vec<f64> {
        let h_count = self.p.config.n_heads;
        let n_mem = 2 * h_count + 1;
        let n_out = 2 * h_count + 4;
        let emb = self.embed(tokens);
        let mut outs: Vec<Vec<M>> = Vec::new();
        for l in 0..self.p.config.n_layers {
            let mut x = emb.clone();
            for prev in &outs {
                for o in prev {
                    x = add(&x, o);
                }
            }
            let mut inputs = Vec::new();
            for j in 1..=n_mem {
                let mut r = emb.clone();
                let mut dropped = 0usize;
                let mut kept = Vec::new();
                for (lp, prev) in outs.iter().enumerate() {
                    for (i0, o) in prev.iter().enumerate().take(n_out) {
                        let i = i0 + 1;
                        let e = EdgeId::new(CircuitId::new(lp, i), CircuitId::new(l, j));
                        if u.contains(e) {
                            if removed.contains(&u.index_of(e).unwrap()) {
                                dropped += 1;
                                continue;
                            }
                            kept.push(o.clone());
                        }
                        r = add(&r, o);
                    }
                }
                if mean && dropped > 0 && !kept.is_empty() {
                    let avg = scale(&kept.iter().fold(zeros(r.len(), r[0].len()), |a, b| add(&a, b)), 1.0 / kept.len() as f64);
                    for _ in 0..dropped {
                        r = add(&r, &avg);
                    }
                }
                inputs.push(r);
            }
            outs.push(self.layer(l, &x, &inputs));
        }
        let mut fin = emb;
        for prev in &outs {
            for o in prev {
                fin = add(&fin, o);
            }
        }
        let last = ln(&vec![fin.last().unwrap().clone()], &self.p.ln_f.weight, &self.p.ln_f.bias, self.eps());
        let wte = &self.p.token_embedding;
        (0..wte.rows()).map(|v| wte.row(v).iter().zip(&last[0]).map(|(a, b)| a * b).sum()).collect()
    }
}

pub fn toy() -> ModelParams<f64> {
    ModelParams::random(ModelConfig::toy(2, 2, 16, 31), 7, 0.4).unwrap()
}

pub fn toy3() -> ModelParams<f64> {
    ModelParams::random(ModelConfig::toy(3, 2, 16, 37), 11, 0.4).unwrap()
}

pub fn tokens() -> Vec<u32> {
    vec![4, 9, 30, 9, 2, 17]
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_mask(u: EdgeUniverse, seed: u64, keep: f64) -> BTreeSet<usize> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..u.len()).filter(|_| rng.random::<f64>() > keep).collect()
}

pub fn replay(p: &ModelParams<f64>, t: &[u32], order: &[usize], u: EdgeUniverse) -> (BTreeSet<usize>, Vec<bool>) {
    let o = Oracle { p };
    let argmax = |v: &[f64]| {
        let mut best = 0;
        for (i, &x) in v.iter().enumerate() {
            if x > v[best] {
                best = i;
            }
        }
        best
    };
    let target = argmax(&o.masked_logits(t, &u, &BTreeSet::new(), false));
    let mut removed = BTreeSet::new();
    let mut decisions = Vec::new();
    for &idx in order {
        removed.insert(idx);
        let ok = argmax(&o.masked_logits(t, &u, &removed, false)) == target;
        if !ok {
            removed.remove(&idx);
        }
        decisions.push(ok);
    }
    (removed, decisions)
}

pub fn brute_paths(mask: &EdgeMask, max_nodes: usize) -> Vec<Vec<CircuitId>> {
    let u = *mask.universe();
    let nodes: Vec<CircuitId> = (0..u.n_nodes()).map(|s| u.node_at_slot(s)).collect();
    let mut out = Vec::new();
    pub fn grow(cur: &mut Vec<CircuitId>, nodes: &[CircuitId], mask: &EdgeMask, max: usize, out: &mut Vec<Vec<CircuitId>>) {
        if cur.len() >= 2 {
            out.push(cur.clone());
        }
        if cur.len() == max {
            return;
        }
        let last = *cur.last().unwrap();
        for &n in nodes {
            let e = EdgeId::new(last, n);
            if mask.universe().contains(e) && mask.is_kept_edge(e) {
                cur.push(n);
                grow(cur, nodes, mask, max, out);
                cur.pop();
            }
        }
    }
    for &n in &nodes {
        grow(&mut vec![n], &nodes, mask, max_nodes, &mut out);
    }
    out.sort();
    out
}
