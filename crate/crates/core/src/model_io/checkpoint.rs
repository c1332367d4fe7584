//! safetensors checkpoints with HuggingFace GPT-2 parameter names.
//!
//! Parameter layout (all weights in the `x · W` orientation of the original
//! Conv1D modules):
//!
//! | name                     | shape             |
//! |--------------------------|-------------------|
//! | `wte.weight`             | `[vocab, d]`      |
//! | `wpe.weight`             | `[n_ctx, d]`      |
//! | `h.{l}.ln_1.{weight,bias}` | `[d]`           |
//! | `h.{l}.attn.c_attn.weight` | `[d, 3d]` (Q ‖ K ‖ V, heads contiguous inside each) |
//! | `h.{l}.attn.c_attn.bias`   | `[3d]`          |
//! | `h.{l}.attn.c_proj.weight` | `[d, d]` (rows grouped by head) |
//! | `h.{l}.attn.c_proj.bias`   | `[d]`           |
//! | `h.{l}.ln_2.{weight,bias}` | `[d]`           |
//! | `h.{l}.mlp.c_fc.weight`    | `[d, 4d]`       |
//! | `h.{l}.mlp.c_fc.bias`      | `[4d]`          |
//! | `h.{l}.mlp.c_proj.weight`  | `[4d, d]`       |
//! | `h.{l}.mlp.c_proj.bias`    | `[d]`           |
//! | `ln_f.{weight,bias}`       | `[d]`           |
//!
//! The unembedding is not stored separately; it is `wte.weight` transposed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::params::{
    AttentionParams, HeadParams, LayerNormParams, LayerParams, MlpParams, ModelConfig,
    ModelParams,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Key under which [`save_params`] stores the model config in the safetensors header.
pub const CONFIG_METADATA_KEY: &str = "skillpath.config";

/// Optional JSON manifest that adapts a checkpoint with non-standard naming.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamManifest {
    /// Prefix prepended to every canonical name (e.g. `"transformer."`).
    #[serde(default)]
    pub prefix: Option<String>,
    /// Canonical name → stored name, applied before the prefix.
    #[serde(default)]
    pub rename: BTreeMap<String, String>,
    #[serde(default)]
    pub n_heads: Option<usize>,
    #[serde(default)]
    pub layer_norm_eps: Option<f64>,
}

impl ParamManifest {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn stored_name(&self, canonical: &str, auto_prefix: &str) -> String {
        let base = self
            .rename
            .get(canonical)
            .cloned()
            .unwrap_or_else(|| canonical.to_string());
        match &self.prefix {
            Some(p) => format!("{p}{base}"),
            None => format!("{auto_prefix}{base}"),
        }
    }
}

/// Names present in the container that no parameter consumed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    /// Known non-parameter buffers (causal-mask caches, tied `lm_head`).
    pub ignored: Vec<String>,
    /// Anything else left over.
    pub unexpected: Vec<String>,
}

fn is_known_buffer(name: &str) -> bool {
    name.ends_with(".attn.bias") || name.ends_with(".attn.masked_bias") || name == "lm_head.weight"
}

struct Reader<'a> {
    path: &'a Path,
    st: SafeTensors<'a>,
    manifest: &'a ParamManifest,
    auto_prefix: String,
    used: BTreeSet<String>,
}

impl<'a> Reader<'a> {
    fn view(&mut self, canonical: &str) -> Result<(String, TensorView<'a>)> {
        let stored = self.manifest.stored_name(canonical, &self.auto_prefix);
        match self.st.tensor(&stored) {
            Ok(v) => {
                self.used.insert(stored.clone());
                Ok((stored, v))
            }
            Err(safetensors::SafeTensorError::TensorNotFound(_)) => {
                Err(Error::MissingParameter(canonical.to_string()))
            }
            Err(e) => Err(Error::Container {
                path: self.path.to_path_buf(),
                reason: format!("{stored}: {e}"),
            }),
        }
    }

    fn shape_of(&mut self, canonical: &str) -> Result<Vec<usize>> {
        Ok(self.view(canonical)?.1.shape().to_vec())
    }

    fn values<T: Scalar>(&mut self, canonical: &str, expected: &[usize]) -> Result<Vec<T>> {
        let (stored, view) = self.view(canonical)?;
        if view.shape() != expected {
            return Err(Error::ShapeMismatch {
                name: canonical.to_string(),
                expected: expected.to_vec(),
                found: view.shape().to_vec(),
            });
        }
        let data = view.data();
        let out = match view.dtype() {
            Dtype::F32 => data
                .chunks_exact(4)
                .map(|b| T::lit(<f32 as Scalar>::read_le(b) as f64))
                .collect(),
            Dtype::F64 => data
                .chunks_exact(8)
                .map(|b| T::lit(<f64 as Scalar>::read_le(b)))
                .collect(),
            other => {
                return Err(Error::UnsupportedDtype {
                    name: stored,
                    dtype: format!("{other:?}"),
                })
            }
        };
        Ok(out)
    }

    fn matrix<T: Scalar>(&mut self, canonical: &str, rows: usize, cols: usize) -> Result<Matrix<T>> {
        let v = self.values(canonical, &[rows, cols])?;
        Matrix::from_vec(rows, cols, v)
    }

    fn layer_norm<T: Scalar>(&mut self, base: &str, d: usize) -> Result<LayerNormParams<T>> {
        Ok(LayerNormParams {
            weight: self.values(&format!("{base}.weight"), &[d])?,
            bias: self.values(&format!("{base}.bias"), &[d])?,
        })
    }
}

#[derive(Deserialize)]
struct HfConfig {
    n_head: Option<usize>,
    layer_norm_epsilon: Option<f64>,
}

/// Loads a checkpoint, inferring layer count and widths from tensor shapes.
///
/// The head count comes from (in order) the manifest, the config stored by
/// [`save_params`], a sibling `config.json`, or `d_model / 64`.
pub fn load_params<T: Scalar>(
    path: &Path,
    manifest: Option<&ParamManifest>,
) -> Result<(ModelParams<T>, LoadReport)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let container_err = |reason: String| Error::Container {
        path: path.to_path_buf(),
        reason,
    };
    let st = SafeTensors::deserialize(&bytes).map_err(|e| container_err(e.to_string()))?;
    let (_, header) =
        SafeTensors::read_metadata(&bytes).map_err(|e| container_err(e.to_string()))?;
    let stored_config: Option<ModelConfig> = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(CONFIG_METADATA_KEY))
        .map(|s| serde_json::from_str(s))
        .transpose()?;

    let default_manifest = ParamManifest::default();
    let manifest = manifest.unwrap_or(&default_manifest);
    let names: Vec<String> = st.names().into_iter().map(str::to_string).collect();
    let auto_prefix = if manifest.prefix.is_none()
        && !names.iter().any(|n| n == "wte.weight")
        && names.iter().any(|n| n == "transformer.wte.weight")
    {
        "transformer.".to_string()
    } else {
        String::new()
    };

    let mut r = Reader {
        path,
        st,
        manifest,
        auto_prefix,
        used: BTreeSet::new(),
    };

    let wte_shape = r.shape_of("wte.weight")?;
    let wpe_shape = r.shape_of("wpe.weight")?;
    if wte_shape.len() != 2 || wpe_shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            name: "wte.weight".into(),
            expected: vec![0, 0],
            found: wte_shape,
        });
    }
    let (vocab_size, d_model) = (wte_shape[0], wte_shape[1]);
    let n_ctx = wpe_shape[0];

    let mut n_layers = 0;
    while names
        .iter()
        .any(|n| n.ends_with(&format!("h.{n_layers}.ln_1.weight")))
    {
        n_layers += 1;
    }
    if n_layers == 0 {
        return Err(Error::MissingParameter("h.0.ln_1.weight".into()));
    }

    let sibling: Option<HfConfig> = path
        .parent()
        .map(|p| p.join("config.json"))
        .filter(|p| p.exists())
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|s| serde_json::from_str(&s).ok());

    let n_heads = manifest
        .n_heads
        .or(stored_config.as_ref().map(|c| c.n_heads))
        .or(sibling.as_ref().and_then(|c| c.n_head))
        .or((d_model % 64 == 0).then_some(d_model / 64))
        .ok_or_else(|| {
            Error::Config(format!(
                "cannot determine head count for d_model {d_model}; set n_heads in the manifest"
            ))
        })?;
    let layer_norm_eps = manifest
        .layer_norm_eps
        .or(stored_config.as_ref().map(|c| c.layer_norm_eps))
        .or(sibling.as_ref().and_then(|c| c.layer_norm_epsilon))
        .unwrap_or(1e-5);

    let config = ModelConfig {
        n_layers,
        n_heads,
        d_model,
        d_mlp: 4 * d_model,
        vocab_size,
        n_ctx,
        layer_norm_eps,
    };
    config.validate()?;
    let d = d_model;
    let dh = config.d_head();
    let f = config.d_mlp;

    let token_embedding = r.matrix("wte.weight", vocab_size, d)?;
    let position_embedding = r.matrix("wpe.weight", n_ctx, d)?;
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let ln1 = r.layer_norm(&format!("h.{l}.ln_1"), d)?;
        let c_attn: Matrix<T> = r.matrix(&format!("h.{l}.attn.c_attn.weight"), d, 3 * d)?;
        let c_attn_b: Vec<T> = r.values(&format!("h.{l}.attn.c_attn.bias"), &[3 * d])?;
        let c_proj: Matrix<T> = r.matrix(&format!("h.{l}.attn.c_proj.weight"), d, d)?;
        let b_o = r.values(&format!("h.{l}.attn.c_proj.bias"), &[d])?;
        let heads = (0..n_heads)
            .map(|h| HeadParams {
                w_q: c_attn.column_block(h * dh, dh),
                w_k: c_attn.column_block(d + h * dh, dh),
                w_v: c_attn.column_block(2 * d + h * dh, dh),
                b_q: c_attn_b[h * dh..(h + 1) * dh].to_vec(),
                b_k: c_attn_b[d + h * dh..d + (h + 1) * dh].to_vec(),
                b_v: c_attn_b[2 * d + h * dh..2 * d + (h + 1) * dh].to_vec(),
                w_o: c_proj.row_block(h * dh, dh),
            })
            .collect();
        let ln2 = r.layer_norm(&format!("h.{l}.ln_2"), d)?;
        let mlp = MlpParams {
            w_in: r.matrix(&format!("h.{l}.mlp.c_fc.weight"), d, f)?,
            b_in: r.values(&format!("h.{l}.mlp.c_fc.bias"), &[f])?,
            w_out: r.matrix(&format!("h.{l}.mlp.c_proj.weight"), f, d)?,
            b_out: r.values(&format!("h.{l}.mlp.c_proj.bias"), &[d])?,
        };
        layers.push(LayerParams {
            ln1,
            attn: AttentionParams { heads, b_o },
            ln2,
            mlp,
        });
    }
    let ln_f = r.layer_norm("ln_f", d)?;

    let mut report = LoadReport::default();
    for n in &names {
        if !r.used.contains(n) {
            if is_known_buffer(n) {
                report.ignored.push(n.clone());
            } else {
                report.unexpected.push(n.clone());
            }
        }
    }
    report.ignored.sort();
    report.unexpected.sort();

    let params = ModelParams {
        config,
        token_embedding,
        position_embedding,
        layers,
        ln_f,
    };
    params.validate()?;
    Ok((params, report))
}

fn encode<T: Scalar>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * T::BYTES);
    for &v in values {
        v.write_le(&mut out);
    }
    out
}

/// Canonical name → (shape, little-endian bytes) for every parameter.
pub fn params_to_tensors<T: Scalar>(params: &ModelParams<T>) -> BTreeMap<String, (Vec<usize>, Vec<u8>)> {
    let c = &params.config;
    let (d, dh) = (c.d_model, c.d_head());
    let mut out = BTreeMap::new();
    let mut put = |name: String, shape: Vec<usize>, data: Vec<u8>| {
        out.insert(name, (shape, data));
    };
    put(
        "wte.weight".into(),
        vec![c.vocab_size, d],
        encode(params.token_embedding.as_slice()),
    );
    put(
        "wpe.weight".into(),
        vec![c.n_ctx, d],
        encode(params.position_embedding.as_slice()),
    );
    for (l, layer) in params.layers.iter().enumerate() {
        put(format!("h.{l}.ln_1.weight"), vec![d], encode(&layer.ln1.weight));
        put(format!("h.{l}.ln_1.bias"), vec![d], encode(&layer.ln1.bias));
        let mut c_attn = Matrix::<T>::zeros(d, 3 * d);
        let mut c_attn_b = vec![T::zero(); 3 * d];
        let mut c_proj = Matrix::<T>::zeros(d, d);
        for (h, head) in layer.attn.heads.iter().enumerate() {
            for row in 0..d {
                for k in 0..dh {
                    c_attn.set(row, h * dh + k, head.w_q.get(row, k));
                    c_attn.set(row, d + h * dh + k, head.w_k.get(row, k));
                    c_attn.set(row, 2 * d + h * dh + k, head.w_v.get(row, k));
                }
            }
            c_attn_b[h * dh..(h + 1) * dh].copy_from_slice(&head.b_q);
            c_attn_b[d + h * dh..d + (h + 1) * dh].copy_from_slice(&head.b_k);
            c_attn_b[2 * d + h * dh..2 * d + (h + 1) * dh].copy_from_slice(&head.b_v);
            for k in 0..dh {
                c_proj.row_mut(h * dh + k).copy_from_slice(head.w_o.row(k));
            }
        }
        put(
            format!("h.{l}.attn.c_attn.weight"),
            vec![d, 3 * d],
            encode(c_attn.as_slice()),
        );
        put(format!("h.{l}.attn.c_attn.bias"), vec![3 * d], encode(&c_attn_b));
        put(
            format!("h.{l}.attn.c_proj.weight"),
            vec![d, d],
            encode(c_proj.as_slice()),
        );
        put(format!("h.{l}.attn.c_proj.bias"), vec![d], encode(&layer.attn.b_o));
        put(format!("h.{l}.ln_2.weight"), vec![d], encode(&layer.ln2.weight));
        put(format!("h.{l}.ln_2.bias"), vec![d], encode(&layer.ln2.bias));
        put(
            format!("h.{l}.mlp.c_fc.weight"),
            vec![d, c.d_mlp],
            encode(layer.mlp.w_in.as_slice()),
        );
        put(format!("h.{l}.mlp.c_fc.bias"), vec![c.d_mlp], encode(&layer.mlp.b_in));
        put(
            format!("h.{l}.mlp.c_proj.weight"),
            vec![c.d_mlp, d],
            encode(layer.mlp.w_out.as_slice()),
        );
        put(format!("h.{l}.mlp.c_proj.bias"), vec![d], encode(&layer.mlp.b_out));
    }
    put("ln_f.weight".into(), vec![d], encode(&params.ln_f.weight));
    put("ln_f.bias".into(), vec![d], encode(&params.ln_f.bias));
    out
}

/// Serialises `params` to safetensors bytes, recording the config in the header.
pub fn params_to_bytes<T: Scalar>(params: &ModelParams<T>) -> Result<Vec<u8>> {
    let tensors = params_to_tensors(params);
    let mut views = Vec::with_capacity(tensors.len());
    for (name, (shape, data)) in &tensors {
        let view = TensorView::new(T::DTYPE, shape.clone(), data).map_err(|e| Error::Container {
            path: PathBuf::from("<memory>"),
            reason: e.to_string(),
        })?;
        views.push((name.clone(), view));
    }
    // A single metadata entry keeps the header byte-stable.
    let mut info = HashMap::new();
    info.insert(
        CONFIG_METADATA_KEY.to_string(),
        serde_json::to_string(&params.config)?,
    );
    safetensors::serialize(views, Some(info)).map_err(|e| Error::Container {
        path: PathBuf::from("<memory>"),
        reason: e.to_string(),
    })
}

pub fn save_params<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    let bytes = params_to_bytes(params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
