//! Replacement values for removed edges.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Variance of the Gaussian used by noise ablation.
pub const DEFAULT_NOISE_VARIANCE: f64 = 0.81;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AblationStrategy {
    #[default]
    Zero,
    /// Mean of the contributions the receiver still gets from its kept senders.
    Mean,
    Noise {
        #[serde(default = "default_variance")]
        variance: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_variance() -> f64 {
    DEFAULT_NOISE_VARIANCE
}

impl AblationStrategy {
    pub fn noise(seed: u64) -> Self {
        AblationStrategy::Noise {
            variance: DEFAULT_NOISE_VARIANCE,
            seed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationStrategy::Zero => "zero",
            AblationStrategy::Mean => "mean",
            AblationStrategy::Noise { .. } => "noise",
        }
    }

    /// Zero ablation contributes nothing, so removed edges can simply be skipped.
    pub fn is_zero(&self) -> bool {
        matches!(self, AblationStrategy::Zero)
    }
}

/// What a receiver currently sees, for strategies that need it.
pub struct ReceiverContext<'a, T> {
    /// Outputs of the senders whose edges into this receiver are kept.
    pub kept_senders: &'a [&'a Matrix<T>],
    pub sample_id: u64,
    /// Canonical universe index of the removed edge.
    pub edge_index: usize,
}

/// SplitMix64 finaliser, used to derive independent per-edge RNG streams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn noise_seed(seed: u64, sample_id: u64, edge_index: usize) -> u64 {
    mix(mix(mix(seed) ^ sample_id) ^ edge_index as u64)
}

/// Mean of `matrices`, or zeros shaped like `like` when there are none.
pub fn mean_of<T: Scalar>(matrices: &[&Matrix<T>], like: &Matrix<T>) -> Matrix<T> {
    let (r, c) = like.shape();
    let mut out = Matrix::zeros(r, c);
    if matrices.is_empty() {
        return out;
    }
    for m in matrices {
        out.add_assign(m);
    }
    out.scale(T::one() / T::lit(matrices.len() as f64));
    out
}

pub fn ablate_value<T: Scalar>(
    strategy: &AblationStrategy,
    sender_output: &Matrix<T>,
    ctx: &ReceiverContext<'_, T>,
) -> Matrix<T> {
    let (r, c) = sender_output.shape();
    match *strategy {
        AblationStrategy::Zero => Matrix::zeros(r, c),
        AblationStrategy::Mean => mean_of(ctx.kept_senders, sender_output),
        AblationStrategy::Noise { variance, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(seed, ctx.sample_id, ctx.edge_index));
            let normal = Normal::new(0.0, variance.max(0.0).sqrt()).expect("finite std");
            let data = (0..r * c).map(|_| T::lit(normal.sample(&mut rng))).collect();
            Matrix::from_vec(r, c, data).expect("shape matches")
        }
    }
}
