//! Server-to-worker compression operators.
//!
//! TopK is the deterministic contractive sparsifier with
//! `‖C(x) - x‖² ≤ (1 - k/d) ‖x‖²` pointwise. RandK keeps a uniform size-k
//! subset scaled by `d/k`, so it is unbiased with exact variance factor
//! `ω = d/k - 1`. PermK hands each of the `n` workers a disjoint block of a
//! shared random permutation scaled by `n`; the worker outputs average back
//! to the input exactly, and each output is unbiased with `ω = n - 1`.
//!
//! All operators are stateless; randomized ones consume caller-supplied
//! generators, so a call that owns its generators is safe to run from any
//! thread.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressorKind {
    TopK,
    SameRandK,
    IndRandK,
    PermK,
    Identity,
}

impl CompressorKind {
    pub fn label(&self) -> &'static str {
        match self {
            CompressorKind::TopK => "topk",
            CompressorKind::SameRandK => "same_randk",
            CompressorKind::IndRandK => "ind_randk",
            CompressorKind::PermK => "permk",
            CompressorKind::Identity => "identity",
        }
    }
}

/// A compression operator together with the deployment parameters that fix
/// its theory constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    /// Sparsity: number of coordinates kept per message (ignored by Identity).
    pub k: usize,
    pub dim: usize,
    pub n_workers: usize,
}

impl CompressorSpec {
    pub fn new(kind: CompressorKind, k: usize, dim: usize, n_workers: usize) -> Result<Self> {
        let spec = CompressorSpec { kind, k, dim, n_workers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_workers == 0 {
            return Err(Error::InvalidCompressor("dim and n_workers must be >= 1".into()));
        }
        match self.kind {
            CompressorKind::Identity => Ok(()),
            CompressorKind::PermK => {
                if self.dim % self.n_workers != 0 {
                    return Err(Error::InvalidCompressor(format!(
                        "PermK requires d divisible by n, got d={} n={}",
                        self.dim, self.n_workers
                    )));
                }
                if self.k != self.dim / self.n_workers {
                    return Err(Error::InvalidCompressor(format!(
                        "PermK requires k = d/n, got k={} d/n={}",
                        self.k,
                        self.dim / self.n_workers
                    )));
                }
                Ok(())
            }
            _ => {
                if self.k == 0 || self.k > self.dim {
                    return Err(Error::InvalidCompressor(format!(
                        "k must satisfy 1 <= k <= d, got k={} d={}",
                        self.k, self.dim
                    )));
                }
                Ok(())
            }
        }
    }

    /// Contraction parameter `α ∈ (0, 1]` for contractive kinds.
    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            CompressorKind::TopK => Some(self.k as f64 / self.dim as f64),
            CompressorKind::Identity => Some(1.0),
            _ => None,
        }
    }

    /// Unbiasedness variance parameter `ω ≥ 0` for unbiased kinds.
    pub fn omega(&self) -> Option<f64> {
        match self.kind {
            CompressorKind::SameRandK | CompressorKind::IndRandK => {
                Some(self.dim as f64 / self.k as f64 - 1.0)
            }
            CompressorKind::PermK => Some(self.n_workers as f64 - 1.0),
            CompressorKind::Identity => Some(0.0),
            CompressorKind::TopK => None,
        }
    }

    /// Expected number of nonzero coordinates per message when the server
    /// mixes full (probability `p_full`) and sparsified rounds:
    /// `ζ = d·p + (1-p)·k`. Deterministic sparsifiers keep `ζ = k`, Identity
    /// always sends `d`.
    pub fn expected_density(&self, p_full: f64) -> f64 {
        let d = self.dim as f64;
        let k = self.k as f64;
        match self.kind {
            CompressorKind::Identity => d,
            CompressorKind::TopK => k,
            _ => d * p_full + (1.0 - p_full) * k,
        }
    }
}

/// Sparse message: the kept coordinates of a compressed vector. Zero-valued
/// kept entries stay in the message (they still cost bits under the density
/// cost model).
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedVector {
    /// Strictly increasing coordinate positions in `[0, dim)`.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub dim: usize,
}

impl CompressedVector {
    pub fn new(indices: Vec<usize>, values: Vec<f64>, dim: usize) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidCompressor("indices/values length mismatch".into()));
        }
        if !indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidCompressor("indices must be strictly increasing".into()));
        }
        if indices.last().is_some_and(|&i| i >= dim) {
            return Err(Error::InvalidCompressor("index out of range".into()));
        }
        Ok(CompressedVector { indices, values, dim })
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn decompress(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }

    /// `target += self` on the kept coordinates.
    pub fn add_into(&self, target: &mut [f64]) {
        debug_assert_eq!(target.len(), self.dim);
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            target[i] += v;
        }
    }
}

/// Keep the `k` entries of largest absolute value. Ties break toward the
/// lower index, which makes the operator fully deterministic.
pub fn compress_topk(x: &[f64], k: usize) -> Result<CompressedVector> {
    let d = x.len();
    if k == 0 || k > d {
        return Err(Error::InvalidCompressor(format!("topk k={k} out of range for d={d}")));
    }
    let mut order: Vec<usize> = (0..d).collect();
    let by_magnitude = |&a: &usize, &b: &usize| {
        x[b].abs().total_cmp(&x[a].abs()).then_with(|| a.cmp(&b))
    };
    if k < d {
        order.select_nth_unstable_by(k - 1, by_magnitude);
    }
    order.truncate(k);
    order.sort_unstable();
    let values = order.iter().map(|&i| x[i]).collect();
    CompressedVector::new(order, values, d)
}

/// Uniform size-`k` subset without replacement, kept entries scaled by `d/k`.
pub fn compress_randk(x: &[f64], k: usize, rng: &mut Rng) -> Result<CompressedVector> {
    let d = x.len();
    if k == 0 || k > d {
        return Err(Error::InvalidCompressor(format!("randk k={k} out of range for d={d}")));
    }
    let indices = rng.subset(d, k);
    let scale = d as f64 / k as f64;
    let values = indices.iter().map(|&i| scale * x[i]).collect();
    CompressedVector::new(indices, values, d)
}

/// One shared permutation split into `n` disjoint blocks of `q = d/n`
/// coordinates, each scaled by `n`. Averaging the `n` outputs reconstructs
/// `x` exactly.
pub fn compress_permk_batch(x: &[f64], n: usize, rng: &mut Rng) -> Result<Vec<CompressedVector>> {
    let d = x.len();
    if n == 0 || d % n != 0 {
        return Err(Error::InvalidCompressor(format!("permk requires d % n == 0, got d={d} n={n}")));
    }
    let q = d / n;
    let perm = rng.permutation(d);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut indices: Vec<usize> = perm[i * q..(i + 1) * q].to_vec();
        indices.sort_unstable();
        let values = indices.iter().map(|&j| n as f64 * x[j]).collect();
        out.push(CompressedVector::new(indices, values, d)?);
    }
    Ok(out)
}

/// The whole vector as an explicit message.
pub fn compress_identity(x: &[f64]) -> CompressedVector {
    CompressedVector {
        indices: (0..x.len()).collect(),
        values: x.to_vec(),
        dim: x.len(),
    }
}

/// Produce the per-worker messages for one round under the spec's
/// deployment mode. SameRandK draws once from the server stream and every
/// worker receives that draw; IndRandK draws independently from each
/// worker's stream; PermK draws one permutation from the server stream.
/// Deterministic kinds broadcast identical messages.
pub fn compress_batch(
    spec: &CompressorSpec,
    x: &[f64],
    server_rng: &mut Rng,
    worker_rngs: &mut [Rng],
) -> Result<Vec<CompressedVector>> {
    spec.validate()?;
    let n = spec.n_workers;
    if x.len() != spec.dim {
        return Err(Error::DimensionMismatch { expected: spec.dim, got: x.len() });
    }
    match spec.kind {
        CompressorKind::TopK => {
            let c = compress_topk(x, spec.k)?;
            Ok(vec![c; n])
        }
        CompressorKind::Identity => Ok(vec![compress_identity(x); n]),
        CompressorKind::SameRandK => {
            let c = compress_randk(x, spec.k, server_rng)?;
            Ok(vec![c; n])
        }
        CompressorKind::IndRandK => {
            if worker_rngs.len() != n {
                return Err(Error::InvalidCompressor(format!(
                    "IndRandK needs {n} worker generators, got {}",
                    worker_rngs.len()
                )));
            }
            worker_rngs
                .iter_mut()
                .map(|rng| compress_randk(x, spec.k, rng))
                .collect()
        }
        CompressorKind::PermK => compress_permk_batch(x, n, server_rng),
    }
}
