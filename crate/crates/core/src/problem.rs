//! Synthetic non-smooth convex finite-sum problem
//! `f(x) = (1/n) Σ_i ‖A_i x‖₁` with known minimizer `x* = 0`, `f(x*) = 0`.
//!
//! Generation draws per-worker noise `ν_i = 1 + s·ξ_i`, starts from
//! `A_i = (ν_i/4) P` over the shared tridiagonal pattern, and shifts every
//! matrix by `(μ - λ_min(Ā)) I` where `Ā` is the worker average, so the
//! averaged matrix has minimum eigenvalue exactly `μ`. The family is closed
//! under averaging (all members share `P`), so `λ_min(Ā)` is analytic.
//!
//! Subgradients are `∂f_i(x) = A_iᵀ sign(A_i x)` with the `sign(0) = +1`
//! convention, computed with two O(d) matvecs (`A_i` is symmetric).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymTridiagMatrix;
use crate::rng::{Rng, PROBLEM_STREAM};

/// Parameters of the dataset generation routine.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n: usize,
    pub d: usize,
    #[serde(default = "default_mu")]
    pub mu: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

pub fn default_mu() -> f64 {
    1e-6
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidConfig("n and d must be >= 1".into()));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidConfig("mu must be > 0".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidConfig("noise_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// Derived scalar constants of a generated problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    /// Lipschitz estimate of `f`: mean of the per-worker estimates.
    pub l0: f64,
    /// `(1/n) Σ L_{0,i}`.
    pub l_bar: f64,
    /// `sqrt((1/n) Σ L_{0,i}²)`; always `>= l_bar`.
    pub l_tilde: f64,
    /// Data dissimilarity: spread of the spectral norms across workers.
    pub sigma_a: f64,
    /// `‖x⁰ - x*‖²`.
    pub r0_sq: f64,
}

/// The generated finite-sum problem and its oracles.
#[derive(Debug, Clone)]
pub struct Problem {
    matrices: Vec<SymTridiagMatrix>,
    x0: Vec<f64>,
    x_star: Vec<f64>,
    f_star: f64,
    lipschitz: Vec<f64>,
    constants: ProblemConstants,
    gen: GenConfig,
}

/// On-disk form: enough to rebuild the problem bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n: usize,
    pub d: usize,
    pub mu: f64,
    pub noise_scale: f64,
    pub seed: u64,
    pub scales: Vec<f64>,
    pub shift: f64,
    pub x0: Vec<f64>,
}

/// Population variance turned into a spread measure:
/// `sqrt(mean(v²) - mean(v)²)`, evaluated in the numerically stable two-pass
/// form with tiny negative radicands clamped to zero.
pub fn sigma_a_from_norms(norms: &[f64]) -> f64 {
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let radicand = norms.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    debug_assert!(radicand > -1e-12);
    radicand.max(0.0).sqrt()
}

impl Problem {
    /// Run the generation routine for `cfg`.
    pub fn generate(cfg: &GenConfig) -> Result<Problem> {
        cfg.validate()?;
        let mut rng = Rng::child(cfg.seed, PROBLEM_STREAM);
        let scales: Vec<f64> = (0..cfg.n)
            .map(|_| (1.0 + cfg.noise_scale * rng.gauss()) / 4.0)
            .collect();
        let avg_scale = scales.iter().sum::<f64>() / cfg.n as f64;
        let lambda_min_avg = SymTridiagMatrix::new(cfg.d, avg_scale, 0.0)?.eig_extremes().lambda_min;
        let shift = cfg.mu - lambda_min_avg;
        let x0: Vec<f64> = (0..cfg.d).map(|_| rng.gauss()).collect();
        Problem::assemble(*cfg, scales, shift, x0)
    }

    fn assemble(gen: GenConfig, scales: Vec<f64>, shift: f64, x0: Vec<f64>) -> Result<Problem> {
        if scales.len() != gen.n {
            return Err(Error::InvalidConfig(format!(
                "expected {} scales, got {}",
                gen.n,
                scales.len()
            )));
        }
        if x0.len() != gen.d {
            return Err(Error::DimensionMismatch { expected: gen.d, got: x0.len() });
        }
        let matrices: Vec<SymTridiagMatrix> = scales
            .iter()
            .map(|&s| SymTridiagMatrix::new(gen.d, s, shift))
            .collect::<Result<_>>()?;
        let lipschitz: Vec<f64> =
            matrices.iter().map(|m| m.eig_extremes().spectral_norm).collect();
        let n = gen.n as f64;
        let l_bar = lipschitz.iter().sum::<f64>() / n;
        let l_tilde = (lipschitz.iter().map(|l| l * l).sum::<f64>() / n).sqrt();
        let sigma_a = sigma_a_from_norms(&lipschitz);
        let r0_sq = x0.iter().map(|v| v * v).sum();
        Ok(Problem {
            matrices,
            x_star: vec![0.0; gen.d],
            f_star: 0.0,
            x0,
            lipschitz,
            constants: ProblemConstants { l0: l_bar, l_bar, l_tilde, sigma_a, r0_sq },
            gen,
        })
    }

    pub fn n(&self) -> usize {
        self.gen.n
    }

    pub fn dim(&self) -> usize {
        self.gen.d
    }

    pub fn gen_config(&self) -> &GenConfig {
        &self.gen
    }

    pub fn matrices(&self) -> &[SymTridiagMatrix] {
        &self.matrices
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    pub fn lipschitz(&self) -> &[f64] {
        &self.lipschitz
    }

    pub fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    /// A valid global bound on subgradient norms:
    /// `‖∂f_i(x)‖ = ‖A_i sign(A_i x)‖ <= ‖A_i‖₂ √d`. The per-worker spectral
    /// estimates in `lipschitz` undershoot this by up to `√d`; the bound is
    /// what the untuned baseline stepsize has to use for its guarantee to
    /// hold.
    pub fn subgradient_norm_bound(&self) -> f64 {
        (self.gen.d as f64).sqrt() * self.constants.l_bar
    }

    pub fn f_i_value(&self, i: usize, x: &[f64]) -> Result<f64> {
        let mut buf = vec![0.0; self.gen.d];
        self.matrices[i].matvec_into(x, &mut buf)?;
        Ok(buf.iter().map(|v| v.abs()).sum())
    }

    /// `f_i(x)` with a caller-provided scratch buffer (hot path).
    pub fn f_i_value_with(&self, i: usize, x: &[f64], buf: &mut [f64]) -> Result<f64> {
        self.matrices[i].matvec_into(x, buf)?;
        Ok(buf.iter().map(|v| v.abs()).sum())
    }

    pub fn f_value(&self, x: &[f64]) -> Result<f64> {
        let mut buf = vec![0.0; self.gen.d];
        let mut acc = 0.0;
        for i in 0..self.gen.n {
            acc += self.f_i_value_with(i, x, &mut buf)?;
        }
        Ok(acc / self.gen.n as f64)
    }

    pub fn subgradient_i(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        let mut buf = vec![0.0; self.gen.d];
        let mut out = vec![0.0; self.gen.d];
        self.subgradient_i_into(i, x, &mut buf, &mut out)?;
        Ok(out)
    }

    /// `∂f_i(x) = A_i sign(A_i x)` into `out`; `buf` receives `sign(A_i x)`.
    /// Returns `f_i(x)` since `‖A_i x‖₁` falls out of the first matvec for
    /// free.
    pub fn subgradient_i_into(
        &self,
        i: usize,
        x: &[f64],
        buf: &mut [f64],
        out: &mut [f64],
    ) -> Result<f64> {
        let m = &self.matrices[i];
        m.matvec_into(x, buf)?;
        let mut f_i = 0.0;
        for v in buf.iter_mut() {
            f_i += v.abs();
            *v = if *v >= 0.0 { 1.0 } else { -1.0 };
        }
        m.matvec_into(buf, out)?;
        Ok(f_i)
    }

    pub fn to_file(&self) -> ProblemFile {
        ProblemFile {
            n: self.gen.n,
            d: self.gen.d,
            mu: self.gen.mu,
            noise_scale: self.gen.noise_scale,
            seed: self.gen.seed,
            scales: self.matrices.iter().map(|m| m.scale()).collect(),
            shift: self.matrices[0].shift(),
            x0: self.x0.clone(),
        }
    }

    pub fn from_file(file: ProblemFile) -> Result<Problem> {
        let gen = GenConfig {
            n: file.n,
            d: file.d,
            mu: file.mu,
            noise_scale: file.noise_scale,
            seed: file.seed,
        };
        gen.validate()?;
        Problem::assemble(gen, file.scales, file.shift, file.x0)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Problem> {
        let text = std::fs::read_to_string(path)?;
        let file: ProblemFile = serde_json::from_str(&text)?;
        Problem::from_file(file)
    }
}
