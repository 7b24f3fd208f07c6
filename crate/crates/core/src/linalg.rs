//! Exact O(d) linear algebra for the scaled-and-shifted symmetric
//! tridiagonal family `A = scale * P + shift * I`, where `P` is the d×d
//! tridiagonal matrix with 2 on the diagonal and -1 on the off-diagonals.
//!
//! The spectrum of `P` is known in closed form, `2 - 2 cos(kπ/(d+1))` for
//! `k = 1..d`, so eigen extremes of any member of the family are analytic
//! and the matrix itself never has to be materialized.

use crate::error::{Error, Result};

/// `A = scale * P + shift * I` with `P = tridiag(-1, 2, -1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymTridiagMatrix {
    dim: usize,
    scale: f64,
    shift: f64,
}

/// Extreme eigenvalues and the spectral norm of a family member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigExtremes {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub spectral_norm: f64,
}

impl SymTridiagMatrix {
    pub fn new(dim: usize, scale: f64, shift: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("matrix dimension must be >= 1".into()));
        }
        Ok(SymTridiagMatrix { dim, scale, shift })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `y = A x` in O(d), no allocation.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: y.len() });
        }
        let d = self.dim;
        for j in 0..d {
            let mut p = 2.0 * x[j];
            if j > 0 {
                p -= x[j - 1];
            }
            if j + 1 < d {
                p -= x[j + 1];
            }
            y[j] = self.scale * p + self.shift * x[j];
        }
        Ok(())
    }

    /// `A x` as a fresh vector.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.dim];
        self.matvec_into(x, &mut y)?;
        Ok(y)
    }

    /// Analytic extreme eigenvalues. The pattern eigenvalues
    /// `p_k = 2 - 2 cos(kπ/(d+1))` are increasing in `k`, so the extremes of
    /// `scale * p_k + shift` sit at `k = 1` and `k = d` (order flips when
    /// `scale < 0`).
    pub fn eig_extremes(&self) -> EigExtremes {
        let d = self.dim as f64;
        let p_lo = 2.0 - 2.0 * (std::f64::consts::PI / (d + 1.0)).cos();
        let p_hi = 2.0 - 2.0 * (d * std::f64::consts::PI / (d + 1.0)).cos();
        let a = self.scale * p_lo + self.shift;
        let b = self.scale * p_hi + self.shift;
        let (lambda_min, lambda_max) = if a <= b { (a, b) } else { (b, a) };
        EigExtremes {
            lambda_min,
            lambda_max,
            spectral_norm: lambda_min.abs().max(lambda_max.abs()),
        }
    }

    /// Row-major dense materialization. Test-oracle helper only; guarded so
    /// it cannot creep into production paths with large dimensions.
    pub fn dense(&self) -> Vec<f64> {
        assert!(self.dim <= 64, "dense() is a test oracle helper, d <= 64");
        let d = self.dim;
        let mut m = vec![0.0; d * d];
        for j in 0..d {
            m[j * d + j] = 2.0 * self.scale + self.shift;
            if j + 1 < d {
                m[j * d + j + 1] = -self.scale;
                m[(j + 1) * d + j] = -self.scale;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn dense_matvec(m: &SymTridiagMatrix, x: &[f64]) -> Vec<f64> {
        let d = m.dim();
        let dense = m.dense();
        (0..d)
            .map(|i| (0..d).map(|j| dense[i * d + j] * x[j]).sum())
            .collect()
    }

    #[test]
    fn matvec_zero_vector() {
        let m = SymTridiagMatrix::new(3, 1.0, 0.0).unwrap();
        assert_eq!(m.matvec(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn matvec_pure_identity_scaling() {
        let m = SymTridiagMatrix::new(3, 0.0, 2.0).unwrap();
        assert_eq!(m.matvec(&[1.0, 2.0, 3.0]).unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn matvec_pattern_on_ones() {
        // P * (1,1,1) = (1,0,1), cross-checked against the dense oracle.
        let m = SymTridiagMatrix::new(3, 1.0, 0.0).unwrap();
        let y = m.matvec(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(y, vec![1.0, 0.0, 1.0]);
        assert_eq!(y, dense_matvec(&m, &[1.0, 1.0, 1.0]));
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let m = SymTridiagMatrix::new(3, 1.0, 0.0).unwrap();
        assert!(matches!(
            m.matvec(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn eig_one_by_one() {
        let m = SymTridiagMatrix::new(1, 1.0, 0.0).unwrap();
        let e = m.eig_extremes();
        assert!((e.lambda_min - 2.0).abs() < 1e-15);
        assert!((e.lambda_max - 2.0).abs() < 1e-15);
        assert!((e.spectral_norm - 2.0).abs() < 1e-15);
    }

    #[test]
    fn eig_pattern_d3() {
        let m = SymTridiagMatrix::new(3, 1.0, 0.0).unwrap();
        let e = m.eig_extremes();
        let sqrt2 = 2f64.sqrt();
        assert!((e.lambda_min - (2.0 - sqrt2)).abs() < 1e-12);
        assert!((e.lambda_max - (2.0 + sqrt2)).abs() < 1e-12);
        assert!((e.spectral_norm - (2.0 + sqrt2)).abs() < 1e-12);
    }

    #[test]
    fn eig_negative_scale_flips_extremes() {
        let m = SymTridiagMatrix::new(3, -1.0, 5.0).unwrap();
        let e = m.eig_extremes();
        let sqrt2 = 2f64.sqrt();
        assert!((e.lambda_min - (5.0 - (2.0 + sqrt2))).abs() < 1e-12);
        assert!((e.lambda_max - (5.0 - (2.0 - sqrt2))).abs() < 1e-12);
        assert!((e.spectral_norm - (5.0 - (2.0 - sqrt2))).abs() < 1e-12);
    }

    #[test]
    fn eig_matches_dense_eigensolver() {
        let mut rng = Rng::new(2024);
        for d in 1..=12usize {
            for _ in 0..50 {
                let scale = 4.0 * rng.gauss();
                let shift = 4.0 * rng.gauss();
                let m = SymTridiagMatrix::new(d, scale, shift).unwrap();
                let dense = nalgebra::DMatrix::from_fn(d, d, |i, j| m.dense()[i * d + j]);
                let eig = dense.symmetric_eigen().eigenvalues;
                let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e = m.eig_extremes();
                let tol = 1e-10 * (1.0 + lo.abs().max(hi.abs()));
                assert!((e.lambda_min - lo).abs() < tol, "d={d} scale={scale} shift={shift}");
                assert!((e.lambda_max - hi).abs() < tol, "d={d} scale={scale} shift={shift}");
            }
        }
    }

    #[test]
    fn matvec_matches_dense_multiply() {
        let mut rng = Rng::new(7);
        for d in [1usize, 2, 5, 17, 64] {
            for _ in 0..20 {
                let m = SymTridiagMatrix::new(d, rng.gauss(), rng.gauss()).unwrap();
                let x: Vec<f64> = (0..d).map(|_| rng.gauss()).collect();
                let fast = m.matvec(&x).unwrap();
                let slow = dense_matvec(&m, &x);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matvec_is_symmetric_bilinear() {
        let mut rng = Rng::new(8);
        for _ in 0..100 {
            let d = 1 + rng.below(32);
            let m = SymTridiagMatrix::new(d, rng.gauss(), rng.gauss()).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.gauss()).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.gauss()).collect();
            let ax = m.matvec(&x).unwrap();
            let ay = m.matvec(&y).unwrap();
            let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&ay).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
        }
    }
}
