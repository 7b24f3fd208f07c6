//! Stepsize policies and the theory constants they are built from.
//!
//! For a contractive compressor with parameter `α`, the error-feedback
//! analysis fixes `θ = 1 - √(1-α)`, `λ* = √(1-α)/θ` and the rate constant
//! `B* = 1 + 2λ*` (so `B* = 1` in the uncompressed case and
//! `B* <= 4/α - 1` always). For an unbiased compressor with variance `ω`
//! mixed with full syncs of probability `p`, the corresponding constants are
//! `λ* = (L̄₀/L̃₀)·√((1-p)ω/p)` and `B̃* = L̄₀² + 2 L̄₀ L̃₀ √((1-p)ω/p)`.
//!
//! Every stepsize below is linear in the tuning `factor`; the harness sweeps
//! that factor over `{2⁻⁹, …, 2⁷}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants of the error-feedback (contractive-compressor) analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstantsEf21p {
    pub alpha: f64,
    pub theta: f64,
    pub lambda_star: f64,
    pub b_star: f64,
    /// Weight of the drift term in the Lyapunov function, `1/(λ*·θ)`;
    /// defined as 0 when `α = 1` (the drift is identically zero there).
    pub lyapunov_weight: f64,
}

impl TheoryConstantsEf21p {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidStepsize(format!("alpha must be in (0,1], got {alpha}")));
        }
        let root = (1.0 - alpha).sqrt();
        let theta = 1.0 - root;
        let lambda_star = root / theta;
        let b_star = 1.0 + 2.0 * lambda_star;
        let lyapunov_weight =
            if lambda_star == 0.0 { 0.0 } else { 1.0 / (lambda_star * theta) };
        Ok(TheoryConstantsEf21p { alpha, theta, lambda_star, b_star, lyapunov_weight })
    }
}

/// Constants of the unbiased-compressor-plus-sync analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstantsMarinaP {
    pub omega: f64,
    pub p: f64,
    pub l_bar: f64,
    pub l_tilde: f64,
    pub lambda_star: f64,
    pub b_tilde_star: f64,
    /// Weight of the drift term, `1/(λ*·p)`; 0 when `λ* = 0`.
    pub lyapunov_weight: f64,
}

impl TheoryConstantsMarinaP {
    pub fn new(omega: f64, p: f64, l_bar: f64, l_tilde: f64) -> Result<Self> {
        if !(omega >= 0.0) {
            return Err(Error::InvalidStepsize(format!("omega must be >= 0, got {omega}")));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidStepsize(format!("p must be in (0,1], got {p}")));
        }
        if !(l_bar > 0.0 && l_tilde > 0.0) {
            return Err(Error::InvalidStepsize("Lipschitz constants must be > 0".into()));
        }
        let root = ((1.0 - p) * omega / p).sqrt();
        let lambda_star = l_bar / l_tilde * root;
        let b_tilde_star = l_bar * l_bar + 2.0 * l_bar * l_tilde * root;
        let lyapunov_weight = if lambda_star == 0.0 { 0.0 } else { 1.0 / (lambda_star * p) };
        Ok(TheoryConstantsMarinaP {
            omega,
            p,
            l_bar,
            l_tilde,
            lambda_star,
            b_tilde_star,
            lyapunov_weight,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `γ = (1/√T)·√(V⁰/(B·L₀²-or-B̃))`, the horizon-optimal constant.
    ConstantOptimal,
    /// `γ_t = γ₀/√(t+1)`, with the log-optimal `γ₀` when none is given.
    Decreasing,
    /// `γ_t = (f(wᵗ) - f*)/(B*·‖∂f(wᵗ)‖²)`.
    PolyakEf21p,
    /// The gap over the `ω,p`-inflated squared-subgradient denominator.
    PolyakMarinaP,
    /// `γ = R₀/(L₀√T)` with the valid (worst-case) Lipschitz bound.
    SmBaseline,
    /// `γ_t = factor·γ₀` for all t.
    FixedConstant,
}

impl ScheduleKind {
    pub fn label(&self) -> &'static str {
        match self {
            ScheduleKind::ConstantOptimal => "constant",
            ScheduleKind::Decreasing => "decreasing",
            ScheduleKind::PolyakEf21p | ScheduleKind::PolyakMarinaP => "polyak",
            ScheduleKind::SmBaseline => "sm_baseline",
            ScheduleKind::FixedConstant => "fixed",
        }
    }
}

/// A stepsize policy plus the knobs it needs at run time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub kind: ScheduleKind,
    /// Multiplicative tuning factor; every policy is linear in it.
    #[serde(default = "default_factor")]
    pub factor: f64,
    /// Horizon `T` for policies that need it; when absent the runner derives
    /// it from the bit budget (expected bits per round) or falls back to
    /// `max_rounds`.
    #[serde(default)]
    pub horizon: Option<u64>,
    /// `f(x*)`, required by the Polyak policies (0 for the synthetic problem).
    #[serde(default)]
    pub f_star: f64,
    #[serde(default)]
    pub gamma0: Option<f64>,
}

pub fn default_factor() -> f64 {
    1.0
}

impl Schedule {
    pub fn new(kind: ScheduleKind) -> Self {
        Schedule { kind, factor: 1.0, horizon: None, f_star: 0.0, gamma0: None }
    }

    pub fn with_factor(mut self, factor: f64) -> Self {
        self.factor = factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0) {
            return Err(Error::InvalidStepsize(format!(
                "factor must be > 0, got {}",
                self.factor
            )));
        }
        if !self.f_star.is_finite() {
            return Err(Error::InvalidStepsize("f_star must be finite".into()));
        }
        if self.kind == ScheduleKind::FixedConstant && self.gamma0.is_none() {
            return Err(Error::InvalidStepsize("fixed schedule needs gamma0".into()));
        }
        Ok(())
    }
}

/// Horizon-optimal constant stepsize for the contractive-compressor method.
pub fn gamma_constant_ef21p(
    c: &TheoryConstantsEf21p,
    v0: f64,
    l0: f64,
    t_horizon: u64,
    factor: f64,
) -> Result<f64> {
    if t_horizon == 0 || !(v0 > 0.0) || !(l0 > 0.0) {
        return Err(Error::InvalidStepsize(format!(
            "need T >= 1, V0 > 0, L0 > 0; got T={t_horizon} V0={v0} L0={l0}"
        )));
    }
    Ok(factor / (t_horizon as f64).sqrt() * (v0 / (c.b_star * l0 * l0)).sqrt())
}

/// Polyak stepsize `γ_t = (f(wᵗ) - f*)/(B*·‖∂f(wᵗ)‖²)`.
pub fn gamma_polyak_ef21p(
    c: &TheoryConstantsEf21p,
    f_w: f64,
    f_star: f64,
    subgrad_norm_sq: f64,
    factor: f64,
) -> Result<f64> {
    let gap = f_w - f_star;
    if gap <= 0.0 {
        return Ok(0.0);
    }
    if subgrad_norm_sq == 0.0 {
        return Err(Error::DegenerateOracle { gap });
    }
    Ok(factor * gap / (c.b_star * subgrad_norm_sq))
}

/// `γ_t = factor·γ₀/√(t+1)`.
pub fn gamma_decreasing(gamma0: f64, t: u64, factor: f64) -> f64 {
    factor * gamma0 / ((t + 1) as f64).sqrt()
}

/// Log-optimal `γ₀` for the decreasing schedule (contractive side).
pub fn optimal_gamma0_ef21p(
    c: &TheoryConstantsEf21p,
    v0: f64,
    l0: f64,
    t_horizon: u64,
) -> Result<f64> {
    if t_horizon == 0 || !(v0 > 0.0) || !(l0 > 0.0) {
        return Err(Error::InvalidStepsize("need T >= 1, V0 > 0, L0 > 0".into()));
    }
    Ok((v0 / (2.0 * c.b_star * l0 * l0 * ((t_horizon + 1) as f64).ln())).sqrt())
}

/// Horizon-optimal constant stepsize for the unbiased-compressor method.
pub fn gamma_constant_marinap(
    c: &TheoryConstantsMarinaP,
    v0: f64,
    t_horizon: u64,
    factor: f64,
) -> Result<f64> {
    if t_horizon == 0 || !(v0 > 0.0) || !(c.b_tilde_star > 0.0) {
        return Err(Error::InvalidStepsize(format!(
            "need T >= 1, V0 > 0, B > 0; got T={t_horizon} V0={v0} B={}",
            c.b_tilde_star
        )));
    }
    Ok(factor / (t_horizon as f64).sqrt() * (v0 / c.b_tilde_star).sqrt())
}

/// Polyak stepsize from precomputed norms:
/// denominator `‖ḡ‖² + 2‖ḡ‖·√((1/n)Σ‖gᵢ‖²)·√((1-p)ω/p)`.
pub fn gamma_polyak_marinap_from_norms(
    gap: f64,
    mean_subgrad_norm_sq: f64,
    mean_per_worker_norm_sq: f64,
    omega: f64,
    p: f64,
    factor: f64,
) -> Result<f64> {
    if gap <= 0.0 {
        return Ok(0.0);
    }
    if mean_subgrad_norm_sq == 0.0 {
        return Err(Error::DegenerateOracle { gap });
    }
    let root = ((1.0 - p) * omega / p).sqrt();
    let g_norm = mean_subgrad_norm_sq.sqrt();
    let denom = mean_subgrad_norm_sq + 2.0 * g_norm * mean_per_worker_norm_sq.sqrt() * root;
    Ok(factor * gap / denom)
}

/// Polyak stepsize from the raw subgradients.
pub fn gamma_polyak_marinap(
    gap: f64,
    mean_subgrad: &[f64],
    per_worker_subgrads: &[Vec<f64>],
    omega: f64,
    p: f64,
    factor: f64,
) -> Result<f64> {
    let g_sq: f64 = mean_subgrad.iter().map(|v| v * v).sum();
    let n = per_worker_subgrads.len() as f64;
    let mean_sq = per_worker_subgrads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / n;
    gamma_polyak_marinap_from_norms(gap, g_sq, mean_sq, omega, p, factor)
}

/// Log-optimal `γ₀` for the decreasing schedule (unbiased side).
pub fn optimal_gamma0_marinap(
    c: &TheoryConstantsMarinaP,
    v0: f64,
    t_horizon: u64,
) -> Result<f64> {
    if t_horizon == 0 || !(v0 > 0.0) {
        return Err(Error::InvalidStepsize("need T >= 1, V0 > 0".into()));
    }
    Ok((v0 / (2.0 * c.b_tilde_star * ((t_horizon + 1) as f64).ln())).sqrt())
}

/// Untuned baseline stepsize `R₀/(L₀√T)`.
pub fn gamma_sm_baseline(r0: f64, l0: f64, t_horizon: u64) -> Result<f64> {
    if t_horizon == 0 || !(r0 > 0.0) || !(l0 > 0.0) {
        return Err(Error::InvalidStepsize(format!(
            "need T >= 1, R0 > 0, L0 > 0; got T={t_horizon} R0={r0} L0={l0}"
        )));
    }
    Ok(r0 / (l0 * (t_horizon as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ef21p_constants_uncompressed() {
        let c = TheoryConstantsEf21p::new(1.0).unwrap();
        assert_eq!(c.b_star, 1.0);
        assert_eq!(c.lambda_star, 0.0);
        assert_eq!(c.lyapunov_weight, 0.0);
        assert_eq!(c.theta, 1.0);
    }

    #[test]
    fn ef21p_constants_alpha_three_quarters() {
        // sqrt(1-α) = 0.5 so θ = 0.5, λ* = 1, B* = 3.
        let c = TheoryConstantsEf21p::new(0.75).unwrap();
        assert!((c.theta - 0.5).abs() < 1e-15);
        assert!((c.lambda_star - 1.0).abs() < 1e-15);
        assert!((c.b_star - 3.0).abs() < 1e-12);
        assert!((c.lyapunov_weight - 2.0).abs() < 1e-12);
    }

    #[test]
    fn b_star_bound_over_alpha_grid() {
        let mut alpha = 0.01;
        while alpha <= 1.0 {
            let c = TheoryConstantsEf21p::new(alpha).unwrap();
            assert!(c.b_star <= 4.0 / alpha - 1.0 + 1e-9, "alpha={alpha}");
            alpha += 0.05;
        }
        assert!(TheoryConstantsEf21p::new(1.0).unwrap().b_star == 1.0);
        // strictly decreasing in alpha
        let mut prev = f64::INFINITY;
        for a in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let b = TheoryConstantsEf21p::new(a).unwrap().b_star;
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn marinap_constants_hand_case() {
        // ω=3, p=0.25, L̄=L̃=1: sqrt(0.75*3/0.25) = 3 so B̃* = 7.
        let c = TheoryConstantsMarinaP::new(3.0, 0.25, 1.0, 1.0).unwrap();
        assert!((c.b_tilde_star - 7.0).abs() < 1e-12);
        assert!((c.lambda_star - 3.0).abs() < 1e-12);
    }

    #[test]
    fn marinap_constants_degenerate_cases() {
        let c = TheoryConstantsMarinaP::new(0.0, 0.5, 2.0, 3.0).unwrap();
        assert_eq!(c.b_tilde_star, 4.0);
        assert_eq!(c.lyapunov_weight, 0.0);
        let c = TheoryConstantsMarinaP::new(5.0, 1.0, 2.0, 3.0).unwrap();
        assert_eq!(c.b_tilde_star, 4.0);
        assert_eq!(c.lyapunov_weight, 0.0);
    }

    #[test]
    fn constant_ef21p_examples() {
        let c1 = TheoryConstantsEf21p::new(1.0).unwrap();
        assert_eq!(gamma_constant_ef21p(&c1, 1.0, 1.0, 1, 1.0).unwrap(), 1.0);
        let c = TheoryConstantsEf21p::new(0.75).unwrap();
        let g = gamma_constant_ef21p(&c, 9.0, 1.0, 4, 1.0).unwrap();
        assert!((g - 0.5 * 3f64.sqrt()).abs() < 1e-12);
        let scaled = gamma_constant_ef21p(&c1, 1.0, 1.0, 1, 2f64.powi(-9)).unwrap();
        assert_eq!(scaled, 2f64.powi(-9));
        assert!(gamma_constant_ef21p(&c1, 0.0, 1.0, 1, 1.0).is_err());
    }

    #[test]
    fn polyak_ef21p_examples() {
        let c1 = TheoryConstantsEf21p::new(1.0).unwrap();
        assert_eq!(gamma_polyak_ef21p(&c1, 2.0, 0.0, 4.0, 1.0).unwrap(), 0.5);
        let c = TheoryConstantsEf21p::new(0.75).unwrap();
        let g = gamma_polyak_ef21p(&c, 2.0, 0.0, 4.0, 1.0).unwrap();
        assert!((g - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(gamma_polyak_ef21p(&c, 5.0, 5.0, 4.0, 1.0).unwrap(), 0.0);
        assert!(matches!(
            gamma_polyak_ef21p(&c, 2.0, 0.0, 0.0, 1.0),
            Err(Error::DegenerateOracle { .. })
        ));
    }

    #[test]
    fn polyak_ef21p_uncompressed_equals_classic() {
        let c1 = TheoryConstantsEf21p::new(1.0).unwrap();
        for (gap, nsq) in [(1.0, 3.0), (0.25, 0.5), (7.0, 11.0)] {
            let g = gamma_polyak_ef21p(&c1, gap, 0.0, nsq, 1.0).unwrap();
            assert_eq!(g, gap / nsq);
        }
    }

    #[test]
    fn decreasing_examples_and_sum_bounds() {
        assert_eq!(gamma_decreasing(2.0, 0, 1.0), 2.0);
        assert_eq!(gamma_decreasing(1.0, 3, 1.0), 0.5);
        for t_max in [10u64, 1_000, 1_000_000] {
            let gamma0 = 1.0;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for t in 0..t_max {
                let g = gamma_decreasing(gamma0, t, 1.0);
                sum += g;
                sum_sq += g * g;
            }
            assert!(sum >= gamma0 * (t_max as f64).sqrt() / 2.0, "T={t_max}");
            assert!(sum_sq <= 2.0 * gamma0 * gamma0 * ((t_max + 1) as f64).ln(), "T={t_max}");
        }
    }

    #[test]
    fn constant_marinap_examples() {
        let c = TheoryConstantsMarinaP::new(0.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(gamma_constant_marinap(&c, 1.0, 1, 1.0).unwrap(), 1.0);
        let c = TheoryConstantsMarinaP::new(3.0, 0.25, 1.0, 1.0).unwrap();
        assert_eq!(gamma_constant_marinap(&c, 7.0, 1, 1.0).unwrap(), 1.0);
        let half = gamma_constant_marinap(&c, 7.0, 4, 1.0).unwrap();
        assert!((half - 0.5).abs() < 1e-15);
    }

    #[test]
    fn polyak_marinap_examples() {
        // p=1 kills the inflation term: classic Polyak on the average.
        let g = gamma_polyak_marinap(1.0, &[1.0, 0.0], &[vec![1.0, 0.0]], 3.0, 1.0, 1.0).unwrap();
        assert_eq!(g, 1.0);
        // n=1, g=(2,0), gap=2, ω=3, p=0.25: denom = 4 + 2·2·2·3 = 28.
        let g = gamma_polyak_marinap(2.0, &[2.0, 0.0], &[vec![2.0, 0.0]], 3.0, 0.25, 1.0).unwrap();
        assert!((g - 1.0 / 14.0).abs() < 1e-12);
        assert_eq!(
            gamma_polyak_marinap(0.0, &[2.0, 0.0], &[vec![2.0, 0.0]], 3.0, 0.25, 1.0).unwrap(),
            0.0
        );
        assert!(matches!(
            gamma_polyak_marinap(1.0, &[0.0, 0.0], &[vec![0.0, 0.0]], 3.0, 0.25, 1.0),
            Err(Error::DegenerateOracle { .. })
        ));
    }

    #[test]
    fn polyak_marinap_omega_zero_equals_classic() {
        let g = gamma_polyak_marinap(
            3.0,
            &[1.0, 2.0],
            &[vec![1.0, 2.0], vec![1.0, 2.0]],
            0.0,
            0.25,
            1.0,
        )
        .unwrap();
        assert_eq!(g, 3.0 / 5.0);
    }

    #[test]
    fn sm_baseline_examples() {
        assert_eq!(gamma_sm_baseline(1.0, 1.0, 1).unwrap(), 1.0);
        assert_eq!(gamma_sm_baseline(2.0, 4.0, 4).unwrap(), 0.25);
        let g = gamma_sm_baseline(1.0, 1.0, 100).unwrap();
        assert!((g - 0.1).abs() < 1e-15);
        assert!(gamma_sm_baseline(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn all_gammas_linear_in_factor() {
        let ce = TheoryConstantsEf21p::new(0.3).unwrap();
        let cm = TheoryConstantsMarinaP::new(2.0, 0.2, 1.5, 2.0).unwrap();
        for factor in [0.5, 2.0, 16.0] {
            let base = gamma_constant_ef21p(&ce, 3.0, 1.2, 77, 1.0).unwrap();
            assert!(
                (gamma_constant_ef21p(&ce, 3.0, 1.2, 77, factor).unwrap() - factor * base).abs()
                    < 1e-15 * factor * base
            );
            let base = gamma_polyak_ef21p(&ce, 2.5, 0.0, 3.0, 1.0).unwrap();
            assert_eq!(gamma_polyak_ef21p(&ce, 2.5, 0.0, 3.0, factor).unwrap(), factor * base);
            let base = gamma_constant_marinap(&cm, 3.0, 77, 1.0).unwrap();
            assert!(
                (gamma_constant_marinap(&cm, 3.0, 77, factor).unwrap() - factor * base).abs()
                    < 1e-15 * factor * base
            );
            let base = gamma_decreasing(0.7, 5, 1.0);
            assert_eq!(gamma_decreasing(0.7, 5, factor), factor * base);
        }
    }
}
