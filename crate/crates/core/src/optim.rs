//! The three training loops, simulated in one process with exact
//! server/worker state separation.
//!
//! * baseline: `xᵗ⁺¹ = xᵗ - γₜ (1/n) Σ ∂fᵢ(xᵗ)`, full model broadcast.
//! * shared-shift error feedback: workers evaluate at a common shift `wᵗ`;
//!   the server compresses `xᵗ⁺¹ - wᵗ` once and broadcasts the same message
//!   to everyone, so server and worker copies of `wᵗ` stay bitwise equal.
//! * per-worker shifts with Bernoulli syncs: worker `i` evaluates at its own
//!   `wᵢᵗ`; each round the server either broadcasts the full model
//!   (probability `p_full`) or per-worker compressions of `xᵗ⁺¹ - xᵗ`.
//!
//! Aggregation of worker subgradients always runs in fixed worker order, so
//! two runs with equal seeds are bitwise identical regardless of how the
//! worker evaluations would be scheduled. All randomness comes from streams
//! derived from the run seed: the server stream carries Bernoulli and shared
//! compressor draws, worker `i`'s stream carries its independent draws.

use serde::{Deserialize, Serialize};

use crate::compressors::{compress_batch, compress_topk, CompressedVector, CompressorKind, CompressorSpec};
use crate::error::{Error, Result};
use crate::metrics::{MetricsLog, MetricsRow};
use crate::problem::Problem;
use crate::rng::{worker_stream, Rng, SERVER_STREAM};
use crate::schedules::{
    gamma_constant_ef21p, gamma_constant_marinap, gamma_decreasing, gamma_polyak_ef21p,
    gamma_polyak_marinap_from_norms, gamma_sm_baseline, optimal_gamma0_ef21p,
    optimal_gamma0_marinap, Schedule, ScheduleKind, TheoryConstantsEf21p, TheoryConstantsMarinaP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sm,
    Ef21p,
    MarinaP,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Sm => "sm",
            Method::Ef21p => "ef21p",
            Method::MarinaP => "marinap",
        }
    }
}

/// Everything needed to execute one run on a given problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub compressor: CompressorSpec,
    pub schedule: Schedule,
    /// Bernoulli probability of a full-model round (per-worker-shift method
    /// only). Defaults to `k/d`.
    #[serde(default)]
    pub p_full: Option<f64>,
    pub max_rounds: u64,
    #[serde(default)]
    pub bit_budget_per_worker: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub log_lyapunov: bool,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Track the running (γ-weighted for the decreasing schedule) iterate
    /// average and log its suboptimality as an extra column.
    #[serde(default)]
    pub log_ergodic: bool,
}

pub fn default_log_every() -> u64 {
    1
}

impl RunConfig {
    pub fn p_full_effective(&self) -> f64 {
        self.p_full
            .unwrap_or(self.compressor.k as f64 / self.compressor.dim as f64)
    }

    pub fn validate(&self, problem: &Problem) -> Result<()> {
        self.compressor.validate()?;
        self.schedule.validate()?;
        if self.compressor.dim != problem.dim() || self.compressor.n_workers != problem.n() {
            return Err(Error::InvalidConfig(format!(
                "compressor is sized for d={} n={}, problem has d={} n={}",
                self.compressor.dim,
                self.compressor.n_workers,
                problem.dim(),
                problem.n()
            )));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidConfig("max_rounds must be >= 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be >= 1".into()));
        }
        match self.method {
            Method::Sm => {
                if self.compressor.kind != CompressorKind::Identity {
                    return Err(Error::InvalidConfig(
                        "the baseline broadcasts uncompressed; use the identity compressor".into(),
                    ));
                }
            }
            Method::Ef21p => {
                if !matches!(self.compressor.kind, CompressorKind::TopK | CompressorKind::Identity)
                {
                    return Err(Error::InvalidConfig(format!(
                        "method ef21p needs a contractive compressor (topk/identity), got {}",
                        self.compressor.kind.label()
                    )));
                }
            }
            Method::MarinaP => {
                if !matches!(
                    self.compressor.kind,
                    CompressorKind::SameRandK
                        | CompressorKind::IndRandK
                        | CompressorKind::PermK
                        | CompressorKind::Identity
                ) {
                    return Err(Error::InvalidConfig(format!(
                        "method marinap needs an unbiased compressor, got {}",
                        self.compressor.kind.label()
                    )));
                }
                let p = self.p_full_effective();
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::InvalidConfig(format!("p_full must be in (0,1], got {p}")));
                }
            }
        }
        let sched_ok = match self.method {
            Method::Sm => !matches!(self.schedule.kind, ScheduleKind::PolyakMarinaP),
            Method::Ef21p => matches!(
                self.schedule.kind,
                ScheduleKind::ConstantOptimal
                    | ScheduleKind::Decreasing
                    | ScheduleKind::PolyakEf21p
                    | ScheduleKind::FixedConstant
            ),
            Method::MarinaP => matches!(
                self.schedule.kind,
                ScheduleKind::ConstantOptimal
                    | ScheduleKind::Decreasing
                    | ScheduleKind::PolyakMarinaP
                    | ScheduleKind::FixedConstant
            ),
        };
        if !sched_ok {
            return Err(Error::InvalidConfig(format!(
                "schedule {:?} is not valid for method {}",
                self.schedule.kind,
                self.method.label()
            )));
        }
        Ok(())
    }

    /// Horizon used by horizon-dependent stepsizes: the explicit value when
    /// given, otherwise the budget divided by the expected bits per round,
    /// otherwise `max_rounds`.
    pub fn horizon(&self) -> u64 {
        if let Some(t) = self.schedule.horizon {
            return t;
        }
        if let Some(budget) = self.bit_budget_per_worker {
            let per_round = self.expected_bits_per_round();
            if per_round > 0.0 && budget.is_finite() {
                let t = (budget / per_round).ceil() as u64;
                return t.max(1).min(self.max_rounds);
            }
        }
        self.max_rounds
    }

    /// Expected downlink bits per worker per round under the bit model.
    pub fn expected_bits_per_round(&self) -> f64 {
        let d = self.compressor.dim;
        match self.method {
            Method::Sm => bits_for_message(d, d, true),
            Method::Ef21p => {
                let nnz = match self.compressor.kind {
                    CompressorKind::Identity => d,
                    _ => self.compressor.k,
                };
                bits_for_message(nnz, d, false)
            }
            Method::MarinaP => {
                let p = self.p_full_effective();
                let sparse = match self.compressor.kind {
                    CompressorKind::Identity => bits_for_message(d, d, false),
                    _ => bits_for_message(self.compressor.k, d, false),
                };
                p * bits_for_message(d, d, true) + (1.0 - p) * sparse
            }
        }
    }
}

/// Downlink cost of one message: full models cost 64 bits per coordinate
/// (values carry their sign, no index needed); sparse messages cost
/// `65 + log₂ d` bits per kept entry (64-bit value, sign bit, position).
pub fn bits_for_message(nnz: usize, d: usize, dense: bool) -> f64 {
    if dense {
        64.0 * d as f64
    } else {
        nnz as f64 * (65.0 + (d as f64).log2())
    }
}

/// `‖x - x*‖² + weight·‖w - x‖²`; the drift term is skipped entirely in the
/// degenerate weight-0 regime so `0·∞` can never surface.
pub fn lyapunov_ef21p(x: &[f64], w: &[f64], x_star: &[f64], c: &TheoryConstantsEf21p) -> f64 {
    let model: f64 = x.iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum();
    if c.lyapunov_weight == 0.0 {
        return model;
    }
    let drift: f64 = w.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    model + c.lyapunov_weight * drift
}

/// `‖x - x*‖² + weight·(1/n)Σ‖wᵢ - x‖²` with the same degenerate-weight rule.
pub fn lyapunov_marinap(
    x: &[f64],
    w_list: &[Vec<f64>],
    x_star: &[f64],
    c: &TheoryConstantsMarinaP,
) -> f64 {
    let model: f64 = x.iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum();
    if c.lyapunov_weight == 0.0 {
        return model;
    }
    let mut drift = 0.0;
    for w in w_list {
        drift += w.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    model + c.lyapunov_weight * drift / w_list.len() as f64
}

/// Outcome of a run: the metrics plus the final states (useful to tests and
/// to callers chaining runs).
#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: MetricsLog,
    pub x: Vec<f64>,
    /// Final shifts: one vector for the shared-shift methods, `n` for the
    /// per-worker one.
    pub w: Vec<Vec<f64>>,
    pub rounds: u64,
    pub bits_per_worker: f64,
    /// Round at which a non-finite loss was first observed, if any.
    pub diverged_at: Option<u64>,
}

/// Per-round stepsize resolver built once per run from the schedule and the
/// method's theory constants.
enum Stepsize {
    Constant(f64),
    Decreasing { gamma0: f64, factor: f64 },
    PolyakEf21p { c: TheoryConstantsEf21p, f_star: f64, factor: f64 },
    PolyakMarinaP { omega: f64, p: f64, f_star: f64, factor: f64 },
}

impl Stepsize {
    fn resolve(cfg: &RunConfig, problem: &Problem) -> Result<Stepsize> {
        let sched = &cfg.schedule;
        let v0 = problem.constants().r0_sq;
        let l0 = problem.constants().l0;
        let horizon = cfg.horizon();
        match (cfg.method, sched.kind) {
            (_, ScheduleKind::FixedConstant) => {
                let gamma0 = sched.gamma0.expect("validated");
                Ok(Stepsize::Constant(sched.factor * gamma0))
            }
            (_, ScheduleKind::SmBaseline) => {
                // Untuned theory stepsize; needs the valid Lipschitz bound,
                // not the spectral-norm estimate.
                let gamma =
                    gamma_sm_baseline(v0.sqrt(), problem.subgradient_norm_bound(), horizon)?;
                Ok(Stepsize::Constant(sched.factor * gamma))
            }
            (Method::Sm | Method::Ef21p, ScheduleKind::ConstantOptimal) => {
                let c = ef21p_constants(cfg)?;
                Ok(Stepsize::Constant(gamma_constant_ef21p(&c, v0, l0, horizon, sched.factor)?))
            }
            (Method::MarinaP, ScheduleKind::ConstantOptimal) => {
                let c = marinap_constants(cfg, problem)?;
                Ok(Stepsize::Constant(gamma_constant_marinap(&c, v0, horizon, sched.factor)?))
            }
            (Method::Sm | Method::Ef21p, ScheduleKind::Decreasing) => {
                let gamma0 = match sched.gamma0 {
                    Some(g) => g,
                    None => optimal_gamma0_ef21p(&ef21p_constants(cfg)?, v0, l0, horizon)?,
                };
                Ok(Stepsize::Decreasing { gamma0, factor: sched.factor })
            }
            (Method::MarinaP, ScheduleKind::Decreasing) => {
                let gamma0 = match sched.gamma0 {
                    Some(g) => g,
                    None => optimal_gamma0_marinap(&marinap_constants(cfg, problem)?, v0, horizon)?,
                };
                Ok(Stepsize::Decreasing { gamma0, factor: sched.factor })
            }
            (Method::Sm | Method::Ef21p, ScheduleKind::PolyakEf21p) => Ok(Stepsize::PolyakEf21p {
                c: ef21p_constants(cfg)?,
                f_star: sched.f_star,
                factor: sched.factor,
            }),
            (Method::MarinaP, ScheduleKind::PolyakMarinaP) => {
                let c = marinap_constants(cfg, problem)?;
                Ok(Stepsize::PolyakMarinaP {
                    omega: c.omega,
                    p: c.p,
                    f_star: sched.f_star,
                    factor: sched.factor,
                })
            }
            _ => Err(Error::InvalidConfig("schedule/method mismatch".into())),
        }
    }

    /// `γ_t` from the round's oracle quantities.
    fn gamma(&self, t: u64, f_eval: f64, g_norm_sq: f64, mean_worker_norm_sq: f64) -> Result<f64> {
        match self {
            Stepsize::Constant(g) => Ok(*g),
            Stepsize::Decreasing { gamma0, factor } => Ok(gamma_decreasing(*gamma0, t, *factor)),
            Stepsize::PolyakEf21p { c, f_star, factor } => {
                gamma_polyak_ef21p(c, f_eval, *f_star, g_norm_sq, *factor)
            }
            Stepsize::PolyakMarinaP { omega, p, f_star, factor } => {
                gamma_polyak_marinap_from_norms(
                    f_eval - f_star,
                    g_norm_sq,
                    mean_worker_norm_sq,
                    *omega,
                    *p,
                    *factor,
                )
            }
        }
    }
}

/// Contractive-side constants for the run (the baseline counts as `α = 1`).
fn ef21p_constants(cfg: &RunConfig) -> Result<TheoryConstantsEf21p> {
    let alpha = match cfg.method {
        Method::Sm => 1.0,
        _ => cfg.compressor.alpha().ok_or_else(|| {
            Error::InvalidConfig("compressor has no contraction parameter".into())
        })?,
    };
    TheoryConstantsEf21p::new(alpha)
}

fn marinap_constants(cfg: &RunConfig, problem: &Problem) -> Result<TheoryConstantsMarinaP> {
    let omega = cfg
        .compressor
        .omega()
        .ok_or_else(|| Error::InvalidConfig("compressor has no variance parameter".into()))?;
    TheoryConstantsMarinaP::new(
        omega,
        cfg.p_full_effective(),
        problem.constants().l_bar,
        problem.constants().l_tilde,
    )
}

/// Running iterate average with optional per-round weights.
struct ErgodicAverage {
    sums: Vec<Vec<f64>>,
    weight: f64,
}

impl ErgodicAverage {
    fn new(copies: usize, d: usize) -> Self {
        ErgodicAverage { sums: vec![vec![0.0; d]; copies], weight: 0.0 }
    }

    fn push(&mut self, points: &[&[f64]], weight: f64) {
        for (sum, point) in self.sums.iter_mut().zip(points) {
            for (s, v) in sum.iter_mut().zip(*point) {
                *s += weight * v;
            }
        }
        self.weight += weight;
    }

    fn current(&self, idx: usize) -> Vec<f64> {
        self.sums[idx].iter().map(|s| s / self.weight).collect()
    }
}

/// Dispatch on the configured method.
pub fn run(problem: &Problem, cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate(problem)?;
    match cfg.method {
        Method::Sm => run_sm(problem, cfg),
        Method::Ef21p => run_ef21p(problem, cfg),
        Method::MarinaP => run_marinap(problem, cfg),
    }
}

/// Where each worker evaluates its oracle this round.
enum EvalPoints<'a> {
    Shared(&'a [f64]),
    PerWorker(&'a [Vec<f64>]),
}

impl EvalPoints<'_> {
    fn get(&self, i: usize) -> &[f64] {
        match self {
            EvalPoints::Shared(x) => x,
            EvalPoints::PerWorker(ws) => &ws[i],
        }
    }
}

/// One worker pass: accumulate `(1/n)Σ ∂fᵢ(point_i)`, `(1/n)Σ fᵢ(point_i)`
/// and `(1/n)Σ ‖∂fᵢ‖²` in fixed worker order.
fn worker_pass(
    problem: &Problem,
    points: &EvalPoints,
    g_mean: &mut [f64],
    buf: &mut [f64],
    g_i: &mut [f64],
) -> Result<(f64, f64)> {
    let n = problem.n();
    g_mean.fill(0.0);
    let mut f_acc = 0.0;
    let mut norm_acc = 0.0;
    for i in 0..n {
        f_acc += problem.subgradient_i_into(i, points.get(i), buf, g_i)?;
        norm_acc += g_i.iter().map(|v| v * v).sum::<f64>();
        for (gm, gv) in g_mean.iter_mut().zip(g_i.iter()) {
            *gm += gv;
        }
    }
    let n_f = n as f64;
    for gm in g_mean.iter_mut() {
        *gm /= n_f;
    }
    Ok((f_acc / n_f, norm_acc / n_f))
}

pub fn run_sm(problem: &Problem, cfg: &RunConfig) -> Result<RunResult> {
    let d = problem.dim();
    let stepsize = Stepsize::resolve(cfg, problem)?;
    let constants = ef21p_constants(cfg)?;
    let budget = cfg.bit_budget_per_worker.unwrap_or(f64::INFINITY);
    let weighted = matches!(cfg.schedule.kind, ScheduleKind::Decreasing);

    let mut x = problem.x0().to_vec();
    let mut g_mean = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut g_i = vec![0.0; d];
    let mut bits = 0.0;
    let mut metrics = MetricsLog::new(cfg.log_ergodic);
    let mut ergodic = cfg.log_ergodic.then(|| ErgodicAverage::new(1, d));
    let mut diverged_at = None;
    let mut rounds = 0;

    for t in 0..cfg.max_rounds {
        let (f_x, mean_norm_sq) =
            worker_pass(problem, &EvalPoints::Shared(&x), &mut g_mean, &mut buf, &mut g_i)?;
        let g_norm_sq: f64 = g_mean.iter().map(|v| v * v).sum();
        let gamma = stepsize.gamma(t, f_x, g_norm_sq, mean_norm_sq)?;

        bits += bits_for_message(d, d, true);
        let diverging = !f_x.is_finite();
        let stopping = bits >= budget || t + 1 == cfg.max_rounds || diverging;
        if t % cfg.log_every == 0 || stopping {
            let subopt = f_x - problem.f_star();
            let f_subopt_avg = match &mut ergodic {
                Some(avg) => {
                    avg.push(&[&x], if weighted { gamma } else { 1.0 });
                    Some(problem.f_value(&avg.current(0))? - problem.f_star())
                }
                None => None,
            };
            metrics.rows.push(MetricsRow {
                round: t,
                gamma,
                f_subopt_w: subopt,
                f_subopt_x: subopt,
                bits_per_worker: bits,
                lyapunov: cfg
                    .log_lyapunov
                    .then(|| lyapunov_ef21p(&x, &x, problem.x_star(), &constants)),
                full_round: None,
                f_subopt_avg,
            });
        } else if let Some(avg) = &mut ergodic {
            avg.push(&[&x], if weighted { gamma } else { 1.0 });
        }
        for (xv, gv) in x.iter_mut().zip(&g_mean) {
            *xv -= gamma * gv;
        }
        rounds = t + 1;
        if diverging {
            diverged_at = Some(t);
        }
        if stopping {
            break;
        }
    }
    Ok(RunResult { metrics, w: vec![x.clone()], x, rounds, bits_per_worker: bits, diverged_at })
}

pub fn run_ef21p(problem: &Problem, cfg: &RunConfig) -> Result<RunResult> {
    let d = problem.dim();
    let stepsize = Stepsize::resolve(cfg, problem)?;
    let constants = ef21p_constants(cfg)?;
    let budget = cfg.bit_budget_per_worker.unwrap_or(f64::INFINITY);
    let weighted = matches!(cfg.schedule.kind, ScheduleKind::Decreasing);

    let mut x = problem.x0().to_vec();
    // Server and workers share one shift state; the broadcast applies the
    // identical message everywhere, so a single array is exact.
    let mut w = problem.x0().to_vec();
    let mut g_mean = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut g_i = vec![0.0; d];
    let mut diff = vec![0.0; d];
    let mut bits = 0.0;
    let mut metrics = MetricsLog::new(cfg.log_ergodic);
    let mut ergodic = cfg.log_ergodic.then(|| ErgodicAverage::new(1, d));
    let mut diverged_at = None;
    let mut rounds = 0;

    for t in 0..cfg.max_rounds {
        let (f_w, mean_norm_sq) =
            worker_pass(problem, &EvalPoints::Shared(&w), &mut g_mean, &mut buf, &mut g_i)?;
        let g_norm_sq: f64 = g_mean.iter().map(|v| v * v).sum();
        let gamma = stepsize.gamma(t, f_w, g_norm_sq, mean_norm_sq)?;

        // x^{t+1}, then the compressed shift update broadcast to everyone.
        for ((dv, xv), gv) in diff.iter_mut().zip(&x).zip(&g_mean) {
            *dv = xv - gamma * gv;
        }
        let delta = match cfg.compressor.kind {
            CompressorKind::TopK => {
                for (dv, wv) in diff.iter_mut().zip(&w) {
                    *dv -= wv;
                }
                compress_topk(&diff, cfg.compressor.k)?
            }
            CompressorKind::Identity => {
                for (dv, wv) in diff.iter_mut().zip(&w) {
                    *dv -= wv;
                }
                crate::compressors::compress_identity(&diff)
            }
            _ => unreachable!("validated"),
        };
        bits += bits_for_message(delta.nnz(), d, false);

        let diverging = !f_w.is_finite();
        let stopping = bits >= budget || t + 1 == cfg.max_rounds || diverging;
        if t % cfg.log_every == 0 || stopping {
            let f_subopt_avg = match &mut ergodic {
                Some(avg) => {
                    avg.push(&[&w], if weighted { gamma } else { 1.0 });
                    Some(problem.f_value(&avg.current(0))? - problem.f_star())
                }
                None => None,
            };
            metrics.rows.push(MetricsRow {
                round: t,
                gamma,
                f_subopt_w: f_w - problem.f_star(),
                f_subopt_x: problem.f_value(&x)? - problem.f_star(),
                bits_per_worker: bits,
                lyapunov: cfg
                    .log_lyapunov
                    .then(|| lyapunov_ef21p(&x, &w, problem.x_star(), &constants)),
                full_round: None,
                f_subopt_avg,
            });
        } else if let Some(avg) = &mut ergodic {
            avg.push(&[&w], if weighted { gamma } else { 1.0 });
        }

        for (xv, gv) in x.iter_mut().zip(&g_mean) {
            *xv -= gamma * gv;
        }
        delta.add_into(&mut w);
        rounds = t + 1;
        if diverging {
            diverged_at = Some(t);
        }
        if stopping {
            break;
        }
    }
    Ok(RunResult { metrics, w: vec![w], x, rounds, bits_per_worker: bits, diverged_at })
}

pub fn run_marinap(problem: &Problem, cfg: &RunConfig) -> Result<RunResult> {
    let d = problem.dim();
    let n = problem.n();
    let stepsize = Stepsize::resolve(cfg, problem)?;
    let constants = marinap_constants(cfg, problem)?;
    let p_full = cfg.p_full_effective();
    let budget = cfg.bit_budget_per_worker.unwrap_or(f64::INFINITY);
    let weighted = matches!(cfg.schedule.kind, ScheduleKind::Decreasing);

    let mut server_rng = Rng::child(cfg.seed, SERVER_STREAM);
    let mut worker_rngs: Vec<Rng> =
        (0..n).map(|i| Rng::child(cfg.seed, worker_stream(i))).collect();

    let mut x = problem.x0().to_vec();
    let mut ws: Vec<Vec<f64>> = vec![problem.x0().to_vec(); n];
    let mut g_mean = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut g_i = vec![0.0; d];
    let mut x_next = vec![0.0; d];
    let mut delta = vec![0.0; d];
    let mut bits = 0.0;
    let mut metrics = MetricsLog::new(cfg.log_ergodic);
    let mut ergodic = cfg.log_ergodic.then(|| ErgodicAverage::new(n, d));
    let mut diverged_at = None;
    let mut rounds = 0;

    for t in 0..cfg.max_rounds {
        let (f_w, mean_norm_sq) =
            worker_pass(problem, &EvalPoints::PerWorker(&ws), &mut g_mean, &mut buf, &mut g_i)?;
        let g_norm_sq: f64 = g_mean.iter().map(|v| v * v).sum();
        let gamma = stepsize.gamma(t, f_w, g_norm_sq, mean_norm_sq)?;

        for ((xn, xv), gv) in x_next.iter_mut().zip(&x).zip(&g_mean) {
            *xn = xv - gamma * gv;
        }
        // Bernoulli sync decision comes after the model update, from the
        // server stream.
        let full = server_rng.bernoulli(p_full);
        let messages: Option<Vec<CompressedVector>> = if full {
            bits += bits_for_message(d, d, true);
            None
        } else {
            for ((dv, xn), xv) in delta.iter_mut().zip(&x_next).zip(&x) {
                *dv = xn - xv;
            }
            let qs = compress_batch(&cfg.compressor, &delta, &mut server_rng, &mut worker_rngs)?;
            bits += bits_for_message(qs[0].nnz(), d, false);
            Some(qs)
        };

        let diverging = !f_w.is_finite();
        let stopping = bits >= budget || t + 1 == cfg.max_rounds || diverging;
        if t % cfg.log_every == 0 || stopping {
            let f_subopt_avg = match &mut ergodic {
                Some(avg) => {
                    let points: Vec<&[f64]> = ws.iter().map(|w| w.as_slice()).collect();
                    avg.push(&points, if weighted { gamma } else { 1.0 });
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += problem.f_i_value_with(i, &avg.current(i), &mut buf)?;
                    }
                    Some(acc / n as f64 - problem.f_star())
                }
                None => None,
            };
            metrics.rows.push(MetricsRow {
                round: t,
                gamma,
                f_subopt_w: f_w - problem.f_star(),
                f_subopt_x: problem.f_value(&x)? - problem.f_star(),
                bits_per_worker: bits,
                lyapunov: cfg
                    .log_lyapunov
                    .then(|| lyapunov_marinap(&x, &ws, problem.x_star(), &constants)),
                full_round: Some(full),
                f_subopt_avg,
            });
        } else if let Some(avg) = &mut ergodic {
            let points: Vec<&[f64]> = ws.iter().map(|w| w.as_slice()).collect();
            avg.push(&points, if weighted { gamma } else { 1.0 });
        }

        match messages {
            None => {
                for w in ws.iter_mut() {
                    w.copy_from_slice(&x_next);
                }
            }
            Some(qs) => {
                for (w, q) in ws.iter_mut().zip(&qs) {
                    q.add_into(w);
                }
            }
        }
        x.copy_from_slice(&x_next);
        rounds = t + 1;
        if diverging {
            diverged_at = Some(t);
        }
        if stopping {
            break;
        }
    }
    Ok(RunResult { metrics, w: ws, x, rounds, bits_per_worker: bits, diverged_at })
}
