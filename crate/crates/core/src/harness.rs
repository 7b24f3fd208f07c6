//! Experiment orchestration: the tuning-factor grid search, the seeded
//! experiment matrix, bit budgets, and the output manifest.
//!
//! Every cell of a matrix is deterministic: its problem seed and run seed
//! are folded from the replicate seed and the cell coordinates with the
//! stream-derivation mixer, so adding rows to a matrix never perturbs
//! existing cells. Cells are independent and run in parallel; files are
//! written atomically (temp file + rename) and the manifest lists cells in
//! configuration order, which makes re-runs byte-identical.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compressors::{CompressorKind, CompressorSpec};
use crate::error::{Error, Result};
use crate::optim::{run, Method, RunConfig, RunResult};
use crate::problem::{GenConfig, Problem};
use crate::rng::child_seed;
use crate::schedules::{Schedule, ScheduleKind};

/// The paper's tuning grid `{2⁻⁹, …, 2⁷}`.
pub fn default_factor_grid() -> Vec<f64> {
    (-9..=7).map(|e| 2f64.powi(e)).collect()
}

/// Schedule family of a matrix arm; resolved to the method-specific kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmSchedule {
    Constant,
    Decreasing,
    Polyak,
}

impl ArmSchedule {
    pub fn to_kind(self, method: Method) -> ScheduleKind {
        match (self, method) {
            (ArmSchedule::Constant, _) => ScheduleKind::ConstantOptimal,
            (ArmSchedule::Decreasing, _) => ScheduleKind::Decreasing,
            (ArmSchedule::Polyak, Method::MarinaP) => ScheduleKind::PolyakMarinaP,
            (ArmSchedule::Polyak, _) => ScheduleKind::PolyakEf21p,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ArmSchedule::Constant => "constant",
            ArmSchedule::Decreasing => "decreasing",
            ArmSchedule::Polyak => "polyak",
        }
    }
}

/// One method arm of the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodArm {
    pub method: Method,
    pub compressor: CompressorKind,
    pub schedule: ArmSchedule,
}

impl MethodArm {
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.method.label(), self.compressor.label(), self.schedule.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetEntry {
    pub n: usize,
    pub bits: f64,
}

/// The full experiment grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMatrix {
    pub dims: Vec<usize>,
    pub node_counts: Vec<usize>,
    pub noise_scales: Vec<f64>,
    pub methods: Vec<MethodArm>,
    #[serde(default = "default_factor_grid")]
    pub factor_grid: Vec<f64>,
    pub budgets: Vec<BudgetEntry>,
    pub seeds: Vec<u64>,
    #[serde(default = "crate::problem::default_mu")]
    pub mu: f64,
    #[serde(default = "default_matrix_log_every")]
    pub log_every: u64,
    /// Safety cap on rounds per run; budgets normally terminate first.
    #[serde(default = "default_matrix_max_rounds")]
    pub max_rounds: u64,
}

pub fn default_matrix_log_every() -> u64 {
    10
}

pub fn default_matrix_max_rounds() -> u64 {
    10_000_000
}

/// The four paper baselines, constant and Polyak stepsizes each.
pub fn paper_method_arms() -> Vec<MethodArm> {
    let mut arms = Vec::new();
    for schedule in [ArmSchedule::Constant, ArmSchedule::Polyak] {
        arms.push(MethodArm { method: Method::Ef21p, compressor: CompressorKind::TopK, schedule });
        arms.push(MethodArm {
            method: Method::MarinaP,
            compressor: CompressorKind::SameRandK,
            schedule,
        });
        arms.push(MethodArm {
            method: Method::MarinaP,
            compressor: CompressorKind::IndRandK,
            schedule,
        });
        arms.push(MethodArm { method: Method::MarinaP, compressor: CompressorKind::PermK, schedule });
    }
    arms
}

impl ExperimentMatrix {
    /// Seconds-scale default: d=200, n=10, two noise levels, 10⁷-bit budget.
    pub fn desk_scale() -> Self {
        ExperimentMatrix {
            dims: vec![200],
            node_counts: vec![10],
            noise_scales: vec![0.1, 1.0],
            methods: paper_method_arms(),
            factor_grid: default_factor_grid(),
            budgets: vec![BudgetEntry { n: 10, bits: 1e7 }],
            seeds: vec![1],
            mu: 1e-6,
            log_every: 10,
            max_rounds: default_matrix_max_rounds(),
        }
    }

    /// The full-size grid: d=1000, n in {10,100}, three noise levels,
    /// budgets 3.5·10⁸ and 3.5·10⁷ bits respectively.
    pub fn paper_scale() -> Self {
        ExperimentMatrix {
            dims: vec![1000],
            node_counts: vec![10, 100],
            noise_scales: vec![0.1, 1.0, 10.0],
            methods: paper_method_arms(),
            factor_grid: default_factor_grid(),
            budgets: vec![
                BudgetEntry { n: 10, bits: 3.5e8 },
                BudgetEntry { n: 100, bits: 3.5e7 },
            ],
            seeds: vec![1],
            mu: 1e-6,
            log_every: 10,
            max_rounds: default_matrix_max_rounds(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty()
            || self.node_counts.is_empty()
            || self.noise_scales.is_empty()
            || self.methods.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::InvalidConfig("matrix has an empty axis".into()));
        }
        if self.factor_grid.is_empty() {
            return Err(Error::InvalidConfig("factor grid is empty".into()));
        }
        for &d in &self.dims {
            for &n in &self.node_counts {
                if n == 0 || d % n != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "every (d, n) pair needs d divisible by n, got d={d} n={n}"
                    )));
                }
            }
        }
        for &n in &self.node_counts {
            self.budget_for(n)?;
        }
        Ok(())
    }

    pub fn budget_for(&self, n: usize) -> Result<f64> {
        self.budgets
            .iter()
            .find(|b| b.n == n)
            .map(|b| b.bits)
            .ok_or_else(|| Error::InvalidConfig(format!("no budget entry for n={n}")))
    }
}

/// Grid-search outcome for one configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_factor: f64,
    pub final_subopt: f64,
    pub per_factor: Vec<FactorOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorOutcome {
    pub factor: f64,
    /// Final suboptimality at the method's theorem evaluation point; NaN
    /// when the run produced no finite value.
    pub final_subopt: f64,
    pub rounds: u64,
    pub bits_per_worker: f64,
    pub diverged: bool,
}

/// Sweep the tuning factor over `grid`, rank by final suboptimality at the
/// method's theorem evaluation point, prefer the smaller factor on ties.
/// Returns the winning run itself so it can be reused as the final result.
pub fn tune(
    problem: &Problem,
    base_cfg: &RunConfig,
    grid: &[f64],
) -> Result<(TuneResult, RunResult)> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("factor grid is empty".into()));
    }
    let runs: Vec<(f64, Result<RunResult>)> = grid
        .par_iter()
        .map(|&factor| {
            let mut cfg = base_cfg.clone();
            cfg.schedule.factor = factor;
            (factor, run(problem, &cfg))
        })
        .collect();

    let mut per_factor = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, RunResult)> = None;
    for (factor, outcome) in runs {
        match outcome {
            Ok(res) => {
                let fin = res.metrics.final_subopt_w().unwrap_or(f64::NAN);
                let ok = fin.is_finite() && res.diverged_at.is_none();
                per_factor.push(FactorOutcome {
                    factor,
                    final_subopt: if ok { fin } else { f64::NAN },
                    rounds: res.rounds,
                    bits_per_worker: res.bits_per_worker,
                    diverged: !ok,
                });
                if ok && best.as_ref().is_none_or(|(_, bf, _)| fin < *bf) {
                    best = Some((factor, fin, res));
                }
            }
            Err(Error::DegenerateOracle { .. }) => {
                // A factor that drives the oracle degenerate counts as a
                // failed grid point, not a failed sweep.
                per_factor.push(FactorOutcome {
                    factor,
                    final_subopt: f64::NAN,
                    rounds: 0,
                    bits_per_worker: 0.0,
                    diverged: true,
                });
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((best_factor, final_subopt, run)) => {
            Ok((TuneResult { best_factor, final_subopt, per_factor }, run))
        }
        None => Err(Error::AllDiverged(format!(
            "{}_{}",
            base_cfg.method.label(),
            base_cfg.compressor.kind.label()
        ))),
    }
}

/// One manifest entry; exactly one of `csv_path`/`error` is set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub d: usize,
    pub n: usize,
    pub s: f64,
    pub seed: u64,
    pub method: String,
    pub compressor: String,
    pub schedule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_subopt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub matrix_config: ExperimentMatrix,
    pub cells: Vec<CellResult>,
}

/// Fold cell coordinates into a child seed.
fn fold_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed, |acc, &p| child_seed(acc, p))
}

fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0u64, |acc, b| child_seed(acc, b as u64))
}

/// Deterministic per-cell seeds: the problem depends only on the dataset
/// coordinates (all arms share it), the run seed also mixes in the arm.
pub fn cell_seeds(seed: u64, d: usize, n: usize, s: f64, arm_label: &str) -> (u64, u64) {
    let problem_seed = fold_seed(seed, &[1, d as u64, n as u64, s.to_bits()]);
    let run_seed = fold_seed(seed, &[2, d as u64, n as u64, s.to_bits(), label_hash(arm_label)]);
    (problem_seed, run_seed)
}

/// Write `content` atomically.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Cell {
    d: usize,
    n: usize,
    s: f64,
    seed: u64,
    arm: MethodArm,
}

fn run_cell(matrix: &ExperimentMatrix, cell: &Cell, out_dir: &Path) -> Result<(f64, f64, String)> {
    let arm_label = cell.arm.label();
    let (problem_seed, run_seed) = cell_seeds(cell.seed, cell.d, cell.n, cell.s, &arm_label);
    let problem = Problem::generate(&GenConfig {
        n: cell.n,
        d: cell.d,
        mu: matrix.mu,
        noise_scale: cell.s,
        seed: problem_seed,
    })?;
    let k = cell.d / cell.n;
    let compressor = CompressorSpec::new(cell.arm.compressor, k, cell.d, cell.n)?;
    let mut schedule = Schedule::new(cell.arm.schedule.to_kind(cell.arm.method));
    schedule.f_star = problem.f_star();
    let cfg = RunConfig {
        method: cell.arm.method,
        compressor,
        schedule,
        p_full: Some(k as f64 / cell.d as f64),
        max_rounds: matrix.max_rounds,
        bit_budget_per_worker: Some(matrix.budget_for(cell.n)?),
        seed: run_seed,
        log_lyapunov: false,
        log_every: matrix.log_every,
        log_ergodic: false,
    };
    let (tuned, best_run) = tune(&problem, &cfg, &matrix.factor_grid)?;
    let file_name = format!(
        "d{}_n{}_s{}_seed{}_{}.csv",
        cell.d, cell.n, cell.s, cell.seed, arm_label
    );
    write_atomic(&out_dir.join(&file_name), &best_run.metrics.to_csv_string())?;
    Ok((tuned.best_factor, tuned.final_subopt, file_name))
}

/// Run every cell of the matrix, writing one CSV per cell plus a manifest
/// (`manifest.json`) into `out_dir`. Idempotent for identical inputs.
pub fn run_matrix(matrix: &ExperimentMatrix, out_dir: &Path) -> Result<Manifest> {
    matrix.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut cells = Vec::new();
    for &d in &matrix.dims {
        for &n in &matrix.node_counts {
            for &s in &matrix.noise_scales {
                for &seed in &matrix.seeds {
                    for &arm in &matrix.methods {
                        cells.push(Cell { d, n, s, seed, arm });
                    }
                }
            }
        }
    }
    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|cell| {
            let outcome = run_cell(matrix, cell, out_dir);
            let mut entry = CellResult {
                d: cell.d,
                n: cell.n,
                s: cell.s,
                seed: cell.seed,
                method: cell.arm.method.label().into(),
                compressor: cell.arm.compressor.label().into(),
                schedule: cell.arm.schedule.label().into(),
                best_factor: None,
                final_subopt: None,
                csv_path: None,
                error: None,
            };
            match outcome {
                Ok((factor, final_subopt, path)) => {
                    entry.best_factor = Some(factor);
                    entry.final_subopt = Some(final_subopt);
                    entry.csv_path = Some(path);
                }
                Err(e) => entry.error = Some(e.to_string()),
            }
            entry
        })
        .collect();
    let manifest = Manifest { matrix_config: matrix.clone(), cells: results };
    write_atomic(&out_dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressors::CompressorKind;
    use crate::metrics::MetricsLog;

    fn small_problem() -> Problem {
        Problem::generate(&GenConfig { n: 4, d: 16, mu: 1e-6, noise_scale: 1.0, seed: 5 }).unwrap()
    }

    fn base_cfg() -> RunConfig {
        RunConfig {
            method: Method::MarinaP,
            compressor: CompressorSpec::new(CompressorKind::PermK, 4, 16, 4).unwrap(),
            schedule: Schedule::new(ScheduleKind::ConstantOptimal),
            p_full: Some(0.25),
            max_rounds: 200,
            bit_budget_per_worker: None,
            seed: 11,
            log_lyapunov: false,
            log_every: 1,
            log_ergodic: false,
        }
    }

    #[test]
    fn tune_with_single_factor_returns_it() {
        let p = small_problem();
        let (res, _) = tune(&p, &base_cfg(), &[0.5]).unwrap();
        assert_eq!(res.best_factor, 0.5);
        assert_eq!(res.per_factor.len(), 1);
    }

    #[test]
    fn tune_prefers_finite_over_diverged() {
        let p = small_problem();
        // Polyak with an absurd factor feeds the gap back into the stepsize
        // and blows up exponentially; the small factor stays finite.
        let mut cfg = base_cfg();
        cfg.schedule = Schedule::new(ScheduleKind::PolyakMarinaP);
        let (res, _) = tune(&p, &cfg, &[1e12, 0.25]).unwrap();
        assert_eq!(res.best_factor, 0.25);
        let diverged: Vec<bool> = res.per_factor.iter().map(|f| f.diverged).collect();
        assert_eq!(diverged, vec![true, false]);
    }

    #[test]
    fn tune_reports_all_diverged() {
        let p = small_problem();
        let mut cfg = base_cfg();
        cfg.schedule = Schedule::new(ScheduleKind::PolyakMarinaP);
        assert!(matches!(tune(&p, &cfg, &[1e12, 1e13]), Err(Error::AllDiverged(_))));
    }

    #[test]
    fn tune_ties_go_to_smaller_factor() {
        let p = small_problem();
        // Zero-gap start is impossible here, so force a tie by duplicating
        // the factor value.
        let (res, _) = tune(&p, &base_cfg(), &[0.5, 0.5]).unwrap();
        assert_eq!(res.best_factor, 0.5);
    }

    #[test]
    fn matrix_rejects_indivisible_pairs() {
        let mut m = ExperimentMatrix::desk_scale();
        m.node_counts = vec![3];
        assert!(m.validate().is_err());
    }

    #[test]
    fn matrix_requires_budget_per_n() {
        let mut m = ExperimentMatrix::desk_scale();
        m.node_counts = vec![10, 20];
        assert!(matches!(m.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn cell_seeds_are_stable_and_arm_dependent() {
        let (p1, r1) = cell_seeds(7, 100, 10, 1.0, "a");
        let (p2, r2) = cell_seeds(7, 100, 10, 1.0, "b");
        assert_eq!(p1, p2, "problem seed shared across arms");
        assert_ne!(r1, r2, "run seed distinguishes arms");
        assert_eq!(cell_seeds(7, 100, 10, 1.0, "a"), (p1, r1));
    }

    #[test]
    fn tiny_matrix_produces_manifest_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let m = ExperimentMatrix {
            dims: vec![12],
            node_counts: vec![3],
            noise_scales: vec![1.0],
            methods: vec![MethodArm {
                method: Method::MarinaP,
                compressor: CompressorKind::PermK,
                schedule: ArmSchedule::Constant,
            }],
            factor_grid: vec![0.5, 1.0],
            budgets: vec![BudgetEntry { n: 3, bits: 20_000.0 }],
            seeds: vec![1],
            mu: 1e-6,
            log_every: 1,
            max_rounds: 10_000,
        };
        let manifest = run_matrix(&m, dir.path()).unwrap();
        assert_eq!(manifest.cells.len(), 1);
        let cell = &manifest.cells[0];
        assert!(cell.error.is_none());
        let csv = dir.path().join(cell.csv_path.as_ref().unwrap());
        let log = MetricsLog::read_csv(&csv).unwrap();
        assert!(!log.rows.is_empty());
        // budget honored within one message
        let budget = 20_000.0;
        let last = log.rows.last().unwrap();
        assert!(last.bits_per_worker >= budget || last.round + 1 == 10_000);
        assert!(last.bits_per_worker <= budget + 64.0 * 12.0);
    }

    #[test]
    fn matrix_reruns_are_byte_identical() {
        let m = ExperimentMatrix {
            dims: vec![8],
            node_counts: vec![2],
            noise_scales: vec![0.5],
            methods: vec![
                MethodArm {
                    method: Method::Ef21p,
                    compressor: CompressorKind::TopK,
                    schedule: ArmSchedule::Constant,
                },
                MethodArm {
                    method: Method::MarinaP,
                    compressor: CompressorKind::IndRandK,
                    schedule: ArmSchedule::Polyak,
                },
            ],
            factor_grid: vec![0.25, 1.0],
            budgets: vec![BudgetEntry { n: 2, bits: 10_000.0 }],
            seeds: vec![3],
            mu: 1e-6,
            log_every: 1,
            max_rounds: 5_000,
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        run_matrix(&m, d1.path()).unwrap();
        run_matrix(&m, d2.path()).unwrap();
        let mut names: Vec<String> = std::fs::read_dir(d1.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert!(names.len() >= 3);
        for name in names {
            let a = std::fs::read(d1.path().join(&name)).unwrap();
            let b = std::fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "file {name} differs between reruns");
        }
    }
}
