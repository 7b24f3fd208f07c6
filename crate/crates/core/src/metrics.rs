//! Per-round metrics and their CSV form.
//!
//! The CSV layout is part of the tool's external interface:
//! `round,gamma,f_subopt_w,f_subopt_x,bits_per_worker,lyapunov,full_round`,
//! floats rendered with 17 significant digits (`{:.16e}`), which round-trips
//! every f64 bit-exactly. Optional columns are left empty when absent. When
//! ergodic-average logging is enabled an extra `f_subopt_avg` column is
//! appended.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: u64,
    pub gamma: f64,
    /// Suboptimality at the method's theorem evaluation point: `f(wᵗ) - f*`
    /// for the shared-shift method, `(1/n)Σ fᵢ(wᵢᵗ) - f*` for the per-worker
    /// one, `f(xᵗ) - f*` for the baseline.
    pub f_subopt_w: f64,
    /// Suboptimality at the server model `xᵗ`.
    pub f_subopt_x: f64,
    /// Cumulative downlink bits per worker including this round's message.
    pub bits_per_worker: f64,
    pub lyapunov: Option<f64>,
    /// Whether this round broadcast the full model (per-worker-shift method
    /// only).
    pub full_round: Option<bool>,
    /// Suboptimality of the running (weighted) iterate average, if tracked.
    pub f_subopt_avg: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
    /// Whether the optional `f_subopt_avg` column is present.
    pub ergodic: bool,
}

const HEADER: &str = "round,gamma,f_subopt_w,f_subopt_x,bits_per_worker,lyapunov,full_round";

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

impl MetricsLog {
    pub fn new(ergodic: bool) -> Self {
        MetricsLog { rows: Vec::new(), ergodic }
    }

    /// Final logged suboptimality at the theorem evaluation point.
    pub fn final_subopt_w(&self) -> Option<f64> {
        self.rows.last().map(|r| r.f_subopt_w)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        if self.ergodic {
            out.push_str(",f_subopt_avg");
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}",
                r.round,
                fmt(r.gamma),
                fmt(r.f_subopt_w),
                fmt(r.f_subopt_x),
                fmt(r.bits_per_worker),
                fmt_opt(r.lyapunov),
                r.full_round.map(|b| if b { "1" } else { "0" }).unwrap_or(""),
            ));
            if self.ergodic {
                out.push(',');
                out.push_str(&fmt_opt(r.f_subopt_avg));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn from_csv_str(text: &str, path_for_errors: &str) -> Result<MetricsLog> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::MalformedCsv {
            path: path_for_errors.into(),
            reason: "empty file".into(),
        })?;
        let ergodic = match header {
            h if h == HEADER => false,
            h if h == format!("{HEADER},f_subopt_avg") => true,
            other => {
                return Err(Error::MalformedCsv {
                    path: path_for_errors.into(),
                    reason: format!("unexpected header: {other}"),
                })
            }
        };
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let expected = if ergodic { 8 } else { 7 };
            if parts.len() != expected {
                return Err(Error::MalformedCsv {
                    path: path_for_errors.into(),
                    reason: format!("line {}: {} fields, expected {expected}", lineno + 2, parts.len()),
                });
            }
            let field = |idx: usize| -> Result<f64> {
                parts[idx].parse().map_err(|_| Error::MalformedCsv {
                    path: path_for_errors.into(),
                    reason: format!("line {}: bad float {:?}", lineno + 2, parts[idx]),
                })
            };
            let opt_field = |idx: usize| -> Result<Option<f64>> {
                if parts[idx].is_empty() {
                    Ok(None)
                } else {
                    field(idx).map(Some)
                }
            };
            rows.push(MetricsRow {
                round: parts[0].parse().map_err(|_| Error::MalformedCsv {
                    path: path_for_errors.into(),
                    reason: format!("line {}: bad round {:?}", lineno + 2, parts[0]),
                })?,
                gamma: field(1)?,
                f_subopt_w: field(2)?,
                f_subopt_x: field(3)?,
                bits_per_worker: field(4)?,
                lyapunov: opt_field(5)?,
                full_round: match parts[6] {
                    "" => None,
                    "0" => Some(false),
                    "1" => Some(true),
                    other => {
                        return Err(Error::MalformedCsv {
                            path: path_for_errors.into(),
                            reason: format!("line {}: bad full_round {other:?}", lineno + 2),
                        })
                    }
                },
                f_subopt_avg: if ergodic { opt_field(7)? } else { None },
            });
        }
        Ok(MetricsLog { rows, ergodic })
    }

    pub fn read_csv(path: &Path) -> Result<MetricsLog> {
        let text = std::fs::read_to_string(path)?;
        MetricsLog::from_csv_str(&text, &path.display().to_string())
    }
}
