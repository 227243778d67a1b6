//! `calibrate`: grid search over `(c_N, c_beta)` at a small pilot configuration.

use serde::{Deserialize, Serialize};

use super::experiment::run_cells;
use super::{csv_with_schema, write_atomic, CliError, ExperimentConfig};

pub const CALIBRATE_CSV: &str = "calibrate.csv";
pub const CALIBRATE_SUMMARY: &str = "calibrate_summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    #[serde(rename = "c_N")]
    pub c_n: f64,
    pub c_beta: f64,
    pub success_rate: f64,
    pub mean_labels: f64,
    pub mean_excess_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub schema: u32,
    pub dim: usize,
    pub epsilon: f64,
    pub seeds: Vec<u64>,
    pub rows: Vec<CalibrationRow>,
    /// Highest success rate, then fewest labels.
    pub best: CalibrationRow,
}

/// The preferred row: highest success rate, ties broken by fewer labels.
pub fn best_row(rows: &[CalibrationRow]) -> Option<&CalibrationRow> {
    rows.iter().reduce(|best, r| {
        let better = r.success_rate > best.success_rate
            || (r.success_rate == best.success_rate && r.mean_labels < best.mean_labels);
        if better {
            r
        } else {
            best
        }
    })
}

pub fn cmd_calibrate(cfg: &ExperimentConfig) -> Result<CalibrationSummary, CliError> {
    let cal = &cfg.calibrate;
    let mut rows = Vec::new();
    for &c_n in &cal.c_n {
        for &c_beta in &cal.c_beta {
            let mut pilot = cfg.clone();
            pilot.marginal.dim = cal.dim;
            pilot.epsilons = vec![cal.epsilon];
            pilot.seeds = cal.seeds.clone();
            pilot.constants.c_n = c_n;
            pilot.constants.c_beta = c_beta;
            pilot.out = cfg.out.join(format!("pilot_cN{c_n:e}_cbeta{c_beta:e}"));
            let records: Vec<_> = run_cells(&pilot)?.into_iter().map(|c| c.record).collect();
            let n = records.len().max(1) as f64;
            rows.push(CalibrationRow {
                c_n,
                c_beta,
                success_rate: records.iter().filter(|r| r.success).count() as f64 / n,
                mean_labels: records.iter().map(|r| r.labels_total as f64).sum::<f64>() / n,
                mean_excess_error: records.iter().map(|r| r.final_excess_error).sum::<f64>() / n,
            });
        }
    }
    write_atomic(&cfg.out.join(CALIBRATE_CSV), &csv_with_schema(&rows))?;
    let best = best_row(&rows)
        .cloned()
        .ok_or_else(|| CliError::Usage("calibrate.c_N and calibrate.c_beta must be non-empty".into()))?;
    let summary = CalibrationSummary {
        schema: 1,
        dim: cal.dim,
        epsilon: cal.epsilon,
        seeds: cal.seeds.clone(),
        rows,
        best,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&cfg.out.join(CALIBRATE_SUMMARY), json.as_bytes())?;
    println!(
        "best: c_N = {:e}, c_beta = {:e} ({:.0}% success, {:.0} labels)",
        summary.best.c_n,
        summary.best.c_beta,
        100.0 * summary.best.success_rate,
        summary.best.mean_labels
    );
    Ok(summary)
}
