//! `scaling`: label counts across an epsilon grid and the fitted exponent of `1/eps`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::learner::label_exponent;

use super::experiment::{run_cells, ExperimentRecord};
use super::{csv_with_schema, write_atomic, CliError, ExperimentConfig};

pub const SCALING_CSV: &str = "scaling.csv";
pub const SCALING_SUMMARY: &str = "scaling_summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub epsilon: f64,
    pub seed: u64,
    pub labels_total: u64,
    pub excess_error: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummary {
    pub schema: u32,
    pub alpha: f64,
    pub theoretical_exponent: f64,
    /// Least-squares slope of `ln(labels)` against `ln(1/eps)` over all runs.
    pub fitted_slope: f64,
    /// 95% interval from the spread of per-seed slopes; absent with one seed.
    pub ci95: Option<(f64, f64)>,
    /// Slope after dividing labels by `ln^2(1/eps)` (from `theta0`) and by the
    /// squared polylog factor of the step count.
    pub polylog_adjusted_slope: f64,
    pub per_seed_slopes: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub mean_labels: Vec<f64>,
    pub success_rate: Vec<f64>,
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Mean and two-sided 95% Student-t interval of `values`.
pub fn mean_ci95(values: &[f64]) -> (f64, Option<(f64, f64)>) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    let half = t * (var / n as f64).sqrt();
    (mean, Some((mean - half, mean + half)))
}

/// Fits the exponent from finished records. With the same epsilon grid for
/// every seed the pooled slope equals the mean per-seed slope.
pub fn summarize(cfg: &ExperimentConfig, records: &[ExperimentRecord]) -> ScalingSummary {
    let x_of = |e: f64| (1.0 / e).ln();
    let per_seed_slopes: Vec<f64> = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let (x, y): (Vec<f64>, Vec<f64>) = records
                .iter()
                .filter(|r| r.seed == seed)
                .map(|r| (x_of(r.epsilon), (r.labels_total.max(1) as f64).ln()))
                .unzip();
            ols_slope(&x, &y)
        })
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = records
        .iter()
        .map(|r| (x_of(r.epsilon), (r.labels_total.max(1) as f64).ln()))
        .unzip();
    let fitted_slope = ols_slope(&x, &y);
    let y_adj: Vec<f64> = records
        .iter()
        .map(|r| {
            let l = x_of(r.epsilon);
            (r.labels_total.max(1) as f64).ln() - 2.0 * l.ln() - 2.0 * r.schedule.polylog_factor.ln()
        })
        .collect();
    let polylog_adjusted_slope = ols_slope(&x, &y_adj);
    let (_, ci95) = mean_ci95(&per_seed_slopes);
    let per_eps = |f: &dyn Fn(&ExperimentRecord) -> f64| -> Vec<f64> {
        cfg.epsilons
            .iter()
            .map(|&e| {
                let v: Vec<f64> = records.iter().filter(|r| r.epsilon == e).map(f).collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            })
            .collect()
    };
    ScalingSummary {
        schema: 1,
        alpha: cfg.noise.alpha,
        theoretical_exponent: label_exponent(cfg.noise.alpha),
        fitted_slope,
        ci95,
        polylog_adjusted_slope,
        per_seed_slopes,
        epsilons: cfg.epsilons.clone(),
        mean_labels: per_eps(&|r| r.labels_total as f64),
        success_rate: per_eps(&|r| if r.success { 1.0 } else { 0.0 }),
    }
}

pub fn cmd_scaling(cfg: &ExperimentConfig) -> Result<ScalingSummary, CliError> {
    if cfg.epsilons.len() < 3 {
        return Err(CliError::Usage(format!(
            "scaling needs at least 3 values in target.epsilon, got {}",
            cfg.epsilons.len()
        )));
    }
    let records: Vec<ExperimentRecord> = run_cells(cfg)?.into_iter().map(|c| c.record).collect();
    let rows: Vec<ScalingRow> = records
        .iter()
        .map(|r| ScalingRow {
            epsilon: r.epsilon,
            seed: r.seed,
            labels_total: r.labels_total,
            excess_error: r.final_excess_error,
            success: r.success,
        })
        .collect();
    write_atomic(&cfg.out.join(SCALING_CSV), &csv_with_schema(&rows))?;
    let summary = summarize(cfg, &records);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&cfg.out.join(SCALING_SUMMARY), json.as_bytes())?;
    println!(
        "fitted exponent {:.3} (theory {:.3}); summary in {}",
        summary.fitted_slope,
        summary.theoretical_exponent,
        cfg.out.join(SCALING_SUMMARY).display()
    );
    Ok(summary)
}
