//! `run`: the learner over every `(epsilon, seed)` cell, one JSON record per
//! cell plus an aggregate CSV.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluation::excess_error;
use crate::learner::{run_learner, LabelsByStage, LearnerOptions, Schedule};
use crate::rng::Seed;

use super::{csv_with_schema, write_atomic, CliError, ExperimentConfig};

pub const RECORD_SCHEMA: u32 = 1;
pub const RESULTS_CSV: &str = "results.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub epsilon: f64,
    pub schedule: Schedule,
    pub labels_by_stage: LabelsByStage,
    pub labels_total: u64,
    pub selected_run: usize,
    pub gradient_norms: Vec<f64>,
    pub final_angle_to_target: f64,
    pub final_min_angle: f64,
    pub final_excess_error: f64,
    pub final_excess_error_stderr: f64,
    pub success: bool,
    pub wall_time_ms: u64,
}

impl ExperimentRecord {
    /// The record as pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub epsilon: f64,
    pub seed: u64,
    pub labels_total: u64,
    pub excess_error: f64,
    pub min_angle: f64,
    pub success: bool,
}

impl From<&ExperimentRecord> for ResultRow {
    fn from(r: &ExperimentRecord) -> Self {
        ResultRow {
            epsilon: r.epsilon,
            seed: r.seed,
            labels_total: r.labels_total,
            excess_error: r.final_excess_error,
            min_angle: r.final_min_angle,
            success: r.success,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub record: ExperimentRecord,
    pub path: PathBuf,
}

pub fn record_file_name(epsilon: f64, seed: u64) -> String {
    format!("run_eps{epsilon}_seed{seed}.json")
}

/// Runs the learner for one `(epsilon, seed)` cell.
pub fn run_cell(cfg: &ExperimentConfig, epsilon: f64, seed: u64) -> Result<ExperimentRecord, CliError> {
    let start = Instant::now();
    let dist = cfg.distribution()?;
    let noise = cfg.noise_model(&dist, seed)?;
    let schedule = cfg.schedule(epsilon, noise.a())?;
    let options = LearnerOptions {
        init: cfg.init,
        label_cap: cfg.label_cap,
    };
    let master = Seed::new(seed);
    let out = run_learner(&schedule, &dist, &noise, master, &options)?;
    let err = excess_error(&out.w_hat, &noise, &dist, cfg.eval_samples, master.named("evaluation"))?;
    let labels_total = out.labels_by_stage.total();
    log::info!(
        "eps={epsilon} seed={seed}: excess error {:.4} with {labels_total} labels",
        err.value
    );
    Ok(ExperimentRecord {
        schema: RECORD_SCHEMA,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        seed,
        epsilon,
        labels_by_stage: out.labels_by_stage,
        labels_total,
        selected_run: out.selected,
        gradient_norms: out.gradient_norms,
        final_angle_to_target: out.w_hat.angle(noise.target())?,
        final_min_angle: out.w_hat.min_angle(noise.target())?,
        final_excess_error: err.value,
        final_excess_error_stderr: err.stderr,
        success: err.value <= epsilon,
        schedule,
        wall_time_ms: start.elapsed().as_millis() as u64,
    })
}

/// Runs every cell in parallel, writing each record as soon as it is done.
/// Results come back ordered by epsilon, then seed.
pub fn run_cells(cfg: &ExperimentConfig) -> Result<Vec<CellResult>, CliError> {
    let cells: Vec<(f64, u64)> = cfg
        .epsilons
        .iter()
        .flat_map(|&e| cfg.seeds.iter().map(move |&s| (e, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(epsilon, seed)| {
            let record = run_cell(cfg, epsilon, seed)?;
            let path = cfg.out.join(record_file_name(epsilon, seed));
            write_atomic(&path, record.to_json().as_bytes())?;
            Ok(CellResult { record, path })
        })
        .collect()
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Vec<CellResult>, CliError> {
    let results = run_cells(cfg)?;
    let rows: Vec<ResultRow> = results.iter().map(|r| ResultRow::from(&r.record)).collect();
    write_atomic(&cfg.out.join(RESULTS_CSV), &csv_with_schema(&rows))?;
    let ok = rows.iter().filter(|r| r.success).count();
    println!(
        "{ok}/{} runs reached their target excess error; results in {}",
        rows.len(),
        cfg.out.display()
    );
    Ok(results)
}
