//! Projected SGD on the unit sphere driven by the active gradient oracle.
//!
//! Returns the iterate `w_R` for `R` uniform over `{0, ..., N-1}`. `R` is drawn
//! before the loop from its own substream, so a run cut short by the label
//! budget has a well-defined prefix.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::active_fo::ActiveFo;
use crate::distributions::MarginalDistribution;
use crate::error::{invalid, Error, Result};
use crate::loss::{population_gradient_oracle, SigmoidScale};
use crate::noise::LabelingOracle;
use crate::rng::Seed;
use crate::vectors::{dot, UnitVector};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `w_0 = e_1`.
    E1,
    /// `w_0` uniform on the sphere.
    #[default]
    Random,
}

impl FromStr for Init {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "e1" => Ok(Init::E1),
            "random" => Ok(Init::Random),
            other => Err(format!("unknown init `{other}` (expected e1 or random)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsgdConfig {
    pub steps: u64,
    pub step_size: f64,
    pub sigma: SigmoidScale,
    pub init: Init,
    pub record_trajectory: bool,
    /// Record a trajectory point every `trajectory_stride` steps.
    pub trajectory_stride: u64,
    /// Monte-Carlo draws behind each recorded gradient-norm estimate.
    pub probe_samples: usize,
}

impl PsgdConfig {
    pub fn new(steps: u64, step_size: f64, sigma: SigmoidScale) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("psgd.steps", "N must be at least 1"));
        }
        if !(step_size >= 0.0 && step_size.is_finite()) {
            return Err(invalid("psgd.step_size", format!("{step_size} must be non-negative")));
        }
        Ok(PsgdConfig {
            steps,
            step_size,
            sigma,
            init: Init::Random,
            record_trajectory: false,
            trajectory_stride: 1000,
            probe_samples: 20_000,
        })
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_trajectory(mut self, stride: u64, probe_samples: usize) -> Self {
        self.record_trajectory = true;
        self.trajectory_stride = stride.max(1);
        self.probe_samples = probe_samples.max(1);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub angle_to_target: f64,
    pub grad_norm_mc: f64,
    pub labels_cumulative: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsgdResult {
    pub iterate: UnitVector,
    pub chosen_index: u64,
    pub labels_spent: u64,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

fn record_point(
    step: u64,
    w: &UnitVector,
    cfg: &PsgdConfig,
    dist: &MarginalDistribution,
    oracle: &LabelingOracle,
    seed: Seed,
    labels: u64,
) -> Result<TrajectoryPoint> {
    let noise = oracle.noise();
    let g = population_gradient_oracle(w, cfg.sigma, dist, noise, cfg.probe_samples, seed.child(step))?;
    Ok(TrajectoryPoint {
        step,
        angle_to_target: w.angle(noise.target())?,
        grad_norm_mc: g.norm(),
        labels_cumulative: labels,
    })
}

/// Runs `N` steps of `w <- (w - beta g) / ||w - beta g||` with `g` from the active oracle.
///
/// `init` overrides `cfg.init` when given. Seeds: `seed.named("init")` draws a
/// random `w_0`, `seed.named("index")` draws `R`, `seed.named("oracle-calls")`
/// feeds the gradient oracle.
pub fn active_psgd(
    cfg: &PsgdConfig,
    dist: &MarginalDistribution,
    oracle: &mut LabelingOracle,
    seed: Seed,
    init: Option<UnitVector>,
) -> Result<PsgdResult> {
    let d = dist.dim();
    let mut w = match init {
        Some(w) => {
            w.check_dim(d)?;
            w
        }
        None => match cfg.init {
            Init::E1 => UnitVector::basis(d, 0)?,
            Init::Random => UnitVector::random(d, &mut seed.named("init").stream())?,
        },
    };
    let chosen_index = seed.named("index").stream().random_range(0..cfg.steps);
    let mut rng = seed.named("oracle-calls").stream();
    let probe_seed = seed.named("trajectory-probe");
    let start_labels = oracle.queries_used();
    let mut fo = ActiveFo::new(dist, cfg.sigma).retain_queried_x(false);
    let mut g = vec![0.0; d];
    let mut chosen: Option<UnitVector> = None;
    let mut trajectory = cfg.record_trajectory.then(Vec::new);
    let beta = cfg.step_size;

    for i in 1..=cfg.steps {
        // w currently holds w_{i-1}
        if i - 1 == chosen_index {
            chosen = Some(w.clone());
        }
        if let Some(traj) = trajectory.as_mut() {
            if (i - 1) % cfg.trajectory_stride == 0 {
                let labels = oracle.queries_used() - start_labels;
                traj.push(record_point(i - 1, &w, cfg, dist, oracle, probe_seed, labels)?);
            }
        }
        let spent = match fo.sample_into(&w, oracle, &mut rng, &mut g) {
            Ok(spent) => spent,
            Err(Error::BudgetExhausted { queries_used }) => {
                return Err(Error::PsgdInterrupted {
                    queries_used,
                    completed_steps: i - 1,
                    trajectory: trajectory.unwrap_or_default(),
                })
            }
            Err(e) => return Err(e),
        };
        if !spent {
            // zero gradient: w_i = w_{i-1}
            continue;
        }
        let g_sq = dot(&g, &g);
        let v_norm = w.step_and_project(&g, beta)?;
        if v_norm < 1.0 - 1e-9 {
            return Err(Error::InvariantViolation(format!(
                "||v_{i}|| = {v_norm} < 1: gradient sample was not tangent"
            )));
        }
        if trajectory.is_some() {
            let want = 1.0 + beta * beta * g_sq;
            let got = v_norm * v_norm;
            if (got - want).abs() > 1e-9 * want {
                return Err(Error::InvariantViolation(format!(
                    "||v_{i}||^2 = {got} but 1 + beta^2 ||g||^2 = {want}"
                )));
            }
        }
    }
    if let Some(traj) = trajectory.as_mut() {
        let labels = oracle.queries_used() - start_labels;
        traj.push(record_point(cfg.steps, &w, cfg, dist, oracle, probe_seed, labels)?);
    }
    Ok(PsgdResult {
        iterate: chosen.expect("R lies in 0..N"),
        chosen_index,
        labels_spent: oracle.queries_used() - start_labels,
        trajectory,
    })
}

/// Writes a trajectory as CSV: `step,angle_to_target,grad_norm_mc,labels_cumulative`.
pub fn write_trajectory_csv<W: Write>(out: W, trajectory: &[TrajectoryPoint]) -> std::io::Result<()> {
    let mut out = out;
    writeln!(out, "# schema=1")?;
    let mut w = csv::Writer::from_writer(out);
    for p in trajectory {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
