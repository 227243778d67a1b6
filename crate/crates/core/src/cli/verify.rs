//! `verify`: statistical checks of the noise model, the marginal and the
//! gradient oracle at a configuration, collected in a JSON report.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::active_fo::ActiveFo;
use crate::distributions::{certify_well_behaved, CertifyParams, MarginalDistribution};
use crate::error::Error;
use crate::evaluation::{bayes_error, stationarity_sweep};
use crate::loss::{population_gradient_oracle, SigmoidScale, VectorSums};
use crate::noise::{verify_tnc, LabelingOracle, NoiseModel};
use crate::rng::Seed;
use crate::vectors::{dot, UnitVector};

use super::{write_atomic, CliError, ExperimentConfig};

pub const VERIFY_REPORT: &str = "verify_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// The property being tested, in words.
    pub property: String,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema: u32,
    pub config_hash: String,
    pub seed: u64,
    pub epsilon: f64,
    /// `sigma` used by the gradient-oracle checks (after any override).
    pub sigma: f64,
    /// `sigma_lt_inv_e` or `sigma_ge_inv_e`.
    pub sigma_branch: String,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failed_checks(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &str, property: &str, passed: bool, detail: Value) -> Check {
    Check {
        name: name.into(),
        property: property.into(),
        passed,
        detail,
    }
}

/// Evenly spaced `t` values in `(0, 1/2]`.
pub fn tnc_grid(points: usize) -> Vec<f64> {
    (1..=points).map(|k| k as f64 / (2.0 * points as f64)).collect()
}

fn tnc_check(noise: &NoiseModel, dist: &MarginalDistribution, cfg: &ExperimentConfig, seed: Seed) -> crate::Result<Check> {
    let grid = tnc_grid(cfg.verify.tnc_grid_points);
    let report = verify_tnc(noise, dist, &grid, cfg.verify.tnc_samples, seed)?;
    Ok(check(
        "tnc_certificate",
        "P(1/2 - eta(x) <= t) <= A t^(alpha/(1-alpha)) on the t grid",
        report.pass,
        serde_json::to_value(&report).expect("report serializes"),
    ))
}

fn bayes_check(noise: &NoiseModel, dist: &MarginalDistribution, n: usize, seed: Seed) -> crate::Result<Check> {
    let est = bayes_error(noise, dist, n, seed)?;
    let bound = noise.bayes_error_bound();
    Ok(check(
        "bayes_error_bound",
        "E[eta(x)] <= 1/2 - alpha (1/A)^((1-alpha)/alpha)",
        est.value <= bound + 3.0 * est.stderr,
        json!({ "estimate": est.value, "stderr": est.stderr, "bound": bound }),
    ))
}

fn certificate_check(dist: &MarginalDistribution, cfg: &ExperimentConfig, seed: Seed) -> crate::Result<Check> {
    let params = CertifyParams {
        radius: cfg.verify.certify_radius,
        resolution: cfg.verify.certify_resolution,
        samples: cfg.verify.certify_samples,
        ..CertifyParams::default()
    };
    let name = "well_behaved_certificate";
    let property = "2-D projected density bounded below on the disk, bounded above, exponential tails";
    match certify_well_behaved(dist, &params, seed) {
        Ok(report) => Ok(check(name, property, true, serde_json::to_value(&report).expect("serializes"))),
        Err(Error::NotWellBehaved { radius, lower }) => Ok(check(
            name,
            property,
            false,
            json!({ "radius": radius, "lower": lower }),
        )),
        Err(e) => Err(e),
    }
}

/// One pass of oracle calls at fresh random `w`: perpendicularity, query rate
/// and second moment.
fn oracle_pass_checks(
    dist: &MarginalDistribution,
    noise: &NoiseModel,
    sigma: SigmoidScale,
    n: usize,
    seed: Seed,
) -> crate::Result<Vec<Check>> {
    let d = dist.dim();
    let mut oracle = LabelingOracle::new(noise.clone(), seed.named("labels"));
    let mut fo = ActiveFo::new(dist, sigma);
    let mut rng = seed.named("calls").stream();
    let mut g = vec![0.0; d];
    let (mut worst, mut queried) = (0.0f64, 0u64);
    let (mut sq, mut sq2) = (0.0, 0.0);
    for _ in 0..n {
        let w = UnitVector::random(d, &mut rng)?;
        if fo.sample_into(&w, &mut oracle, &mut rng, &mut g)? {
            queried += 1;
            worst = worst.max(dot(&g, w.as_slice()).abs());
            let v = dot(&g, &g);
            sq += v;
            sq2 += v * v;
        }
    }
    let s = sigma.get();
    let nf = n as f64;
    let rate = queried as f64 / nf;
    let rate_se = (rate * (1.0 - rate) / nf).sqrt();
    let rate_bound = (s * dist.projection_density_bound()).min(0.25);
    let m2 = crate::loss::Estimate::from_sums((sq, sq2), n);
    let m2_bound = dist.second_moment() / (4.0 * s * s);
    Ok(vec![
        check(
            "active_fo_perpendicular",
            "every non-zero oracle output g satisfies |<g, w>| <= 1e-12",
            worst <= 1e-12,
            json!({ "calls": n, "nonzero": queried, "max_abs_inner_product": worst }),
        ),
        check(
            "active_fo_query_rate",
            "labels per call <= min(1/4, sigma * sup density of <w, x>)",
            rate <= rate_bound + 4.0 * rate_se,
            json!({
                "rate": rate,
                "stderr": rate_se,
                "bound": rate_bound,
                "branch": if s >= (-1.0f64).exp() { "sigma_ge_inv_e" } else { "sigma_lt_inv_e" },
            }),
        ),
        check(
            "active_fo_second_moment",
            "E||g||^2 <= E||x||^2 / (4 sigma^2)",
            m2.value <= m2_bound + 4.0 * m2.stderr,
            json!({ "estimate": m2.value, "stderr": m2.stderr, "bound": m2_bound }),
        ),
    ])
}

fn unbiased_check(
    dist: &MarginalDistribution,
    noise: &NoiseModel,
    sigma: SigmoidScale,
    n: usize,
    seed: Seed,
) -> crate::Result<Check> {
    let d = dist.dim();
    let w = UnitVector::random(d, &mut seed.named("w").stream())?;
    let mut oracle = LabelingOracle::new(noise.clone(), seed.named("labels"));
    let mut fo = ActiveFo::new(dist, sigma).retain_queried_x(false);
    let mut rng = seed.named("calls").stream();
    let mut g = vec![0.0; d];
    let mut sums = VectorSums::new(d);
    for _ in 0..n {
        if fo.sample_into(&w, &mut oracle, &mut rng, &mut g)? {
            sums.push(&g);
        } else {
            sums.push_zeros(1);
        }
    }
    let fo_est = sums.finish();
    let reference = population_gradient_oracle(&w, sigma, dist, noise, n, seed.named("reference"))?;
    let z: Vec<f64> = (0..d)
        .map(|j| {
            let se = fo_est.component_stderr[j].hypot(reference.component_stderr[j]);
            if se > 0.0 {
                (fo_est.value[j] - reference.value[j]).abs() / se
            } else {
                0.0
            }
        })
        .collect();
    Ok(check(
        "active_fo_unbiased",
        "the oracle mean matches the population gradient within 4 combined stderr per component",
        z.iter().all(|&v| v <= 4.0),
        json!({ "oracle_mean": fo_est.value, "population": reference.value, "z_scores": z }),
    ))
}

/// Runs every check for the first epsilon and seed of the configuration.
pub fn run_checks(cfg: &ExperimentConfig) -> Result<VerifyReport, CliError> {
    let seed_value = cfg.seeds[0];
    let seed = Seed::new(seed_value).named("verify");
    let epsilon = cfg.epsilons[0];
    let dist = cfg.distribution()?;
    let noise = cfg.noise_model(&dist, seed_value)?;
    let schedule = cfg.schedule(epsilon, noise.a())?;
    let sigma = schedule.sigma_scale()?;
    let v = &cfg.verify;

    let mut checks = vec![
        tnc_check(&noise, &dist, cfg, seed.named("tnc"))?,
        bayes_check(&noise, &dist, v.tnc_samples, seed.named("bayes"))?,
        certificate_check(&dist, cfg, seed.named("certify"))?,
    ];
    checks.extend(oracle_pass_checks(&dist, &noise, sigma, v.fo_samples, seed.named("oracle"))?);
    checks.push(unbiased_check(&dist, &noise, sigma, v.gradient_samples, seed.named("unbiased"))?);

    // the implication is about the schedule's own sigma, not an override
    let unmodified = ExperimentConfig {
        sigma_override: None,
        ..cfg.clone()
    }
    .schedule(epsilon, noise.a())?;
    let sweep = stationarity_sweep(
        &noise,
        &dist,
        unmodified.sigma_scale()?,
        unmodified.theta0,
        unmodified.rho,
        v.probe_directions,
        v.probe_samples,
        seed.named("stationarity"),
    )?;
    checks.push(check(
        "stationarity_implies_closeness",
        "||grad L_sigma(w)|| <= 2 rho only when min(theta(w, w*), theta(-w, w*)) <= theta0",
        sweep.passed(),
        serde_json::to_value(&sweep).expect("sweep serializes"),
    ));

    let s = sigma.get();
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        schema: 1,
        config_hash: cfg.hash(),
        seed: seed_value,
        epsilon,
        sigma: s,
        sigma_branch: if s >= (-1.0f64).exp() { "sigma_ge_inv_e" } else { "sigma_lt_inv_e" }.into(),
        checks,
        passed,
    })
}

pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<VerifyReport, CliError> {
    let report = run_checks(cfg)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&cfg.out.join(VERIFY_REPORT), json.as_bytes())?;
    for c in &report.checks {
        println!("{} {}", if c.passed { "pass" } else { "FAIL" }, c.name);
    }
    if report.passed {
        Ok(report)
    } else {
        Err(CliError::VerificationFailed(report.failed_checks()))
    }
}
