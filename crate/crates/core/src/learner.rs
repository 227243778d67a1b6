//! The full learner: parameter schedule, `S` independent projected-SGD runs,
//! selection of the most stationary run, and sign disambiguation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active_fo::ActiveFo;
use crate::distributions::MarginalDistribution;
use crate::error::{invalid, Error, Result};
use crate::evaluation::empirical_error;
use crate::loss::{SigmoidScale, VectorSums};
use crate::noise::{LabelingOracle, NoiseModel};
use crate::psgd::{active_psgd, Init, PsgdConfig};
use crate::rng::Seed;
use crate::vectors::{Label, UnitVector};

/// Multiplicative constants hidden by the asymptotic notation of the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConstants {
    pub c_theta0: f64,
    pub c_sigma: f64,
    pub c_rho: f64,
    #[serde(rename = "c_N")]
    pub c_n: f64,
    pub c_beta: f64,
    #[serde(rename = "c_M1")]
    pub c_m1: f64,
    #[serde(rename = "c_M2")]
    pub c_m2: f64,
}

impl Default for ScheduleConstants {
    /// Tuned for the Gaussian, `alpha = 0.7` regime at `d` between 2 and 5 and
    /// `eps` around 0.1. Other regimes need their own `c_N`, `c_beta`, `c_M1`.
    fn default() -> Self {
        ScheduleConstants {
            c_theta0: 1.0,
            c_sigma: 0.5,
            c_rho: 0.1,
            c_n: 2e-14,
            c_beta: 5e8,
            c_m1: 1e-6,
            c_m2: 16.0,
        }
    }
}

impl ScheduleConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("schedule.c_theta0", self.c_theta0),
            ("schedule.c_sigma", self.c_sigma),
            ("schedule.c_rho", self.c_rho),
            ("schedule.c_N", self.c_n),
            ("schedule.c_beta", self.c_beta),
            ("schedule.c_M1", self.c_m1),
            ("schedule.c_M2", self.c_m2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("{v} must be positive and finite")));
            }
        }
        Ok(())
    }
}

/// How the polylogarithmic factors of the step count and step size are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Polylog {
    /// `N` is multiplied by `ln^2(d N0 / delta)` and `beta` divided by `ln(d N0 / delta)`,
    /// where `N0 = d / (sigma^2 rho^4)`.
    #[default]
    Log,
    /// No polylog factors.
    None,
}

impl std::str::FromStr for Polylog {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "log" => Ok(Polylog::Log),
            "none" => Ok(Polylog::None),
            other => Err(format!("unknown polylog `{other}` (expected log or none)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub dim: usize,
    pub theta0: f64,
    pub sigma: f64,
    pub rho: f64,
    #[serde(rename = "S")]
    pub repetitions: u64,
    #[serde(rename = "N")]
    pub steps: u64,
    pub beta: f64,
    #[serde(rename = "M1")]
    pub m1: u64,
    #[serde(rename = "M2")]
    pub m2: u64,
    pub polylog: Polylog,
    pub polylog_factor: f64,
    /// Theoretical exponent of `1/eps` in the label complexity.
    pub label_exponent: f64,
    pub constants: ScheduleConstants,
    pub warnings: Vec<String>,
}

/// Exponent `(8 - 6 alpha) / (3 alpha - 1)` of `1/eps` in the label bound.
pub fn label_exponent(alpha: f64) -> f64 {
    (8.0 - 6.0 * alpha) / (3.0 * alpha - 1.0)
}

fn to_count(name: &'static str, v: f64) -> Result<u64> {
    if !(v.is_finite() && v < 1e15) {
        return Err(invalid(name, format!("scheduled value {v} is not a usable count")));
    }
    Ok((v.ceil() as u64).max(1))
}

/// Computes every learner parameter from `(eps, delta, alpha, A, d)` and the constants.
pub fn make_schedule(
    epsilon: f64,
    delta: f64,
    alpha: f64,
    a: f64,
    dim: usize,
    constants: ScheduleConstants,
    polylog: Polylog,
) -> Result<Schedule> {
    if !(alpha > 1.0 / 3.0 && alpha <= 1.0) {
        return Err(Error::UnsupportedNoiseRegime(alpha));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid("target.epsilon", format!("{epsilon} must lie in (0, 1)")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("target.delta", format!("{delta} must lie in (0, 1)")));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(invalid("noise.A", format!("{a} must be positive")));
    }
    if dim < 2 {
        return Err(Error::DimensionTooSmall(dim));
    }
    constants.validate()?;
    let c = constants;
    let d = dim as f64;
    let ln_inv_eps = (1.0 / epsilon).ln();
    let theta0 = c.c_theta0 * epsilon / (2.0 * ln_inv_eps * ln_inv_eps);
    let k = 3.0 * alpha - 1.0;
    let inv_a = 1.0 / a;
    let sigma = c.c_sigma * inv_a.powf((1.0 - alpha) / k) * theta0.powf(2.0 * alpha / k);
    let rho = c.c_rho * inv_a.powf(2.0 * (1.0 - alpha) / k) * theta0.powf(2.0 * (1.0 - alpha) / k);
    let repetitions = (6.0 / delta).log2().ceil() as u64;
    let n0 = d / (sigma * sigma * rho.powi(4));
    let polylog_factor = match polylog {
        Polylog::Log => (d * n0 / delta).ln(),
        Polylog::None => 1.0,
    };
    let steps = to_count("N", c.c_n * n0 * polylog_factor * polylog_factor)?;
    let beta = c.c_beta * rho * rho * sigma * sigma / d / polylog_factor;
    let m1 = to_count("M1", c.c_m1 * d / (sigma * sigma * rho * rho) * (repetitions as f64 / delta).ln())?;
    let m2 = to_count(
        "M2",
        c.c_m2 * a.powf((2.0 - 2.0 * alpha) / alpha) / (alpha * alpha) * (1.0 / delta).ln(),
    )?;

    let mut warnings = Vec::new();
    let threshold = 0.5 * alpha * inv_a.powf((1.0 - alpha) / alpha);
    if epsilon > threshold {
        warnings.push(format!(
            "epsilon = {epsilon} exceeds the guaranteed range (alpha/2)(1/A)^((1-alpha)/alpha) = {threshold:.4}"
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Schedule {
        epsilon,
        delta,
        alpha,
        a,
        dim,
        theta0,
        sigma,
        rho,
        repetitions,
        steps,
        beta,
        m1,
        m2,
        polylog,
        polylog_factor,
        label_exponent: label_exponent(alpha),
        constants,
        warnings,
    })
}

impl Schedule {
    /// Replaces `sigma` (and only `sigma`) by a fixed value.
    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        SigmoidScale::new(sigma)?;
        self.sigma = sigma;
        Ok(self)
    }

    pub fn sigma_scale(&self) -> Result<SigmoidScale> {
        SigmoidScale::new(self.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LabelsByStage {
    pub psgd: u64,
    pub selection: u64,
    pub sign: u64,
}

impl LabelsByStage {
    pub fn total(&self) -> u64 {
        self.psgd + self.selection + self.sign
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerOutcome {
    pub w_hat: UnitVector,
    pub w_tilde: UnitVector,
    /// The `S` PSGD outputs.
    pub candidates: Vec<UnitVector>,
    /// `||g_bar_s||` for each candidate.
    pub gradient_norms: Vec<f64>,
    pub selected: usize,
    /// Empirical 0-1 errors of `+w_tilde` and `-w_tilde` on the sign sample.
    pub sign_errors: (f64, f64),
    pub labels_by_stage: LabelsByStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerOptions {
    pub init: Init,
    /// Global cap on labels across all stages.
    pub label_cap: Option<u64>,
}

impl Default for LearnerOptions {
    fn default() -> Self {
        LearnerOptions {
            init: Init::Random,
            label_cap: None,
        }
    }
}

/// Index of the smallest value; ties go to the smaller index.
pub fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] <= *v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Averages `m1` oracle calls at `w` and returns the norm of the mean.
pub fn averaged_gradient_norm(
    w: &UnitVector,
    sigma: SigmoidScale,
    m1: u64,
    dist: &MarginalDistribution,
    oracle: &mut LabelingOracle,
    seed: Seed,
) -> Result<f64> {
    let d = dist.dim();
    let mut fo = ActiveFo::new(dist, sigma).retain_queried_x(false);
    let mut rng = seed.stream();
    let mut g = vec![0.0; d];
    let mut sums = VectorSums::new(d);
    for _ in 0..m1 {
        if fo.sample_into(w, oracle, &mut rng, &mut g)? {
            sums.push(&g);
        } else {
            sums.push_zeros(1);
        }
    }
    Ok(sums.finish().norm())
}

/// Picks whichever of `+w` and `-w` has the smaller empirical error on a fresh
/// labeled sample of size `m2`; ties keep `+w`.
pub fn disambiguate_sign(
    w: &UnitVector,
    m2: u64,
    dist: &MarginalDistribution,
    oracle: &mut LabelingOracle,
    seed: Seed,
) -> Result<(UnitVector, (f64, f64))> {
    let mut rng = seed.stream();
    let m2 = usize::try_from(m2).map_err(|_| invalid("M2", "too large"))?;
    let xs = dist.sample(&mut rng, m2);
    let ys: Vec<Label> = xs.iter().map(|x| oracle.query_label(x)).collect::<Result<_>>()?;
    let neg = -w;
    let (e_pos, ties) = empirical_error(w, &xs, &ys);
    let (e_neg, _) = empirical_error(&neg, &xs, &ys);
    if ties == 0 && (e_pos + e_neg - 1.0).abs() > 1e-12 {
        return Err(Error::InvariantViolation(format!(
            "err_S(w) + err_S(-w) = {} on a sample without ties",
            e_pos + e_neg
        )));
    }
    let chosen = if e_pos <= e_neg { w.clone() } else { neg };
    Ok((chosen, (e_pos, e_neg)))
}

struct StageResult {
    w: UnitVector,
    labels: u64,
}

fn remaining(cap: Option<u64>, used: u64) -> Option<u64> {
    cap.map(|c| c.saturating_sub(used))
}

/// Runs `S` independent stages, in parallel when no global cap forces them to
/// share a budget. Each stage gets its own oracle and substream.
fn run_stages<F>(count: u64, cap: Option<u64>, used: u64, f: F) -> Result<Vec<(StageResult, f64)>>
where
    F: Fn(u64, Option<u64>) -> Result<(StageResult, f64)> + Sync + Send,
{
    if cap.is_none() {
        (0..count).into_par_iter().map(|s| f(s, None)).collect()
    } else {
        let mut used = used;
        let mut out = Vec::with_capacity(count as usize);
        for s in 0..count {
            let r = f(s, remaining(cap, used))?;
            used += r.0.labels;
            out.push(r);
        }
        Ok(out)
    }
}

fn stage_error(e: Error, used_before: u64) -> Error {
    match e {
        Error::BudgetExhausted { queries_used } | Error::PsgdInterrupted { queries_used, .. } => {
            Error::BudgetExhausted {
                queries_used: used_before + queries_used,
            }
        }
        other => other,
    }
}

/// Runs the learner end to end and returns its output with per-stage label counts.
///
/// Substreams: PSGD run `s` uses `seed.named("psgd").child(s)` for its own
/// randomness and `seed.named("psgd-labels").child(s)` for label noise;
/// selection and sign stages follow the same pattern.
pub fn run_learner(
    schedule: &Schedule,
    dist: &MarginalDistribution,
    noise: &NoiseModel,
    seed: Seed,
    options: &LearnerOptions,
) -> Result<LearnerOutcome> {
    if dist.dim() != schedule.dim {
        return Err(Error::DimensionMismatch {
            expected: schedule.dim,
            got: dist.dim(),
        });
    }
    noise.target().check_dim(dist.dim())?;
    let sigma = schedule.sigma_scale()?;
    let psgd_cfg = PsgdConfig::new(schedule.steps, schedule.beta, sigma)?.with_init(options.init);
    let cap = options.label_cap;

    let psgd = run_stages(schedule.repetitions, cap, 0, |s, budget| {
        let mut oracle =
            LabelingOracle::new(noise.clone(), seed.named("psgd-labels").child(s)).with_budget(budget);
        let res = active_psgd(&psgd_cfg, dist, &mut oracle, seed.named("psgd").child(s), None)
            .map_err(|e| stage_error(e, cap.map_or(0, |c| c - budget.unwrap_or(c))))?;
        Ok((
            StageResult {
                w: res.iterate,
                labels: oracle.queries_used(),
            },
            0.0,
        ))
    })?;
    let psgd_labels: u64 = psgd.iter().map(|r| r.0.labels).sum();
    let candidates: Vec<UnitVector> = psgd.into_iter().map(|r| r.0.w).collect();

    let selection = run_stages(schedule.repetitions, cap, psgd_labels, |s, budget| {
        let mut oracle =
            LabelingOracle::new(noise.clone(), seed.named("selection-labels").child(s)).with_budget(budget);
        let w = &candidates[s as usize];
        let norm = averaged_gradient_norm(
            w,
            sigma,
            schedule.m1,
            dist,
            &mut oracle,
            seed.named("selection").child(s),
        )
        .map_err(|e| stage_error(e, cap.map_or(0, |c| c - budget.unwrap_or(c))))?;
        Ok((
            StageResult {
                w: w.clone(),
                labels: oracle.queries_used(),
            },
            norm,
        ))
    })?;
    let selection_labels: u64 = selection.iter().map(|r| r.0.labels).sum();
    let gradient_norms: Vec<f64> = selection.iter().map(|r| r.1).collect();
    let selected = argmin_first(&gradient_norms).expect("S >= 1");
    let w_tilde = candidates[selected].clone();

    let used = psgd_labels + selection_labels;
    let mut sign_oracle =
        LabelingOracle::new(noise.clone(), seed.named("sign-labels")).with_budget(remaining(cap, used));
    let (w_hat, sign_errors) = disambiguate_sign(&w_tilde, schedule.m2, dist, &mut sign_oracle, seed.named("sign"))
        .map_err(|e| stage_error(e, used))?;

    Ok(LearnerOutcome {
        w_hat,
        w_tilde,
        candidates,
        gradient_norms,
        selected,
        sign_errors,
        labels_by_stage: LabelsByStage {
            psgd: psgd_labels,
            selection: selection_labels,
            sign: sign_oracle.queries_used(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::excess_error;
    use approx::assert_relative_eq;

    fn spec_constants() -> ScheduleConstants {
        ScheduleConstants {
            c_n: 1.0,
            c_beta: 1.0,
            c_m1: 1.0,
            ..ScheduleConstants::default()
        }
    }

    #[test]
    fn massart_exponents() {
        let s = make_schedule(0.1, 0.1, 1.0, 1.0, 3, spec_constants(), Polylog::None).unwrap();
        assert_relative_eq!(s.label_exponent, 1.0);
        assert_relative_eq!(s.sigma, 0.5 * s.theta0, max_relative = 1e-12);
        assert_relative_eq!(s.rho, 0.1, max_relative = 1e-12);
    }

    #[test]
    fn label_exponent_examples() {
        assert_relative_eq!(label_exponent(0.5), 10.0);
        assert_relative_eq!(label_exponent(0.7), 3.8 / 1.1, max_relative = 1e-12);
        assert_relative_eq!(label_exponent(1.0), 1.0);
    }

    #[test]
    fn formulas_match_direct_evaluation() {
        let (eps, delta, alpha, a, d) = (0.1, 0.2, 0.7, 5.04, 5);
        let c = ScheduleConstants::default();
        let s = make_schedule(eps, delta, alpha, a, d, c, Polylog::Log).unwrap();
        let l = (10.0f64).ln();
        let theta0 = eps / (2.0 * l * l);
        assert_relative_eq!(s.theta0, theta0, max_relative = 1e-12);
        let sigma = 0.5 * (1.0 / a).powf(0.3 / 1.1) * theta0.powf(1.4 / 1.1);
        let rho = 0.1 * (1.0 / a).powf(0.6 / 1.1) * theta0.powf(0.6 / 1.1);
        assert_relative_eq!(s.sigma, sigma, max_relative = 1e-12);
        assert_relative_eq!(s.rho, rho, max_relative = 1e-12);
        assert_eq!(s.repetitions, 5);
        let m2 = 16.0 * a.powf(0.6 / 0.7) / 0.49 * (5.0f64).ln();
        assert_eq!(s.m2, m2.ceil() as u64);
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn halving_epsilon_is_monotone() {
        for alpha in [0.7, 0.85, 1.0] {
            let a = 4.0;
            let c = if alpha == 1.0 {
                massart_constants()
            } else {
                ScheduleConstants::default()
            };
            let s1 = make_schedule(0.1, 0.1, alpha, a, 4, c, Polylog::Log).unwrap();
            let s2 = make_schedule(0.05, 0.1, alpha, a, 4, c, Polylog::Log).unwrap();
            assert!(s2.steps > s1.steps);
            assert!(s2.sigma < s1.sigma);
            assert!(s2.beta < s1.beta);
        }
    }

    #[test]
    fn rejects_low_alpha_and_warns_on_large_epsilon() {
        assert!(matches!(
            make_schedule(0.1, 0.1, 1.0 / 3.0, 4.0, 3, ScheduleConstants::default(), Polylog::Log),
            Err(Error::UnsupportedNoiseRegime(_))
        ));
        let s = make_schedule(0.4, 0.1, 0.7, 5.04, 3, ScheduleConstants::default(), Polylog::Log).unwrap();
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn argmin_prefers_smaller_index_on_ties() {
        assert_eq!(argmin_first(&[0.3, 0.1, 0.1, 0.2]), Some(1));
        assert_eq!(argmin_first(&[0.5]), Some(0));
        assert_eq!(argmin_first(&[]), None);
    }

    #[test]
    fn sign_stage_recovers_target_from_its_negation() {
        let d = 5;
        let dist = MarginalDistribution::gaussian(d).unwrap();
        let noise = NoiseModel::with_derived_a(0.7, 1.0, UnitVector::basis(d, 0).unwrap(), &dist).unwrap();
        let s = make_schedule(0.1, 0.2, 0.7, noise.a(), d, ScheduleConstants::default(), Polylog::Log).unwrap();
        let mut wins = 0;
        for seed in 0..50 {
            let mut oracle = LabelingOracle::new(noise.clone(), Seed::new(seed).named("labels"));
            let (w, (ep, en)) =
                disambiguate_sign(&-noise.target(), s.m2, &dist, &mut oracle, Seed::new(seed)).unwrap();
            assert_eq!(ep + en, 1.0);
            assert_eq!(oracle.queries_used(), s.m2);
            if &w == noise.target() {
                wins += 1;
            }
        }
        // failure probability is at most delta/3 per run
        assert!(wins >= 45, "{wins}/50");
    }

    #[test]
    fn single_repetition_selects_the_only_candidate() {
        let d = 2;
        let dist = MarginalDistribution::gaussian(d).unwrap();
        let noise = NoiseModel::with_derived_a(0.7, 1.0, UnitVector::basis(d, 0).unwrap(), &dist).unwrap();
        let mut s = make_schedule(0.2, 0.5, 0.7, noise.a(), d, ScheduleConstants::default(), Polylog::Log).unwrap();
        s.repetitions = 1;
        s.steps = 10_000;
        s.m1 = 1_000;
        let out = run_learner(&s, &dist, &noise, Seed::new(3), &LearnerOptions::default()).unwrap();
        assert_eq!(out.selected, 0);
        assert_eq!(out.w_tilde, out.candidates[0]);
    }

    #[test]
    fn labels_by_stage_sum_and_cap() {
        let d = 3;
        let dist = MarginalDistribution::gaussian(d).unwrap();
        let noise = NoiseModel::with_derived_a(0.7, 1.0, UnitVector::basis(d, 0).unwrap(), &dist).unwrap();
        let mut s = make_schedule(0.2, 0.2, 0.7, noise.a(), d, ScheduleConstants::default(), Polylog::Log).unwrap();
        s.steps = 50_000;
        s.m1 = 20_000;
        let free = run_learner(&s, &dist, &noise, Seed::new(1), &LearnerOptions::default()).unwrap();
        let capped_opts = LearnerOptions {
            label_cap: Some(1_000_000),
            ..LearnerOptions::default()
        };
        // a loose cap runs sequentially but must give the same answer
        let capped = run_learner(&s, &dist, &noise, Seed::new(1), &capped_opts).unwrap();
        assert_eq!(free, capped);
        assert_eq!(free.labels_by_stage.sign, s.m2);
        let tight = LearnerOptions {
            label_cap: Some(free.labels_by_stage.total() - 1),
            ..LearnerOptions::default()
        };
        match run_learner(&s, &dist, &noise, Seed::new(1), &tight) {
            Err(Error::BudgetExhausted { queries_used }) => {
                assert_eq!(queries_used, free.labels_by_stage.total() - 1)
            }
            other => panic!("expected budget exhaustion, got {other:?}"),
        }
    }

    /// Constants for the `alpha = 1` regime.
    fn massart_constants() -> ScheduleConstants {
        ScheduleConstants {
            c_sigma: 2.0,
            c_n: 6e-6,
            c_beta: 2.4e4,
            c_m1: 2e-2,
            ..ScheduleConstants::default()
        }
    }

    #[test]
    fn noiseless_runs_reach_target_error() {
        let d = 2;
        let dist = MarginalDistribution::gaussian(d).unwrap();
        let mut ok = 0;
        for seed in 0..20u64 {
            let target = UnitVector::random(d, &mut Seed::new(seed).named("target").stream()).unwrap();
            // alpha = 1, B = 1/2: eta = 0
            let noise = NoiseModel::new(1.0, 1.0, 0.5, target).unwrap();
            let s = make_schedule(0.1, 0.2, 1.0, 1.0, d, massart_constants(), Polylog::Log).unwrap();
            let out = run_learner(&s, &dist, &noise, Seed::new(seed), &LearnerOptions::default()).unwrap();
            let e = excess_error(&out.w_hat, &noise, &dist, 100_000, Seed::new(seed).named("eval")).unwrap();
            if e.value <= 0.1 {
                ok += 1;
            }
        }
        assert!(ok >= 18, "{ok}/20");
    }
}
