//! Generative Tsybakov noise and the label-charging oracle.
//!
//! For `alpha < 1` the flip probability follows the margin-power model
//! `1/2 - eta(x) = min(1/2, (|<w*, x>| / B)^((1 - alpha) / alpha) / 2)`, which
//! puts as much mass near `eta = 1/2` as an `(A, alpha)` certificate permits.
//! At `alpha = 1` the model is Massart-style: `eta = 1/2 - 1/(2B)` everywhere.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distributions::MarginalDistribution;
use crate::error::{invalid, Error, Result};
use crate::loss::Estimate;
use crate::rng::{sharded, Seed};
use crate::vectors::{Label, UnitVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    alpha: f64,
    a: f64,
    margin_scale: f64,
    target: UnitVector,
}

impl NoiseModel {
    pub fn new(alpha: f64, a: f64, margin_scale: f64, target: UnitVector) -> Result<Self> {
        if !(alpha > 1.0 / 3.0 && alpha <= 1.0) {
            return Err(Error::UnsupportedNoiseRegime(alpha));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid("noise.A", format!("{a} must be positive")));
        }
        if !(margin_scale > 0.0 && margin_scale.is_finite()) {
            return Err(invalid("noise.margin_scale", format!("{margin_scale} must be positive")));
        }
        if alpha < 1.0 {
            let feasibility = a * 0.5f64.powf(alpha / (1.0 - alpha));
            if feasibility < 1.0 - 1e-12 {
                return Err(invalid(
                    "noise.A",
                    format!("A (1/2)^(alpha/(1-alpha)) = {feasibility} < 1; no distribution satisfies this certificate"),
                ));
            }
        } else if a < 1.0 {
            return Err(invalid("noise.A", format!("{a} < 1 is infeasible at alpha = 1")));
        }
        Ok(NoiseModel {
            alpha,
            a,
            margin_scale,
            target,
        })
    }

    /// Smallest certificate constant `A` this model satisfies under a marginal whose
    /// 1-D projections have density at most `density_bound`.
    ///
    /// `P(1/2 - eta <= t) = P(|<w*,x>| <= B (2t)^(alpha/(1-alpha))) <= 2 p B (2t)^(alpha/(1-alpha))`,
    /// and feasibility at `t = 1/2` forces `A >= 2^(alpha/(1-alpha))`.
    pub fn derived_a(alpha: f64, margin_scale: f64, density_bound: f64) -> f64 {
        if alpha >= 1.0 {
            return 1.0;
        }
        let e = alpha / (1.0 - alpha);
        (2.0 * density_bound * margin_scale).max(1.0) * 2f64.powf(e)
    }

    /// Model with `A` derived from the marginal's projection density bound.
    pub fn with_derived_a(
        alpha: f64,
        margin_scale: f64,
        target: UnitVector,
        dist: &MarginalDistribution,
    ) -> Result<Self> {
        let a = Self::derived_a(alpha, margin_scale, dist.projection_density_bound());
        Self::new(alpha, a, margin_scale, target)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn margin_scale(&self) -> f64 {
        self.margin_scale
    }

    pub fn target(&self) -> &UnitVector {
        &self.target
    }

    /// `1/(2B)`: the constant advantage `1/2 - eta` of the `alpha = 1` model.
    pub fn massart_margin(&self) -> f64 {
        0.5 / self.margin_scale
    }

    /// `eta` as a function of `|<w*, x>|`.
    #[inline]
    pub fn flip_probability_at_margin(&self, abs_margin: f64) -> f64 {
        if self.alpha >= 1.0 {
            return (0.5 - self.massart_margin()).max(0.0);
        }
        let p = (1.0 - self.alpha) / self.alpha;
        let adv = (0.5 * (abs_margin / self.margin_scale).powf(p)).min(0.5);
        0.5 - adv
    }

    #[inline]
    pub fn flip_probability(&self, x: &[f64]) -> f64 {
        self.flip_probability_at_margin(self.target.dot(x).abs())
    }

    /// Right-hand side of the Tsybakov condition at `t`:
    /// `A t^(alpha/(1-alpha))` for `alpha < 1`, and the Massart step
    /// `A 1{t >= 1/(2B)}` at `alpha = 1`.
    pub fn tnc_bound(&self, t: f64) -> f64 {
        if self.alpha >= 1.0 {
            if t >= self.massart_margin() {
                self.a
            } else {
                0.0
            }
        } else {
            self.a * t.powf(self.alpha / (1.0 - self.alpha))
        }
    }

    /// Upper bound on the Bayes error `err(w*) = E[eta]`:
    /// `1/2 - alpha (1/A)^((1-alpha)/alpha)`; `1/2 - 1/(2B)` at `alpha = 1`.
    pub fn bayes_error_bound(&self) -> f64 {
        if self.alpha >= 1.0 {
            return 0.5 - self.massart_margin();
        }
        0.5 - self.alpha * (1.0 / self.a).powf((1.0 - self.alpha) / self.alpha)
    }

    /// Largest target error for which sign disambiguation is guaranteed to work:
    /// `(alpha/2) (1/A)^((1-alpha)/alpha)`.
    pub fn sign_stage_threshold(&self) -> f64 {
        if self.alpha >= 1.0 {
            return self.massart_margin();
        }
        0.5 * self.alpha * (1.0 / self.a).powf((1.0 - self.alpha) / self.alpha)
    }

    /// A label drawn from the noise model given a uniform draw `u`.
    #[inline]
    pub fn label_from_uniform(&self, x: &[f64], u: f64) -> Label {
        let clean = self.target.label(x);
        if u < self.flip_probability(x) {
            clean.flipped()
        } else {
            clean
        }
    }
}

/// Read-only handle on an oracle's query counter, usable from other threads.
#[derive(Debug, Clone)]
pub struct QueryCounter(Arc<AtomicU64>);

impl QueryCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Acquire)
    }
}

/// The only source of labels. Charges one unit of budget per query.
///
/// Label noise for the `k`-th query is keyed by `(seed, k)`, so a replay with
/// the same seed sees the same noise regardless of how the caller consumed
/// other randomness.
#[derive(Debug)]
pub struct LabelingOracle {
    noise: NoiseModel,
    seed: Seed,
    queries: Arc<AtomicU64>,
    budget: Option<u64>,
}

impl LabelingOracle {
    pub fn new(noise: NoiseModel, seed: Seed) -> Self {
        LabelingOracle {
            noise,
            seed,
            queries: Arc::new(AtomicU64::new(0)),
            budget: None,
        }
    }

    pub fn with_budget(mut self, budget: Option<u64>) -> Self {
        self.budget = budget;
        self
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn queries_used(&self) -> u64 {
        self.queries.load(Ordering::Acquire)
    }

    pub fn counter(&self) -> QueryCounter {
        QueryCounter(Arc::clone(&self.queries))
    }

    pub fn query_label(&mut self, x: &[f64]) -> Result<Label> {
        self.noise.target.check_dim(x.len())?;
        let used = self.queries.load(Ordering::Acquire);
        if let Some(b) = self.budget {
            if used >= b {
                return Err(Error::BudgetExhausted { queries_used: used });
            }
        }
        let u = self.seed.child(used).unit_f64();
        self.queries.store(used + 1, Ordering::Release);
        Ok(self.noise.label_from_uniform(x, u))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TncPoint {
    pub t: f64,
    pub probability: f64,
    /// `probability` minus three binomial standard errors: a grid point only
    /// counts against `A` when the violation is statistically significant.
    pub probability_lower: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TncReport {
    pub alpha: f64,
    pub a_configured: f64,
    /// Smallest `A` for which the padded estimates satisfy the condition on the grid.
    /// Infinite when mass is observed where the condition allows none.
    pub a_required: f64,
    pub samples: usize,
    pub points: Vec<TncPoint>,
    pub pass: bool,
}

/// Monte-Carlo check of `P(1/2 - eta(x) <= t) <= A t^(alpha/(1-alpha))` on a grid.
pub fn verify_tnc(
    noise: &NoiseModel,
    dist: &MarginalDistribution,
    t_grid: &[f64],
    samples: usize,
    seed: Seed,
) -> Result<TncReport> {
    if t_grid.iter().any(|t| !(0.0..=0.5).contains(t)) {
        return Err(invalid("t_grid", "thresholds must lie in [0, 1/2]"));
    }
    if samples == 0 {
        return Err(invalid("samples", "at least one sample is required"));
    }
    noise.target.check_dim(dist.dim())?;
    let d = dist.dim();
    let shards = sharded(seed, samples, |mut rng, count| {
        let mut hits = vec![0u64; t_grid.len()];
        let mut x = vec![0.0; d];
        for _ in 0..count {
            dist.sample_into(&mut rng, &mut x);
            let adv = 0.5 - noise.flip_probability(&x);
            for (h, &t) in hits.iter_mut().zip(t_grid) {
                if adv <= t {
                    *h += 1;
                }
            }
        }
        hits
    });
    let mut hits = vec![0u64; t_grid.len()];
    for s in shards {
        hits.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
    }
    let n = samples as f64;
    let mut a_required = 0.0f64;
    let mut points = Vec::with_capacity(t_grid.len());
    for (&t, &h) in t_grid.iter().zip(&hits) {
        let p = h as f64 / n;
        let lower = (p - 3.0 * (p * (1.0 - p) / n).sqrt()).max(0.0);
        let bound = noise.tnc_bound(t);
        let needed = if noise.alpha >= 1.0 {
            if t < noise.massart_margin() {
                if h > 0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            } else {
                lower
            }
        } else {
            let shape = t.powf(noise.alpha / (1.0 - noise.alpha));
            if shape > 0.0 {
                lower / shape
            } else if h > 0 {
                f64::INFINITY
            } else {
                0.0
            }
        };
        a_required = a_required.max(needed);
        points.push(TncPoint {
            t,
            probability: p,
            probability_lower: lower,
            bound,
        });
    }
    Ok(TncReport {
        alpha: noise.alpha,
        a_configured: noise.a,
        a_required,
        samples,
        points,
        pass: a_required <= noise.a,
    })
}

/// Monte-Carlo estimate of the Bayes error `E[eta(x)]` (no labels are drawn).
pub fn bayes_error_mc(noise: &NoiseModel, dist: &MarginalDistribution, n: usize, seed: Seed) -> Estimate {
    let d = dist.dim();
    let shards = sharded(seed, n, |mut rng, count| {
        let mut x = vec![0.0; d];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..count {
            dist.sample_into(&mut rng, &mut x);
            let eta = noise.flip_probability(&x);
            s += eta;
            s2 += eta * eta;
        }
        (s, s2)
    });
    Estimate::from_sums(shards.into_iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1)), n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use statrs::function::erf::erf;

    fn target2() -> UnitVector {
        UnitVector::basis(2, 0).unwrap()
    }

    fn model(alpha: f64, b: f64) -> NoiseModel {
        let dist = MarginalDistribution::gaussian(2).unwrap();
        NoiseModel::with_derived_a(alpha, b, target2(), &dist).unwrap()
    }

    #[test]
    fn flip_probability_examples() {
        let m = model(0.7, 1.0);
        assert_eq!(m.flip_probability(&[0.0, 3.0]), 0.5);
        assert_abs_diff_eq!(m.flip_probability(&[1.0, -2.0]), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.flip_probability(&[-1.0, 0.5]), 0.0, epsilon = 1e-15);
        let half = model(0.5, 1.0);
        // (0.25)^1 / 2 = 0.125
        assert_abs_diff_eq!(half.flip_probability(&[0.25, 9.0]), 0.375, epsilon = 1e-15);
    }

    #[test]
    fn massart_boundary_case_is_constant() {
        let m = model(1.0, 2.0);
        assert_eq!(m.flip_probability(&[0.0, 1.0]), 0.25);
        assert_eq!(m.flip_probability(&[5.0, 1.0]), 0.25);
        assert_eq!(model(1.0, 1.0).flip_probability(&[0.3, 0.0]), 0.0);
    }

    #[test]
    fn flip_probability_is_monotone_in_margin() {
        let m = model(0.6, 1.5);
        let mut prev = 0.5;
        for k in 0..200 {
            let eta = m.flip_probability_at_margin(k as f64 * 0.01);
            assert!(eta <= prev && (0.0..=0.5).contains(&eta));
            prev = eta;
        }
    }

    #[test]
    fn infeasible_certificates_are_rejected() {
        // alpha = 0.7 needs A >= 2^(7/3)
        assert!(NoiseModel::new(0.7, 4.0, 1.0, target2()).is_err());
        assert!(NoiseModel::new(0.7, 5.1, 1.0, target2()).is_ok());
        assert!(matches!(
            NoiseModel::new(0.3, 10.0, 1.0, target2()),
            Err(Error::UnsupportedNoiseRegime(_))
        ));
    }

    #[test]
    fn derived_a_for_gaussian() {
        let a = NoiseModel::derived_a(0.7, 1.0, 1.0 / (2.0 * std::f64::consts::PI).sqrt());
        assert_abs_diff_eq!(a, 2f64.powf(7.0 / 3.0), epsilon = 1e-12);
        let a2 = NoiseModel::derived_a(0.7, 2.0, 1.0 / (2.0 * std::f64::consts::PI).sqrt());
        assert!(a2 > a);
    }

    #[test]
    fn oracle_returns_clean_label_where_noise_vanishes() {
        let mut o = LabelingOracle::new(model(0.7, 1.0), Seed::new(4));
        for k in 0..1000 {
            let x = [1.5 + k as f64 * 1e-3, -0.3];
            assert_eq!(o.query_label(&x).unwrap(), Label::Positive);
            let x = [-2.0, 0.7];
            assert_eq!(o.query_label(&x).unwrap(), Label::Negative);
        }
        assert_eq!(o.queries_used(), 2000);
    }

    #[test]
    fn oracle_flip_rate_on_the_boundary() {
        let n = 100_000u64;
        let mut o = LabelingOracle::new(model(0.7, 1.0), Seed::new(12));
        let counter = o.counter();
        let flips = (0..n)
            .filter(|_| o.query_label(&[0.0, 1.0]).unwrap() == Label::Negative)
            .count();
        let rate = flips as f64 / n as f64;
        assert!((rate - 0.5).abs() <= 3.0 * (0.25 / n as f64).sqrt(), "rate {rate}");
        assert_eq!(counter.get(), n);
    }

    #[test]
    fn oracle_budget_is_enforced() {
        let mut o = LabelingOracle::new(model(0.7, 1.0), Seed::new(1)).with_budget(Some(1));
        assert!(o.query_label(&[1.0, 0.0]).is_ok());
        let err = o.query_label(&[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::BudgetExhausted { queries_used: 1 }));
        assert_eq!(o.queries_used(), 1);
    }

    #[test]
    fn oracle_replays_identically() {
        let xs: Vec<[f64; 2]> = (0..500).map(|k| [0.01 * (k as f64 - 250.0), 1.0]).collect();
        let run = || {
            let mut o = LabelingOracle::new(model(0.6, 1.0), Seed::new(77));
            xs.iter().map(|x| o.query_label(x).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn tnc_at_half_and_massart_gap() {
        let dist = MarginalDistribution::gaussian(2).unwrap();
        let m = model(0.7, 1.0);
        let rep = verify_tnc(&m, &dist, &[0.5], 10_000, Seed::new(3)).unwrap();
        assert!(rep.points[0].probability <= 1.0);
        assert!(1.0 <= m.tnc_bound(0.5) + 1e-12);

        let massart = model(1.0, 2.0);
        let rep = verify_tnc(&massart, &dist, &[0.0, 0.1, 0.2, 0.249], 10_000, Seed::new(3)).unwrap();
        assert!(rep.points.iter().all(|p| p.probability == 0.0));
        assert!(rep.pass);
    }

    #[test]
    fn tnc_probability_matches_normal_cdf() {
        // alpha = 1/2, B = 1: P(1/2 - eta <= 0.1) = P(|Z| <= 0.2) = erf(0.2 / sqrt 2)
        let dist = MarginalDistribution::gaussian(3).unwrap();
        let m = NoiseModel::with_derived_a(0.5, 1.0, UnitVector::basis(3, 1).unwrap(), &dist).unwrap();
        let n = 400_000;
        let rep = verify_tnc(&m, &dist, &[0.1], n, Seed::new(8)).unwrap();
        let want = erf(0.2 / std::f64::consts::SQRT_2);
        assert_abs_diff_eq!(want, 0.1585, epsilon = 1e-4);
        let se = (want * (1.0 - want) / n as f64).sqrt();
        assert!((rep.points[0].probability - want).abs() < 4.0 * se);
        assert!(rep.pass);
    }

    #[test]
    fn tnc_rejects_out_of_range_grid() {
        let dist = MarginalDistribution::gaussian(2).unwrap();
        assert!(verify_tnc(&model(0.7, 1.0), &dist, &[0.6], 10, Seed::new(0)).is_err());
    }

    #[test]
    fn too_small_a_fails_verification() {
        let dist = MarginalDistribution::gaussian(2).unwrap();
        // B = 2 needs A = 2 p B 2^(7/3) ~ 8.04; A = 6 is feasible but too small
        let m = NoiseModel::new(0.7, 6.0, 2.0, target2()).unwrap();
        let grid: Vec<f64> = (1..=20).map(|k| k as f64 / 40.0).collect();
        let rep = verify_tnc(&m, &dist, &grid, 200_000, Seed::new(5)).unwrap();
        assert!(!rep.pass, "{rep:?}");
        let ok = NoiseModel::with_derived_a(0.7, 2.0, target2(), &dist).unwrap();
        assert!(verify_tnc(&ok, &dist, &grid, 200_000, Seed::new(5)).unwrap().pass);
    }

    #[test]
    fn bayes_error_respects_bound() {
        let dist = MarginalDistribution::gaussian(4).unwrap();
        for alpha in [0.5, 0.7, 0.9] {
            let m = NoiseModel::with_derived_a(alpha, 1.0, UnitVector::basis(4, 2).unwrap(), &dist).unwrap();
            let est = bayes_error_mc(&m, &dist, 200_000, Seed::new(6));
            assert!(est.value <= m.bayes_error_bound() + 3.0 * est.stderr, "alpha {alpha}: {est:?}");
        }
    }
}
