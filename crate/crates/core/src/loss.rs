//! The sigmoid surrogate `phi_sigma(t) = 1 / (1 + e^(t/sigma))`, its
//! derivatives, the per-sample gradient direction used by the active oracle,
//! and Monte-Carlo estimators of the population loss `L_sigma` and its gradient.
//!
//! The population estimators integrate the label out analytically using the
//! known noise model. They are simulator-only tools for verification and never
//! touch a labeling oracle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{MarginalDistribution, MarginalKind};
use crate::error::{invalid, Result};
use crate::noise::NoiseModel;
use crate::rng::{sharded, Seed};
use crate::vectors::{dot, Label, UnitVector};

/// Sharpness `sigma > 0` of the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SigmoidScale(f64);

impl SigmoidScale {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma", format!("{sigma} must be positive and finite")));
        }
        Ok(SigmoidScale(sigma))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SigmoidScale {
    type Error = crate::error::Error;
    fn try_from(v: f64) -> Result<Self> {
        SigmoidScale::new(v)
    }
}

impl From<SigmoidScale> for f64 {
    fn from(s: SigmoidScale) -> f64 {
        s.0
    }
}

/// `phi_sigma(t)`, evaluated without exponentiating a positive argument.
#[inline]
pub fn phi(sigma: f64, t: f64) -> f64 {
    let z = t / sigma;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// `phi'_sigma(t) = -(1/sigma) e^(t/sigma) / (1 + e^(t/sigma))^2`. Even in `t`.
#[inline]
pub fn phi_prime(sigma: f64, t: f64) -> f64 {
    let e = (-(t / sigma).abs()).exp();
    -e / (sigma * (1.0 + e) * (1.0 + e))
}

/// `phi''_sigma(t) = (1/sigma^2) e^z (e^z - 1) / (1 + e^z)^3` with `z = t/sigma`.
pub fn phi_second(sigma: f64, t: f64) -> f64 {
    let z = t / sigma;
    let e = (-z.abs()).exp();
    // e^z (e^z - 1) / (1 + e^z)^3 = e (1 - e) / (1 + e)^3 for z >= 0; odd in z
    let mag = e * (1.0 - e) / ((1.0 + e) * (1.0 + e) * (1.0 + e));
    mag.copysign(z) / (sigma * sigma)
}

/// `q(w, x) = sigma |phi'_sigma(<w, x>)|`, in `[0, 1/4]`.
#[inline]
pub fn query_probability_at_margin(sigma: f64, margin: f64) -> f64 {
    let e = (-(margin / sigma).abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

pub fn query_probability(w: &UnitVector, x: &[f64], sigma: SigmoidScale) -> Result<f64> {
    w.check_dim(x.len())?;
    Ok(query_probability_at_margin(sigma.get(), w.dot(x)))
}

/// Writes `h(w, x, y) = -(1/sigma) y (x - <w, x> w)` into `out`.
///
/// The tangential projection is applied twice so the result is orthogonal to
/// `w` to working precision before scaling by `1/sigma`.
#[inline]
pub fn per_sample_gradient_into(w: &UnitVector, x: &[f64], y: Label, sigma: f64, out: &mut [f64]) {
    let ws = w.as_slice();
    let m = dot(ws, x);
    for ((o, xi), wi) in out.iter_mut().zip(x).zip(ws) {
        *o = xi - m * wi;
    }
    let c = dot(out, ws);
    let scale = -y.value() / sigma;
    for (o, wi) in out.iter_mut().zip(ws) {
        *o = (*o - c * wi) * scale;
    }
}

pub fn per_sample_gradient(w: &UnitVector, x: &[f64], y: Label, sigma: SigmoidScale) -> Result<Vec<f64>> {
    w.check_dim(x.len())?;
    let mut out = vec![0.0; x.len()];
    per_sample_gradient_into(w, x, y, sigma.get(), &mut out);
    Ok(out)
}

/// A scalar Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// From `(sum, sum of squares)` over `n` draws.
    pub fn from_sums((s, s2): (f64, f64), n: usize) -> Estimate {
        let nf = n as f64;
        let mean = s / nf;
        let var = if n > 1 {
            ((s2 - s * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Estimate {
            value: mean,
            stderr: (var / nf).sqrt(),
        }
    }
}

/// A vector Monte-Carlo estimate. `stderr` is `sqrt(sum_j Var_j / n)`, the
/// standard error of the estimate as a whole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorEstimate {
    pub value: Vec<f64>,
    pub component_stderr: Vec<f64>,
    pub stderr: f64,
}

impl VectorEstimate {
    pub fn norm(&self) -> f64 {
        dot(&self.value, &self.value).sqrt()
    }
}

/// Running per-component sums for vector estimates.
#[derive(Debug, Clone)]
pub(crate) struct VectorSums {
    pub n: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl VectorSums {
    pub fn new(d: usize) -> Self {
        VectorSums {
            n: 0,
            sum: vec![0.0; d],
            sum_sq: vec![0.0; d],
        }
    }

    #[inline]
    pub fn push(&mut self, v: &[f64]) {
        self.n += 1;
        for ((s, s2), x) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(v) {
            *s += x;
            *s2 += x * x;
        }
    }

    /// Adds `k` zero vectors.
    #[inline]
    pub fn push_zeros(&mut self, k: usize) {
        self.n += k;
    }

    pub fn merge(mut self, other: &VectorSums) -> Self {
        self.n += other.n;
        self.sum.iter_mut().zip(&other.sum).for_each(|(a, b)| *a += b);
        self.sum_sq.iter_mut().zip(&other.sum_sq).for_each(|(a, b)| *a += b);
        self
    }

    pub fn finish(&self) -> VectorEstimate {
        let est: Vec<Estimate> = self
            .sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(&s, &s2)| Estimate::from_sums((s, s2), self.n))
            .collect();
        let stderr = est.iter().map(|e| e.stderr * e.stderr).sum::<f64>().sqrt();
        VectorEstimate {
            value: est.iter().map(|e| e.value).collect(),
            component_stderr: est.iter().map(|e| e.stderr).collect(),
            stderr,
        }
    }
}

/// Expected surrogate loss at `x` with the label integrated out:
/// `(1 - eta) phi(s m) + eta phi(-s m)`, `m = <w, x>`, `s = sign(<w*, x>)`.
#[inline]
fn conditional_loss(w: &[f64], x: &[f64], sigma: f64, noise: &NoiseModel) -> f64 {
    let m = dot(w, x);
    let s = noise.target().label(x).value();
    let eta = noise.flip_probability(x);
    (1.0 - eta) * phi(sigma, s * m) + eta * phi(sigma, -s * m)
}

fn check_inputs(w: &UnitVector, dist: &MarginalDistribution, noise: &NoiseModel, n: usize) -> Result<()> {
    w.check_dim(dist.dim())?;
    noise.target().check_dim(dist.dim())?;
    if n == 0 {
        return Err(invalid("n", "at least one sample is required"));
    }
    Ok(())
}

/// Monte-Carlo estimate of `L_sigma(w)`. The draws of `x` depend only on
/// `(seed, n)`, so estimates at different `w` with the same seed are coupled.
pub fn population_loss_mc(
    w: &UnitVector,
    sigma: SigmoidScale,
    dist: &MarginalDistribution,
    noise: &NoiseModel,
    n: usize,
    seed: Seed,
) -> Result<Estimate> {
    check_inputs(w, dist, noise, n)?;
    let d = dist.dim();
    let s = sigma.get();
    let shards = sharded(seed, n, |mut rng, count| {
        let mut x = vec![0.0; d];
        let (mut a, mut a2) = (0.0, 0.0);
        for _ in 0..count {
            dist.sample_into(&mut rng, &mut x);
            let l = conditional_loss(w.as_slice(), &x, s, noise);
            a += l;
            a2 += l * l;
        }
        (a, a2)
    });
    Ok(Estimate::from_sums(
        shards.into_iter().fold((0.0, 0.0), |p, q| (p.0 + q.0, p.1 + q.1)),
        n,
    ))
}

/// Estimate of `grad L_sigma(w)` with the label integrated out analytically.
///
/// Gaussian marginals use [`population_gradient_importance`]; other marginals
/// use plain Monte Carlo ([`population_gradient_mc`]).
pub fn population_gradient_oracle(
    w: &UnitVector,
    sigma: SigmoidScale,
    dist: &MarginalDistribution,
    noise: &NoiseModel,
    n: usize,
    seed: Seed,
) -> Result<VectorEstimate> {
    match dist.kind() {
        MarginalKind::IsotropicGaussian => population_gradient_importance(w, sigma, dist, noise, n, seed),
        _ => population_gradient_mc(w, sigma, dist, noise, n, seed),
    }
}

/// Importance-sampled gradient for Gaussian marginals.
///
/// Writing `x = m w + z` with `m ~ N(0, 1)` independent of `z ~ N(0, I - w w^T)`,
/// the margin is drawn from the logistic density `|phi'_sigma(m)|` instead of
/// `N(0, 1)`. Each draw then contributes `-p(m) (1 - 2 eta(x)) sign(<w*, x>) z`
/// with `p` the standard normal density, which stays bounded as `sigma -> 0`.
pub fn population_gradient_importance(
    w: &UnitVector,
    sigma: SigmoidScale,
    dist: &MarginalDistribution,
    noise: &NoiseModel,
    n: usize,
    seed: Seed,
) -> Result<VectorEstimate> {
    check_inputs(w, dist, noise, n)?;
    if dist.kind() != MarginalKind::IsotropicGaussian {
        return Err(invalid("dist", "importance sampling needs a Gaussian marginal"));
    }
    let d = dist.dim();
    let s = sigma.get();
    let ws = w.as_slice();
    let norm_const = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let shards = sharded(seed, n, |mut rng, count| {
        let mut acc = VectorSums::new(d);
        let mut z = vec![0.0; d];
        let mut x = vec![0.0; d];
        let mut g = vec![0.0; d];
        for _ in 0..count {
            dist.sample_into(&mut rng, &mut z);
            let c = dot(&z, ws);
            z.iter_mut().zip(ws).for_each(|(zi, wi)| *zi -= c * wi);
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let m = s * (u / (1.0 - u)).ln();
            x.iter_mut().zip(&z).zip(ws).for_each(|((xi, zi), wi)| *xi = zi + m * wi);
            let coef = -norm_const
                * (-0.5 * m * m).exp()
                * (1.0 - 2.0 * noise.flip_probability(&x))
                * noise.target().label(&x).value();
            if coef == 0.0 {
                acc.push_zeros(1);
                continue;
            }
            g.iter_mut().zip(&z).for_each(|(gi, zi)| *gi = coef * zi);
            acc.push(&g);
        }
        acc
    });
    Ok(shards
        .iter()
        .fold(VectorSums::new(d), |a, b| a.merge(b))
        .finish())
}

/// Plain Monte-Carlo estimate of `grad L_sigma(w)`, averaging
/// `phi'(m) (1 - 2 eta(x)) sign(<w*, x>) (x - m w)` over `x ~ D_X`.
pub fn population_gradient_mc(
    w: &UnitVector,
    sigma: SigmoidScale,
    dist: &MarginalDistribution,
    noise: &NoiseModel,
    n: usize,
    seed: Seed,
) -> Result<VectorEstimate> {
    check_inputs(w, dist, noise, n)?;
    let d = dist.dim();
    let s = sigma.get();
    let ws = w.as_slice();
    let shards = sharded(seed, n, |mut rng, count| {
        let mut acc = VectorSums::new(d);
        let mut x = vec![0.0; d];
        let mut g = vec![0.0; d];
        for _ in 0..count {
            dist.sample_into(&mut rng, &mut x);
            let m = dot(ws, &x);
            let coef = phi_prime(s, m)
                * (1.0 - 2.0 * noise.flip_probability(&x))
                * noise.target().label(&x).value();
            if coef == 0.0 {
                acc.push_zeros(1);
                continue;
            }
            for ((gi, xi), wi) in g.iter_mut().zip(&x).zip(ws) {
                *gi = coef * (xi - m * wi);
            }
            acc.push(&g);
        }
        acc
    });
    Ok(shards
        .iter()
        .fold(VectorSums::new(d), |a, b| a.merge(b))
        .finish())
}

/// Tangential central finite differences of `L_sigma` under common random
/// numbers: for each tangent basis direction `u`, the loss is compared at
/// `(w +- h u)/||w +- h u||` on the same draws of `x`.
pub fn finite_difference_gradient(
    w: &UnitVector,
    sigma: SigmoidScale,
    dist: &MarginalDistribution,
    noise: &NoiseModel,
    n: usize,
    seed: Seed,
    step: f64,
) -> Result<VectorEstimate> {
    check_inputs(w, dist, noise, n)?;
    if !(step > 0.0 && step < 1.0) {
        return Err(invalid("step", format!("{step} must lie in (0, 1)")));
    }
    let d = dist.dim();
    let s = sigma.get();
    let basis = w.tangent_basis();
    let shifted: Vec<(Vec<f64>, Vec<f64>)> = basis
        .iter()
        .map(|u| {
            let plus: Vec<f64> = w.as_slice().iter().zip(u).map(|(a, b)| a + step * b).collect();
            let minus: Vec<f64> = w.as_slice().iter().zip(u).map(|(a, b)| a - step * b).collect();
            Ok((
                UnitVector::new(plus)?.into_inner(),
                UnitVector::new(minus)?.into_inner(),
            ))
        })
        .collect::<Result<_>>()?;
    // the normalized points sit at angle atan(step) on either side of w
    let spacing = 2.0 * step.atan();
    let shards = sharded(seed, n, |mut rng, count| {
        let mut acc = VectorSums::new(d);
        let mut x = vec![0.0; d];
        let mut g = vec![0.0; d];
        for _ in 0..count {
            dist.sample_into(&mut rng, &mut x);
            g.iter_mut().for_each(|v| *v = 0.0);
            for (u, (plus, minus)) in basis.iter().zip(&shifted) {
                let dl = (conditional_loss(plus, &x, s, noise) - conditional_loss(minus, &x, s, noise)) / spacing;
                g.iter_mut().zip(u).for_each(|(gi, ui)| *gi += dl * ui);
            }
            acc.push(&g);
        }
        acc
    });
    Ok(shards
        .iter()
        .fold(VectorSums::new(d), |a, b| a.merge(b))
        .finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn gaussian_setup(d: usize, alpha: f64) -> (MarginalDistribution, NoiseModel) {
        let dist = MarginalDistribution::gaussian(d).unwrap();
        let noise = NoiseModel::with_derived_a(alpha, 1.0, UnitVector::basis(d, 0).unwrap(), &dist).unwrap();
        (dist, noise)
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(1.0, 0.0), 0.5);
        assert_eq!(phi(0.5, 1e6), 0.0);
        assert_eq!(phi(0.5, -1e6), 1.0);
        assert_relative_eq!(phi(1.0, 1.0), 1.0 / (1.0 + 1f64.exp()), max_relative = 1e-15);
        assert_abs_diff_eq!(phi(1.0, 1.0), 0.26894, epsilon = 1e-5);
        // no overflow at |t / sigma| = 1e4
        assert!(phi(1e-4, 1.0).is_finite() && phi(1e-4, -1.0).is_finite());
    }

    #[test]
    fn phi_prime_examples() {
        assert_eq!(phi_prime(0.5, 0.0), -0.5);
        for t in [0.1, 0.7, 3.0, 40.0] {
            assert_eq!(phi_prime(0.3, t), phi_prime(0.3, -t));
        }
        // central finite difference oracle
        let (s, t, h) = (0.3, 0.7, 1e-5);
        let fd = (phi(s, t + h) - phi(s, t - h)) / (2.0 * h);
        assert_relative_eq!(phi_prime(s, t), fd, max_relative = 1e-6);
    }

    #[test]
    fn phi_second_matches_finite_difference() {
        for &(s, t) in &[(0.3, 0.7), (1.0, -0.4), (0.05, 0.02)] {
            let h = 1e-5 * s;
            let fd = (phi_prime(s, t + h) - phi_prime(s, t - h)) / (2.0 * h);
            assert_relative_eq!(phi_second(s, t), fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn second_derivative_bounded_by_first_on_grid() {
        for &s in &[0.01, 0.1, 1.0, 3.0] {
            for k in 0..10_000 {
                let t = -20.0 * s + 40.0 * s * k as f64 / 9999.0;
                assert!(phi_second(s, t).abs() <= phi_prime(s, t).abs() / s * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn per_sample_gradient_example() {
        let w = UnitVector::basis(2, 1).unwrap();
        let h = per_sample_gradient(&w, &[1.0, 3.0], Label::Positive, SigmoidScale::new(1.0).unwrap()).unwrap();
        assert_eq!(h, vec![-1.0, 0.0]);
    }

    #[test]
    fn query_probability_examples() {
        let w = UnitVector::basis(3, 0).unwrap();
        let s = SigmoidScale::new(0.2).unwrap();
        assert_eq!(query_probability(&w, &[0.0, 1.0, -4.0], s).unwrap(), 0.25);
        let q = query_probability(&w, &[2.0, 0.0, 0.0], s).unwrap();
        let e10 = 10f64.exp();
        assert_relative_eq!(q, e10 / ((1.0 + e10) * (1.0 + e10)), max_relative = 1e-12);
        assert_abs_diff_eq!(q, 4.54e-5, epsilon = 1e-7);
    }

    #[test]
    fn scale_invariance_of_normalized_margin() {
        let x = [0.4, -1.3, 0.8];
        let raw = [0.7, 0.2, -0.5];
        let nrm = dot(&raw, &raw).sqrt();
        let base = phi(0.3, dot(&raw, &x) / nrm);
        for c in [0.5, 1.0, 3.0] {
            let cw: Vec<f64> = raw.iter().map(|v| c * v).collect();
            let m = dot(&cw, &x) / dot(&cw, &cw).sqrt();
            assert_relative_eq!(phi(0.3, m), base, max_relative = 1e-14);
            assert_relative_eq!(phi(0.3, -m), 1.0 - base, max_relative = 1e-14);
        }
    }

    #[test]
    fn loss_of_antipodes_sums_to_one() {
        let (dist, noise) = gaussian_setup(3, 0.7);
        let w = UnitVector::new(vec![0.3, 1.0, -0.2]).unwrap();
        let s = SigmoidScale::new(0.2).unwrap();
        let a = population_loss_mc(&w, s, &dist, &noise, 50_000, Seed::new(1)).unwrap();
        let b = population_loss_mc(&-&w, s, &dist, &noise, 50_000, Seed::new(1)).unwrap();
        assert_abs_diff_eq!(a.value + b.value, 1.0, epsilon = 1e-12);
        assert!((0.0..=1.0).contains(&a.value));
    }

    #[test]
    fn small_sigma_loss_at_target_is_bayes_error() {
        let (dist, noise) = gaussian_setup(2, 0.7);
        let n = 200_000;
        let l = population_loss_mc(noise.target(), SigmoidScale::new(1e-5).unwrap(), &dist, &noise, n, Seed::new(3))
            .unwrap();
        let bayes = crate::noise::bayes_error_mc(&noise, &dist, n, Seed::new(3));
        assert!((l.value - bayes.value).abs() < 1e-3, "{l:?} vs {bayes:?}");
    }

    #[test]
    fn population_gradient_is_tangent() {
        let (dist, noise) = gaussian_setup(4, 0.7);
        let w = UnitVector::new(vec![0.5, -0.5, 0.1, 0.7]).unwrap();
        let g = population_gradient_oracle(&w, SigmoidScale::new(0.1).unwrap(), &dist, &noise, 100_000, Seed::new(2))
            .unwrap();
        assert!(w.dot(&g.value).abs() < 1e-10);
    }

    #[test]
    fn analytic_and_finite_difference_agree_at_right_angle() {
        let (dist, noise) = gaussian_setup(2, 0.7);
        let w = UnitVector::basis(2, 1).unwrap();
        let s = SigmoidScale::new(0.1).unwrap();
        let a = population_gradient_oracle(&w, s, &dist, &noise, 400_000, Seed::new(10)).unwrap();
        let f = finite_difference_gradient(&w, s, &dist, &noise, 400_000, Seed::new(11), 1e-4).unwrap();
        let diff: f64 = a.value.iter().zip(&f.value).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        assert!(diff <= 3.0 * a.stderr.hypot(f.stderr), "{a:?} vs {f:?}");
    }

    #[test]
    fn importance_and_plain_estimators_agree() {
        let (dist, noise) = gaussian_setup(3, 0.7);
        for (k, (coords, sigma)) in [(vec![0.3, 0.9, -0.2], 0.3), (vec![0.9, 0.1, 0.4], 0.02)]
            .into_iter()
            .enumerate()
        {
            let w = UnitVector::new(coords).unwrap();
            let s = SigmoidScale::new(sigma).unwrap();
            let seed = Seed::new(20 + k as u64);
            let a = population_gradient_importance(&w, s, &dist, &noise, 400_000, seed.child(0)).unwrap();
            let b = population_gradient_mc(&w, s, &dist, &noise, 400_000, seed.child(1)).unwrap();
            for j in 0..3 {
                let tol = 4.0 * a.component_stderr[j].hypot(b.component_stderr[j]);
                assert!((a.value[j] - b.value[j]).abs() <= tol, "{a:?} vs {b:?}");
            }
            assert!(w.dot(&a.value).abs() < 1e-10);
            assert!(a.stderr < b.stderr);
        }
    }

    #[test]
    fn importance_sampling_needs_gaussian() {
        let dist = MarginalDistribution::new(MarginalKind::UniformBall, 2).unwrap();
        let noise = NoiseModel::new(1.0, 1.0, 1.0, UnitVector::basis(2, 0).unwrap()).unwrap();
        let w = UnitVector::basis(2, 1).unwrap();
        let s = SigmoidScale::new(0.1).unwrap();
        assert!(population_gradient_importance(&w, s, &dist, &noise, 10, Seed::new(1)).is_err());
    }

    #[test]
    fn noiseless_gradient_vanishes_at_target() {
        let dist = MarginalDistribution::gaussian(2).unwrap();
        let noise = NoiseModel::new(1.0, 1.0, 1.0, UnitVector::basis(2, 0).unwrap()).unwrap();
        let g = population_gradient_oracle(noise.target(), SigmoidScale::new(0.1).unwrap(), &dist, &noise, 200_000, Seed::new(4))
            .unwrap();
        assert!(g.norm() < 3.0 * g.stderr, "{g:?}");
    }

    proptest! {
        #[test]
        fn per_sample_gradient_is_tangent_and_odd_in_label(
            seed in any::<u64>(), d in 2usize..9, log_sigma in -3.0f64..0.5
        ) {
            let mut rng = Seed::new(seed).stream();
            let w = UnitVector::random(d, &mut rng).unwrap();
            let x = MarginalDistribution::gaussian(d).unwrap().sample(&mut rng, 1).pop().unwrap();
            let s = SigmoidScale::new(10f64.powf(log_sigma)).unwrap();
            let hp = per_sample_gradient(&w, &x, Label::Positive, s).unwrap();
            let hn = per_sample_gradient(&w, &x, Label::Negative, s).unwrap();
            prop_assert!(w.dot(&hp).abs() <= 1e-12);
            for (a, b) in hp.iter().zip(&hn) {
                prop_assert_eq!(*a, -*b);
            }
        }

        #[test]
        fn phi_is_decreasing_and_bounded(s in 1e-3f64..10.0, t in -100.0f64..100.0, dt in 1e-6f64..1.0) {
            let a = phi(s, t);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(phi(s, t + dt) <= a);
            prop_assert!(phi_prime(s, t) <= 0.0);
            prop_assert!(phi_prime(s, t).abs() <= 1.0 / (4.0 * s) * (1.0 + 1e-15));
        }

        #[test]
        fn query_probability_is_monotone_in_margin(s in 1e-3f64..10.0, m in 0.0f64..50.0, dm in 0.0f64..5.0) {
            let q = query_probability_at_margin(s, m);
            prop_assert!((0.0..=0.25).contains(&q));
            prop_assert!(query_probability_at_margin(s, m + dm) <= q);
            prop_assert_eq!(query_probability_at_margin(s, -m), q);
        }
    }
}
