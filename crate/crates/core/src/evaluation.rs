//! Simulator-side metrics. Everything here integrates the noise model
//! analytically and never touches the labeling oracle, so evaluation costs no
//! labels.

use serde::{Deserialize, Serialize};

use crate::distributions::{MarginalDistribution, WellBehavedCertificate};
use crate::error::{invalid, Result};
use crate::loss::{population_gradient_oracle, Estimate, SigmoidScale};
use crate::noise::NoiseModel;
use crate::rng::{sharded, Seed};
use crate::vectors::{dot, UnitVector};

fn check(w: &UnitVector, d: usize, n: usize) -> Result<()> {
    w.check_dim(d)?;
    if n == 0 {
        return Err(invalid("n", "at least one sample is required"));
    }
    Ok(())
}

fn sum_estimate<F>(n: usize, seed: Seed, d: usize, dist: &MarginalDistribution, f: F) -> Estimate
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let shards = sharded(seed, n, |mut rng, count| {
        let mut x = vec![0.0; d];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..count {
            dist.sample_into(&mut rng, &mut x);
            let v = f(&x);
            s += v;
            s2 += v * v;
        }
        (s, s2)
    });
    Estimate::from_sums(shards.into_iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1)), n)
}

/// `E[(1 - 2 eta(x)) 1{h_w(x) != h_w*(x)}]`, i.e. `err(w) - err(w*)`.
pub fn excess_error(
    w: &UnitVector,
    noise: &NoiseModel,
    dist: &MarginalDistribution,
    n: usize,
    seed: Seed,
) -> Result<Estimate> {
    let d = dist.dim();
    check(w, d, n)?;
    noise.target().check_dim(d)?;
    let target = noise.target();
    Ok(sum_estimate(n, seed, d, dist, |x| {
        if w.label(x) != target.label(x) {
            1.0 - 2.0 * noise.flip_probability(x)
        } else {
            0.0
        }
    }))
}

/// `P(h_w(x) != h_v(x))`.
pub fn disagreement(
    w: &UnitVector,
    v: &UnitVector,
    dist: &MarginalDistribution,
    n: usize,
    seed: Seed,
) -> Result<Estimate> {
    let d = dist.dim();
    check(w, d, n)?;
    v.check_dim(d)?;
    Ok(sum_estimate(n, seed, d, dist, |x| {
        if w.label(x) != v.label(x) {
            1.0
        } else {
            0.0
        }
    }))
}

/// Upper bound on `P(h_u != h_v)` for a well-behaved marginal:
/// `4 U beta^2 ln^2(6/gamma) theta + gamma`.
pub fn prob_angle_bound(cert: &WellBehavedCertificate, theta: f64, gamma: f64) -> f64 {
    let l = (6.0 / gamma).ln();
    4.0 * cert.u * cert.beta * cert.beta * l * l * theta + gamma
}

/// Monte-Carlo estimate of `||grad L_sigma(w)||` together with the
/// estimate's standard error.
pub fn stationarity_probe(
    w: &UnitVector,
    sigma: SigmoidScale,
    dist: &MarginalDistribution,
    noise: &NoiseModel,
    n: usize,
    seed: Seed,
) -> Result<Estimate> {
    let g = population_gradient_oracle(w, sigma, dist, noise, n, seed)?;
    Ok(Estimate {
        value: g.norm(),
        stderr: g.stderr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub angle: f64,
    pub min_angle: f64,
    pub probe: f64,
    pub stderr: f64,
}

/// Outcome of probing `||grad L_sigma||` along a half circle through `w*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaritySweep {
    pub theta0: f64,
    pub rho: f64,
    pub points: Vec<SweepPoint>,
    /// Indices where the probe is significantly below `2 rho`
    /// (`probe + 3 stderr <= 2 rho`) although `min(theta(w, w*), theta(-w, w*)) > theta0`.
    pub violations: Vec<usize>,
    /// Whether some point with min-angle above 0.3 has `probe > 2 rho`.
    pub far_point_detected: bool,
}

impl StationaritySweep {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.far_point_detected
    }
}

/// Probes the gradient norm at `directions` points `theta_k = k pi / (directions - 1)`
/// on the great half circle from `w*` to `-w*` and checks that small gradients
/// only occur close to `+-w*`. All points share the same random draws.
#[allow(clippy::too_many_arguments)]
pub fn stationarity_sweep(
    noise: &NoiseModel,
    dist: &MarginalDistribution,
    sigma: SigmoidScale,
    theta0: f64,
    rho: f64,
    directions: usize,
    samples: usize,
    seed: Seed,
) -> Result<StationaritySweep> {
    if directions < 2 {
        return Err(invalid("directions", "at least two directions are required"));
    }
    let target = noise.target();
    let toward = target.tangent_basis().swap_remove(0);
    let mut points = Vec::with_capacity(directions);
    for k in 0..directions {
        let angle = std::f64::consts::PI * k as f64 / (directions - 1) as f64;
        let w = target.rotated_toward(&toward, angle)?;
        let p = stationarity_probe(&w, sigma, dist, noise, samples, seed)?;
        points.push(SweepPoint {
            angle,
            min_angle: w.min_angle(target)?,
            probe: p.value,
            stderr: p.stderr,
        });
    }
    let violations = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.min_angle > theta0 && p.probe + 3.0 * p.stderr <= 2.0 * rho)
        .map(|(i, _)| i)
        .collect();
    let far_point_detected = points.iter().any(|p| p.min_angle > 0.3 && p.probe > 2.0 * rho);
    Ok(StationaritySweep {
        theta0,
        rho,
        points,
        violations,
        far_point_detected,
    })
}

/// Bayes error `E[eta(x)]` estimated with the same integration as [`excess_error`].
pub fn bayes_error(noise: &NoiseModel, dist: &MarginalDistribution, n: usize, seed: Seed) -> Result<Estimate> {
    let d = dist.dim();
    check(noise.target(), d, n)?;
    Ok(sum_estimate(n, seed, d, dist, |x| noise.flip_probability(x)))
}

/// Fraction of a fixed sample misclassified by `w`, and the count of points
/// with `<w, x> = 0`.
pub fn empirical_error(w: &UnitVector, xs: &[Vec<f64>], ys: &[crate::vectors::Label]) -> (f64, usize) {
    let mut wrong = 0usize;
    let mut ties = 0usize;
    for (x, y) in xs.iter().zip(ys) {
        let m = dot(w.as_slice(), x);
        if m == 0.0 {
            ties += 1;
        }
        if w.label(x) != *y {
            wrong += 1;
        }
    }
    (wrong as f64 / xs.len().max(1) as f64, ties)
}
