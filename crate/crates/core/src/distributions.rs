//! Unlabeled marginals `D_X` and empirical well-behavedness certificates.
//!
//! Three marginals are supported: the isotropic standard Gaussian, the uniform
//! distribution on a ball, and the product Laplace distribution normalized to
//! unit variance per coordinate. All three have bounded two-dimensional
//! projected densities and sub-exponential one-dimensional tails.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::rng::{sharded, Seed, SeededStream};
use crate::vectors::{norm, UnitVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalKind {
    IsotropicGaussian,
    UniformBall,
    IsotropicLogconcaveLaplace,
}

impl MarginalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MarginalKind::IsotropicGaussian => "isotropic_gaussian",
            MarginalKind::UniformBall => "uniform_ball",
            MarginalKind::IsotropicLogconcaveLaplace => "isotropic_logconcave_laplace",
        }
    }
}

impl fmt::Display for MarginalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MarginalKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "isotropic_gaussian" => Ok(MarginalKind::IsotropicGaussian),
            "uniform_ball" => Ok(MarginalKind::UniformBall),
            "isotropic_logconcave_laplace" => Ok(MarginalKind::IsotropicLogconcaveLaplace),
            other => Err(format!(
                "unknown marginal kind `{other}` (expected isotropic_gaussian, uniform_ball or isotropic_logconcave_laplace)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateSource {
    Analytic,
    Empirical,
}

/// Constants `(L, R, U, beta)` of a well-behaved marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellBehavedCertificate {
    /// Lower bound on every 2-D projected density inside the disk of radius `r`.
    pub l: f64,
    pub r: f64,
    /// Upper bound on every 2-D projected density.
    pub u: f64,
    /// Tail scale: `P(|<w,x>| >= t) <= exp(1 - t / beta)`.
    pub beta: f64,
    pub source: CertificateSource,
}

impl WellBehavedCertificate {
    pub fn new(l: f64, r: f64, u: f64, beta: f64, source: CertificateSource) -> Result<Self> {
        for (name, v) in [("L", l), ("R", r), ("U", u), ("beta", beta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "certificate",
                    reason: format!("{name} = {v} must be positive and finite"),
                });
            }
        }
        if l > u {
            return Err(invalid("certificate", format!("L = {l} exceeds U = {u}")));
        }
        Ok(WellBehavedCertificate { l, r, u, beta, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalDistribution {
    kind: MarginalKind,
    dim: usize,
    /// Support radius; only meaningful for [`MarginalKind::UniformBall`].
    radius: f64,
    pub certificate: Option<WellBehavedCertificate>,
}

// unit-variance Laplace scale
const LAPLACE_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

impl MarginalDistribution {
    pub fn new(kind: MarginalKind, dim: usize) -> Result<Self> {
        Self::with_radius(kind, dim, 1.0)
    }

    pub fn gaussian(dim: usize) -> Result<Self> {
        Self::new(MarginalKind::IsotropicGaussian, dim)
    }

    pub fn with_radius(kind: MarginalKind, dim: usize, radius: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::DimensionTooSmall(dim));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid("marginal.radius", format!("{radius} must be positive")));
        }
        Ok(MarginalDistribution {
            kind,
            dim,
            radius,
            certificate: None,
        })
    }

    pub fn kind(&self) -> MarginalKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Draws one point into `out` (length `dim`).
    #[inline]
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match self.kind {
            MarginalKind::IsotropicGaussian => {
                for x in out.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
            }
            MarginalKind::UniformBall => loop {
                for x in out.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                let n = norm(out);
                if n > 0.0 {
                    let u: f64 = rng.random();
                    let scale = self.radius * u.powf(1.0 / self.dim as f64) / n;
                    out.iter_mut().for_each(|x| *x *= scale);
                    break;
                }
            },
            MarginalKind::IsotropicLogconcaveLaplace => {
                for x in out.iter_mut() {
                    // inverse CDF on u in (-1/2, 1/2)
                    let u: f64 = rng.random::<f64>() - 0.5;
                    let mag = -(1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln();
                    *x = LAPLACE_SCALE * mag.copysign(u);
                }
            }
        }
    }

    /// `n` i.i.d. draws. Identical `(seed, kind, dim, n)` reproduce identical output.
    pub fn sample(&self, rng: &mut SeededStream, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let mut x = vec![0.0; self.dim];
                self.sample_into(rng, &mut x);
                x
            })
            .collect()
    }

    /// Upper bound on the density of the 1-D projection `<w, x>` for any unit `w`.
    pub fn projection_density_bound(&self) -> f64 {
        match self.kind {
            MarginalKind::IsotropicGaussian => 1.0 / (2.0 * PI).sqrt(),
            MarginalKind::UniformBall => {
                let d = self.dim as f64;
                (ln_gamma(d / 2.0 + 1.0) - ln_gamma((d + 1.0) / 2.0)).exp() / (PI.sqrt() * self.radius)
            }
            // symmetric log-concave with unit variance: f(0) <= 1/sqrt(2)
            MarginalKind::IsotropicLogconcaveLaplace => std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    /// `E ||x||^2`.
    pub fn second_moment(&self) -> f64 {
        let d = self.dim as f64;
        match self.kind {
            MarginalKind::IsotropicGaussian | MarginalKind::IsotropicLogconcaveLaplace => d,
            MarginalKind::UniformBall => d / (d + 2.0) * self.radius * self.radius,
        }
    }

    /// Density of the 2-D projection at radius `r` (rotation-invariant kinds only).
    pub fn projected_density_2d(&self, r: f64) -> Option<f64> {
        match self.kind {
            MarginalKind::IsotropicGaussian => Some((-0.5 * r * r).exp() / (2.0 * PI)),
            MarginalKind::UniformBall => {
                let rho = self.radius;
                if r > rho {
                    return Some(0.0);
                }
                let d = self.dim as f64;
                let ln_vol = |k: f64| 0.5 * k * PI.ln() - ln_gamma(0.5 * k + 1.0);
                let ln_p = ln_vol(d - 2.0) - ln_vol(d) - d * rho.ln();
                let base = (rho * rho - r * r).max(0.0);
                Some(ln_p.exp() * base.powf(0.5 * (d - 2.0)))
            }
            MarginalKind::IsotropicLogconcaveLaplace => None,
        }
    }

    /// `P(|<w, x>| >= t)` in closed form or by quadrature (rotation-invariant kinds).
    pub fn projection_tail(&self, t: f64) -> Option<f64> {
        match self.kind {
            MarginalKind::IsotropicGaussian => Some(erfc(t / SQRT_2)),
            MarginalKind::UniformBall => {
                let rho = self.radius;
                if t >= rho {
                    return Some(0.0);
                }
                let c = self.projection_density_bound();
                let half = 0.5 * (self.dim as f64 - 1.0);
                let f = |s: f64| c * (1.0 - (s / rho).powi(2)).max(0.0).powf(half);
                Some((2.0 * simpson(f, t.max(0.0), rho, 2000)).min(1.0))
            }
            MarginalKind::IsotropicLogconcaveLaplace => None,
        }
    }

    /// Closed-form certificate at radius `r`, when one exists.
    pub fn analytic_certificate(&self, r: f64) -> Option<Result<WellBehavedCertificate>> {
        let l = self.projected_density_2d(r)?;
        let u = self.projected_density_2d(0.0)?;
        let t_max = match self.kind {
            MarginalKind::UniformBall => self.radius,
            _ => 12.0,
        };
        let beta = (1..=4000)
            .map(|k| t_max * k as f64 / 4000.0)
            .filter_map(|t| {
                let p = self.projection_tail(t)?;
                (p > 0.0).then(|| t / (1.0 - p.ln()))
            })
            .fold(0.0f64, f64::max);
        Some(WellBehavedCertificate::new(l, r, u, beta, CertificateSource::Analytic))
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    s * h / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyParams {
    /// Disk radius `R` on which the density lower bound is checked.
    pub radius: f64,
    /// Histogram cells per axis over `[-R, R]^2`.
    pub resolution: usize,
    pub samples: usize,
    /// Number of random directions used for the tail fit.
    pub tail_directions: usize,
    /// Number of thresholds in the tail fit grid.
    pub tail_grid: usize,
}

impl Default for CertifyParams {
    fn default() -> Self {
        CertifyParams {
            radius: 0.5,
            resolution: 64,
            samples: 1_000_000,
            tail_directions: 8,
            tail_grid: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub empirical: WellBehavedCertificate,
    pub analytic: Option<WellBehavedCertificate>,
}

/// Estimates `(L, R, U, beta)` from samples.
///
/// The 2-D density is estimated with a histogram on the first two coordinates
/// (`L` is the minimum over cells lying fully inside the disk, `U` the maximum
/// over all cells). `beta` is the smallest value satisfying the tail bound on a
/// grid of thresholds for several random directions.
pub fn certify_well_behaved(
    dist: &MarginalDistribution,
    params: &CertifyParams,
    seed: Seed,
) -> Result<CertifyReport> {
    let r = params.radius;
    let res = params.resolution;
    if !(r > 0.0) || res < 2 || params.samples == 0 {
        return Err(invalid("certify", "radius > 0, resolution >= 2 and samples >= 1 are required"));
    }
    let d = dist.dim();
    let mut dir_rng = seed.named("directions").stream();
    let dirs: Vec<UnitVector> = (0..params.tail_directions.max(1))
        .map(|_| UnitVector::random(d, &mut dir_rng))
        .collect::<Result<_>>()?;
    let t_max = match dist.kind() {
        MarginalKind::UniformBall => dist.radius(),
        _ => 8.0,
    };
    let grid = params.tail_grid.max(1);
    let thresholds: Vec<f64> = (1..=grid).map(|k| t_max * k as f64 / grid as f64).collect();

    struct Counts {
        hist: Vec<u64>,
        tails: Vec<u64>,
    }
    let cell = 2.0 * r / res as f64;
    let shards = sharded(seed.named("samples"), params.samples, |mut rng, count| {
        let mut c = Counts {
            hist: vec![0; res * res],
            tails: vec![0; dirs.len() * grid],
        };
        let mut x = vec![0.0; d];
        for _ in 0..count {
            dist.sample_into(&mut rng, &mut x);
            let (a, b) = (x[0], x[1]);
            if a.abs() < r && b.abs() < r {
                let i = (((a + r) / cell) as usize).min(res - 1);
                let j = (((b + r) / cell) as usize).min(res - 1);
                c.hist[i * res + j] += 1;
            }
            for (k, w) in dirs.iter().enumerate() {
                let m = w.dot(&x).abs();
                for (j, &t) in thresholds.iter().enumerate() {
                    if m >= t {
                        c.tails[k * grid + j] += 1;
                    } else {
                        break;
                    }
                }
            }
        }
        c
    });
    let mut hist = vec![0u64; res * res];
    let mut tails = vec![0u64; dirs.len() * grid];
    for s in shards {
        hist.iter_mut().zip(&s.hist).for_each(|(a, b)| *a += b);
        tails.iter_mut().zip(&s.tails).for_each(|(a, b)| *a += b);
    }

    let n = params.samples as f64;
    let area = cell * cell;
    let mut lower = f64::INFINITY;
    let mut upper = 0.0f64;
    for i in 0..res {
        for j in 0..res {
            let density = hist[i * res + j] as f64 / (n * area);
            upper = upper.max(density);
            // farthest corner from the origin
            let xa = (-r + i as f64 * cell).abs().max((-r + (i + 1) as f64 * cell).abs());
            let xb = (-r + j as f64 * cell).abs().max((-r + (j + 1) as f64 * cell).abs());
            if xa.hypot(xb) <= r * (1.0 + 1e-12) {
                lower = lower.min(density);
            }
        }
    }
    if !(lower > 0.0) {
        return Err(Error::NotWellBehaved {
            radius: r,
            lower: if lower.is_finite() { lower } else { 0.0 },
        });
    }
    let beta = tails
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(idx, &c)| {
            let t = thresholds[idx % grid];
            t / (1.0 - (c as f64 / n).ln())
        })
        .fold(f64::MIN_POSITIVE, f64::max);
    let empirical = WellBehavedCertificate::new(lower, r, upper, beta, CertificateSource::Empirical)?;
    let analytic = match dist.kind() {
        MarginalKind::IsotropicGaussian => dist.analytic_certificate(r).transpose()?,
        _ => None,
    };
    Ok(CertifyReport { empirical, analytic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sampling_is_deterministic() {
        let dist = MarginalDistribution::gaussian(4).unwrap();
        let a = dist.sample(&mut Seed::new(7).stream(), 2);
        let b = dist.sample(&mut Seed::new(7).stream(), 2);
        assert_eq!(a, b);
        let c = dist.sample(&mut Seed::new(8).stream(), 2);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_ball_respects_support() {
        for d in [2, 3, 7] {
            let dist = MarginalDistribution::new(MarginalKind::UniformBall, d).unwrap();
            for x in dist.sample(&mut Seed::new(3).stream(), 1000) {
                assert!(norm(&x) <= 1.0);
            }
        }
        let dist = MarginalDistribution::with_radius(MarginalKind::UniformBall, 3, 2.5).unwrap();
        assert!(dist.sample(&mut Seed::new(3).stream(), 1000).iter().all(|x| norm(x) <= 2.5));
    }

    #[test]
    fn gaussian_coordinate_means_are_centred() {
        let n = 100_000;
        let dist = MarginalDistribution::gaussian(5).unwrap();
        let xs = dist.sample(&mut Seed::new(21).stream(), n);
        for j in 0..5 {
            let mean = xs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "coordinate {j}: {mean}");
        }
    }

    #[test]
    fn laplace_has_unit_variance_and_laplace_kurtosis() {
        let n = 400_000;
        let dist = MarginalDistribution::new(MarginalKind::IsotropicLogconcaveLaplace, 2).unwrap();
        let xs = dist.sample(&mut Seed::new(5).stream(), n);
        let m2 = xs.iter().map(|x| x[0] * x[0]).sum::<f64>() / n as f64;
        let m4 = xs.iter().map(|x| x[0].powi(4)).sum::<f64>() / n as f64;
        assert!((m2 - 1.0).abs() < 0.02, "variance {m2}");
        // Laplace kurtosis is 6
        assert!((m4 / (m2 * m2) - 6.0).abs() < 0.3, "kurtosis {}", m4 / (m2 * m2));
    }

    #[test]
    fn analytic_gaussian_certificate() {
        let dist = MarginalDistribution::gaussian(2).unwrap();
        let c = dist.analytic_certificate(0.5).unwrap().unwrap();
        // closed form: (1/2pi) e^{-R^2/2} and 1/2pi
        assert_relative_eq!(c.l, (-0.125f64).exp() / (2.0 * PI), max_relative = 1e-12);
        assert_relative_eq!(c.l, 0.14046, max_relative = 1e-4);
        assert_relative_eq!(c.u, 0.159_154_943, max_relative = 1e-8);
        assert!(c.beta > 0.0 && c.beta < 2.0);
    }

    #[test]
    fn analytic_uniform_disk_certificate() {
        let dist = MarginalDistribution::new(MarginalKind::UniformBall, 2).unwrap();
        let c = dist.analytic_certificate(0.5).unwrap().unwrap();
        assert_relative_eq!(c.l, 1.0 / PI, max_relative = 1e-12);
        assert_relative_eq!(c.u, 1.0 / PI, max_relative = 1e-12);
    }

    #[test]
    fn ball_tail_matches_direct_integration_in_three_dimensions() {
        // d = 3: the projection has density 3(1 - s^2)/4 on [-1, 1]
        let dist = MarginalDistribution::new(MarginalKind::UniformBall, 3).unwrap();
        assert_relative_eq!(dist.projection_density_bound(), 0.75, max_relative = 1e-12);
        let t: f64 = 0.3;
        let direct = 1.5 * ((1.0 - t) - (1.0 - t.powi(3)) / 3.0);
        assert_relative_eq!(dist.projection_tail(t).unwrap(), direct, max_relative = 1e-9);
    }

    #[test]
    fn tail_bound_holds_trivially_at_zero() {
        for kind in [MarginalKind::IsotropicGaussian, MarginalKind::UniformBall] {
            let dist = MarginalDistribution::new(kind, 3).unwrap();
            assert!(dist.projection_tail(0.0).unwrap() <= 1f64.exp());
        }
    }

    #[test]
    fn empirical_uniform_disk_certificate() {
        let dist = MarginalDistribution::new(MarginalKind::UniformBall, 2).unwrap();
        let params = CertifyParams {
            resolution: 16,
            ..CertifyParams::default()
        };
        let rep = certify_well_behaved(&dist, &params, Seed::new(2)).unwrap();
        assert!(rep.analytic.is_none());
        let want = 1.0 / PI;
        assert!((rep.empirical.l / want - 1.0).abs() < 0.2, "{:?}", rep.empirical);
        assert!((rep.empirical.u / want - 1.0).abs() < 0.2, "{:?}", rep.empirical);
    }

    #[test]
    fn empirical_gaussian_certificate_tracks_analytic() {
        let dist = MarginalDistribution::gaussian(3).unwrap();
        let params = CertifyParams {
            resolution: 16,
            ..CertifyParams::default()
        };
        let rep = certify_well_behaved(&dist, &params, Seed::new(9)).unwrap();
        let an = rep.analytic.unwrap();
        assert!((rep.empirical.l / an.l - 1.0).abs() < 0.2, "{:?} vs {:?}", rep.empirical, an);
        assert!((rep.empirical.u / an.u - 1.0).abs() < 0.2, "{:?} vs {:?}", rep.empirical, an);
        assert!(rep.empirical.beta <= 1.2 * an.beta);
    }

    #[test]
    fn certification_fails_outside_the_support() {
        let dist = MarginalDistribution::new(MarginalKind::UniformBall, 2).unwrap();
        let params = CertifyParams {
            radius: 1.5,
            resolution: 16,
            samples: 100_000,
            ..CertifyParams::default()
        };
        let err = certify_well_behaved(&dist, &params, Seed::new(1)).unwrap_err();
        assert!(matches!(err, Error::NotWellBehaved { .. }));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [
            MarginalKind::IsotropicGaussian,
            MarginalKind::UniformBall,
            MarginalKind::IsotropicLogconcaveLaplace,
        ] {
            assert_eq!(k.as_str().parse::<MarginalKind>().unwrap(), k);
        }
        assert!("gaussian".parse::<MarginalKind>().is_err());
    }
}
