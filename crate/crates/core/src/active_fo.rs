//! Label-efficient stochastic gradient oracle for `L_sigma`.
//!
//! Each call draws `x ~ D_X`, flips a coin with success probability
//! `q(w, x) = sigma |phi'_sigma(<w, x>)|`, and only on success pays for a label
//! and returns `h(w, x, y)`; otherwise it returns the zero vector for free.
//! Since `q h` equals the per-sample loss gradient, the output is an unbiased
//! estimate of `grad L_sigma(w)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::MarginalDistribution;
use crate::error::Result;
use crate::loss::{per_sample_gradient_into, query_probability_at_margin, SigmoidScale};
use crate::noise::LabelingOracle;
use crate::vectors::UnitVector;

/// Above this dimension queried points are not retained by default.
pub const RETAIN_X_MAX_DIM: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSample {
    pub vector: Vec<f64>,
    pub label_spent: bool,
    pub queried_x: Option<Vec<f64>>,
}

/// Reusable oracle state: the marginal, `sigma`, and a scratch buffer for `x`.
#[derive(Debug, Clone)]
pub struct ActiveFo<'a> {
    dist: &'a MarginalDistribution,
    sigma: SigmoidScale,
    retain_x: bool,
    x: Vec<f64>,
}

impl<'a> ActiveFo<'a> {
    pub fn new(dist: &'a MarginalDistribution, sigma: SigmoidScale) -> Self {
        ActiveFo {
            dist,
            sigma,
            retain_x: dist.dim() <= RETAIN_X_MAX_DIM,
            x: vec![0.0; dist.dim()],
        }
    }

    pub fn retain_queried_x(mut self, retain: bool) -> Self {
        self.retain_x = retain;
        self
    }

    pub fn sigma(&self) -> SigmoidScale {
        self.sigma
    }

    /// The most recently drawn `x`.
    pub fn last_x(&self) -> &[f64] {
        &self.x
    }

    /// Writes one oracle output into `out` and returns whether a label was spent.
    ///
    /// Both `x` and the Bernoulli draw come from `rng`; label noise comes only
    /// from the oracle's own stream.
    #[inline]
    pub fn sample_into<R: Rng + ?Sized>(
        &mut self,
        w: &UnitVector,
        oracle: &mut LabelingOracle,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<bool> {
        w.check_dim(self.dist.dim())?;
        self.dist.sample_into(rng, &mut self.x);
        let sigma = self.sigma.get();
        let q = query_probability_at_margin(sigma, w.dot(&self.x));
        let z: f64 = rng.random();
        if z < q {
            let y = oracle.query_label(&self.x)?;
            per_sample_gradient_into(w, &self.x, y, sigma, out);
            Ok(true)
        } else {
            out.iter_mut().for_each(|v| *v = 0.0);
            Ok(false)
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        w: &UnitVector,
        oracle: &mut LabelingOracle,
        rng: &mut R,
    ) -> Result<GradientSample> {
        let mut vector = vec![0.0; self.dist.dim()];
        let label_spent = self.sample_into(w, oracle, rng, &mut vector)?;
        let queried_x = (label_spent && self.retain_x).then(|| self.x.clone());
        Ok(GradientSample {
            vector,
            label_spent,
            queried_x,
        })
    }
}

/// One call of the oracle at `w`.
pub fn active_fo<R: Rng + ?Sized>(
    w: &UnitVector,
    sigma: SigmoidScale,
    dist: &MarginalDistribution,
    oracle: &mut LabelingOracle,
    rng: &mut R,
) -> Result<GradientSample> {
    ActiveFo::new(dist, sigma).sample(w, oracle, rng)
}
