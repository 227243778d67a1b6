//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, lists are comma separated and
//! seed lists also accept a half-open range `a..b`. Unknown or repeated keys
//! are errors, reported with their line number.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distributions::{MarginalDistribution, MarginalKind};
use crate::learner::{make_schedule, Polylog, Schedule, ScheduleConstants};
use crate::noise::NoiseModel;
use crate::psgd::Init;
use crate::rng::Seed;
use crate::vectors::UnitVector;

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ASpec {
    /// Smallest `A` implied by the marginal's projection density bound.
    Derived,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    /// `w*` drawn uniformly from the sphere using the run seed.
    Random,
    E1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSettings {
    pub kind: MarginalKind,
    pub dim: usize,
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSettings {
    pub alpha: f64,
    #[serde(rename = "A")]
    pub a: ASpec,
    /// `B` in `eta(x) = 1/2 - min(1/2, (|<w*,x>|/B)^((1-alpha)/alpha) / 2)`.
    pub margin_scale: f64,
    pub target: TargetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySettings {
    pub tnc_samples: usize,
    pub tnc_grid_points: usize,
    pub certify_radius: f64,
    pub certify_resolution: usize,
    pub certify_samples: usize,
    pub fo_samples: usize,
    pub gradient_samples: usize,
    pub probe_directions: usize,
    pub probe_samples: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            tnc_samples: 1_000_000,
            tnc_grid_points: 20,
            certify_radius: 0.5,
            certify_resolution: 16,
            certify_samples: 1_000_000,
            fo_samples: 1_000_000,
            gradient_samples: 1_000_000,
            probe_directions: 50,
            probe_samples: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateSettings {
    pub dim: usize,
    pub epsilon: f64,
    pub seeds: Vec<u64>,
    #[serde(rename = "c_N")]
    pub c_n: Vec<f64>,
    pub c_beta: Vec<f64>,
}

impl Default for CalibrateSettings {
    fn default() -> Self {
        CalibrateSettings {
            dim: 2,
            epsilon: 0.2,
            seeds: (0..5).collect(),
            c_n: vec![5e-15, 2e-14, 8e-14],
            c_beta: vec![1.25e8, 5e8, 2e9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub marginal: MarginalSettings,
    pub noise: NoiseSettings,
    /// Target excess errors, in descending order.
    pub epsilons: Vec<f64>,
    pub delta: f64,
    /// Largest `eps` accepted without a warning; defaults to the noise model's own range.
    pub epsilon_threshold: Option<f64>,
    pub constants: ScheduleConstants,
    pub polylog: Polylog,
    pub sigma_override: Option<f64>,
    pub init: Init,
    pub seeds: Vec<u64>,
    pub label_cap: Option<u64>,
    #[serde(skip)]
    pub out: PathBuf,
    pub eval_samples: usize,
    pub verify: VerifySettings,
    pub calibrate: CalibrateSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            marginal: MarginalSettings {
                kind: MarginalKind::IsotropicGaussian,
                dim: 5,
                radius: None,
            },
            noise: NoiseSettings {
                alpha: 0.7,
                a: ASpec::Derived,
                margin_scale: 1.0,
                target: TargetSpec::Random,
            },
            epsilons: vec![0.1],
            delta: 0.2,
            epsilon_threshold: None,
            constants: ScheduleConstants::default(),
            polylog: Polylog::Log,
            sigma_override: None,
            init: Init::Random,
            seeds: vec![0],
            label_cap: None,
            out: PathBuf::from("out"),
            eval_samples: 1_000_000,
            verify: VerifySettings::default(),
            calibrate: CalibrateSettings::default(),
        }
    }
}

/// A configuration error tied to a line of the file.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| format!("invalid value `{raw}` for `{key}`: {e}"))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    let items: Vec<T> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(format!("`{key}` needs at least one value"));
    }
    Ok(items)
}

fn parse_seeds(key: &str, raw: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = raw.split_once("..") {
        let a: u64 = parse_value(key, a.trim())?;
        let b: u64 = parse_value(key, b.trim())?;
        if b <= a {
            return Err(format!("empty seed range `{raw}`"));
        }
        return Ok((a..b).collect());
    }
    parse_list(key, raw)
}

fn parse_optional<T: FromStr>(key: &str, raw: &str) -> Result<Option<T>, String>
where
    T::Err: fmt::Display,
{
    match raw {
        "none" | "off" => Ok(None),
        _ => parse_value(key, raw).map(Some),
    }
}

impl ExperimentConfig {
    /// Parses configuration text. Keys not present keep their defaults.
    pub fn parse(text: &str) -> Result<Self, LineError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut key_lines: Vec<(String, usize)> = Vec::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| LineError { line: line_no, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            seen.push(key.to_string());
            key_lines.push((key.to_string(), line_no));
            cfg.set(key, value).map_err(err)?;
        }
        let line_of = |key: &str| {
            key_lines
                .iter()
                .find(|(k, _)| k == key)
                .map_or(0, |(_, l)| *l)
        };
        cfg.validate().map_err(|(key, message)| LineError {
            line: line_of(key),
            message,
        })?;
        Ok(cfg)
    }

    /// Reads and parses a file. A missing file is reported as [`CliError::MissingConfig`].
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                CliError::MissingConfig(path.to_path_buf())
            } else {
                CliError::Io {
                    path: path.to_path_buf(),
                    source,
                }
            }
        })?;
        ExperimentConfig::parse(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            line: e.line,
            message: e.message,
        })
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let c = &mut self.constants;
        match key {
            "marginal.kind" => self.marginal.kind = parse_value(key, v)?,
            "marginal.dim" => self.marginal.dim = parse_value(key, v)?,
            "marginal.radius" => self.marginal.radius = Some(parse_value(key, v)?),
            "noise.alpha" => self.noise.alpha = parse_value(key, v)?,
            "noise.A" => {
                self.noise.a = match v {
                    "derived" => ASpec::Derived,
                    _ => ASpec::Value(parse_value(key, v)?),
                }
            }
            "noise.margin_scale" | "noise.B" => self.noise.margin_scale = parse_value(key, v)?,
            "noise.target" => {
                self.noise.target = match v {
                    "random" => TargetSpec::Random,
                    "e1" => TargetSpec::E1,
                    _ => return Err(format!("invalid value `{v}` for `{key}`: expected random or e1")),
                }
            }
            "target.epsilon" => self.epsilons = parse_list(key, v)?,
            "target.delta" => self.delta = parse_value(key, v)?,
            "target.epsilon_threshold" => self.epsilon_threshold = parse_optional(key, v)?,
            "schedule.c_theta0" => c.c_theta0 = parse_value(key, v)?,
            "schedule.c_sigma" => c.c_sigma = parse_value(key, v)?,
            "schedule.c_rho" => c.c_rho = parse_value(key, v)?,
            "schedule.c_N" => c.c_n = parse_value(key, v)?,
            "schedule.c_beta" => c.c_beta = parse_value(key, v)?,
            "schedule.c_M1" => c.c_m1 = parse_value(key, v)?,
            "schedule.c_M2" => c.c_m2 = parse_value(key, v)?,
            "schedule.polylog" => self.polylog = parse_value(key, v)?,
            "loss.sigma_override" => self.sigma_override = parse_optional(key, v)?,
            "psgd.init" => self.init = parse_value(key, v)?,
            "run.seeds" => self.seeds = parse_seeds(key, v)?,
            "run.label_cap" => self.label_cap = parse_optional(key, v)?,
            "run.out" => self.out = PathBuf::from(v),
            "eval.samples" => self.eval_samples = parse_value(key, v)?,
            "verify.tnc_samples" => self.verify.tnc_samples = parse_value(key, v)?,
            "verify.tnc_grid_points" => self.verify.tnc_grid_points = parse_value(key, v)?,
            "verify.certify_radius" => self.verify.certify_radius = parse_value(key, v)?,
            "verify.certify_resolution" => self.verify.certify_resolution = parse_value(key, v)?,
            "verify.certify_samples" => self.verify.certify_samples = parse_value(key, v)?,
            "verify.fo_samples" => self.verify.fo_samples = parse_value(key, v)?,
            "verify.gradient_samples" => self.verify.gradient_samples = parse_value(key, v)?,
            "verify.probe_directions" => self.verify.probe_directions = parse_value(key, v)?,
            "verify.probe_samples" => self.verify.probe_samples = parse_value(key, v)?,
            "calibrate.dim" => self.calibrate.dim = parse_value(key, v)?,
            "calibrate.epsilon" => self.calibrate.epsilon = parse_value(key, v)?,
            "calibrate.seeds" => self.calibrate.seeds = parse_seeds(key, v)?,
            "calibrate.c_N" => self.calibrate.c_n = parse_list(key, v)?,
            "calibrate.c_beta" => self.calibrate.c_beta = parse_list(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Checks cross-field constraints; errors name the offending key.
    fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.marginal.dim < 2 {
            return Err(("marginal.dim", format!("dimension {} must be at least 2", self.marginal.dim)));
        }
        if !(self.noise.alpha > 1.0 / 3.0 && self.noise.alpha <= 1.0) {
            return Err(("noise.alpha", format!("alpha = {} must lie in (1/3, 1]", self.noise.alpha)));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(("target.epsilon", "every epsilon must lie in (0, 1)".into()));
        }
        if self.epsilons.windows(2).any(|w| w[0] <= w[1]) {
            return Err(("target.epsilon", "epsilon list must be strictly descending".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(("target.delta", format!("delta = {} must lie in (0, 1)", self.delta)));
        }
        if self.constants.validate().is_err() {
            return Err(("schedule.c_N", "schedule constants must be positive and finite".into()));
        }
        if let Some(s) = self.sigma_override {
            if !(s > 0.0 && s.is_finite()) {
                return Err(("loss.sigma_override", format!("sigma = {s} must be positive")));
            }
        }
        if self.eval_samples == 0 {
            return Err(("eval.samples", "must be at least 1".into()));
        }
        if self.calibrate.dim < 2 {
            return Err(("calibrate.dim", "dimension must be at least 2".into()));
        }
        Ok(())
    }

    /// SHA-256 of the configuration's canonical JSON form. The output
    /// directory and seed list are excluded, so every run of the same
    /// experiment shares a hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.seeds.clear();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn distribution(&self) -> crate::Result<MarginalDistribution> {
        match self.marginal.radius {
            Some(r) => MarginalDistribution::with_radius(self.marginal.kind, self.marginal.dim, r),
            None => MarginalDistribution::new(self.marginal.kind, self.marginal.dim),
        }
    }

    /// `w*` for a run seed.
    pub fn target(&self, seed: u64) -> crate::Result<UnitVector> {
        match self.noise.target {
            TargetSpec::E1 => UnitVector::basis(self.marginal.dim, 0),
            TargetSpec::Random => {
                UnitVector::random(self.marginal.dim, &mut Seed::new(seed).named("target").stream())
            }
        }
    }

    pub fn noise_model(&self, dist: &MarginalDistribution, seed: u64) -> crate::Result<NoiseModel> {
        let target = self.target(seed)?;
        match self.noise.a {
            ASpec::Derived => NoiseModel::with_derived_a(self.noise.alpha, self.noise.margin_scale, target, dist),
            ASpec::Value(a) => NoiseModel::new(self.noise.alpha, a, self.noise.margin_scale, target),
        }
    }

    /// The schedule at `epsilon`, with the sigma override and threshold applied.
    pub fn schedule(&self, epsilon: f64, a: f64) -> crate::Result<Schedule> {
        let mut s = make_schedule(
            epsilon,
            self.delta,
            self.noise.alpha,
            a,
            self.marginal.dim,
            self.constants,
            self.polylog,
        )?;
        if let Some(t) = self.epsilon_threshold {
            if epsilon > t {
                let w = format!("epsilon = {epsilon} exceeds the configured threshold {t}");
                log::warn!("{w}");
                s.warnings.push(w);
            }
        }
        if let Some(sigma) = self.sigma_override {
            s = s.with_sigma(sigma)?;
        }
        Ok(s)
    }
}
