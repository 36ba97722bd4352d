//! Experiment configuration in a flat `key = value` text format.
//!
//! Blank lines and `#` comments are ignored, unknown or repeated keys are
//! errors, and missing keys take their defaults. Floats are written in
//! shortest round-trip form, so `parse(to_text(c)) == c` exactly.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::sampler::{MixError, Ratio, StrategyMix};
use crate::world::{CourseKind, OracleConfig, WorldError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {message}")]
    Value { line: usize, key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub course: CourseKind,
    /// Number of poses.
    pub length: usize,
    pub sigma_xy: f64,
    pub sigma_theta: f64,
    /// Retrieval candidates per time step.
    pub n_candidates: usize,
    pub window: usize,
    /// Verification rounds per time step.
    pub verifications_per_step: usize,
    /// Consistency distance in metres.
    pub consistency_threshold: f64,
    pub triviality_cutoff: f64,
    pub revisit_radius: f64,
    pub p_true_accept: f64,
    pub p_false_accept: f64,
    pub score_noise_sigma: f64,
    /// `US:NS:TS`.
    pub constraint_mix: Ratio,
    /// `US:DF:BF`.
    pub hypothesis_mix: Ratio,
    /// Oracle threshold used while sampling.
    pub threshold: f64,
    /// Thresholds of the PR sweep.
    pub thresholds: Vec<f64>,
    /// Loop-edge information relative to odometry.
    pub loop_information_scale: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Draws per hypothesis in the guided-vs-uniform trial.
    pub trial_rounds: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            course: CourseKind::CampusMultiLoop,
            length: 2000,
            sigma_xy: 0.02,
            sigma_theta: 0.005,
            n_candidates: 50,
            window: 10,
            verifications_per_step: 10,
            consistency_threshold: 10.0,
            triviality_cutoff: 100.0,
            revisit_radius: 10.0,
            p_true_accept: 0.8,
            p_false_accept: 0.1,
            score_noise_sigma: 0.05,
            constraint_mix: Ratio([1.0, 1.0, 2.0]),
            hypothesis_mix: Ratio([0.0, 0.0, 1.0]),
            threshold: 0.5,
            thresholds: vec![0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95],
            loop_information_scale: 10.0,
            max_iters: 50,
            tol: 1e-6,
            trial_rounds: 200,
            seed: 1,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Value {
        line,
        key: key.into(),
        message: e.to_string(),
    })
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 22] = [
        "course",
        "length",
        "sigma_xy",
        "sigma_theta",
        "n_candidates",
        "window",
        "verifications_per_step",
        "consistency_threshold",
        "triviality_cutoff",
        "revisit_radius",
        "p_true_accept",
        "p_false_accept",
        "score_noise_sigma",
        "constraint_mix",
        "hypothesis_mix",
        "threshold",
        "thresholds",
        "loop_information_scale",
        "max_iters",
        "tol",
        "trial_rounds",
        "seed",
    ];

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, v) = (key.trim(), value.trim());
            if !Self::KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line, key: key.into() });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey { line, key: key.into() });
            }
            match key {
                "course" => c.course = parse_value(line, key, v)?,
                "length" => c.length = parse_value(line, key, v)?,
                "sigma_xy" => c.sigma_xy = parse_value(line, key, v)?,
                "sigma_theta" => c.sigma_theta = parse_value(line, key, v)?,
                "n_candidates" => c.n_candidates = parse_value(line, key, v)?,
                "window" => c.window = parse_value(line, key, v)?,
                "verifications_per_step" => c.verifications_per_step = parse_value(line, key, v)?,
                "consistency_threshold" => c.consistency_threshold = parse_value(line, key, v)?,
                "triviality_cutoff" => c.triviality_cutoff = parse_value(line, key, v)?,
                "revisit_radius" => c.revisit_radius = parse_value(line, key, v)?,
                "p_true_accept" => c.p_true_accept = parse_value(line, key, v)?,
                "p_false_accept" => c.p_false_accept = parse_value(line, key, v)?,
                "score_noise_sigma" => c.score_noise_sigma = parse_value(line, key, v)?,
                "constraint_mix" => c.constraint_mix = parse_value(line, key, v)?,
                "hypothesis_mix" => c.hypothesis_mix = parse_value(line, key, v)?,
                "threshold" => c.threshold = parse_value(line, key, v)?,
                "thresholds" => {
                    c.thresholds = v
                        .split(',')
                        .map(|t| parse_value(line, key, t.trim()))
                        .collect::<Result<_, _>>()?
                }
                "loop_information_scale" => c.loop_information_scale = parse_value(line, key, v)?,
                "max_iters" => c.max_iters = parse_value(line, key, v)?,
                "tol" => c.tol = parse_value(line, key, v)?,
                "trial_rounds" => c.trial_rounds = parse_value(line, key, v)?,
                "seed" => c.seed = parse_value(line, key, v)?,
                _ => {}
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            writeln!(s, "{k} = {v}").expect("string write");
        };
        kv("course", self.course.to_string());
        kv("length", self.length.to_string());
        kv("sigma_xy", self.sigma_xy.to_string());
        kv("sigma_theta", self.sigma_theta.to_string());
        kv("n_candidates", self.n_candidates.to_string());
        kv("window", self.window.to_string());
        kv("verifications_per_step", self.verifications_per_step.to_string());
        kv("consistency_threshold", self.consistency_threshold.to_string());
        kv("triviality_cutoff", self.triviality_cutoff.to_string());
        kv("revisit_radius", self.revisit_radius.to_string());
        kv("p_true_accept", self.p_true_accept.to_string());
        kv("p_false_accept", self.p_false_accept.to_string());
        kv("score_noise_sigma", self.score_noise_sigma.to_string());
        kv("constraint_mix", self.constraint_mix.to_string());
        kv("hypothesis_mix", self.hypothesis_mix.to_string());
        kv("threshold", self.threshold.to_string());
        kv("thresholds", join(&self.thresholds));
        kv("loop_information_scale", self.loop_information_scale.to_string());
        kv("max_iters", self.max_iters.to_string());
        kv("tol", self.tol.to_string());
        kv("trial_rounds", self.trial_rounds.to_string());
        kv("seed", self.seed.to_string());
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.length < 10 {
            return bad("length must be at least 10");
        }
        if self.window == 0 {
            return bad("window must be positive");
        }
        let nonneg = [self.sigma_xy, self.sigma_theta, self.triviality_cutoff, self.tol];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("noise, cutoff and tol must be finite and non-negative");
        }
        let pos = [self.consistency_threshold, self.revisit_radius, self.loop_information_scale];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("distances and information scale must be positive");
        }
        if self.thresholds.is_empty() || self.thresholds.iter().chain([&self.threshold]).any(|t| !t.is_finite()) {
            return bad("thresholds must be a nonempty list of finite numbers");
        }
        self.oracle().validate()?;
        Ok(())
    }

    pub fn oracle(&self) -> OracleConfig {
        OracleConfig {
            p_true_accept: self.p_true_accept,
            p_false_accept: self.p_false_accept,
            score_noise_sigma: self.score_noise_sigma,
        }
    }

    pub fn mix(&self) -> StrategyMix {
        StrategyMix::from_ratios(&self.constraint_mix, &self.hypothesis_mix)
    }

    /// `constraint_mix@hypothesis_mix`, used to name sweep runs.
    pub fn mix_label(&self) -> String {
        format!("{}@{}", self.constraint_mix, self.hypothesis_mix)
    }
}
