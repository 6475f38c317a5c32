//! Run configuration, read from JSON. Missing keys take their defaults,
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::affinity::AffinityParams;
use crate::error::{Error, Result};
use crate::losses::{Alpha, MarginParams};
use crate::solver::{SolverConfig, SolverMode};
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iters: usize,
    pub tol: f64,
    pub mode: SolverMode,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self { max_iters: d.max_iters, tol: d.tol, mode: d.mode }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub epsilon: f64,
    pub delta: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub m1: f64,
    pub m2: f64,
    pub gamma: f64,
    #[serde(serialize_with = "alpha_out", deserialize_with = "alpha_in")]
    pub alpha: Alpha,
    pub iou_min: f64,
    pub solver: SolverSettings,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            delta: 0.5,
            m: 0.5,
            m1: 0.5,
            m2: 0.4,
            gamma: 2.0,
            alpha: Alpha::Auto,
            iou_min: 0.3,
            solver: SolverSettings::default(),
            seed: 0,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AlphaRepr {
    Fixed(f64),
    Named(String),
}

fn alpha_out<S: Serializer>(a: &Alpha, s: S) -> std::result::Result<S::Ok, S::Error> {
    match *a {
        Alpha::Fixed(v) => AlphaRepr::Fixed(v),
        Alpha::Auto => AlphaRepr::Named("auto".into()),
    }
    .serialize(s)
}

fn alpha_in<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Alpha, D::Error> {
    match AlphaRepr::deserialize(d)? {
        AlphaRepr::Fixed(v) => Ok(Alpha::Fixed(v)),
        AlphaRepr::Named(s) if s == "auto" => Ok(Alpha::Auto),
        AlphaRepr::Named(s) => Err(serde::de::Error::custom(format!("alpha must be \"auto\" or a number, got {s:?}"))),
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Config = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.m1 >= 0.0) || !(self.m2 >= 0.0) || !(self.gamma >= 0.0) {
            return bad("m1, m2 and gamma must be non-negative".into());
        }
        if let Alpha::Fixed(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("alpha must lie in [0, 1], got {a}"));
            }
        }
        if !(0.0..=1.0).contains(&self.iou_min) {
            return bad(format!("iou_min must lie in [0, 1], got {}", self.iou_min));
        }
        self.solver_config().validate()
    }

    pub fn affinity(&self) -> AffinityParams {
        AffinityParams { epsilon: self.epsilon, delta: self.delta }
    }

    pub fn margins(&self) -> MarginParams {
        MarginParams { m: self.m, m1: self.m1, m2: self.m2 }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig { m: self.m, max_iters: self.solver.max_iters, tol: self.solver.tol, mode: self.solver.mode }
    }

    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            affinity: self.affinity(),
            solver: self.solver_config(),
            iou_min: self.iou_min,
            ..TrackerConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(Config::from_json("{}").unwrap(), Config::default());
    }

    #[test]
    fn partial_override() {
        let c = Config::from_json(r#"{"M": 0.6, "alpha": 0.25, "solver": {"mode": "pseudo-only"}}"#).unwrap();
        assert_eq!(c.m, 0.6);
        assert_eq!(c.alpha, Alpha::Fixed(0.25));
        assert_eq!(c.solver.mode, SolverMode::PseudoOnly);
        assert_eq!(c.solver.max_iters, 10);
        assert_eq!(c.m2, 0.4);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(Config::from_json(r#"{"epsilon": 0.1, "bogus": 1}"#).is_err());
        assert!(Config::from_json(r#"{"solver": {"bogus": 1}}"#).is_err());
    }

    #[test]
    fn bad_alpha_rejected() {
        assert!(Config::from_json(r#"{"alpha": "sometimes"}"#).is_err());
        assert!(Config::from_json(r#"{"alpha": 2.0}"#).is_err());
    }

    #[test]
    fn round_trip() {
        let c = Config { alpha: Alpha::Fixed(0.3), seed: 9, ..Config::default() };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(Config::from_json(&text).unwrap(), c);
        let d = serde_json::to_string(&Config::default()).unwrap();
        assert!(d.contains("\"alpha\":\"auto\""));
    }

    #[test]
    fn tracker_config_carries_settings() {
        let c = Config::from_json(r#"{"iou_min": 0.4, "epsilon": 0.2}"#).unwrap();
        let t = c.tracker();
        assert_eq!(t.iou_min, 0.4);
        assert_eq!(t.affinity.epsilon, 0.2);
        assert_eq!(t.ema, 0.9);
    }
}
