//! Scenario configuration files (JSON), validated before any computation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::collision::{CLaw, CollisionModel, ModelSpec};
use crate::engine::Caps;
use crate::error::{Error, Result};
use crate::initial::InitialCondition;
use crate::spine::TestFn;

fn default_ic() -> InitialCondition<f64> {
    InitialCondition::Point { r: 0.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSpec<f64>,
    /// Model supplying predicted constants in limit checks; defaults to `model`.
    #[serde(default)]
    pub oracle: Option<ModelSpec<f64>>,
    #[serde(default = "default_ic")]
    pub ic: InitialCondition<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub simulate: SimulateParams,
    #[serde(default)]
    pub solve: SolveParams,
    #[serde(default)]
    pub many_to_one: ManyToOneParams,
    #[serde(default)]
    pub martingale: MartingaleParams,
    #[serde(default)]
    pub fixpoint: FixpointParams,
    #[serde(default)]
    pub limit: LimitParams,
    #[serde(default)]
    pub crosscheck: CrosscheckParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub n: usize,
    pub checkpoints: Vec<f64>,
    pub gammas: Vec<f64>,
    pub max_alive: usize,
    pub max_events: usize,
    /// Also write the per-replicate columnar dump.
    pub binary: bool,
}

impl Default for SimulateParams {
    fn default() -> Self {
        let caps = Caps::default();
        Self {
            n: 1000,
            checkpoints: vec![1.0],
            gammas: vec![1.0],
            max_alive: caps.max_alive,
            max_events: caps.max_events,
            binary: false,
        }
    }
}

impl SimulateParams {
    pub fn caps(&self) -> Caps {
        Caps { max_alive: self.max_alive, max_events: self.max_events }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveParams {
    pub t_end: f64,
    pub dt: f64,
    pub xi_max: f64,
    pub n_points: usize,
    pub panel: usize,
    pub checkpoints: Vec<f64>,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self { t_end: 1.0, dt: 0.02, xi_max: 20.0, n_points: 2001, panel: 10_000, checkpoints: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManyToOneParams {
    pub t: f64,
    pub n_trees: usize,
    pub n_paths: usize,
    pub g: Vec<TestFn>,
    /// Tilt; each test function's own `gamma` when absent.
    pub alpha: Option<f64>,
}

impl Default for ManyToOneParams {
    fn default() -> Self {
        Self {
            t: 1.0,
            n_trees: 10_000,
            n_paths: 100_000,
            g: vec![
                TestFn::One,
                TestFn::ExpGamma { gamma: 1.0 },
                TestFn::VExpGamma { gamma: 1.0 },
                TestFn::ExpGammaAbsMarkP { gamma: 1.0, p: 1.5 },
            ],
            alpha: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MartingaleParams {
    pub n: usize,
    pub checkpoints: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for MartingaleParams {
    fn default() -> Self {
        Self { n: 2000, checkpoints: vec![1.0, 2.0, 4.0, 6.0, 8.0], gammas: vec![1.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixpointParams {
    pub n: usize,
    pub horizon: f64,
    pub band: f64,
}

impl Default for FixpointParams {
    fn default() -> Self {
        Self { n: 10_000, horizon: 8.0, band: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitParams {
    pub n: usize,
    pub t_grid: Vec<f64>,
    /// Stability index for the fixed-point, regime E and `W_t` case C checks.
    pub gamma: Option<f64>,
    pub xi_cap: f64,
    pub band: f64,
    pub ks_band: f64,
}

impl Default for LimitParams {
    fn default() -> Self {
        Self { n: 10_000, t_grid: vec![8.0], gamma: None, xi_cap: 3.0, band: 0.05, ks_band: 0.03 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrosscheckParams {
    pub t: f64,
    pub n: usize,
    pub panel: usize,
    pub dt: f64,
    pub xi_max: f64,
    pub n_points: usize,
    pub band: f64,
}

impl Default for CrosscheckParams {
    fn default() -> Self {
        Self { t: 1.0, n: 100_000, panel: 10_000, dt: 0.02, xi_max: 20.0, n_points: 2001, band: 0.02 }
    }
}

const MODEL_KEYS: [&str; 3] = ["family", "params", "c"];

/// Flattened model blocks cannot reject unknown keys through serde, so they are checked here.
fn check_model_keys(v: &Value, name: &str) -> Result<()> {
    if let Some(obj) = v.get(name).and_then(Value::as_object) {
        if let Some(k) = obj.keys().find(|k| !MODEL_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key `{k}` in `{name}`")));
        }
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        check_model_keys(&raw, "model")?;
        check_model_keys(&raw, "oracle")?;
        let cfg: Self = serde_json::from_value(raw).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Builds both models and checks the initial law.
    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.oracle()?;
        self.ic.validate()?;
        if self.simulate.n == 0 || self.martingale.n == 0 || self.fixpoint.n == 0 || self.limit.n == 0 {
            return Err(Error::Config("ensemble sizes must be positive".into()));
        }
        if self.limit.t_grid.is_empty() {
            return Err(Error::Config("limit.t_grid is empty".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<CollisionModel<f64>> {
        CollisionModel::new(self.model.clone())
    }

    pub fn oracle(&self) -> Result<CollisionModel<f64>> {
        CollisionModel::new(self.oracle.clone().unwrap_or_else(|| self.model.clone()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn example() -> Self {
        Self {
            model: ModelSpec::new(crate::collision::Family::Diag { n: 2, a: 0.9 }, CLaw::constant(1.0)),
            oracle: None,
            ic: default_ic(),
            seed: 42,
            out: None,
            simulate: SimulateParams::default(),
            solve: SolveParams::default(),
            many_to_one: ManyToOneParams::default(),
            martingale: MartingaleParams::default(),
            fixpoint: FixpointParams::default(),
            limit: LimitParams::default(),
            crosscheck: CrosscheckParams::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"model": {"family": "diag", "params": {"n": 2, "a": 0.9}, "c": {"law": "constant", "value": 1.0}}}"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.ic, InitialCondition::Point { r: 0.0 });
        assert_eq!(c.solve.n_points, 2001);
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let top = MINIMAL.replacen('{', r#"{"sed": 3, "#, 1);
        assert!(matches!(ScenarioConfig::from_json(&top), Err(Error::Config(_))));
        let nested = MINIMAL.replace(r#""c":"#, r#""extra": 1, "c":"#);
        assert!(matches!(ScenarioConfig::from_json(&nested), Err(Error::Config(_))));
        let params = MINIMAL.replacen('}', r#"}, "solve": {"dtt": 0.1}"#, 3);
        assert!(ScenarioConfig::from_json(&params).is_err());
    }

    #[test]
    fn invalid_models_fail_validation() {
        let bad = MINIMAL.replace("0.9", "-0.9");
        assert!(ScenarioConfig::from_json(&bad).is_err());
    }

    #[test]
    fn round_trip_and_hash() {
        let c = ScenarioConfig::example();
        let text = serde_json::to_string(&c).unwrap();
        let back = ScenarioConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
        let mut d = c.clone();
        d.seed += 1;
        assert_ne!(d.hash(), c.hash());
    }
}
