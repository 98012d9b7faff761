use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::combiners::{CombinerConfig, Method, MuMode, ObjectiveVariant, ThresholdMode};
use crate::error::{Error, Result};
use crate::runner::{OptimizerConfig, OptimizerKind};
use crate::solvers::SolverConfig;
use crate::toybench::{ToyPoint, ToyWeighting};

/// Everything a toy run needs, as one flat JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub c: f64,
    pub mu_mode: MuMode,
    pub objective_variant: ObjectiveVariant,
    pub r_threshold: f64,
    pub sim_threshold: f64,
    pub adaptive_inner: Method,
    pub adaptive_mode: ThresholdMode,
    pub update_every: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub steps: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub damping: f64,
    pub weights: [f64; 2],
    pub init: [f64; 2],
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let comb = CombinerConfig::default();
        let opt = OptimizerConfig::default();
        let solver = SolverConfig::default();
        Self {
            method: Method::Imgrad,
            c: comb.c,
            mu_mode: comb.mu_mode,
            objective_variant: comb.objective_variant,
            r_threshold: comb.r_threshold,
            sim_threshold: comb.sim_threshold,
            adaptive_inner: comb.adaptive_inner,
            adaptive_mode: comb.adaptive_mode,
            update_every: comb.update_every,
            optimizer: opt.kind,
            lr: opt.lr,
            steps: opt.steps,
            tol: solver.tol,
            max_iters: solver.max_iters,
            damping: solver.damping,
            weights: [0.5, 0.5],
            init: [-8.5, 7.5],
            seed: comb.seed,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn combiner(&self) -> CombinerConfig {
        CombinerConfig {
            c: self.c,
            mu_mode: self.mu_mode,
            objective_variant: self.objective_variant,
            r_threshold: self.r_threshold,
            sim_threshold: self.sim_threshold,
            update_every: self.update_every,
            seed: self.seed,
            adaptive_inner: self.adaptive_inner,
            adaptive_mode: self.adaptive_mode,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig { kind: self.optimizer, lr: self.lr, steps: self.steps, ..Default::default() }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig { tol: self.tol, max_iters: self.max_iters, damping: self.damping }
    }

    pub fn weighting(&self) -> Result<ToyWeighting> {
        ToyWeighting::new(self.weights[0], self.weights[1])
    }

    pub fn init_point(&self) -> Result<ToyPoint> {
        ToyPoint::new(self.init[0], self.init[1])
    }

    pub fn validate(&self) -> Result<()> {
        self.combiner().validate()?;
        self.optimizer_config().validate()?;
        self.solver().validate()?;
        self.weighting()?;
        self.init_point()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = RunConfig {
            method: Method::ImgradNash,
            weights: [0.9, 0.1],
            init: [10.0, -8.0],
            steps: 123,
            output: Some("t.csv".into()),
            ..Default::default()
        };
        let echo = cfg.to_json();
        assert_eq!(RunConfig::from_json(&echo).unwrap(), cfg);
        assert_eq!(RunConfig::from_json(&RunConfig::from_json(&echo).unwrap().to_json()).unwrap(), cfg);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"method": "pcgrad", "mu_mode": "LM"}"#).unwrap();
        assert_eq!(cfg.method, Method::Pcgrad);
        assert_eq!(cfg.mu_mode, MuMode::Lm);
        assert_eq!(cfg.steps, 50_000);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_json(r#"{"methd": "ls"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"c": 1.5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"weights": [0.5, 0.6]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"lr": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"update_every": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"method": "sgd"}"#).is_err());
    }
}
