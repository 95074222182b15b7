//! Run configuration: JSON file merged under command-line flags, plus experiment lookup.
use std::path::Path;

use ampc_core::checks::IssConfig;
use ampc_core::data::SamplingPlan;
use ampc_core::nn::TrainConfig;
use ampc_core::presets;
use ampc_core::scmpc::{ProblemSpec, ScmpcProblem, SolverConfig};
use ampc_core::simulate::{ConsistencyConfig, SuiteConfig};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::io::read_json;
use crate::manifest::sha256_hex;

/// Every field is optional; unset fields fall back to the experiment preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    /// Sample count of the scalar experiment's uniform plan.
    pub n: Option<usize>,
    /// Sampling interval of the scalar experiment.
    pub interval: Option<[f64; 2]>,
    /// Overrides the experiment's sampling plan.
    pub plan: Option<SamplingPlan>,
    pub solver: Option<SolverConfig>,
    pub value_train: Option<TrainConfig>,
    pub policy_train: Option<TrainConfig>,
    pub value_arch: Option<Vec<usize>>,
    pub policy_arch: Option<Vec<usize>>,
    pub suite: Option<SuiteConfig>,
    pub consistency: Option<ConsistencyConfig>,
    pub iss: Option<IssConfig>,
    /// Input grid size of `pi*`.
    pub grid_points: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => read_json(p).with_context(|| format!("reading config {}", p.display())),
            None => Ok(Self::default()),
        }
    }
}

/// A resolved experiment: preset tag or a problem description file.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub tag: String,
    pub problem: ScmpcProblem,
    pub spec: ProblemSpec,
}

impl Experiment {
    pub fn resolve(tag: &str) -> Result<Self> {
        let (tag, problem) = match presets::problem_by_name(tag) {
            Some(p) => (tag.to_string(), p),
            None => {
                let path = Path::new(tag);
                if !path.exists() {
                    bail!("unknown experiment {tag:?}: expected quad1d, unicycle or a problem file");
                }
                let spec: ProblemSpec = read_json(path)?;
                ("custom".to_string(), spec.to_problem()?)
            }
        };
        let spec = ProblemSpec::from_problem(&problem);
        Ok(Self { tag, problem, spec })
    }

    /// Rebuilds an experiment recorded in a manifest.
    pub fn from_manifest(tag: &str, spec: &serde_json::Value) -> Result<Self> {
        let spec: ProblemSpec = serde_json::from_value(spec.clone()).context("problem description in manifest")?;
        let problem = spec.to_problem()?;
        Ok(Self { tag: tag.into(), problem, spec })
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(&self.spec).expect("problem serializes").as_bytes())
    }

    pub fn is_quad1d(&self) -> bool {
        self.tag == "quad1d"
    }

    pub fn plan(&self, cfg: &RunConfig) -> Result<SamplingPlan> {
        if let Some(p) = &cfg.plan {
            return Ok(p.clone());
        }
        match self.tag.as_str() {
            "quad1d" => {
                let [a, b] = cfg.interval.unwrap_or([-1.0, 1.0]);
                Ok(presets::quad1d_plan(cfg.n.unwrap_or(10_000), a, b))
            }
            "unicycle" => Ok(presets::unicycle_plan()),
            _ => bail!("custom experiments need a sampling plan in the config file"),
        }
    }

    pub fn solver(&self, cfg: &RunConfig) -> SolverConfig {
        cfg.solver.clone().unwrap_or_else(|| presets::solver_config_by_name(&self.tag))
    }

    fn default_arch(&self, n_out: usize) -> Vec<usize> {
        vec![self.problem.model.n_x(), 128, 128, 128, n_out]
    }

    pub fn value_arch(&self, cfg: &RunConfig) -> Vec<usize> {
        cfg.value_arch.clone().unwrap_or_else(|| self.default_arch(1))
    }

    pub fn policy_arch(&self, cfg: &RunConfig) -> Vec<usize> {
        cfg.policy_arch.clone().unwrap_or_else(|| {
            if self.is_quad1d() {
                presets::quad1d_policy_arch()
            } else {
                self.default_arch(self.problem.model.n_u())
            }
        })
    }

    fn default_train(&self) -> TrainConfig {
        if self.is_quad1d() {
            presets::quad1d_train_config()
        } else {
            presets::unicycle_train_config()
        }
    }

    pub fn value_train(&self, cfg: &RunConfig) -> TrainConfig {
        cfg.value_train.clone().unwrap_or_else(|| self.default_train())
    }

    pub fn policy_train(&self, cfg: &RunConfig) -> TrainConfig {
        cfg.policy_train.clone().unwrap_or_else(|| self.default_train())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_with_stable_hashes() {
        let a = Experiment::resolve("unicycle").unwrap();
        let b = Experiment::resolve("unicycle").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), Experiment::resolve("quad1d").unwrap().hash());
        assert!(Experiment::resolve("pendulum").is_err());
        let json = serde_json::to_value(&a.spec).unwrap();
        assert_eq!(Experiment::from_manifest("unicycle", &json).unwrap().hash(), a.hash());
    }

    #[test]
    fn custom_problem_file() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("p.json");
        let mut spec = ProblemSpec::from_problem(&presets::unicycle_problem());
        spec.horizon = 5;
        std::fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
        let e = Experiment::resolve(path.to_str().unwrap()).unwrap();
        assert_eq!((e.tag.as_str(), e.problem.horizon), ("custom", 5));
        assert!(e.plan(&RunConfig::default()).is_err());
    }

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seeed": 3}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"seed": 3, "solver": {"restarts": 4}}"#).unwrap();
        assert_eq!(c.solver.unwrap().restarts, 4);
    }
}
