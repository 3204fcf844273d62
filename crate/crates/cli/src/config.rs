//! The JSON experiment configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use policy_cate::data::Design;
use policy_cate::dgp::{ComplexDgp, Dgp, SimpleDgp};
use policy_cate::error::{Error, Result};
use policy_cate::experiment::Table2Config;
use policy_cate::neural::{DirectPolicyConfig, MlpConfig};
use policy_cate::selection::{Sigma, SigmaGrid};
use policy_cate::surrogate::Family;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpName {
    #[default]
    Simple,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpSection {
    pub name: DgpName,
    pub noise_sd: f64,
    pub cost: f64,
    pub variance_convention: bool,
    /// Rows per simulated training set.
    pub n: usize,
    /// Replication `r` uses `seed + r`.
    pub seed: u64,
    pub replications: usize,
}

impl Default for DgpSection {
    fn default() -> Self {
        Self {
            name: DgpName::Simple,
            noise_sd: 0.1,
            cost: 1.0,
            variance_convention: false,
            n: 1000,
            seed: 1,
            replications: 1,
        }
    }
}

impl DgpSection {
    pub fn dgp(&self) -> Dgp {
        match self.name {
            DgpName::Simple => Dgp::Simple(SimpleDgp {
                noise_sd: self.noise_sd,
                cost: self.cost,
                variance_convention: self.variance_convention,
            }),
            DgpName::Complex => Dgp::Complex(ComplexDgp {
                noise_sd: self.noise_sd,
                cost: self.cost,
                variance_convention: self.variance_convention,
            }),
        }
    }

    pub fn replication_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Linear,
    Mlp,
    DirectPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub family: Family,
    pub sigma: Sigma,
    pub grid: SigmaGrid,
    pub design: Design,
    pub l1_penalty: f64,
    pub folds: usize,
    pub mlp: MlpConfig,
    /// Direct-policy smoothing temperature.
    pub temperature: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Linear,
            family: Family::Normal,
            sigma: Sigma::Finite(1.0),
            grid: SigmaGrid::default(),
            design: Design::Linear,
            l1_penalty: 0.0,
            folds: 5,
            mlp: MlpConfig::default(),
            temperature: DirectPolicyConfig::default().temperature,
        }
    }
}

impl ModelSection {
    pub fn policy_config(&self) -> DirectPolicyConfig {
        DirectPolicyConfig {
            mlp: self.mlp.clone(),
            temperature: self.temperature,
            ..DirectPolicyConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Size of the oracle-labeled evaluation sample.
    pub n_eval: usize,
    pub seed: u64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            n_eval: 100_000,
            seed: 1_000_003,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dgp: DgpSection,
    pub model: ModelSection,
    pub evaluation: EvaluationSection,
    pub output: OutputSection,
    pub table2: Table2Config,
}

impl ExperimentConfig {
    /// Parses a config document. Errors carry the line and column of the
    /// offending token.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{source}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dgp;
        if d.n == 0 {
            return Err(Error::Config("dgp.n must be positive".into()));
        }
        if d.replications == 0 {
            return Err(Error::Config("dgp.replications must be positive".into()));
        }
        d.dgp().validate()?;
        let m = &self.model;
        if m.folds < 2 {
            return Err(Error::Config(format!(
                "model.folds must be at least 2, got {}",
                m.folds
            )));
        }
        if !(m.l1_penalty >= 0.0 && m.l1_penalty.is_finite()) {
            return Err(Error::Config(format!(
                "model.l1_penalty must be finite and nonnegative, got {}",
                m.l1_penalty
            )));
        }
        if m.family == Family::Uniform {
            return Err(Error::Config(
                "model.family must be normal or logistic; use sigma = \"inf\" for the MSE limit"
                    .into(),
            ));
        }
        m.mlp.validate()?;
        m.policy_config().validate()?;
        if self.evaluation.n_eval < 2 {
            return Err(Error::Config("evaluation.n_eval must be at least 2".into()));
        }
        self.table2.validate()
    }
}
