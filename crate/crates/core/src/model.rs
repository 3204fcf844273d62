//! Fitted CATE models behind one prediction interface.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Design, TransformedDataset};
use crate::dgp::Dgp;
use crate::error::{Error, Result};
use crate::linear::{fit_linear, LinearFitConfig, LinearFitResult};
use crate::neural::{
    predict_mlp, train_direct_policy, train_surrogate_mlp, DirectPolicyConfig, MlpConfig, MlpModel,
};
use crate::surrogate::SurrogateSpec;

/// Monetary-scale scores for raw covariate rows. A row is treated when its
/// score is at least the cost.
pub trait CatePredictor: Send + Sync {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;

    /// Whether scores are effect estimates (and so have an MSE).
    fn is_cate(&self) -> bool {
        true
    }
}

/// A fitted linear surrogate model together with its feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModel {
    pub design: Design,
    pub spec: SurrogateSpec,
    /// Loss-scale coefficients on the expanded design.
    pub theta: Vec<f64>,
}

impl LinearModel {
    pub fn from_fit(design: Design, fit: &LinearFitResult) -> Self {
        Self {
            design,
            spec: fit.spec,
            theta: fit.theta.clone(),
        }
    }
}

impl CatePredictor for LinearModel {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let z = self.design.expand(x);
        if z.ncols() != self.theta.len() {
            return Err(Error::Dimension {
                expected: self.theta.len(),
                got: z.ncols(),
            });
        }
        Ok(crate::linear::scores(&z, &self.theta)
            .into_iter()
            .map(|s| self.spec.to_external(s))
            .collect())
    }
}

impl CatePredictor for MlpModel {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(predict_mlp(self, x)?.values)
    }

    fn is_cate(&self) -> bool {
        MlpModel::is_cate(self)
    }
}

/// The same score for every row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantModel {
    pub value: f64,
    pub is_cate: bool,
}

impl CatePredictor for ConstantModel {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(vec![self.value; x.nrows()])
    }

    fn is_cate(&self) -> bool {
        self.is_cate
    }
}

/// The data-generating process's own effect function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleModel {
    pub dgp: Dgp,
}

impl CatePredictor for OracleModel {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let expected = match self.dgp {
            Dgp::Simple(_) => 1,
            Dgp::Complex(_) => crate::dgp::ComplexDgp::DIM,
        };
        if x.ncols() != expected {
            return Err(Error::Dimension {
                expected,
                got: x.ncols(),
            });
        }
        let mut row = vec![0.0; expected];
        Ok((0..x.nrows())
            .map(|i| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = x[(i, j)];
                }
                self.dgp.tau(&row)
            })
            .collect())
    }
}

/// Any model, in the form written to and read from model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedModel {
    Linear(LinearModel),
    Mlp(Box<MlpModel>),
    Constant(ConstantModel),
    Oracle(OracleModel),
}

impl SavedModel {
    pub fn predictor(&self) -> &dyn CatePredictor {
        match self {
            SavedModel::Linear(m) => m,
            SavedModel::Mlp(m) => m.as_ref(),
            SavedModel::Constant(m) => m,
            SavedModel::Oracle(m) => m,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fits a model on transformed outcomes with raw covariates.
pub trait Fitter: Sync {
    fn fit(&self, td: &TransformedDataset, spec: &SurrogateSpec) -> Result<Box<dyn CatePredictor>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFitter {
    pub design: Design,
    /// Template; its spec is replaced by the one passed to `fit`.
    pub config: LinearFitConfig,
}

impl LinearFitter {
    pub fn new(design: Design) -> Self {
        Self {
            design,
            config: LinearFitConfig::new(SurrogateSpec::mse_limit(0.0).expect("finite cost")),
        }
    }

    pub fn fit_result(
        &self,
        td: &TransformedDataset,
        spec: &SurrogateSpec,
    ) -> Result<LinearFitResult> {
        let expanded = td.with_x(self.design.expand(td.x()))?;
        let cfg = LinearFitConfig {
            spec: *spec,
            intercept: self.design.has_intercept(),
            ..self.config
        };
        fit_linear(&expanded, &cfg)
    }

    pub fn fit_model(&self, td: &TransformedDataset, spec: &SurrogateSpec) -> Result<LinearModel> {
        Ok(LinearModel::from_fit(
            self.design,
            &self.fit_result(td, spec)?,
        ))
    }
}

impl Fitter for LinearFitter {
    fn fit(&self, td: &TransformedDataset, spec: &SurrogateSpec) -> Result<Box<dyn CatePredictor>> {
        Ok(Box::new(self.fit_model(td, spec)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpFitter {
    pub config: MlpConfig,
}

impl Fitter for MlpFitter {
    fn fit(&self, td: &TransformedDataset, spec: &SurrogateSpec) -> Result<Box<dyn CatePredictor>> {
        Ok(Box::new(train_surrogate_mlp(td, spec, &self.config)?))
    }
}

/// Ignores the surrogate scale: trains the smoothed-policy network at the
/// spec's cost.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectPolicyFitter {
    pub config: DirectPolicyConfig,
}

impl Fitter for DirectPolicyFitter {
    fn fit(&self, td: &TransformedDataset, spec: &SurrogateSpec) -> Result<Box<dyn CatePredictor>> {
        Ok(Box::new(train_direct_policy(
            td,
            spec.cost(),
            &self.config,
        )?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::transform_outcomes;
    use crate::dgp::{ComplexDgp, SimpleDgp};
    use crate::linear::predict_cate;

    #[test]
    fn linear_model_matches_fit_predictions() {
        let s = SimpleDgp::default().generate(500, 1).unwrap();
        let td = transform_outcomes(&s.dataset).unwrap();
        let spec = SurrogateSpec::normal(1.0, 0.5).unwrap();
        let f = LinearFitter::new(Design::Quadratic);
        let fit = f.fit_result(&td, &spec).unwrap();
        let model = f.fit_model(&td, &spec).unwrap();
        let direct = predict_cate(&fit, &Design::Quadratic.expand(s.x())).unwrap();
        assert_eq!(model.predict(s.x()).unwrap(), direct);
        assert!(model.predict(&DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn oracle_and_constant_models() {
        let s = ComplexDgp::default().generate(50, 1).unwrap();
        let oracle = OracleModel {
            dgp: Dgp::Complex(ComplexDgp::default()),
        };
        assert_eq!(oracle.predict(s.x()).unwrap(), s.tau_true);
        assert!(oracle.predict(&DMatrix::zeros(2, 1)).is_err());
        let k = ConstantModel {
            value: 0.0,
            is_cate: false,
        };
        assert_eq!(k.predict(s.x()).unwrap(), vec![0.0; 50]);
        assert!(!k.is_cate());
    }

    #[test]
    fn saved_models_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = SavedModel::Linear(LinearModel {
            design: Design::Linear,
            spec: SurrogateSpec::normal(1.0, 2.0).unwrap(),
            theta: vec![0.25, -1.5],
        });
        m.save(&path).unwrap();
        assert_eq!(SavedModel::load(&path).unwrap(), m);
        let o = SavedModel::Oracle(OracleModel {
            dgp: Dgp::Simple(SimpleDgp::default()),
        });
        o.save(&path).unwrap();
        assert_eq!(SavedModel::load(&path).unwrap(), o);
        std::fs::write(
            &path,
            r#"{"kind":"linear","design":"linear","spec":{},"theta":[],"extra":1}"#,
        )
        .unwrap();
        assert!(SavedModel::load(&path).is_err());
    }
}
