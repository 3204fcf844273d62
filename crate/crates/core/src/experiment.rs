//! The complex-simulation method comparison.
//!
//! Each replication draws a training sample, fits every method on it and
//! scores the fits on one shared oracle evaluation sample. Replication `r`
//! trains on seed `seed + r`; the evaluation sample uses `eval_seed`.
//! Methods that do not learn from data (Mail, No Mail, Oracle) are scored
//! once.

use std::sync::{mpsc, Arc};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{transform_outcomes, Design, TransformedDataset};
use crate::dgp::{ComplexDgp, Dgp, LabeledSample};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model, summarize, EvalReport, TableRow};
use crate::model::{
    CatePredictor, ConstantModel, DirectPolicyFitter, Fitter, LinearFitter, MlpFitter, OracleModel,
};
use crate::neural::{DirectPolicyConfig, MlpConfig};
use crate::selection::{kfold_cv, Sigma, SigmaGrid};
use crate::surrogate::{Family, SurrogateSpec};

pub const TAG_MAIL: &str = "Mail";
pub const TAG_NO_MAIL: &str = "No Mail";
pub const TAG_OLS: &str = "OLS";
pub const TAG_LINEAR_MSE: &str = "Linear (MSE)";
pub const TAG_LINEAR_PROFIT: &str = "Linear (Profit)";
pub const TAG_NNET_MSE: &str = "NNet (MSE)";
pub const TAG_NNET_PROFIT: &str = "NNet (Profit)";
pub const TAG_POLICY_DNN: &str = "PolicyDNN";
pub const TAG_ORACLE: &str = "Oracle";

fn default_mlp_grid() -> SigmaGrid {
    SigmaGrid::new(vec![
        Sigma::Finite(0.25),
        Sigma::Finite(0.5),
        Sigma::Finite(1.0),
        Sigma::Finite(2.0),
        Sigma::Infinity,
    ])
    .expect("nonempty grid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Table2Config {
    pub dgp: ComplexDgp,
    pub n_train: usize,
    pub n_eval: usize,
    pub replications: usize,
    pub seed: u64,
    pub eval_seed: u64,
    pub family: Family,
    pub linear_grid: SigmaGrid,
    pub linear_folds: usize,
    pub mlp_grid: SigmaGrid,
    pub mlp_folds: usize,
    pub mlp: MlpConfig,
    pub policy: DirectPolicyConfig,
    /// Skip the three network rows.
    pub linear_only: bool,
}

impl Default for Table2Config {
    fn default() -> Self {
        Self {
            dgp: ComplexDgp::default(),
            n_train: 10_000,
            n_eval: 1_000_000,
            replications: 10,
            seed: 1,
            eval_seed: 1_000_003,
            family: Family::Normal,
            linear_grid: SigmaGrid::default(),
            linear_folds: 5,
            mlp_grid: default_mlp_grid(),
            mlp_folds: 2,
            mlp: MlpConfig::default(),
            policy: DirectPolicyConfig {
                temperature: 1.0,
                ..DirectPolicyConfig::default()
            },
            linear_only: false,
        }
    }
}

impl Table2Config {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.n_train == 0 || self.n_eval < 2 || self.replications == 0 {
            return Err(Error::Config(
                "n_train and replications must be positive and n_eval at least 2".into(),
            ));
        }
        if self.family == Family::Uniform {
            return Err(Error::Config(
                "the tuned family must be normal or logistic".into(),
            ));
        }
        self.mlp.validate()?;
        self.policy.validate()
    }
}

/// Scales chosen in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub replication: usize,
    pub linear_mse: Sigma,
    pub linear_profit: Sigma,
    pub nnet_mse: Option<Sigma>,
    pub nnet_profit: Option<Sigma>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Output {
    /// Per-replication reports, replication-major, fixed rows first.
    pub reports: Vec<EvalReport>,
    pub selections: Vec<Selection>,
    pub rows: Vec<TableRow>,
}

/// Mail, No Mail and Oracle on the evaluation sample.
pub fn fixed_rows(cfg: &Table2Config, eval: &LabeledSample) -> Result<Vec<EvalReport>> {
    let c = cfg.dgp.cost;
    let mail = ConstantModel {
        value: f64::INFINITY,
        is_cate: false,
    };
    let none = ConstantModel {
        value: f64::NEG_INFINITY,
        is_cate: false,
    };
    let oracle = OracleModel {
        dgp: Dgp::Complex(cfg.dgp),
    };
    Ok(vec![
        evaluate_model(TAG_MAIL, &mail, eval, c)?,
        evaluate_model(TAG_NO_MAIL, &none, eval, c)?,
        evaluate_model(TAG_ORACLE, &oracle, eval, c)?,
    ])
}

/// Fits every data-driven method on replication `r` and scores it.
pub fn run_replication(
    cfg: &Table2Config,
    r: usize,
    eval: &LabeledSample,
) -> Result<(Vec<EvalReport>, Selection)> {
    let c = cfg.dgp.cost;
    let seed = cfg.seed.wrapping_add(r as u64);
    let sample = cfg.dgp.generate(cfg.n_train, seed)?;
    let td = transform_outcomes(&sample.dataset)?;
    let mut reports = Vec::new();

    let linear = LinearFitter::new(Design::Linear);
    let ols = linear.fit(&td, &SurrogateSpec::mse_limit(c)?)?;
    reports.push(evaluate_model(TAG_OLS, ols.as_ref(), eval, c)?);

    let cv = kfold_cv(
        &td,
        &cfg.linear_grid,
        cfg.linear_folds,
        cfg.family,
        c,
        &linear,
        seed,
    )?;
    let (lin_mse, lin_profit) =
        fit_selected(&td, &linear, cfg.family, c, cv.sigma_mse, cv.sigma_profit)?;
    reports.push(evaluate_model(TAG_LINEAR_MSE, lin_mse.as_ref(), eval, c)?);
    reports.push(evaluate_model(
        TAG_LINEAR_PROFIT,
        lin_profit.as_ref(),
        eval,
        c,
    )?);

    let mut selection = Selection {
        replication: r,
        linear_mse: cv.sigma_mse,
        linear_profit: cv.sigma_profit,
        nnet_mse: None,
        nnet_profit: None,
    };

    if !cfg.linear_only {
        let mlp = MlpFitter {
            config: MlpConfig {
                seed,
                ..cfg.mlp.clone()
            },
        };
        let cv = kfold_cv(&td, &cfg.mlp_grid, cfg.mlp_folds, cfg.family, c, &mlp, seed)?;
        let (nn_mse, nn_profit) =
            fit_selected(&td, &mlp, cfg.family, c, cv.sigma_mse, cv.sigma_profit)?;
        reports.push(evaluate_model(TAG_NNET_MSE, nn_mse.as_ref(), eval, c)?);
        reports.push(evaluate_model(
            TAG_NNET_PROFIT,
            nn_profit.as_ref(),
            eval,
            c,
        )?);
        selection.nnet_mse = Some(cv.sigma_mse);
        selection.nnet_profit = Some(cv.sigma_profit);

        let mut policy_cfg = cfg.policy.clone();
        policy_cfg.mlp.seed = seed;
        let policy =
            DirectPolicyFitter { config: policy_cfg }.fit(&td, &SurrogateSpec::mse_limit(c)?)?;
        reports.push(evaluate_model(TAG_POLICY_DNN, policy.as_ref(), eval, c)?);
    }
    Ok((reports, selection))
}

type Shared = Arc<dyn CatePredictor>;

/// Final fits at the two selected scales, sharing one fit when they agree.
fn fit_selected(
    td: &TransformedDataset,
    fitter: &dyn Fitter,
    family: Family,
    c: f64,
    sigma_mse: Sigma,
    sigma_profit: Sigma,
) -> Result<(Shared, Shared)> {
    let a: Shared = fitter.fit(td, &sigma_mse.spec(family, c)?)?.into();
    if sigma_profit == sigma_mse {
        return Ok((a.clone(), a));
    }
    let b: Shared = fitter.fit(td, &sigma_profit.spec(family, c)?)?.into();
    Ok((a, b))
}

/// Runs all replications on the rayon pool. `on_replication` receives each
/// replication's reports in index order, as soon as every earlier
/// replication has also finished.
pub fn run_table2(
    cfg: &Table2Config,
    mut on_replication: impl FnMut(usize, &[EvalReport]) -> Result<()>,
) -> Result<Table2Output> {
    cfg.validate()?;
    let eval = cfg.dgp.generate(cfg.n_eval, cfg.eval_seed)?;
    let fixed = fixed_rows(cfg, &eval)?;
    let n_rep = cfg.replications;
    let mut reports = fixed;
    let mut selections = Vec::with_capacity(n_rep);
    let mut first_err = None;
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        let eval = &eval;
        scope.spawn(move || {
            (0..n_rep).into_par_iter().for_each_with(tx, |tx, r| {
                // The receiver outlives every sender.
                let _ = tx.send((r, run_replication(cfg, r, eval)));
            });
        });
        let mut slots: Vec<Option<Result<(Vec<EvalReport>, Selection)>>> =
            (0..n_rep).map(|_| None).collect();
        let mut next = 0;
        for (r, res) in rx {
            slots[r] = Some(res);
            while next < n_rep {
                let Some(res) = slots[next].take() else { break };
                next += 1;
                if first_err.is_some() {
                    continue;
                }
                match res.and_then(|(rep, sel)| {
                    on_replication(sel.replication, &rep).map(|_| (rep, sel))
                }) {
                    Ok((rep, sel)) => {
                        reports.extend(rep);
                        selections.push(sel);
                    }
                    Err(e) => first_err = Some(e),
                }
            }
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    let rows = order_rows(summarize(&reports));
    Ok(Table2Output {
        reports,
        selections,
        rows,
    })
}

/// Table order: uniform baselines, linear, networks, oracle.
fn order_rows(rows: Vec<TableRow>) -> Vec<TableRow> {
    let order = [
        TAG_MAIL,
        TAG_NO_MAIL,
        TAG_OLS,
        TAG_LINEAR_MSE,
        TAG_LINEAR_PROFIT,
        TAG_POLICY_DNN,
        TAG_NNET_MSE,
        TAG_NNET_PROFIT,
        TAG_ORACLE,
    ];
    let mut out: Vec<TableRow> = Vec::with_capacity(rows.len());
    for tag in order {
        if let Some(r) = rows.iter().find(|r| r.model_tag == tag) {
            out.push(r.clone());
        }
    }
    out
}
