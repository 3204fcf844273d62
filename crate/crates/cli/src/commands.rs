//! One function per subcommand. Each writes its files under `out` and
//! returns the paths it wrote, in order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use policy_cate::data::{
    load_dataset_csv, transform_outcomes, write_dataset_csv, TransformedDataset,
};
use policy_cate::dgp::LabeledSample;
use policy_cate::error::{Error, Result};
use policy_cate::evaluation::{
    evaluate_model, summarize, write_reports_csv, write_table_csv, EvalReport,
};
use policy_cate::experiment::{
    run_table2, Table2Config, TAG_MAIL, TAG_NO_MAIL, TAG_OLS, TAG_ORACLE,
};
use policy_cate::linear::LinearFitConfig;
use policy_cate::model::{
    ConstantModel, DirectPolicyFitter, Fitter, LinearFitter, LinearModel, MlpFitter, OracleModel,
    SavedModel,
};
use policy_cate::neural::{
    train_direct_policy, train_surrogate_mlp, write_training_log_csv, MlpModel,
};
use policy_cate::numfmt::fmt_sig;
use policy_cate::selection::{frontier_sweep, kfold_cv, write_frontier_csv, Sigma, SigmaGrid};
use policy_cate::surrogate::{write_curve_csv, Family, ScalarSurrogateProblem, SurrogateSpec};
use serde_json::json;

use crate::config::{ExperimentConfig, ModelKind};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_training(path: &Path) -> Result<TransformedDataset> {
    transform_outcomes(&load_dataset_csv(path)?.data)
}

fn eval_sample(cfg: &ExperimentConfig, offset: usize) -> Result<LabeledSample> {
    let seed = cfg.evaluation.seed.wrapping_add(offset as u64);
    cfg.dgp.dgp().generate(cfg.evaluation.n_eval, seed)
}

/// One dataset CSV per replication, named by replication and seed, plus a
/// manifest listing the seeds.
pub fn simulate(cfg: &ExperimentConfig, out: &Path, with_oracle: bool) -> Result<Vec<PathBuf>> {
    let dgp = cfg.dgp.dgp();
    let mut written = Vec::new();
    let mut manifest = Vec::new();
    for r in 0..cfg.dgp.replications {
        let seed = cfg.dgp.replication_seed(r);
        let sample = dgp.generate(cfg.dgp.n, seed)?;
        let path = out.join(format!("data_r{r}_seed{seed}.csv"));
        let tau = with_oracle.then_some(sample.tau_true.as_slice());
        write_with(&path, |w| write_dataset_csv(w, &sample.dataset, tau))?;
        manifest.push(json!({
            "replication": r,
            "seed": seed,
            "file": path.file_name().map(|f| f.to_string_lossy().into_owned()),
        }));
        written.push(path);
    }
    let path = out.join("simulate_manifest.json");
    write_json(
        &path,
        &json!({ "dgp": dgp, "n": cfg.dgp.n, "with_oracle": with_oracle, "datasets": manifest }),
    )?;
    written.push(path);
    Ok(written)
}

fn spec_for(cfg: &ExperimentConfig, cost: f64) -> Result<SurrogateSpec> {
    cfg.model.sigma.spec(cfg.model.family, cost)
}

fn linear_fitter(cfg: &ExperimentConfig) -> LinearFitter {
    let mut f = LinearFitter::new(cfg.model.design);
    f.config = LinearFitConfig {
        l1_penalty: cfg.model.l1_penalty,
        ..f.config
    };
    f
}

fn mlp_report(m: &MlpModel) -> serde_json::Value {
    json!({
        "kind": "mlp",
        "head": m.head,
        "layer_sizes": m.layer_sizes(),
        "n_params": m.n_params(),
        "epochs_run": m.training_log.len(),
        "best_epoch": m.best_epoch,
        "best_val_obj": m.training_log.iter().find(|e| e.epoch == m.best_epoch).map(|e| e.val_obj),
    })
}

/// Fits the configured model on a dataset CSV; writes `model.json`,
/// `fit_report.json` and, for networks, `training_log.csv`.
pub fn fit(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let td = load_training(data)?;
    let c = cfg.dgp.cost;
    let spec = spec_for(cfg, c)?;
    let model_path = out.join("model.json");
    let report_path = out.join("fit_report.json");
    let mut written = vec![model_path.clone(), report_path.clone()];
    let (saved, report) = match cfg.model.kind {
        ModelKind::Linear => {
            let fitter = linear_fitter(cfg);
            let fit = fitter.fit_result(&td, &spec)?;
            let report = json!({
                "kind": "linear",
                "design": cfg.model.design,
                "spec": fit.spec,
                "theta": fit.theta,
                "theta_external": fit.theta_external,
                "external_offset": fit.external_offset,
                "std_errors_external": fit.external_std_errors(),
                "std_errors": fit.covariance.as_ref().map(|c| c.std_errors.clone()),
                "iters": fit.iters,
                "converged": fit.converged,
                "final_gradient_norm": fit.final_gradient_norm,
                "objective": fit.objective_trace.last(),
                "n": td.len(),
            });
            (
                SavedModel::Linear(LinearModel::from_fit(cfg.model.design, &fit)),
                report,
            )
        }
        ModelKind::Mlp | ModelKind::DirectPolicy => {
            let m = if cfg.model.kind == ModelKind::Mlp {
                train_surrogate_mlp(&td, &spec, &cfg.model.mlp)?
            } else {
                train_direct_policy(&td, c, &cfg.model.policy_config())?
            };
            let log_path = out.join("training_log.csv");
            write_with(&log_path, |w| write_training_log_csv(w, &m.training_log))?;
            written.push(log_path);
            let report = mlp_report(&m);
            (SavedModel::Mlp(Box::new(m)), report)
        }
    };
    saved.save(&model_path)?;
    write_json(&report_path, &report)?;
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Oracle,
    Mail,
    NoMail,
    Ols,
}

pub enum EvalTarget<'a> {
    Model(&'a Path),
    Baseline(Baseline),
}

/// Scores a model or baseline on oracle evaluation draws. Fixed models are
/// rescored on a fresh evaluation draw per replication (`seed + r`); the
/// OLS baseline is refit on training replication `r` and scored on the
/// shared evaluation draw.
pub fn evaluate(
    cfg: &ExperimentConfig,
    target: EvalTarget<'_>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let c = cfg.dgp.cost;
    let reps = cfg.dgp.replications;
    let mut reports: Vec<EvalReport> = Vec::with_capacity(reps);
    match target {
        EvalTarget::Baseline(Baseline::Ols) => {
            let eval = eval_sample(cfg, 0)?;
            let fitter = LinearFitter::new(cfg.model.design);
            let spec = SurrogateSpec::mse_limit(c)?;
            for r in 0..reps {
                let train = cfg
                    .dgp
                    .dgp()
                    .generate(cfg.dgp.n, cfg.dgp.replication_seed(r))?;
                let model = fitter.fit(&transform_outcomes(&train.dataset)?, &spec)?;
                reports.push(evaluate_model(TAG_OLS, model.as_ref(), &eval, c)?);
            }
        }
        other => {
            let (tag, saved) = match other {
                EvalTarget::Model(path) => {
                    let tag = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    (tag, SavedModel::load(path)?)
                }
                EvalTarget::Baseline(Baseline::Oracle) => (
                    TAG_ORACLE.to_string(),
                    SavedModel::Oracle(OracleModel { dgp: cfg.dgp.dgp() }),
                ),
                EvalTarget::Baseline(Baseline::Mail) => (
                    TAG_MAIL.to_string(),
                    SavedModel::Constant(ConstantModel {
                        value: f64::INFINITY,
                        is_cate: false,
                    }),
                ),
                EvalTarget::Baseline(Baseline::NoMail) => (
                    TAG_NO_MAIL.to_string(),
                    SavedModel::Constant(ConstantModel {
                        value: f64::NEG_INFINITY,
                        is_cate: false,
                    }),
                ),
                EvalTarget::Baseline(Baseline::Ols) => unreachable!("handled above"),
            };
            for r in 0..reps {
                let eval = eval_sample(cfg, r)?;
                reports.push(evaluate_model(&tag, saved.predictor(), &eval, c)?);
            }
        }
    }
    let reports_path = out.join("evaluate_reports.csv");
    let table_path = out.join("evaluate_table.csv");
    write_with(&reports_path, |w| write_reports_csv(w, &reports))?;
    write_with(&table_path, |w| write_table_csv(w, &summarize(&reports)))?;
    Ok(vec![reports_path, table_path])
}

fn fitter_for(cfg: &ExperimentConfig) -> Box<dyn Fitter> {
    match cfg.model.kind {
        ModelKind::Linear => Box::new(linear_fitter(cfg)),
        ModelKind::Mlp => Box::new(MlpFitter {
            config: cfg.model.mlp.clone(),
        }),
        ModelKind::DirectPolicy => Box::new(DirectPolicyFitter {
            config: cfg.model.policy_config(),
        }),
    }
}

/// K-fold selection of σ; writes `cv.json` and the held-out `frontier.csv`.
/// With `truth`, also refits at every σ and writes `oracle_frontier.csv`
/// scored on an oracle evaluation draw.
pub fn cv(
    cfg: &ExperimentConfig,
    data: &Path,
    grid: &SigmaGrid,
    folds: usize,
    truth: bool,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let td = load_training(data)?;
    let c = cfg.dgp.cost;
    let fitter = fitter_for(cfg);
    let result = kfold_cv(
        &td,
        grid,
        folds,
        cfg.model.family,
        c,
        fitter.as_ref(),
        cfg.dgp.seed,
    )?;
    let json_path = out.join("cv.json");
    let frontier_path = out.join("frontier.csv");
    write_json(&json_path, &result)?;
    write_with(&frontier_path, |w| write_frontier_csv(w, &result.frontier))?;
    let mut written = vec![json_path, frontier_path];
    if truth {
        let eval = eval_sample(cfg, 0)?;
        let points = frontier_sweep(&td, grid, cfg.model.family, c, &eval, fitter.as_ref())?;
        let path = out.join("oracle_frontier.csv");
        write_with(&path, |w| write_frontier_csv(w, &points))?;
        written.push(path);
    }
    Ok(written)
}

/// An evenly spaced `lo:hi:step` grid, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

impl std::str::FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, step] = parts.as_slice() else {
            return Err(format!("expected lo:hi:step, got {s:?}"));
        };
        let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
        let g = GridSpec {
            lo: num(lo)?,
            hi: num(hi)?,
            step: num(step)?,
        };
        if !(g.lo.is_finite() && g.hi.is_finite() && g.lo < g.hi) {
            return Err(format!("grid needs finite lo < hi, got {s:?}"));
        }
        if !(g.step > 0.0) || (g.hi - g.lo) / g.step > 1e7 {
            return Err(format!(
                "grid step must be positive and give at most 1e7 points, got {s:?}"
            ));
        }
        Ok(g)
    }
}

/// Surrogate and stepwise objective curves, one CSV per σ.
pub fn curve(
    tau0: f64,
    cost: f64,
    family: Family,
    sigmas: &SigmaGrid,
    grid: &GridSpec,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    if !(tau0.is_finite() && cost.is_finite()) {
        return Err(Error::Config("tau0 and cost must be finite".into()));
    }
    if family == Family::Uniform {
        return Err(Error::Config(
            "curve family must be normal or logistic; use sigma inf for the MSE limit".into(),
        ));
    }
    let taus = grid.points();
    let mut written = Vec::new();
    for &sigma in sigmas.values() {
        let problem = ScalarSurrogateProblem::new(tau0, sigma.spec(family, cost)?);
        let path = out.join(format!("curve_sigma_{}.csv", sigma_label(sigma)));
        write_with(&path, |w| {
            write_curve_csv(w, &problem.objective_curve(&taus))
        })?;
        written.push(path);
    }
    Ok(written)
}

fn sigma_label(s: Sigma) -> String {
    match s {
        Sigma::Infinity => "inf".into(),
        Sigma::Finite(v) => fmt_sig(v),
    }
}

/// The method comparison. Rows reach `table2_reports.csv` as each
/// replication finishes; the summary and selections are written at the end.
pub fn table2(cfg: &Table2Config, out: &Path) -> Result<Vec<PathBuf>> {
    let reports_path = out.join("table2_reports.csv");
    let table_path = out.join("table2.csv");
    let json_path = out.join("table2.json");
    let mut w = create(&reports_path)?;
    let io = |e| Error::io(&reports_path, e);
    write_reports_csv(&mut w, &[])
        .and_then(|_| w.flush())
        .map_err(io)?;
    let output = run_table2(cfg, |_, reps| append_reports(&mut w, reps).map_err(io))?;
    drop(w);
    // Rewritten whole so the data-free rows lead, as in `output.reports`.
    write_with(&reports_path, |w| write_reports_csv(w, &output.reports))?;
    write_with(&table_path, |w| write_table_csv(w, &output.rows))?;
    write_json(
        &json_path,
        &json!({ "config": cfg, "selections": output.selections, "rows": output.rows }),
    )?;
    Ok(vec![reports_path, table_path, json_path])
}

fn append_reports(w: &mut impl Write, reports: &[EvalReport]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    write_reports_csv(&mut buf, reports)?;
    // Drop the header line that every call emits.
    let body = buf.splitn(2, |&b| b == b'\n').nth(1).unwrap_or(&[]);
    w.write_all(body)?;
    w.flush()
}
