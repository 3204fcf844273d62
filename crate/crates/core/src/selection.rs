//! Choosing the threshold scale `σ`.
//!
//! [`kfold_cv`] scores each grid value on held-out folds of the experiment
//! with two truth-free criteria: squared error against transformed outcomes
//! and the IPW value of the induced policy. [`frontier_sweep`] refits on the
//! full sample and scores against the oracle instead, tracing the
//! accuracy/profit trade-off across `σ`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::TransformedDataset;
use crate::dgp::LabeledSample;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model, ipw_policy_value};
use crate::linear::policy_from_cate;
use crate::model::Fitter;
use crate::numfmt::{fmt_sig, parse_f64};
use crate::surrogate::{Family, SurrogateSpec};

pub const DEFAULT_FOLDS: usize = 5;

/// A threshold scale; `Infinity` stands for the uniform (MSE) limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma {
    Finite(f64),
    Infinity,
}

impl Sigma {
    pub fn value(self) -> f64 {
        match self {
            Sigma::Finite(s) => s,
            Sigma::Infinity => f64::INFINITY,
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        if v == f64::INFINITY {
            Ok(Sigma::Infinity)
        } else if v.is_finite() && v >= crate::surrogate::MIN_SCALE {
            Ok(Sigma::Finite(v))
        } else {
            Err(Error::Config(format!(
                "sigma must be positive or inf, got {v}"
            )))
        }
    }

    pub fn spec(self, family: Family, cost: f64) -> Result<SurrogateSpec> {
        match self {
            Sigma::Finite(s) => SurrogateSpec::new(family, cost, s),
            Sigma::Infinity => SurrogateSpec::mse_limit(cost),
        }
    }
}

impl fmt::Display for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&fmt_sig(self.value()))
    }
}

impl FromStr for Sigma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = parse_f64(s).ok_or_else(|| Error::Config(format!("not a sigma value: {s:?}")))?;
        Sigma::from_value(v)
    }
}

impl Serialize for Sigma {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Sigma::Finite(v) => ser.serialize_f64(*v),
            Sigma::Infinity => ser.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Sigma {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        let parsed = match Repr::deserialize(de)? {
            Repr::Num(v) => Sigma::from_value(v),
            Repr::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Candidate scales in ascending order, `Infinity` last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Sigma>", into = "Vec<Sigma>")]
pub struct SigmaGrid {
    values: Vec<Sigma>,
}

impl SigmaGrid {
    pub fn new(mut values: Vec<Sigma>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("sigma grid must not be empty".into()));
        }
        values.sort_by(|a, b| a.value().total_cmp(&b.value()));
        Ok(Self { values })
    }

    pub fn values(&self) -> &[Sigma] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Default for SigmaGrid {
    fn default() -> Self {
        let mut v: Vec<Sigma> = [0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0]
            .into_iter()
            .map(Sigma::Finite)
            .collect();
        v.push(Sigma::Infinity);
        Self { values: v }
    }
}

impl TryFrom<Vec<Sigma>> for SigmaGrid {
    type Error = Error;

    fn try_from(v: Vec<Sigma>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SigmaGrid> for Vec<Sigma> {
    fn from(g: SigmaGrid) -> Self {
        g.values
    }
}

impl FromStr for SigmaGrid {
    type Err = Error;

    /// Comma-separated values, e.g. `0.1,1,inf`.
    fn from_str(s: &str) -> Result<Self> {
        Self::new(s.split(',').map(str::parse).collect::<Result<_>>()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub sigma: Sigma,
    pub fold: usize,
    /// Mean of `(Y* − τ̂)²` on the held-out fold.
    pub mse_proxy: f64,
    /// IPW value of `1{τ̂ ≥ c}` on the held-out fold.
    pub profit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub sigma: Sigma,
    pub mse: f64,
    pub profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub family: Family,
    pub cost: f64,
    pub k: usize,
    pub seed: u64,
    /// Row-major over (grid index, fold).
    pub folds: Vec<FoldScore>,
    /// Fold means per grid value, as `(σ, mse_proxy, profit)`.
    pub frontier: Vec<FrontierPoint>,
    pub sigma_mse: Sigma,
    pub sigma_profit: Sigma,
}

/// Row indices of each fold after a seeded shuffle.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds: Vec<Vec<usize>> = (0..k)
        .map(|f| order[f * n / k..(f + 1) * n / k].to_vec())
        .collect();
    if let Some(fold) = folds.iter().position(Vec::is_empty) {
        return Err(Error::Fold { fold });
    }
    Ok(folds)
}

/// Index of the best value; later (larger-σ) entries win ties.
fn best_index(scores: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if !better(scores[best], s) {
            best = i;
        }
    }
    best
}

pub fn kfold_cv(
    td: &TransformedDataset,
    grid: &SigmaGrid,
    k: usize,
    family: Family,
    cost: f64,
    fitter: &dyn Fitter,
    seed: u64,
) -> Result<CvResult> {
    let n = td.len();
    let folds = fold_indices(n, k, seed)?;
    if n < 2 * k {
        return Err(Error::Data(format!(
            "{k}-fold cross-validation needs at least {} rows, got {n}",
            2 * k
        )));
    }
    let splits: Vec<(TransformedDataset, TransformedDataset)> = folds
        .iter()
        .enumerate()
        .map(|(f, held)| {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            (td.select_rows(&train), td.select_rows(held))
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|s| (0..k).map(move |f| (s, f)))
        .collect();
    let scores: Vec<FoldScore> = jobs
        .par_iter()
        .map(|&(s, f)| {
            let sigma = grid.values()[s];
            let spec = sigma.spec(family, cost)?;
            let (train, held) = &splits[f];
            let model = fitter.fit(train, &spec)?;
            let tau = model.predict(held.x())?;
            let mse_proxy = held
                .y_star()
                .iter()
                .zip(&tau)
                .map(|(y, t)| (y - t) * (y - t))
                .sum::<f64>()
                / held.len() as f64;
            let profit = ipw_policy_value(held, &policy_from_cate(&tau, cost), cost)?;
            Ok(FoldScore {
                sigma,
                fold: f,
                mse_proxy,
                profit,
            })
        })
        .collect::<Result<_>>()?;

    let frontier: Vec<FrontierPoint> = grid
        .values()
        .iter()
        .enumerate()
        .map(|(s, &sigma)| {
            let rows = &scores[s * k..(s + 1) * k];
            FrontierPoint {
                sigma,
                mse: rows.iter().map(|r| r.mse_proxy).sum::<f64>() / k as f64,
                profit: rows.iter().map(|r| r.profit).sum::<f64>() / k as f64,
            }
        })
        .collect();
    let mses: Vec<f64> = frontier.iter().map(|p| p.mse).collect();
    let profits: Vec<f64> = frontier.iter().map(|p| p.profit).collect();
    let sigma_mse = grid.values()[best_index(&mses, |best, s| best < s)];
    let sigma_profit = grid.values()[best_index(&profits, |best, s| best > s)];
    Ok(CvResult {
        family,
        cost,
        k,
        seed,
        folds: scores,
        frontier,
        sigma_mse,
        sigma_profit,
    })
}

/// Full-sample fit per grid value, scored against the oracle effects of
/// `eval_sample`: `(σ, truth MSE, oracle profit)`.
pub fn frontier_sweep(
    td: &TransformedDataset,
    grid: &SigmaGrid,
    family: Family,
    cost: f64,
    eval_sample: &LabeledSample,
    fitter: &dyn Fitter,
) -> Result<Vec<FrontierPoint>> {
    grid.values()
        .par_iter()
        .map(|&sigma| {
            let model = fitter.fit(td, &sigma.spec(family, cost)?)?;
            let report = evaluate_model(&sigma.to_string(), model.as_ref(), eval_sample, cost)?;
            Ok(FrontierPoint {
                sigma,
                mse: report
                    .mse
                    .ok_or_else(|| Error::Config("frontier needs a CATE model".into()))?,
                profit: report.profit,
            })
        })
        .collect()
}

pub const FRONTIER_CSV_HEADER: &str = "sigma,mse,profit";

pub fn write_frontier_csv<W: Write>(mut out: W, points: &[FrontierPoint]) -> std::io::Result<()> {
    writeln!(out, "{FRONTIER_CSV_HEADER}")?;
    for p in points {
        writeln!(out, "{},{},{}", p.sigma, fmt_sig(p.mse), fmt_sig(p.profit))?;
    }
    Ok(())
}

pub fn read_frontier_csv<R: Read>(input: R, source: &str) -> Result<Vec<FrontierPoint>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.iter().ne(FRONTIER_CSV_HEADER.split(',')) {
        return Err(parse_err(
            1,
            format!("expected header {FRONTIER_CSV_HEADER}"),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let num = |j: usize| {
            parse_f64(&rec[j])
                .ok_or_else(|| parse_err(line, format!("not a number: {:?}", &rec[j])))
        };
        out.push(FrontierPoint {
            sigma: Sigma::from_value(num(0)?).map_err(|e| parse_err(line, e.to_string()))?,
            mse: num(1)?,
            profit: num(2)?,
        });
    }
    Ok(out)
}
