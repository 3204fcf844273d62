//! Profit, CATE accuracy and ranking quality.
//!
//! Oracle metrics need the true effects and are only available on synthetic
//! data. [`ipw_policy_value`] needs only experimental data and is what
//! cross-validation uses.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::TransformedDataset;
use crate::dgp::{oracle_policy_value, LabeledSample};
use crate::error::{Error, Result};
use crate::linear::policy_from_cate;
use crate::model::CatePredictor;
use crate::numfmt::{fmt_sig, parse_f64};

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

/// `(1/n) Σ π_i (Y*_i − c)`.
pub fn ipw_policy_value(td: &TransformedDataset, policy: &[bool], c: f64) -> Result<f64> {
    check_len(td.len(), policy.len())?;
    let total: f64 = policy
        .iter()
        .zip(td.y_star())
        .filter(|(p, _)| **p)
        .map(|(_, y)| y - c)
        .sum();
    Ok(total / td.len() as f64)
}

pub fn cate_mse(tau_hat: &[f64], tau_true: &[f64]) -> Result<f64> {
    check_len(tau_true.len(), tau_hat.len())?;
    if tau_true.is_empty() {
        return Err(Error::Data("cannot compute MSE of an empty sample".into()));
    }
    let ss: f64 = tau_hat
        .iter()
        .zip(tau_true)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(ss / tau_true.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Qini {
    pub value: f64,
    /// All scores were identical, so no ranking was induced.
    pub degenerate: bool,
}

/// Area between the cumulative true-uplift curve and the random-order
/// diagonal, normalized by `n`. Ranking is by descending score with ties
/// resolved by row index, so only the order of `scores` matters.
pub fn qini_coefficient(scores: &[f64], tau_true: &[f64]) -> Result<Qini> {
    check_len(tau_true.len(), scores.len())?;
    let n = scores.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "Qini needs at least 2 observations, got {n}"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("Qini scores contain NaN".into()));
    }
    if scores.iter().all(|&s| s == scores[0]) {
        return Ok(Qini {
            value: 0.0,
            degenerate: true,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let nf = n as f64;
    let mean = tau_true.iter().sum::<f64>() / nf;
    let mut cum = 0.0;
    let mut area = 0.0;
    for (k, &i) in order.iter().enumerate() {
        cum += tau_true[i];
        area += cum / nf - (k + 1) as f64 / nf * mean;
    }
    Ok(Qini {
        value: area / nf,
        degenerate: false,
    })
}

/// Metrics for one model on one evaluation population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_tag: String,
    pub profit: f64,
    pub mse: Option<f64>,
    pub qini: f64,
    pub n_eval: usize,
}

/// Scores already computed on `sample`. The policy treats rows whose score
/// is at least `c`.
pub fn evaluate_scores(
    model_tag: &str,
    scores: &[f64],
    sample: &LabeledSample,
    c: f64,
    is_cate: bool,
) -> Result<EvalReport> {
    check_len(sample.len(), scores.len())?;
    let policy = policy_from_cate(scores, c);
    let profit = oracle_policy_value(sample, &policy, c)?;
    let mse = if is_cate {
        Some(cate_mse(scores, &sample.tau_true)?)
    } else {
        None
    };
    let qini = qini_coefficient(scores, &sample.tau_true)?.value;
    Ok(EvalReport {
        model_tag: model_tag.to_string(),
        profit,
        mse,
        qini,
        n_eval: sample.len(),
    })
}

pub fn evaluate_model(
    model_tag: &str,
    model: &dyn CatePredictor,
    sample: &LabeledSample,
    c: f64,
) -> Result<EvalReport> {
    let scores = model.predict(sample.x())?;
    evaluate_scores(model_tag, &scores, sample, c, model.is_cate())
}

pub const REPORT_CSV_HEADER: [&str; 5] = ["model_tag", "profit", "mse", "qini", "n_eval"];

fn opt_field(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

pub fn write_reports_csv<W: Write>(out: W, reports: &[EvalReport]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(REPORT_CSV_HEADER)?;
    for r in reports {
        wtr.write_record([
            r.model_tag.clone(),
            fmt_sig(r.profit),
            opt_field(r.mse),
            fmt_sig(r.qini),
            r.n_eval.to_string(),
        ])?;
    }
    wtr.flush()
}

fn parse_field(rec: &csv::StringRecord, idx: usize, line: usize, source: &str) -> Result<f64> {
    let field = rec.get(idx).unwrap_or("");
    parse_f64(field).ok_or_else(|| Error::Parse {
        path: source.to_string(),
        line,
        message: format!("not a number: {field:?}"),
    })
}

pub fn read_reports_csv<R: Read>(input: R, source: &str) -> Result<Vec<EvalReport>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: source.to_string(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.iter().ne(REPORT_CSV_HEADER) {
        return Err(Error::Parse {
            path: source.to_string(),
            line: 1,
            message: format!("expected header {}", REPORT_CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: source.to_string(),
            line,
            message: e.to_string(),
        })?;
        let mse = match rec.get(2) {
            Some("") | None => None,
            Some(_) => Some(parse_field(&rec, 2, line, source)?),
        };
        let n_eval = rec.get(4).unwrap_or("").parse().map_err(|_| Error::Parse {
            path: source.to_string(),
            line,
            message: "n_eval is not an integer".into(),
        })?;
        out.push(EvalReport {
            model_tag: rec.get(0).unwrap_or("").to_string(),
            profit: parse_field(&rec, 1, line, source)?,
            mse,
            qini: parse_field(&rec, 3, line, source)?,
            n_eval,
        });
    }
    Ok(out)
}

/// Mean and sample standard deviation of one metric across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Absent with a single replication.
    pub sd: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.len() > 1).then(|| {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Some(Self { mean, sd })
    }

    /// Standard error of the mean.
    pub fn se(&self, count: usize) -> Option<f64> {
        self.sd.map(|s| s / (count as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model_tag: String,
    pub profit: Summary,
    pub mse: Option<Summary>,
    pub qini: Summary,
    pub replications: usize,
}

/// Groups reports by tag, in order of first appearance.
pub fn summarize(reports: &[EvalReport]) -> Vec<TableRow> {
    let mut tags: Vec<&str> = Vec::new();
    for r in reports {
        if !tags.contains(&r.model_tag.as_str()) {
            tags.push(&r.model_tag);
        }
    }
    tags.into_iter()
        .map(|tag| {
            let group: Vec<&EvalReport> = reports.iter().filter(|r| r.model_tag == tag).collect();
            let profits: Vec<f64> = group.iter().map(|r| r.profit).collect();
            let qinis: Vec<f64> = group.iter().map(|r| r.qini).collect();
            let mses: Option<Vec<f64>> = group.iter().map(|r| r.mse).collect();
            TableRow {
                model_tag: tag.to_string(),
                profit: Summary::of(&profits).expect("nonempty group"),
                mse: mses.and_then(|m| Summary::of(&m)),
                qini: Summary::of(&qinis).expect("nonempty group"),
                replications: group.len(),
            }
        })
        .collect()
}

pub const TABLE_CSV_HEADER: [&str; 8] = [
    "model_tag",
    "profit_mean",
    "profit_sd",
    "mse_mean",
    "mse_sd",
    "qini_mean",
    "qini_sd",
    "replications",
];

pub fn write_table_csv<W: Write>(out: W, rows: &[TableRow]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(TABLE_CSV_HEADER)?;
    for r in rows {
        wtr.write_record([
            r.model_tag.clone(),
            fmt_sig(r.profit.mean),
            opt_field(r.profit.sd),
            opt_field(r.mse.map(|m| m.mean)),
            opt_field(r.mse.and_then(|m| m.sd)),
            fmt_sig(r.qini.mean),
            opt_field(r.qini.sd),
            r.replications.to_string(),
        ])?;
    }
    wtr.flush()
}
