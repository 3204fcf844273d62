//! Experiment records, transformed outcomes and the dataset CSV format.
//!
//! CSV layout: header `y,w,e,x1,...,xk`, optionally followed by a
//! `tau_true` oracle column. Covariate columns are taken in header order.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numfmt::{fmt_sig, parse_f64};

/// Propensities must lie in `(OVERLAP_EPS, 1 − OVERLAP_EPS)`.
pub const OVERLAP_EPS: f64 = 1e-6;

/// One randomized experiment: covariates, treatment, outcome, propensity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    w: Vec<bool>,
    y: Vec<f64>,
    e: Vec<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, w: Vec<bool>, y: Vec<f64>, e: Vec<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        for len in [w.len(), y.len(), e.len()] {
            if len != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: len,
                });
            }
        }
        if let Some(i) =
            (0..n).find(|&i| !y[i].is_finite() || x.row(i).iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Data(format!("row {i} has a non-finite value")));
        }
        check_overlap(&e)?;
        Ok(Self { x, w, y, e })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn w(&self) -> &[bool] {
        &self.w
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn e(&self) -> &[f64] {
        &self.e
    }

    /// Same records with a different covariate matrix (e.g. an expanded design).
    pub fn with_x(&self, x: DMatrix<f64>) -> Result<Self> {
        Self::new(x, self.w.clone(), self.y.clone(), self.e.clone())
    }
}

fn check_overlap(e: &[f64]) -> Result<()> {
    match e
        .iter()
        .position(|&p| !(p > OVERLAP_EPS && p < 1.0 - OVERLAP_EPS))
    {
        Some(row) => Err(Error::Overlap {
            row,
            value: e[row],
            eps: OVERLAP_EPS,
        }),
        None => Ok(()),
    }
}

/// Covariates paired with transformed outcomes `Y*`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedDataset {
    x: DMatrix<f64>,
    y_star: Vec<f64>,
}

impl TransformedDataset {
    pub fn len(&self) -> usize {
        self.y_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_star.is_empty()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y_star(&self) -> &[f64] {
        &self.y_star
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `idx`, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            y_star: idx.iter().map(|&i| self.y_star[i]).collect(),
        }
    }

    /// Same outcomes against a different design built from the same rows.
    pub fn with_x(&self, x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: x.nrows(),
            });
        }
        Ok(Self {
            x,
            y_star: self.y_star.clone(),
        })
    }
}

/// `Y*_i = Y_i (W_i / e_i − (1 − W_i)/(1 − e_i))`.
pub fn transform_outcomes(data: &Dataset) -> Result<TransformedDataset> {
    check_overlap(&data.e)?;
    let y_star = data
        .y
        .iter()
        .zip(&data.w)
        .zip(&data.e)
        .map(|((&y, &w), &e)| if w { y / e } else { -y / (1.0 - e) })
        .collect();
    Ok(TransformedDataset {
        x: data.x.clone(),
        y_star,
    })
}

/// Feature expansion applied to raw covariates before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// Columns as given.
    Raw,
    /// `[1, x1, ..., xk]`.
    #[default]
    Linear,
    /// `[1, x1, ..., xk, x1², ..., xk²]`.
    Quadratic,
}

impl Design {
    pub fn has_intercept(self) -> bool {
        !matches!(self, Design::Raw)
    }

    pub fn width(self, raw_cols: usize) -> usize {
        match self {
            Design::Raw => raw_cols,
            Design::Linear => raw_cols + 1,
            Design::Quadratic => 2 * raw_cols + 1,
        }
    }

    pub fn expand(self, raw: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, k) = raw.shape();
        match self {
            Design::Raw => raw.clone(),
            Design::Linear => {
                DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { raw[(i, j - 1)] })
            }
            Design::Quadratic => DMatrix::from_fn(n, 2 * k + 1, |i, j| {
                if j == 0 {
                    1.0
                } else if j <= k {
                    raw[(i, j - 1)]
                } else {
                    let v = raw[(i, j - 1 - k)];
                    v * v
                }
            }),
        }
    }
}

/// A dataset read from CSV, with the oracle column when present.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub data: Dataset,
    pub tau_true: Option<Vec<f64>>,
}

pub fn read_dataset_csv<R: Read>(input: R, source: &str) -> Result<LoadedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let y_col = col("y").ok_or_else(|| parse_err(1, "missing column `y`".into()))?;
    let w_col = col("w").ok_or_else(|| parse_err(1, "missing column `w`".into()))?;
    let e_col = col("e").ok_or_else(|| parse_err(1, "missing column `e` (propensity)".into()))?;
    let tau_col = col("tau_true");
    let x_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| {
            let h = h.trim();
            h.len() > 1 && h.starts_with('x') && h[1..].chars().all(|c| c.is_ascii_digit())
        })
        .map(|(i, _)| i)
        .collect();
    if x_cols.is_empty() {
        return Err(parse_err(1, "no covariate columns `x1..xk`".into()));
    }

    let (mut y, mut w, mut e, mut tau, mut xs) = (vec![], vec![], vec![], vec![], vec![]);
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|err| parse_err(line, err.to_string()))?;
        let num = |c: usize, name: &str| -> Result<f64> {
            let field = rec
                .get(c)
                .ok_or_else(|| parse_err(line, format!("missing field `{name}`")))?;
            parse_f64(field)
                .ok_or_else(|| parse_err(line, format!("bad number `{field}` in `{name}`")))
        };
        y.push(num(y_col, "y")?);
        let wv = num(w_col, "w")?;
        if wv != 0.0 && wv != 1.0 {
            return Err(parse_err(
                line,
                format!("treatment must be 0 or 1, got {wv}"),
            ));
        }
        w.push(wv == 1.0);
        e.push(num(e_col, "e")?);
        if let Some(c) = tau_col {
            tau.push(num(c, "tau_true")?);
        }
        for &c in &x_cols {
            xs.push(num(c, &headers[c])?);
        }
    }
    let n = y.len();
    let x = DMatrix::from_row_slice(n, x_cols.len(), &xs);
    Ok(LoadedDataset {
        data: Dataset::new(x, w, y, e)?,
        tau_true: tau_col.map(|_| tau),
    })
}

pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_csv(std::io::BufReader::new(f), &path.display().to_string())
}

pub fn write_dataset_csv<W: Write>(
    out: W,
    data: &Dataset,
    tau_true: Option<&[f64]>,
) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let k = data.x.ncols();
    let mut header = vec!["y".to_string(), "w".to_string(), "e".to_string()];
    header.extend((1..=k).map(|j| format!("x{j}")));
    if tau_true.is_some() {
        header.push("tau_true".into());
    }
    wtr.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..data.len() {
        row.clear();
        row.push(fmt_sig(data.y[i]));
        row.push(if data.w[i] { "1" } else { "0" }.to_string());
        row.push(fmt_sig(data.e[i]));
        row.extend((0..k).map(|j| fmt_sig(data.x[(i, j)])));
        if let Some(t) = tau_true {
            row.push(fmt_sig(t[i]));
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()
}
