//! Stochastic treatment-cost thresholds and the surrogate profit loss.
//!
//! The deterministic cost `c` in the payoff `1{τ ≥ c}(Y* − c)` is replaced
//! by a random threshold `C ~ F_C`. Taking the expectation over `C` gives the
//! per-observation term
//!
//! ```text
//! q(τ) = ∫_{-∞}^{τ} (Y* − u) f_C(u) du = F_C(τ) [Y* − κ_C(τ)],
//! κ_C(τ) = E[C | C ≤ τ],
//! ```
//!
//! which is smooth in `τ` and, in expectation, uniquely maximized at the
//! true effect.
//!
//! # Scales
//!
//! For the normal and logistic families the loss is written on the
//! standardized scale `τ̄ = (τ − c)/σ`, and scores map back through
//! `τ = σ τ̄ + c`. All derivatives returned here ([`SurrogateSpec::dloss`],
//! [`SurrogateSpec::d2loss`]) are taken with respect to `τ̄` itself. A model
//! parameterized directly on the monetary scale picks up an extra `1/σ`
//! (first derivative) or `1/σ²` (second derivative) through the chain rule.
//!
//! The uniform family stays on the raw `τ` scale and its loss is the
//! negative squared error `−(Y* − τ)²`, which has the same maximizer as the
//! exact uniform-threshold integral for any support.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numfmt::{fmt_sig, parse_f64};
use crate::special::{ln_logistic_cdf, logistic_cdf, logistic_pdf, norm_cdf, norm_pdf, softplus};

/// Smallest admissible scale for the normal and logistic families.
pub const MIN_SCALE: f64 = 1e-8;

/// Half-width of the support used when a uniform threshold is requested
/// without explicit bounds. The uniform loss does not depend on it.
pub const DEFAULT_UNIFORM_HALF_WIDTH: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    Logistic,
    Uniform,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Normal => "normal",
            Family::Logistic => "logistic",
            Family::Uniform => "uniform",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(Family::Normal),
            "logistic" => Ok(Family::Logistic),
            "uniform" => Ok(Family::Uniform),
            other => Err(Error::Config(format!("unknown threshold family `{other}`"))),
        }
    }
}

/// Distribution of the stochastic threshold `C`.
///
/// Normal: mean `cost`, standard deviation `scale`. Logistic: location
/// `cost`, scale parameter `scale`. Uniform: support
/// `[uniform_lo, uniform_hi]`; `scale` is unused and fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct SurrogateSpec {
    family: Family,
    cost: f64,
    scale: f64,
    uniform_lo: f64,
    uniform_hi: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecRepr {
    family: Family,
    cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uniform_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uniform_hi: Option<f64>,
}

impl TryFrom<SpecRepr> for SurrogateSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        match r.family {
            Family::Uniform => match (r.uniform_lo, r.uniform_hi) {
                (Some(lo), Some(hi)) => SurrogateSpec::uniform(r.cost, lo, hi),
                (None, None) => SurrogateSpec::mse_limit(r.cost),
                _ => Err(Error::Config(
                    "uniform threshold needs both uniform_lo and uniform_hi".into(),
                )),
            },
            family => {
                let scale = r
                    .scale
                    .ok_or_else(|| Error::Config(format!("{family} threshold needs a scale")))?;
                SurrogateSpec::new(family, r.cost, scale)
            }
        }
    }
}

impl From<SurrogateSpec> for SpecRepr {
    fn from(s: SurrogateSpec) -> Self {
        match s.family {
            Family::Uniform => SpecRepr {
                family: s.family,
                cost: s.cost,
                scale: None,
                uniform_lo: Some(s.uniform_lo),
                uniform_hi: Some(s.uniform_hi),
            },
            _ => SpecRepr {
                family: s.family,
                cost: s.cost,
                scale: Some(s.scale),
                uniform_lo: None,
                uniform_hi: None,
            },
        }
    }
}

impl SurrogateSpec {
    /// Normal or logistic threshold centred at `cost` with the given scale.
    /// A uniform family gets the default broad support around `cost`.
    pub fn new(family: Family, cost: f64, scale: f64) -> Result<Self> {
        if !cost.is_finite() {
            return Err(Error::Config(format!("cost must be finite, got {cost}")));
        }
        if family == Family::Uniform {
            return Self::mse_limit(cost);
        }
        if !(scale.is_finite() && scale >= MIN_SCALE) {
            return Err(Error::Config(format!(
                "threshold scale must be finite and at least {MIN_SCALE:e}, got {scale}"
            )));
        }
        Ok(Self {
            family,
            cost,
            scale,
            uniform_lo: 0.0,
            uniform_hi: 0.0,
        })
    }

    pub fn normal(cost: f64, scale: f64) -> Result<Self> {
        Self::new(Family::Normal, cost, scale)
    }

    pub fn logistic(cost: f64, scale: f64) -> Result<Self> {
        Self::new(Family::Logistic, cost, scale)
    }

    pub fn uniform(cost: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(cost.is_finite() && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Config(
                "uniform bounds and cost must be finite".into(),
            ));
        }
        if hi <= lo {
            return Err(Error::Config(format!(
                "uniform threshold needs uniform_hi > uniform_lo, got [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            family: Family::Uniform,
            cost,
            scale: 1.0,
            uniform_lo: lo,
            uniform_hi: hi,
        })
    }

    /// The `σ → ∞` end of the family: a broad uniform threshold, i.e. MSE
    /// fitting of transformed outcomes.
    pub fn mse_limit(cost: f64) -> Result<Self> {
        Self::uniform(
            cost,
            cost - DEFAULT_UNIFORM_HALF_WIDTH,
            cost + DEFAULT_UNIFORM_HALF_WIDTH,
        )
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// `σ`; 1 for the uniform family.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Uniform support, `None` for the other families.
    pub fn uniform_bounds(&self) -> Option<(f64, f64)> {
        (self.family == Family::Uniform).then_some((self.uniform_lo, self.uniform_hi))
    }

    /// Maps a monetary-scale effect onto the scale the loss is expressed in.
    pub fn standardize(&self, tau: f64) -> f64 {
        match self.family {
            Family::Uniform => tau,
            _ => (tau - self.cost) / self.scale,
        }
    }

    /// Inverse of [`standardize`](Self::standardize): `σ τ̄ + c`.
    pub fn to_external(&self, tau_bar: f64) -> f64 {
        match self.family {
            Family::Uniform => tau_bar,
            _ => self.scale * tau_bar + self.cost,
        }
    }

    /// `F_C(u)`.
    pub fn cdf(&self, u: f64) -> f64 {
        match self.family {
            Family::Normal => norm_cdf((u - self.cost) / self.scale),
            Family::Logistic => logistic_cdf((u - self.cost) / self.scale),
            Family::Uniform => {
                ((u - self.uniform_lo) / (self.uniform_hi - self.uniform_lo)).clamp(0.0, 1.0)
            }
        }
    }

    /// `1 − F_C(u)`, computed without cancellation in the upper tail.
    pub fn sf(&self, u: f64) -> f64 {
        match self.family {
            Family::Normal => norm_cdf(-(u - self.cost) / self.scale),
            Family::Logistic => logistic_cdf(-(u - self.cost) / self.scale),
            Family::Uniform => 1.0 - self.cdf(u),
        }
    }

    /// `f_C(u)`.
    pub fn pdf(&self, u: f64) -> f64 {
        match self.family {
            Family::Normal => norm_pdf((u - self.cost) / self.scale) / self.scale,
            Family::Logistic => logistic_pdf((u - self.cost) / self.scale) / self.scale,
            Family::Uniform => {
                if u >= self.uniform_lo && u <= self.uniform_hi {
                    1.0 / (self.uniform_hi - self.uniform_lo)
                } else {
                    0.0
                }
            }
        }
    }

    /// Mean of `C`.
    pub fn mean(&self) -> f64 {
        match self.family {
            Family::Uniform => 0.5 * (self.uniform_lo + self.uniform_hi),
            _ => self.cost,
        }
    }

    /// Lower partial expectation `∫_{-∞}^{τ} u f_C(u) du = F_C(τ) κ_C(τ)`.
    pub fn lower_partial_mean(&self, tau: f64) -> f64 {
        let (c, s) = (self.cost, self.scale);
        match self.family {
            Family::Normal => {
                let z = (tau - c) / s;
                c * norm_cdf(z) - s * norm_pdf(z)
            }
            Family::Logistic => {
                // by parts: τ G(z) − ∫ G = τ G(z) − σ ln(1 + e^z)
                let z = (tau - c) / s;
                tau * logistic_cdf(z) - s * softplus(z)
            }
            Family::Uniform => {
                let (lo, hi) = (self.uniform_lo, self.uniform_hi);
                if tau <= lo {
                    0.0
                } else {
                    let t = tau.min(hi);
                    (t * t - lo * lo) / (2.0 * (hi - lo))
                }
            }
        }
    }

    /// Upper partial expectation `∫_{τ}^{∞} u f_C(u) du`, accurate when the
    /// upper tail mass is tiny.
    pub fn upper_partial_mean(&self, tau: f64) -> f64 {
        let (c, s) = (self.cost, self.scale);
        match self.family {
            Family::Normal => {
                let z = (tau - c) / s;
                c * norm_cdf(-z) + s * norm_pdf(z)
            }
            Family::Logistic => {
                let z = (tau - c) / s;
                tau * logistic_cdf(-z) + s * softplus(-z)
            }
            Family::Uniform => self.mean() - self.lower_partial_mean(tau),
        }
    }

    /// Lower-truncated mean `κ_C(τ) = E[C | C ≤ τ]`.
    pub fn kappa(&self, tau: f64) -> Result<f64> {
        match self.family {
            Family::Normal => {
                let z = (tau - self.cost) / self.scale;
                let big_phi = norm_cdf(z);
                if big_phi == 0.0 {
                    return Err(Error::Domain(tau));
                }
                Ok(self.cost - self.scale * norm_pdf(z) / big_phi)
            }
            Family::Logistic => {
                let f = self.cdf(tau);
                if f == 0.0 {
                    return Err(Error::Domain(tau));
                }
                Ok(self.lower_partial_mean(tau) / f)
            }
            Family::Uniform => {
                if tau <= self.uniform_lo {
                    return Err(Error::Domain(tau));
                }
                Ok(0.5 * (self.uniform_lo + tau.min(self.uniform_hi)))
            }
        }
    }

    /// Per-observation objective `q` to be maximized.
    ///
    /// `tau_bar` is the standardized score for normal/logistic thresholds
    /// and the raw effect for the uniform threshold.
    pub fn loss_q(&self, tau_bar: f64, y_star: f64) -> f64 {
        let (c, s) = (self.cost, self.scale);
        match self.family {
            Family::Normal => norm_cdf(tau_bar) * (y_star - c) + s * norm_pdf(tau_bar),
            Family::Logistic => {
                let g = logistic_cdf(tau_bar);
                g * (y_star - c) + s * (tau_bar * (1.0 - g) - ln_logistic_cdf(tau_bar))
            }
            Family::Uniform => {
                let r = y_star - tau_bar;
                -r * r
            }
        }
    }

    /// `∂q/∂τ̄` (raw `τ` for the uniform family).
    pub fn dloss(&self, tau_bar: f64, y_star: f64) -> f64 {
        let (c, s) = (self.cost, self.scale);
        match self.family {
            Family::Normal => norm_pdf(tau_bar) * (y_star - c - s * tau_bar),
            Family::Logistic => logistic_pdf(tau_bar) * (y_star - c - s * tau_bar),
            Family::Uniform => 2.0 * (y_star - tau_bar),
        }
    }

    /// `∂²q/∂τ̄²`: the scalar curvature factor of a linear model's Hessian.
    pub fn d2loss(&self, tau_bar: f64, y_star: f64) -> f64 {
        let (c, s) = (self.cost, self.scale);
        match self.family {
            Family::Normal => -norm_pdf(tau_bar) * (tau_bar * (y_star - c - s * tau_bar) + s),
            Family::Logistic => {
                let g = logistic_cdf(tau_bar);
                -logistic_pdf(tau_bar) * ((2.0 * g - 1.0) * (y_star - c - s * tau_bar) + s)
            }
            Family::Uniform => -2.0,
        }
    }

    /// Value, first and second derivative in one pass.
    pub fn loss_derivs(&self, tau_bar: f64, y_star: f64) -> (f64, f64, f64) {
        (
            self.loss_q(tau_bar, y_star),
            self.dloss(tau_bar, y_star),
            self.d2loss(tau_bar, y_star),
        )
    }

    /// Default search bracket for the covariate-free problem.
    pub fn default_bracket(&self) -> (f64, f64) {
        match self.family {
            Family::Uniform => (self.uniform_lo, self.uniform_hi),
            _ => (self.cost - 10.0 * self.scale, self.cost + 10.0 * self.scale),
        }
    }
}

/// The covariate-free surrogate: choose a single `τ` given the true ATE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarSurrogateProblem {
    pub tau0: f64,
    pub spec: SurrogateSpec,
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;
const SCAN_POINTS: usize = 64;

impl ScalarSurrogateProblem {
    pub fn new(tau0: f64, spec: SurrogateSpec) -> Self {
        Self { tau0, spec }
    }

    /// `F_C(τ)[τ0 − κ_C(τ)]`, expanded as `F_C(τ) τ0 − ∫_{-∞}^{τ} u f_C(u) du`.
    pub fn value(&self, tau: f64) -> f64 {
        if tau == f64::NEG_INFINITY {
            return 0.0;
        }
        if tau == f64::INFINITY {
            return self.tau0 - self.spec.mean();
        }
        self.spec.cdf(tau) * self.tau0 - self.spec.lower_partial_mean(tau)
    }

    /// `∫_{τ}^{∞} (τ0 − u) f_C(u) du`, the shortfall from the blanket-treat
    /// value.
    fn upper_value(&self, tau: f64) -> f64 {
        self.spec.sf(tau) * self.tau0 - self.spec.upper_partial_mean(tau)
    }

    /// `value(a) − value(b)`, evaluated on whichever tail keeps precision.
    /// Far above the cost both values round to `τ0 − E[C]`, but their
    /// difference is still carried by the upper tail integrals.
    pub fn value_difference(&self, a: f64, b: f64) -> f64 {
        let c = self.spec.mean();
        if a >= c && b >= c {
            self.upper_value(b) - self.upper_value(a)
        } else {
            self.value(a) - self.value(b)
        }
    }

    /// Golden-section maximization of [`value`](Self::value) on `[lo, hi]`.
    ///
    /// A uniform scan first locates the best probe; an endpoint beating
    /// every interior probe means the bracket holds no interior maximum.
    pub fn argmax(&self, lo: f64, hi: f64, tol: f64) -> Result<f64> {
        if !(lo < hi && tol > 0.0 && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Config(format!(
                "invalid search bracket [{lo}, {hi}] with tolerance {tol}"
            )));
        }
        let step = (hi - lo) / SCAN_POINTS as f64;
        let probe = |i: usize| lo + step * i as f64;
        let mut best = 1;
        for i in 2..SCAN_POINTS {
            if self.value_difference(probe(i), probe(best)) > 0.0 {
                best = i;
            }
        }
        if self.value_difference(lo, probe(best)) > 0.0
            || self.value_difference(hi, probe(best)) > 0.0
        {
            return Err(Error::Search { lo, hi });
        }

        let (mut a, mut b) = (probe(best - 1), probe(best + 1));
        let mut x1 = b - GOLDEN * (b - a);
        let mut x2 = a + GOLDEN * (b - a);
        while b - a > tol {
            if self.value_difference(x1, x2) >= 0.0 {
                b = x2;
                x2 = x1;
                x1 = b - GOLDEN * (b - a);
            } else {
                a = x1;
                x1 = x2;
                x2 = a + GOLDEN * (b - a);
            }
        }
        Ok(0.5 * (a + b))
    }

    /// [`argmax`](Self::argmax) on the family's default bracket.
    pub fn argmax_default(&self, tol: f64) -> Result<f64> {
        let (lo, hi) = self.spec.default_bracket();
        self.argmax(lo, hi, tol)
    }

    /// The original stepwise payoff `1{τ ≥ c}(τ0 − c)`.
    pub fn stepwise_value(&self, tau: f64) -> f64 {
        let c = self.spec.cost();
        if tau >= c {
            self.tau0 - c
        } else {
            0.0
        }
    }

    pub fn objective_curve(&self, grid: &[f64]) -> Vec<CurvePoint> {
        grid.iter()
            .map(|&tau| CurvePoint {
                tau,
                surrogate_value: self.value(tau),
                stepwise_value: self.stepwise_value(tau),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub tau: f64,
    pub surrogate_value: f64,
    pub stepwise_value: f64,
}

pub const CURVE_CSV_HEADER: &str = "tau,surrogate_value,stepwise_value";

pub fn write_curve_csv<W: Write>(mut out: W, points: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(out, "{CURVE_CSV_HEADER}")?;
    for p in points {
        writeln!(
            out,
            "{},{},{}",
            fmt_sig(p.tau),
            fmt_sig(p.surrogate_value),
            fmt_sig(p.stepwise_value)
        )?;
    }
    Ok(())
}

pub fn read_curve_csv<R: Read>(input: R, source: &str) -> Result<Vec<CurvePoint>> {
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
    if header.iter().ne(CURVE_CSV_HEADER.split(',')) {
        return Err(parse_err(1, format!("expected header {CURVE_CSV_HEADER}")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let num = |j: usize| {
            parse_f64(&rec[j])
                .ok_or_else(|| parse_err(line, format!("not a number: {:?}", &rec[j])))
        };
        out.push(CurvePoint {
            tau: num(0)?,
            surrogate_value: num(1)?,
            stepwise_value: num(2)?,
        });
    }
    Ok(out)
}
