//! Parametric surrogate M-estimation: `τ̄(X; θ) = Xᵀθ`.
//!
//! The sample objective `Q_n(θ) = (1/n) Σ q(x_iᵀθ, Y*_i)` is maximized on
//! the loss's native scale (standardized for normal/logistic thresholds,
//! raw for uniform). Effects on the monetary scale are `σ Xᵀθ̂ + c`, so an
//! intercept column absorbs the shift and every coefficient scales by `σ`.
//!
//! Unpenalized fits use damped Newton steps whenever the Hessian is
//! negative definite and a magnitude-modified Newton step elsewhere, with
//! the plain gradient as a last resort. All are guarded by an Armijo
//! backtracking search so the objective never decreases. An ℓ1 penalty switches to proximal gradient ascent.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::TransformedDataset;
use crate::error::{Error, Result};
use crate::surrogate::{Family, SurrogateSpec};

const ARMIJO_SLOPE: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 80;
/// Relative objective change below which a Newton step's gain is noise.
const UNRESOLVED_GAIN: f64 = 64.0 * f64::EPSILON;
/// Condition number beyond which `XᵀX` or `B̂` is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zeros,
    /// Least squares of `(Y* − c)/σ` on the design.
    #[default]
    OlsWarmStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AscentDirection {
    /// Newton direction when `∇²Q_n` is negative definite, gradient otherwise.
    #[default]
    Newton,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFitConfig {
    pub spec: SurrogateSpec,
    pub l1_penalty: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub init: Init,
    pub direction: AscentDirection,
    /// Column 0 is an intercept: exempt from the penalty and shifted by `c`
    /// on the monetary scale.
    pub intercept: bool,
}

impl LinearFitConfig {
    pub fn new(spec: SurrogateSpec) -> Self {
        Self {
            spec,
            l1_penalty: 0.0,
            max_iters: 10_000,
            grad_tol: 1e-8,
            init: Init::OlsWarmStart,
            direction: AscentDirection::Newton,
            intercept: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::Config(format!(
                "grad_tol must be positive, got {}",
                self.grad_tol
            )));
        }
        if !(self.l1_penalty >= 0.0 && self.l1_penalty.is_finite()) {
            return Err(Error::Config(format!(
                "l1_penalty must be a finite nonnegative number, got {}",
                self.l1_penalty
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFitResult {
    pub spec: SurrogateSpec,
    /// `θ̂` on the loss scale.
    pub theta: Vec<f64>,
    /// Coefficients of `τ̂(X)` on the monetary scale; see `external_offset`.
    pub theta_external: Vec<f64>,
    /// Constant added to `Xᵀθ_external`: `c` when there is no intercept
    /// column to absorb it, otherwise 0.
    pub external_offset: f64,
    pub intercept: bool,
    /// Sandwich covariance of `θ̂`; absent for penalized or failed fits.
    pub covariance: Option<SandwichCovariance>,
    pub iters: usize,
    pub converged: bool,
    pub final_gradient_norm: f64,
    /// Objective after each accepted step, starting from the initial point.
    pub objective_trace: Vec<f64>,
}

impl LinearFitResult {
    /// Standard errors of `theta_external`.
    pub fn external_std_errors(&self) -> Option<Vec<f64>> {
        let scale = external_scale(&self.spec);
        self.covariance
            .as_ref()
            .map(|c| c.std_errors.iter().map(|s| s * scale).collect())
    }

    /// Loss-scale scores `Xθ̂`.
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.theta.len() {
            return Err(Error::Dimension {
                expected: self.theta.len(),
                got: x.ncols(),
            });
        }
        Ok(scores(x, &self.theta))
    }
}

fn external_scale(spec: &SurrogateSpec) -> f64 {
    match spec.family() {
        Family::Uniform => 1.0,
        _ => spec.scale(),
    }
}

/// Delta-method-free pieces of the asymptotic variance `B⁻¹MB⁻¹/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichCovariance {
    pub b_hat: DMatrix<f64>,
    pub m_hat: DMatrix<f64>,
    pub sandwich: DMatrix<f64>,
    pub std_errors: Vec<f64>,
}

pub(crate) fn scores(x: &DMatrix<f64>, theta: &[f64]) -> Vec<f64> {
    let t = DVector::from_column_slice(theta);
    (x * t).data.into()
}

/// `Q_n(θ)`.
pub fn surrogate_objective(theta: &[f64], td: &TransformedDataset, spec: &SurrogateSpec) -> f64 {
    let s = scores(td.x(), theta);
    let n = td.len() as f64;
    compensated_sum(s.iter().zip(td.y_star()).map(|(&t, &y)| spec.loss_q(t, y))) / n
}

/// Neumaier summation, so objective differences near the optimum are not
/// swamped by accumulated rounding.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `∇Q_n(θ) = (1/n) Σ q'(x_iᵀθ) x_i`.
pub fn surrogate_gradient(
    theta: &[f64],
    td: &TransformedDataset,
    spec: &SurrogateSpec,
) -> Vec<f64> {
    let s = scores(td.x(), theta);
    let n = td.len() as f64;
    let w = DVector::from_iterator(
        s.len(),
        s.iter()
            .zip(td.y_star())
            .map(|(&t, &y)| spec.dloss(t, y) / n),
    );
    (td.x().tr_mul(&w)).data.into()
}

/// `∇²Q_n(θ) = (1/n) Σ q''(x_iᵀθ) x_i x_iᵀ`.
pub fn surrogate_hessian(
    theta: &[f64],
    td: &TransformedDataset,
    spec: &SurrogateSpec,
) -> DMatrix<f64> {
    let s = scores(td.x(), theta);
    let n = td.len() as f64;
    let w: Vec<f64> = s
        .iter()
        .zip(td.y_star())
        .map(|(&t, &y)| spec.d2loss(t, y) / n)
        .collect();
    weighted_gram(td.x(), &w)
}

/// `Σ w_i x_i x_iᵀ`.
fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let k = x.ncols();
    let mut g = DMatrix::zeros(k, k);
    for a in 0..k {
        let ca = x.column(a);
        for b in 0..=a {
            let cb = x.column(b);
            let v: f64 = ca
                .iter()
                .zip(cb.iter())
                .zip(w)
                .map(|((&p, &q), &wi)| p * q * wi)
                .sum();
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    g
}

fn condition_number(sym: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(sym.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Closed-form least squares of `y` on `x`.
pub fn least_squares(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let xtx = x.tr_mul(x);
    let condition = condition_number(&xtx);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularDesign { condition });
    }
    let xty = x.tr_mul(&DVector::from_column_slice(y));
    let chol = xtx.cholesky().ok_or(Error::SingularDesign { condition })?;
    Ok(chol.solve(&xty).data.into())
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Maximizes `Q_n(θ) − λ‖θ‖₁` (intercept unpenalized).
pub fn fit_linear(td: &TransformedDataset, cfg: &LinearFitConfig) -> Result<LinearFitResult> {
    cfg.validate()?;
    let k = td.ncols();
    if k > td.len() {
        return Err(Error::Data(format!(
            "design has {k} columns but only {} rows",
            td.len()
        )));
    }
    let spec = &cfg.spec;
    let theta0 = match cfg.init {
        Init::Zeros => vec![0.0; k],
        Init::OlsWarmStart => {
            let target: Vec<f64> = td.y_star().iter().map(|&y| spec.standardize(y)).collect();
            least_squares(td.x(), &target)?
        }
    };

    let (theta, iters, converged, gnorm, trace) = if cfg.l1_penalty > 0.0 {
        proximal_ascent(td, cfg, theta0)
    } else {
        smooth_ascent(td, cfg, theta0)
    };

    let covariance = if cfg.l1_penalty == 0.0 && converged {
        sandwich_covariance(&theta, td, spec).ok()
    } else {
        None
    };

    let scale = external_scale(spec);
    let mut theta_external: Vec<f64> = theta.iter().map(|t| t * scale).collect();
    let mut external_offset = 0.0;
    if spec.family() != Family::Uniform {
        if cfg.intercept && k > 0 {
            theta_external[0] += spec.cost();
        } else {
            external_offset = spec.cost();
        }
    }

    Ok(LinearFitResult {
        spec: *spec,
        theta,
        theta_external,
        external_offset,
        intercept: cfg.intercept,
        covariance,
        iters,
        converged,
        final_gradient_norm: gnorm,
        objective_trace: trace,
    })
}

type AscentOutcome = (Vec<f64>, usize, bool, f64, Vec<f64>);

fn smooth_ascent(
    td: &TransformedDataset,
    cfg: &LinearFitConfig,
    mut theta: Vec<f64>,
) -> AscentOutcome {
    let spec = &cfg.spec;
    let mut value = surrogate_objective(&theta, td, spec);
    let mut trace = vec![value];
    let mut grad = surrogate_gradient(&theta, td, spec);
    let mut gnorm = sup_norm(&grad);
    let mut step_hint = 1.0f64;
    let mut modified_hint = 0.5f64;
    let mut iters = 0;

    while gnorm > cfg.grad_tol && iters < cfg.max_iters {
        let g = DVector::from_column_slice(&grad);
        let mut newton_pd = true;
        let newton = match cfg.direction {
            AscentDirection::Newton => {
                let neg_h = -surrogate_hessian(&theta, td, spec);
                let mut dir = neg_h.clone().cholesky().map(|ch| ch.solve(&g));
                if dir.is_none() {
                    dir = modified_newton(neg_h, &g);
                    newton_pd = false;
                }
                dir
            }
            AscentDirection::Gradient => None,
        };
        let is_gradient = newton.is_none();
        let is_newton = !is_gradient && newton_pd;
        let (dir, mut t) = match newton {
            Some(d) if newton_pd => (d, 1.0),
            Some(d) => (d, modified_hint.min(1.0) * 2.0),
            None => (g.clone(), (step_hint * 2.0).min(1e12)),
        };
        let slope = g.dot(&dir);
        if !(slope > 0.0) {
            break;
        }

        let mut accepted = None;
        if is_newton && 0.5 * slope <= UNRESOLVED_GAIN * value.abs().max(1.0) {
            // Near the optimum the objective cannot see the step's gain, so
            // judge the full step by the gradient instead.
            let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(a, d)| a + d).collect();
            let v = surrogate_objective(&cand, td, spec);
            let gc = surrogate_gradient(&cand, td, spec);
            if v >= value && sup_norm(&gc) < gnorm {
                theta = cand;
                value = v;
                trace.push(value);
                grad = gc;
                gnorm = sup_norm(&grad);
                iters += 1;
                continue;
            }
        }
        for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<f64> = theta
                .iter()
                .zip(dir.iter())
                .map(|(a, d)| a + t * d)
                .collect();
            let v = surrogate_objective(&cand, td, spec);
            if v >= value + ARMIJO_SLOPE * t * slope {
                accepted = Some((cand, v));
                break;
            }
            t *= ARMIJO_SHRINK;
        }
        let Some((cand, v)) = accepted else {
            // No representable improvement left along this direction.
            break;
        };
        debug_assert!(v >= value, "line search must not decrease the objective");
        if is_gradient {
            step_hint = t;
        } else if !newton_pd {
            modified_hint = t;
        }
        theta = cand;
        value = v;
        trace.push(value);
        grad = surrogate_gradient(&theta, td, spec);
        gnorm = sup_norm(&grad);
        iters += 1;
    }
    (theta, iters, gnorm <= cfg.grad_tol, gnorm, trace)
}

/// Newton direction on `−∇²Q_n` with eigenvalues replaced by their
/// magnitudes, floored relative to the largest. Ascent along indefinite
/// directions where plain gradient steps zigzag.
fn modified_newton(neg_h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let eig = SymmetricEigen::new(neg_h);
    let top = eig.eigenvalues.amax();
    if !(top > 0.0 && top.is_finite()) {
        return None;
    }
    let floor = top * 1e-8;
    let coords = eig.eigenvectors.transpose() * g;
    let scaled = DVector::from_iterator(
        coords.len(),
        coords
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, l)| c / l.abs().max(floor)),
    );
    let dir = &eig.eigenvectors * scaled;
    dir.iter().all(|v| v.is_finite()).then_some(dir)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn proximal_ascent(
    td: &TransformedDataset,
    cfg: &LinearFitConfig,
    mut theta: Vec<f64>,
) -> AscentOutcome {
    let spec = &cfg.spec;
    let lambda = cfg.l1_penalty;
    let penalized = |j: usize| !(cfg.intercept && j == 0);
    let penalty = |th: &[f64]| -> f64 {
        lambda
            * th.iter()
                .enumerate()
                .filter(|(j, _)| penalized(*j))
                .map(|(_, v)| v.abs())
                .sum::<f64>()
    };
    let optimality = |th: &[f64], g: &[f64]| -> f64 {
        th.iter()
            .zip(g)
            .enumerate()
            .map(|(j, (&t, &gj))| {
                if !penalized(j) {
                    gj.abs()
                } else if t != 0.0 {
                    (gj - lambda * t.signum()).abs()
                } else {
                    (gj.abs() - lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    };

    let mut smooth = surrogate_objective(&theta, td, spec);
    let mut trace = vec![smooth - penalty(&theta)];
    let mut grad = surrogate_gradient(&theta, td, spec);
    let mut measure = optimality(&theta, &grad);
    let mut t = 1.0f64;
    let mut iters = 0;

    while measure > cfg.grad_tol && iters < cfg.max_iters {
        if cfg.direction == AscentDirection::Newton {
            if let Some((cand, v)) =
                orthant_newton_step(td, spec, &theta, &grad, lambda, &penalized)
            {
                if v - penalty(&cand) >= smooth - penalty(&theta) {
                    theta = cand;
                    smooth = v;
                    trace.push(smooth - penalty(&theta));
                    grad = surrogate_gradient(&theta, td, spec);
                    measure = optimality(&theta, &grad);
                    iters += 1;
                    continue;
                }
            }
        }
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&grad)
                .enumerate()
                .map(|(j, (&th, &g))| {
                    let v = th + t * g;
                    if penalized(j) {
                        soft_threshold(v, t * lambda)
                    } else {
                        v
                    }
                })
                .collect();
            let v = surrogate_objective(&cand, td, spec);
            let (lin, sq) = cand
                .iter()
                .zip(&theta)
                .zip(&grad)
                .fold((0.0, 0.0), |(l, s), ((&c, &th), &g)| {
                    (l + g * (c - th), s + (c - th) * (c - th))
                });
            if v >= smooth + lin - sq / (2.0 * t) {
                accepted = Some((cand, v));
                break;
            }
            t *= ARMIJO_SHRINK;
        }
        let Some((cand, v)) = accepted else { break };
        if cand == theta {
            break;
        }
        theta = cand;
        smooth = v;
        trace.push(smooth - penalty(&theta));
        grad = surrogate_gradient(&theta, td, spec);
        measure = optimality(&theta, &grad);
        t = (t * 2.0).min(1e12);
        iters += 1;
    }
    (theta, iters, measure <= cfg.grad_tol, measure, trace)
}

/// Newton step restricted to the current support, where the penalty is
/// linear. Rejected when it would flip the sign of a penalized coordinate.
fn orthant_newton_step(
    td: &TransformedDataset,
    spec: &SurrogateSpec,
    theta: &[f64],
    grad: &[f64],
    lambda: f64,
    penalized: &dyn Fn(usize) -> bool,
) -> Option<(Vec<f64>, f64)> {
    let active: Vec<usize> = (0..theta.len())
        .filter(|&j| !penalized(j) || theta[j] != 0.0)
        .collect();
    if active.is_empty() {
        return None;
    }
    let h = surrogate_hessian(theta, td, spec);
    let m = active.len();
    let neg_h = DMatrix::from_fn(m, m, |a, b| -h[(active[a], active[b])]);
    let r = DVector::from_iterator(
        m,
        active.iter().map(|&j| {
            if penalized(j) {
                grad[j] - lambda * theta[j].signum()
            } else {
                grad[j]
            }
        }),
    );
    let d = neg_h.cholesky()?.solve(&r);
    let mut cand = theta.to_vec();
    for (a, &j) in active.iter().enumerate() {
        cand[j] += d[a];
        if penalized(j) && cand[j].signum() != theta[j].signum() {
            return None;
        }
    }
    let v = surrogate_objective(&cand, td, spec);
    Some((cand, v))
}

/// `B̂⁻¹ M̂ B̂⁻¹ / n` at `θ̂`, on the loss scale.
pub fn sandwich_covariance(
    theta_hat: &[f64],
    td: &TransformedDataset,
    spec: &SurrogateSpec,
) -> Result<SandwichCovariance> {
    if theta_hat.len() != td.ncols() {
        return Err(Error::Dimension {
            expected: td.ncols(),
            got: theta_hat.len(),
        });
    }
    let n = td.len() as f64;
    let s = scores(td.x(), theta_hat);
    let (mut curv, mut score_sq) = (Vec::with_capacity(s.len()), Vec::with_capacity(s.len()));
    for (&t, &y) in s.iter().zip(td.y_star()) {
        let g = spec.dloss(t, y);
        curv.push(spec.d2loss(t, y) / n);
        score_sq.push(g * g / n);
    }
    let b_hat = weighted_gram(td.x(), &curv);
    let m_hat = weighted_gram(td.x(), &score_sq);
    let condition = condition_number(&b_hat);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularHessian { condition });
    }
    let b_inv = b_hat
        .clone()
        .try_inverse()
        .ok_or(Error::SingularHessian { condition })?;
    let raw = &b_inv * &m_hat * &b_inv / n;
    let sandwich = (&raw + raw.transpose()) * 0.5;
    let std_errors = sandwich
        .diagonal()
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    Ok(SandwichCovariance {
        b_hat,
        m_hat,
        sandwich,
        std_errors,
    })
}

/// `σ (x θ̂) + c` per row (`x θ̂` for the uniform family).
pub fn predict_cate(result: &LinearFitResult, x_new: &DMatrix<f64>) -> Result<Vec<f64>> {
    let s = result.scores(x_new)?;
    Ok(s.into_iter().map(|v| result.spec.to_external(v)).collect())
}

/// `1{τ̂ ≥ c}`.
pub fn policy_from_cate(tau_hat: &[f64], c: f64) -> Vec<bool> {
    tau_hat.iter().map(|&t| t >= c).collect()
}

/// Serializable summary of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub theta: Vec<f64>,
    pub theta_external: Vec<f64>,
    pub external_offset: f64,
    pub converged: bool,
    pub iters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors_external: Option<Vec<f64>>,
    pub final_gradient_norm: f64,
    pub sigma: Option<f64>,
    pub cost: f64,
    pub family: Family,
}

impl From<&LinearFitResult> for FitReport {
    fn from(r: &LinearFitResult) -> Self {
        FitReport {
            theta: r.theta.clone(),
            theta_external: r.theta_external.clone(),
            external_offset: r.external_offset,
            converged: r.converged,
            iters: r.iters,
            std_errors: r.covariance.as_ref().map(|c| c.std_errors.clone()),
            std_errors_external: r.external_std_errors(),
            final_gradient_norm: r.final_gradient_norm,
            sigma: (r.spec.family() != Family::Uniform).then(|| r.spec.scale()),
            cost: r.spec.cost(),
            family: r.spec.family(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{transform_outcomes, Dataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Builds a transformed dataset with the requested `Y*` (w = 1, e = 0.5).
    fn td_from(x: DMatrix<f64>, y_star: &[f64]) -> TransformedDataset {
        let n = y_star.len();
        let d = Dataset::new(
            x,
            vec![true; n],
            y_star.iter().map(|v| v * 0.5).collect(),
            vec![0.5; n],
        )
        .unwrap();
        transform_outcomes(&d).unwrap()
    }

    fn random_td(seed: u64, n: usize, k: usize) -> TransformedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, k, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..2.0)
            }
        });
        let y: Vec<f64> = (0..n)
            .map(|i| 0.5 + x[(i, 1)] - 0.3 * x[(i, k - 1)] + rng.random_range(-2.0..2.0))
            .collect();
        td_from(x, &y)
    }

    fn all_specs() -> Vec<SurrogateSpec> {
        vec![
            SurrogateSpec::normal(1.0, 1.0).unwrap(),
            SurrogateSpec::normal(0.5, 0.3).unwrap(),
            SurrogateSpec::logistic(1.0, 0.7).unwrap(),
            SurrogateSpec::mse_limit(1.0).unwrap(),
        ]
    }

    #[test]
    fn objective_at_zero_is_sample_mean_form() {
        let td = random_td(1, 50, 3);
        let spec = SurrogateSpec::normal(1.0, 2.0).unwrap();
        let ybar = td.y_star().iter().sum::<f64>() / 50.0;
        let expected = 0.5 * (ybar - 1.0) + 2.0 * crate::special::norm_pdf(0.0);
        assert!((surrogate_objective(&[0.0; 3], &td, &spec) - expected).abs() < 1e-12);

        let one = td_from(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), &[2.0]);
        let spec = SurrogateSpec::normal(1.0, 1.0).unwrap();
        let v = surrogate_objective(&[0.0, 3.0], &one, &spec);
        assert!((v - 0.898_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let td = random_td(2, 40, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in all_specs() {
            for _ in 0..50 {
                let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
                let g = surrogate_gradient(&theta, &td, &spec);
                let h = surrogate_hessian(&theta, &td, &spec);
                let eps = 1e-6;
                for j in 0..3 {
                    let (mut p, mut m) = (theta.clone(), theta.clone());
                    p[j] += eps;
                    m[j] -= eps;
                    let fd = (surrogate_objective(&p, &td, &spec)
                        - surrogate_objective(&m, &td, &spec))
                        / (2.0 * eps);
                    assert!((g[j] - fd).abs() / (1.0 + g[j].abs()) < 1e-5);
                    let gp = surrogate_gradient(&p, &td, &spec);
                    let gm = surrogate_gradient(&m, &td, &spec);
                    for i in 0..3 {
                        let fdh = (gp[i] - gm[i]) / (2.0 * eps);
                        assert!((h[(i, j)] - fdh).abs() / (1.0 + h[(i, j)].abs()) < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_fit_is_least_squares() {
        for seed in 0..5 {
            let td = random_td(seed, 200, 4);
            let cfg = LinearFitConfig::new(SurrogateSpec::mse_limit(1.0).unwrap());
            let fit = fit_linear(&td, &cfg).unwrap();
            let ols = least_squares(td.x(), td.y_star()).unwrap();
            assert!(fit.converged);
            assert!(
                sup_norm(
                    &fit.theta
                        .iter()
                        .zip(&ols)
                        .map(|(a, b)| a - b)
                        .collect::<Vec<_>>()
                ) < 1e-6
            );
            assert_eq!(fit.theta_external, fit.theta);
        }
    }

    #[test]
    fn gradient_direction_agrees_with_newton() {
        let td = random_td(9, 300, 3);
        let spec = SurrogateSpec::normal(1.0, 1.0).unwrap();
        let newton = fit_linear(&td, &LinearFitConfig::new(spec)).unwrap();
        let mut cfg = LinearFitConfig::new(spec);
        cfg.direction = AscentDirection::Gradient;
        cfg.grad_tol = 1e-9;
        cfg.max_iters = 200_000;
        let grad = fit_linear(&td, &cfg).unwrap();
        assert!(newton.converged && grad.converged);
        for (a, b) in newton.theta.iter().zip(&grad.theta) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn objective_trace_never_decreases() {
        for spec in all_specs() {
            for init in [Init::Zeros, Init::OlsWarmStart] {
                let td = random_td(4, 150, 3);
                let mut cfg = LinearFitConfig::new(spec);
                cfg.init = init;
                let fit = fit_linear(&td, &cfg).unwrap();
                assert!(fit.objective_trace.windows(2).all(|w| w[1] >= w[0]));
                assert!(fit.converged, "{spec:?} {init:?}");
            }
        }
    }

    #[test]
    fn flat_fit_for_constant_outcome() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(100, 2, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..2.0)
            }
        });
        let td = td_from(x.clone(), &[1.0; 100]);
        let spec = SurrogateSpec::normal(1.0, 1.0).unwrap();
        let fit = fit_linear(&td, &LinearFitConfig::new(spec)).unwrap();
        assert!(fit.theta[1].abs() < 1e-8);
        for t in predict_cate(&fit, &x).unwrap() {
            assert!((t - 1.0).abs() < 1e-8);
        }
        // grid check: nearby slopes do no better
        let best = surrogate_objective(&fit.theta, &td, &spec);
        for ds in [-0.1, -0.01, 0.01, 0.1] {
            let th = [fit.theta[0], fit.theta[1] + ds];
            assert!(surrogate_objective(&th, &td, &spec) <= best);
        }
    }

    #[test]
    fn penalized_fit_shrinks_and_drops_covariance() {
        let td = random_td(6, 300, 4);
        let spec = SurrogateSpec::normal(1.0, 1.0).unwrap();
        let free = fit_linear(&td, &LinearFitConfig::new(spec)).unwrap();
        let mut cfg = LinearFitConfig::new(spec);
        cfg.l1_penalty = 0.05;
        let pen = fit_linear(&td, &cfg).unwrap();
        assert!(pen.covariance.is_none());
        assert!(free.covariance.is_some());
        let l1 = |t: &[f64]| t[1..].iter().map(|v| v.abs()).sum::<f64>();
        assert!(l1(&pen.theta) < l1(&free.theta));
        assert!(pen.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        assert!(pen.converged, "{} {}", pen.iters, pen.final_gradient_norm);

        cfg.l1_penalty = 1e3;
        let zeroed = fit_linear(&td, &cfg).unwrap();
        assert!(zeroed.theta[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let x = DMatrix::from_fn(20, 3, |i, j| {
            if j == 2 {
                2.0 * i as f64
            } else if j == 1 {
                i as f64
            } else {
                1.0
            }
        });
        let td = td_from(x, &[1.0; 20]);
        let cfg = LinearFitConfig::new(SurrogateSpec::mse_limit(1.0).unwrap());
        assert!(matches!(
            fit_linear(&td, &cfg),
            Err(Error::SingularDesign { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = LinearFitConfig::new(SurrogateSpec::mse_limit(1.0).unwrap());
        cfg.grad_tol = 0.0;
        assert!(cfg.validate().is_err());
        cfg.grad_tol = 1e-8;
        cfg.l1_penalty = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn uniform_sandwich_is_hc0() {
        let td = random_td(7, 120, 3);
        let spec = SurrogateSpec::mse_limit(1.0).unwrap();
        let fit = fit_linear(&td, &LinearFitConfig::new(spec)).unwrap();
        let cov = fit.covariance.as_ref().unwrap();
        let n = td.len() as f64;
        let b_expected = td.x().tr_mul(td.x()) * (-2.0 / n);
        assert!((&cov.b_hat - &b_expected).amax() < 1e-12);

        // independent HC0: (XᵀX)⁻¹ Xᵀ diag(r²) X (XᵀX)⁻¹
        let x = td.x();
        let xtx_inv = x.tr_mul(x).try_inverse().unwrap();
        let fitted = x * DVector::from_column_slice(&fit.theta);
        let mut meat = DMatrix::zeros(3, 3);
        for i in 0..td.len() {
            let r = td.y_star()[i] - fitted[i];
            let xi = x.row(i).transpose();
            meat += &xi * xi.transpose() * (r * r);
        }
        let hc0 = &xtx_inv * meat * &xtx_inv;
        for j in 0..3 {
            assert!((cov.std_errors[j] - hc0[(j, j)].sqrt()).abs() < 1e-8);
        }
    }

    #[test]
    fn sandwich_is_symmetric_psd() {
        for spec in all_specs() {
            let td = random_td(8, 400, 3);
            let fit = fit_linear(&td, &LinearFitConfig::new(spec)).unwrap();
            let cov = sandwich_covariance(&fit.theta, &td, &spec).unwrap();
            let s = &cov.sandwich;
            assert!((s - s.transpose()).amax() <= 1e-10);
            let eig = SymmetricEigen::new(s.clone()).eigenvalues;
            assert!(eig.iter().all(|&v| v >= -1e-8));
        }
    }

    #[test]
    fn predict_and_policy() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let spec = SurrogateSpec::normal(1.0, 2.0).unwrap();
        let td = td_from(x.clone(), &[1.0, 2.0, 3.0]);
        let mut cfg = LinearFitConfig::new(spec);
        cfg.max_iters = 1;
        let mut fit = fit_linear(&td, &cfg).unwrap();
        fit.theta = vec![0.0, 0.0];
        assert_eq!(predict_cate(&fit, &x).unwrap(), vec![1.0; 3]);
        assert!(matches!(
            predict_cate(&fit, &DMatrix::zeros(2, 3)),
            Err(Error::Dimension { .. })
        ));

        assert_eq!(policy_from_cate(&[1.0], 1.0), vec![true]);
        assert_eq!(policy_from_cate(&[1.0 - 1e-12], 1.0), vec![false]);
        assert_eq!(
            policy_from_cate(&[0.0, 1.0, 2.0], 1.0),
            vec![false, true, true]
        );
    }

    #[test]
    fn external_map_is_exact_multiply_add() {
        let td = random_td(10, 100, 3);
        for spec in all_specs() {
            let fit = fit_linear(&td, &LinearFitConfig::new(spec)).unwrap();
            let pred = predict_cate(&fit, td.x()).unwrap();
            let s = scores(td.x(), &fit.theta);
            for (p, v) in pred.iter().zip(&s) {
                let expected = match spec.family() {
                    Family::Uniform => *v,
                    _ => spec.scale() * v + spec.cost(),
                };
                assert_eq!(*p, expected);
            }
        }
    }
}
