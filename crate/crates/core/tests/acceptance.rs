//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use policy_cate::data::{transform_outcomes, Dataset, Design, TransformedDataset};
use policy_cate::dgp::SimpleDgp;
use policy_cate::evaluation::TableRow;
use policy_cate::experiment::{
    run_table2, Table2Config, TAG_LINEAR_MSE, TAG_LINEAR_PROFIT, TAG_MAIL, TAG_NNET_MSE,
    TAG_NNET_PROFIT, TAG_OLS, TAG_ORACLE,
};
use policy_cate::linear::{
    fit_linear, least_squares, surrogate_gradient, surrogate_hessian, surrogate_objective, Init,
    LinearFitConfig,
};
use policy_cate::model::LinearFitter;
use policy_cate::neural::{Activation, Head, MlpConfig, MlpModel};
use policy_cate::selection::{Sigma, SigmaGrid};
use policy_cate::surrogate::{Family, ScalarSurrogateProblem, SurrogateSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(
    id: &str,
    name: &str,
    budget: Duration,
    run: impl FnOnce() -> Vec<(String, bool)>,
) -> bool {
    let start = Instant::now();
    let checks = run();
    let elapsed = start.elapsed();
    let mut all = true;
    for (i, (detail, pass)) in checks.iter().enumerate() {
        let tag = if checks.len() > 1 {
            format!("{id}.{}", i + 1)
        } else {
            id.to_string()
        };
        println!(
            "{} [{tag}] {name}: {detail}",
            if *pass { "PASS" } else { "FAIL" }
        );
        all &= pass;
    }
    let in_time = elapsed <= budget;
    println!(
        "{} [{id}.t] {name} runtime {:.1}s (budget {}s)",
        if in_time { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    all && in_time
}

fn check(detail: String, pass: bool) -> (String, bool) {
    (detail, pass)
}

fn outcome(o: Outcome) -> (String, bool) {
    (o.detail, o.pass)
}

// ---------------------------------------------------------------------------
// 1. scalar Fisher consistency

fn fisher_grid() -> Vec<(String, bool)> {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for family in [Family::Normal, Family::Logistic] {
        for tau0 in [-1.0, 0.5, 2.0] {
            for c in [-0.5, 0.0, 1.0] {
                for sigma in [0.3, 1.0, 3.0] {
                    let spec = SurrogateSpec::new(family, c, sigma).unwrap();
                    let got = ScalarSurrogateProblem::new(tau0, spec).argmax_default(1e-7);
                    match got {
                        Ok(t) => {
                            let err = (t - tau0).abs();
                            worst = worst.max(err);
                            if err >= 1e-3 {
                                failures
                                    .push(format!("{family} tau0={tau0} c={c} sigma={sigma}: {t}"));
                            }
                        }
                        Err(e) => {
                            failures.push(format!("{family} tau0={tau0} c={c} sigma={sigma}: {e}"))
                        }
                    }
                }
            }
        }
    }
    vec![check(
        format!(
            "54 problems, max |argmax - tau0| = {worst:.2e} (tol 1e-3){}",
            fmt_failures(&failures)
        ),
        failures.is_empty(),
    )]
}

fn fmt_failures(f: &[String]) -> String {
    if f.is_empty() {
        String::new()
    } else {
        format!("; failures: {}", f.join(", "))
    }
}

// ---------------------------------------------------------------------------
// 2. uniform threshold equals least squares

fn random_td(rng: &mut ChaCha8Rng, n: usize, k: usize) -> TransformedDataset {
    let x = DMatrix::from_fn(n, k, |_, j| {
        if j == 0 {
            1.0
        } else {
            rng.random_range(-2.0..2.0)
        }
    });
    let w: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let e: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            x[(i, 1)] + if w[i] { 0.5 * x[(i, k - 1)] } else { 0.0 } + rng.random_range(-1.0..1.0)
        })
        .collect();
    transform_outcomes(&Dataset::new(x, w, y, e).unwrap()).unwrap()
}

fn uniform_is_least_squares() -> Vec<(String, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 2];
    for _ in 0..20 {
        let n = rng.random_range(50..400);
        let k = rng.random_range(2..6);
        let td = random_td(&mut rng, n, k);
        let cost = rng.random_range(-1.0..2.0);
        let ls = least_squares(td.x(), td.y_star()).unwrap();
        for (k, init) in [Init::OlsWarmStart, Init::Zeros].into_iter().enumerate() {
            let cfg = LinearFitConfig {
                init,
                ..LinearFitConfig::new(SurrogateSpec::mse_limit(cost).unwrap())
            };
            let fit = fit_linear(&td, &cfg).unwrap();
            let d = fit
                .theta_external
                .iter()
                .zip(&ls)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst[k] = worst[k].max(d);
        }
    }
    vec![check(
        format!(
            "20 datasets, max sup-norm gap {:.2e} from the warm start, {:.2e} from zero (tol 1e-6)",
            worst[0], worst[1]
        ),
        worst[0] < 1e-6 && worst[1] < 1e-6,
    )]
}

// ---------------------------------------------------------------------------
// 3. derivative suites

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn linear_derivatives() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let specs = [
        SurrogateSpec::normal(1.0, 0.7).unwrap(),
        SurrogateSpec::logistic(0.5, 1.3).unwrap(),
        SurrogateSpec::uniform(1.0, -2.0, 4.0).unwrap(),
    ];
    let mut worst_g: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    let h = 1e-5;
    for spec in &specs {
        for _ in 0..3 {
            let td = random_td(&mut rng, 60, 3);
            let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-0.8..0.8)).collect();
            let g = surrogate_gradient(&theta, &td, spec);
            let hess = surrogate_hessian(&theta, &td, spec);
            for j in 0..theta.len() {
                let mut up = theta.clone();
                up[j] += h;
                let mut down = theta.clone();
                down[j] -= h;
                let fd = (surrogate_objective(&up, &td, spec)
                    - surrogate_objective(&down, &td, spec))
                    / (2.0 * h);
                worst_g = worst_g.max(rel_err(g[j], fd));
                let gu = surrogate_gradient(&up, &td, spec);
                let gd = surrogate_gradient(&down, &td, spec);
                for i in 0..theta.len() {
                    worst_h = worst_h.max(rel_err(hess[(i, j)], (gu[i] - gd[i]) / (2.0 * h)));
                }
            }
        }
    }
    Outcome {
        pass: worst_g < 1e-5 && worst_h < 1e-5,
        detail: format!(
            "linear, 3 families: gradient {worst_g:.2e}, Hessian {worst_h:.2e} (tol 1e-5)"
        ),
    }
}

fn mlp_derivatives() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let td = random_td(&mut rng, 5, 2);
    let heads = [
        Head::Surrogate {
            spec: SurrogateSpec::normal(1.0, 0.8).unwrap(),
        },
        Head::Surrogate {
            spec: SurrogateSpec::logistic(1.0, 1.5).unwrap(),
        },
        Head::Surrogate {
            spec: SurrogateSpec::mse_limit(1.0).unwrap(),
        },
        Head::DirectPolicy {
            cost: 1.0,
            temperature: 0.5,
        },
    ];
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    for activation in [Activation::Tanh, Activation::Relu] {
        for head in heads {
            let cfg = MlpConfig {
                hidden_sizes: vec![3],
                activation,
                weight_decay: 0.01,
                seed: 3,
                ..MlpConfig::default()
            };
            let mut m = MlpModel::untrained(2, &cfg, head);
            let mut p = m.params();
            for v in p.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
            m.set_params(&p).unwrap();
            let (_, g) = m.loss_and_gradient(&td).unwrap();
            for k in 0..p.len() {
                let mut q = p.clone();
                q[k] += h;
                m.set_params(&q).unwrap();
                let up = m.loss_and_gradient(&td).unwrap().0;
                q[k] -= 2.0 * h;
                m.set_params(&q).unwrap();
                let down = m.loss_and_gradient(&td).unwrap().0;
                worst = worst.max(rel_err(g[k], (up - down) / (2.0 * h)));
            }
        }
    }
    Outcome {
        pass: worst < 1e-4,
        detail: format!(
            "MLP [3], tanh/relu x normal/logistic/uniform/direct-policy: {worst:.2e} (tol 1e-4)"
        ),
    }
}

// ---------------------------------------------------------------------------
// 4, 5, 7 share the simple process: X ~ U(-1, 2), tau(x) = -x^2 + 2x + 1, c = 1.

fn tau_simple(x: f64) -> f64 {
    -x * x + 2.0 * x + 1.0
}

const QUAD_POINTS: usize = 30_000;

/// Midpoint-rule oracle profit and truth MSE of `tau_hat` under X ~ U(-1, 2).
fn simple_oracle(tau_hat: impl Fn(f64) -> f64, c: f64) -> (f64, f64) {
    let h = 3.0 / QUAD_POINTS as f64;
    let (mut profit, mut mse) = (0.0, 0.0);
    for i in 0..QUAD_POINTS {
        let x = -1.0 + (i as f64 + 0.5) * h;
        let (t, th) = (tau_simple(x), tau_hat(x));
        if th >= c {
            profit += t - c;
        }
        mse += (th - t) * (th - t);
    }
    (profit / QUAD_POINTS as f64, mse / QUAD_POINTS as f64)
}

fn external(
    fit: &policy_cate::linear::LinearFitResult,
    design: Design,
) -> impl Fn(f64) -> f64 + '_ {
    move |x| {
        let feats: Vec<f64> = match design {
            Design::Linear => vec![1.0, x],
            Design::Quadratic => vec![1.0, x, x * x],
            Design::Raw => vec![x],
        };
        fit.external_offset
            + feats
                .iter()
                .zip(&fit.theta_external)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn simple_td(n: usize, seed: u64) -> TransformedDataset {
    let s = SimpleDgp::default().generate(n, seed).unwrap();
    transform_outcomes(&s.dataset).unwrap()
}

fn quadratic_recovery() -> Vec<(String, bool)> {
    let reps = 100;
    let fitter = LinearFitter::new(Design::Quadratic);
    let spec = SurrogateSpec::normal(1.0, 1.0).unwrap();
    let mut coefs: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(reps)).collect();
    let mut profits = Vec::with_capacity(reps);
    for r in 0..reps {
        let td = simple_td(10_000, 10_000 + r as u64);
        let fit = fitter.fit_result(&td, &spec).unwrap();
        for (j, c) in coefs.iter_mut().enumerate() {
            c.push(fit.theta_external[j]);
        }
        profits.push(simple_oracle(external(&fit, Design::Quadratic), 1.0).0);
    }
    let truth = [1.0, 2.0, -1.0];
    let mut out = Vec::new();
    for (j, c) in coefs.iter().enumerate() {
        let (m, sd) = mean_sd(c);
        let se = sd / (reps as f64).sqrt();
        let z = (m - truth[j]) / se;
        out.push(check(
            format!(
                "coefficient {j}: mean {m:.4} vs {} ({z:+.2} MC SE, need |z| <= 3)",
                truth[j]
            ),
            z.abs() <= 3.0,
        ));
    }
    let (pm, _) = mean_sd(&profits);
    let floor = 0.98 * 4.0 / 9.0;
    out.push(check(
        format!(
            "mean oracle profit {pm:.4} >= {floor:.4} (min {:.4})",
            profits.iter().cloned().fold(f64::INFINITY, f64::min)
        ),
        pm >= floor,
    ));
    out
}

fn coverage() -> Vec<(String, bool)> {
    let reps = 500;
    let fitter = LinearFitter::new(Design::Quadratic);
    let spec = SurrogateSpec::normal(1.0, 1.0).unwrap();
    let truth = [1.0, 2.0, -1.0];
    let mut hits = [0usize; 3];
    for r in 0..reps {
        let td = simple_td(5000, 50_000 + r as u64);
        let fit = fitter.fit_result(&td, &spec).unwrap();
        let se = fit.external_std_errors().expect("covariance");
        for j in 0..3 {
            if (fit.theta_external[j] - truth[j]).abs() <= 1.959964 * se[j] {
                hits[j] += 1;
            }
        }
    }
    (0..3)
        .map(|j| {
            let cov = hits[j] as f64 / reps as f64;
            check(
                format!(
                    "coefficient {j}: 95% CI coverage {:.1}% in [90%, 98%]",
                    100.0 * cov
                ),
                (0.90..=0.98).contains(&cov),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// 6. method comparison on the complex process

fn row<'a>(rows: &'a [TableRow], tag: &str) -> Option<&'a TableRow> {
    rows.iter().find(|r| r.model_tag == tag)
}

fn table2() -> Vec<(String, bool)> {
    let cfg = Table2Config::default();
    let out = match run_table2(&cfg, |_, _| Ok(())) {
        Ok(o) => o,
        Err(e) => return vec![check(format!("run failed: {e}"), false)],
    };
    for r in &out.rows {
        println!(
            "      {:<16} profit {:.3} ({}) mse {} qini {:.3}",
            r.model_tag,
            r.profit.mean,
            r.profit.sd.map_or("--".into(), |s| format!("{s:.3}")),
            r.mse.map_or("--".into(), |m| format!("{:.3}", m.mean)),
            r.qini.mean
        );
    }
    let get = |tag: &str| row(&out.rows, tag).expect("row present");
    let (oracle, mail, ols) = (get(TAG_ORACLE), get(TAG_MAIL), get(TAG_OLS));
    let (lin_mse, lin_profit) = (get(TAG_LINEAR_MSE), get(TAG_LINEAR_PROFIT));
    let (nn_mse, nn_profit) = (get(TAG_NNET_MSE), get(TAG_NNET_PROFIT));
    let mse = |r: &TableRow| r.mse.map(|m| m.mean).unwrap_or(f64::NAN);

    let wins = out
        .reports
        .iter()
        .filter(|r| r.model_tag == TAG_LINEAR_PROFIT)
        .zip(out.reports.iter().filter(|r| r.model_tag == TAG_OLS))
        .filter(|(a, b)| a.profit > b.profit)
        .count();
    let best_linear_qini = [ols, lin_mse, lin_profit]
        .iter()
        .map(|r| r.qini.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    vec![
        check(
            format!(
                "Oracle profit {:.4} within 0.515 +- 0.01",
                oracle.profit.mean
            ),
            (oracle.profit.mean - 0.515).abs() <= 0.01,
        ),
        check(
            format!("Mail profit {:.4} within -0.004 +- 0.01", mail.profit.mean),
            (mail.profit.mean + 0.004).abs() <= 0.01,
        ),
        check(
            format!("OLS profit mean {:.4} in [0.24, 0.30]", ols.profit.mean),
            (0.24..=0.30).contains(&ols.profit.mean),
        ),
        check(
            format!("OLS MSE mean {:.4} in [1.47, 1.52]", mse(ols)),
            (1.47..=1.52).contains(&mse(ols)),
        ),
        check(
            format!(
                "linear profit-tuned profit {:.4} > OLS {:.4} (won {wins} of {} draws)",
                lin_profit.profit.mean, ols.profit.mean, cfg.replications
            ),
            lin_profit.profit.mean > ols.profit.mean,
        ),
        check(
            format!(
                "surrogate MLP (MSE-tuned) profit {:.4} >= 0.45, MSE {:.4} <= 0.5",
                nn_mse.profit.mean,
                mse(nn_mse)
            ),
            nn_mse.profit.mean >= 0.45 && mse(nn_mse) <= 0.5,
        ),
        check(
            format!(
                "surrogate MLP (profit-tuned) profit {:.4} >= 0.45",
                nn_profit.profit.mean
            ),
            nn_profit.profit.mean >= 0.45,
        ),
        check(
            format!(
                "Qini order: Oracle {:.3} >= MLP {:.3} >= best linear {:.3}",
                oracle.qini.mean, nn_mse.qini.mean, best_linear_qini
            ),
            oracle.qini.mean >= nn_mse.qini.mean && nn_mse.qini.mean >= best_linear_qini,
        ),
    ]
}

// ---------------------------------------------------------------------------
// 7. profit / accuracy frontier on the misspecified simple problem

fn frontier() -> Outcome {
    let reps = 30;
    let grid = SigmaGrid::default();
    let fitter = LinearFitter::new(Design::Linear);
    // per σ: per-replication (profit, mse)
    let mut results: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(reps); grid.len()];
    for r in 0..reps {
        let td = simple_td(10_000, 90_000 + r as u64);
        for (k, &sigma) in grid.values().iter().enumerate() {
            let fit = fitter
                .fit_result(&td, &sigma.spec(Family::Normal, 1.0).unwrap())
                .unwrap();
            results[k].push(simple_oracle(external(&fit, Design::Linear), 1.0));
        }
    }
    let inf = grid
        .values()
        .iter()
        .position(|s| *s == Sigma::Infinity)
        .expect("grid has infinity");
    let mse_inf = mean_sd(&results[inf].iter().map(|p| p.1).collect::<Vec<_>>()).0;
    let mut lines = Vec::new();
    let mut found = false;
    for (k, &sigma) in grid.values().iter().enumerate() {
        if k == inf {
            continue;
        }
        let diffs: Vec<f64> = results[k]
            .iter()
            .zip(&results[inf])
            .map(|(a, b)| a.0 - b.0)
            .collect();
        let (d, sd) = mean_sd(&diffs);
        let se = sd / (reps as f64).sqrt();
        let mse = mean_sd(&results[k].iter().map(|p| p.1).collect::<Vec<_>>()).0;
        let ok = d > 2.0 * se && mse > mse_inf;
        found |= ok;
        lines.push(format!(
            "sigma {sigma}: dprofit {d:+.4} (SE {se:.4}), mse {mse:.3}{}",
            if ok { " *" } else { "" }
        ));
    }
    Outcome {
        pass: found,
        detail: format!("MSE at inf {mse_inf:.3}; {}", lines.join("; ")),
    }
}

fn main() {
    let mut all = true;
    all &= report(
        "1",
        "Fisher consistency of the scalar argmax",
        Duration::from_secs(1),
        fisher_grid,
    );
    all &= report(
        "2",
        "uniform threshold fit equals least squares",
        Duration::from_secs(1),
        uniform_is_least_squares,
    );
    all &= report(
        "3",
        "analytic derivatives match finite differences",
        Duration::from_secs(10),
        || vec![outcome(linear_derivatives()), outcome(mlp_derivatives())],
    );
    all &= report(
        "4",
        "quadratic recovery on the simple process",
        Duration::from_secs(120),
        quadratic_recovery,
    );
    all &= report(
        "5",
        "sandwich confidence interval coverage",
        Duration::from_secs(180),
        coverage,
    );
    all &= report(
        "6",
        "complex-simulation method comparison",
        Duration::from_secs(900),
        table2,
    );
    all &= report(
        "7",
        "profit/accuracy frontier",
        Duration::from_secs(60),
        || vec![outcome(frontier())],
    );
    println!(
        "{}",
        if all {
            "acceptance: all criteria passed"
        } else {
            "acceptance: some criteria FAILED"
        }
    );
    if !all {
        std::process::exit(1);
    }
}
