//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use bayes_procova::exec::TaskRng;
use bayes_procova::posterior::{component_posterior_flat, component_posterior_informative, omega_star};
use bayes_procova::prior::{sample_flat, sample_informative};
use bayes_procova::sampler::batch_means_se;
use bayes_procova::simulation::ReplicateRecord;
use bayes_procova::{
    build_design, conditional_beta_moments, ess, gibbs_run, procova_fit, run_scenario, sbc_validate, DesignMatrix,
    FlatComponent, GibbsConfig, HcVariant, InformativeComponent, MixturePrior, OmegaUpdate, RandomizedDesign,
    SamplerVariant, ScenarioConfig, ScenarioResult, SbcConfig, TrialDataset, WeightPrior,
};
use common::*;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn fixed_omega(omega: f64, kept: usize, seed: u64) -> GibbsConfig {
    GibbsConfig {
        iterations: kept + 100,
        burn_in: 100,
        seed,
        omega_update: OmegaUpdate::Fixed(omega),
        ..GibbsConfig::default()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn closed_form_vs_sampler() -> Outcome {
    let cfg = ScenarioConfig {
        trial_n: 50,
        hist_n: 300,
        rho_h: 0.3,
        seed: 101,
        replicates: 1,
        ..ScenarioConfig::baseline()
    };
    let (hist, trial) = bayes_procova::generate_pair(&cfg, 0).unwrap();
    let prior = cfg.build_prior(&hist).unwrap();
    let design = build_design(&trial).unwrap();
    let exact = conditional_beta_moments(0.5, &design, &prior).unwrap();
    let chain = gibbs_run(&design, &prior, &fixed_omega(0.5, 20_000, 7)).unwrap();
    let b1: Vec<f64> = chain[100..].iter().map(|d| d.beta[1]).collect();
    let m = mean(&b1);
    let sq: Vec<f64> = b1.iter().map(|x| (x - m).powi(2)).collect();
    let v = mean(&sq);
    let (se_m, se_v) = (batch_means_se(&b1, 20), batch_means_se(&sq, 20));
    let zm = (m - exact.mean[1]).abs() / se_m;
    let zv = (v - exact.cov[(1, 1)]).abs() / se_v;
    outcome(
        zm < 3.0 && zv < 3.0,
        format!(
            "mean {m:.5} vs {:.5} ({zm:.2} SE), var {v:.6} vs {:.6} ({zv:.2} SE)",
            exact.mean[1],
            exact.cov[(1, 1)]
        ),
    )
}

/// Likelihood of the centred outcomes given (β, σ²).
fn likelihood(design: &DesignMatrix, beta: &Vector3<f64>, sigma_sq: f64) -> f64 {
    let n = design.n() as f64;
    (-0.5 * n * (2.0 * std::f64::consts::PI * sigma_sq).ln() - design.residual_ss(beta) / (2.0 * sigma_sq)).exp()
}

fn mc_marginal(draw: impl Fn(&mut TaskRng) -> (Vector3<f64>, f64), design: &DesignMatrix, seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = 1_000_000;
    (0..n)
        .map(|_| {
            let (b, s) = draw(&mut r);
            likelihood(design, &b, s)
        })
        .sum::<f64>()
        / n as f64
}

fn omega_star_vs_monte_carlo() -> Outcome {
    let trial = TrialDataset::from_columns(
        &[0.9, 1.7, 0.2, 1.1, -0.3],
        &[0.0, 1.0, 0.0, 1.0, 0.0],
        &[0.4, 1.2, -0.6, 0.3, -1.0],
    )
    .unwrap();
    let design = build_design(&trial).unwrap();
    let informative = InformativeComponent {
        beta0_hat: 0.3,
        beta2_hat: 0.8,
        s2: 0.8,
        df: 8,
        k: [0.5, 1.0, 0.5],
        ss_m: 10.0,
    };
    let flat = FlatComponent {
        k: 1.0,
        nu0: 5.0,
        sigma0_sq: 1.0,
    };
    let omega = 0.5;
    let li = component_posterior_informative(&design, &informative).unwrap().log_marginal;
    let lf = component_posterior_flat(&design, &flat).unwrap().log_marginal;
    let closed = omega_star(omega, li, lf);
    let mi = mc_marginal(|r| sample_informative(&informative, r).unwrap(), &design, 1);
    let mf = mc_marginal(|r| sample_flat(&flat, r).unwrap(), &design, 2);
    let mc = omega * mi / (omega * mi + (1.0 - omega) * mf);
    let rel = (closed - mc).abs() / mc;
    outcome(
        rel < 0.05,
        format!(
            "ω* closed {closed:.5} vs Monte Carlo {mc:.5} (rel {rel:.2e}); marginals {:.3e}/{:.3e} vs {:.3e}/{:.3e}",
            li.exp(),
            lf.exp(),
            mi,
            mf
        ),
    )
}

fn non_informative_limit() -> Outcome {
    let mut r = rng(303);
    let trial = simulate_trial(100, [0.5, 4.0, 0.8], 1.0, &mut r);
    let design = build_design(&trial).unwrap();
    let prior = prior([0.05, 100.0, 0.05], 1e12, 1e-9, 1.0);
    let chain = gibbs_run(&design, &prior, &fixed_omega(0.0, 100_000, 3)).unwrap();
    let b1: Vec<f64> = chain[100..].iter().map(|d| d.beta[1]).collect();
    let m = mean(&b1);
    let sd = (b1.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b1.len() - 1) as f64).sqrt();
    let ols = procova_fit(&trial, HcVariant::HC1).unwrap();
    let exact = conditional_beta_moments(0.0, &design, &prior).unwrap();
    let rel_mean = rel_err(m, ols.beta1());
    let rel_exact = rel_err(exact.mean[1], ols.beta1());
    let rel_sd = rel_err(sd, ols.classical_se_beta1());
    outcome(
        rel_mean < 1e-3 && rel_exact < 1e-3 && rel_sd < 0.02,
        format!(
            "posterior mean {m:.5} vs OLS {:.5} (rel {rel_mean:.1e}, closed form rel {rel_exact:.1e}); sd {sd:.5} vs SE {:.5} (rel {rel_sd:.2e})",
            ols.beta1(),
            ols.classical_se_beta1()
        ),
    )
}

fn dense_equivalence() -> Outcome {
    let mut r = rng(404);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(4..=50);
        let trial = simulate_trial(n, [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 0.5], 1.3, &mut r);
        let k = [r.random_range(0.01..5.0), r.random_range(0.1..200.0), r.random_range(0.01..5.0)];
        let p = prior(k, r.random_range(0.5..500.0), r.random_range(0.5..6.0), r.random_range(0.2..4.0));
        let design = build_design(&trial).unwrap();
        let pairs = [
            (
                component_posterior_informative(&design, &p.informative).unwrap(),
                dense_component(&trial, p.informative.mean(), p.informative.k_diag(), p.informative.df as f64, p.informative.s2),
            ),
            (
                component_posterior_flat(&design, &p.flat).unwrap(),
                dense_component(&trial, Vector3::zeros(), Vector3::repeat(p.flat.k), p.flat.nu0, p.flat.sigma0_sq),
            ),
        ];
        for (a, d) in pairs {
            worst = worst
                .max((a.beta_mean - d.beta_mean).norm() / d.beta_mean.norm().max(1e-300))
                .max((a.cov_factor - d.cov_factor).norm() / d.cov_factor.norm())
                .max(rel_err(a.sigma_scale, d.sigma_scale))
                .max(rel_err(a.log_marginal, d.log_marginal));
        }
    }
    outcome(worst < 1e-10, format!("worst relative difference {worst:.2e} over 100 datasets"))
}

fn sbc_prior() -> MixturePrior {
    MixturePrior {
        informative: InformativeComponent {
            beta0_hat: 0.0,
            beta2_hat: 0.5,
            s2: 1.0,
            df: 20,
            k: [0.1, 1.0, 0.1],
            ss_m: 20.0,
        },
        flat: FlatComponent {
            k: 1.0,
            nu0: 5.0,
            sigma0_sq: 1.0,
        },
        weight: WeightPrior::default(),
    }
}

fn sbc_validity() -> Outcome {
    let prior = sbc_prior();
    let design = RandomizedDesign {
        n: 25,
        treated_fraction: 0.5,
    };
    let mut config = SbcConfig {
        replications: 500,
        seed: 505,
        ..SbcConfig::default()
    };
    let good = sbc_validate(&prior, &design, &config).unwrap();
    config.gibbs.variant = SamplerVariant::HalvedSigmaScale;
    let bad = sbc_validate(&prior, &design, &config).unwrap();
    outcome(
        good.p_value > 0.01 && bad.p_value < 0.001,
        format!(
            "exact sampler χ² {:.1} (p = {:.3}); halved σ² scale χ² {:.1} (p = {:.1e})",
            good.chi_square, good.p_value, bad.chi_square, bad.p_value
        ),
    )
}

fn scenario(trial_n: usize, hist_n: usize, rho: f64, bias: f64, sigma_prior: [f64; 2], seed: u64) -> ScenarioResult {
    run_scenario(&ScenarioConfig {
        trial_n,
        hist_n,
        rho_h: rho,
        bias_shift: bias,
        flat_sigma_prior: sigma_prior,
        weight_prior: [1.0, 1.0],
        replicates: 200,
        seed,
        ..ScenarioConfig::baseline()
    })
    .unwrap()
}

fn ess_identity(results: &[&ScenarioResult]) -> Outcome {
    let mut checked = 0;
    let mut bad = 0;
    for res in results {
        let n = res.config.trial_n as f64;
        for ReplicateRecord {
            procova_var: v1,
            beta1_var: v2,
            ess_gain,
            ..
        } in &res.records
        {
            checked += 1;
            let direct = n * (v1 / v2 - 1.0);
            let via_ess = ess(res.config.trial_n, *v1, *v2).unwrap() - n;
            if *ess_gain != direct || (via_ess - direct).abs() > 1e-9 * direct.abs().max(n) {
                bad += 1;
            }
        }
    }
    outcome(bad == 0 && checked > 0, format!("{checked} replicates checked, {bad} mismatches"))
}

fn prior_predictive_t() -> Outcome {
    let comp = InformativeComponent {
        beta0_hat: 0.2,
        beta2_hat: 0.6,
        s2: 1.3,
        df: 20,
        k: [2.0, 1.0, 1.0],
        ss_m: 10.0,
    };
    let w = [0.0, 1.0, 0.0, 1.0, 1.0];
    let m = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let n = w.len();
    let v = DMatrix::from_fn(n, 3, |i, j| [1.0, w[i], m[i]][j]);
    let draws = 100_000;
    let mut r = rng(1010);
    let mut sum = DVector::<f64>::zeros(n);
    let mut outer = DMatrix::<f64>::zeros(n, n);
    for _ in 0..draws {
        let (beta, sigma_sq) = sample_informative(&comp, &mut r).unwrap();
        let b = DVector::from_column_slice(beta.as_slice());
        let eps = DVector::from_fn(n, |_, _| sigma_sq.sqrt() * normal(&mut r));
        let y = &v * b + eps;
        sum += &y;
        outer += &y * y.transpose();
    }
    let mu = &sum / draws as f64;
    let cov = (&outer - &mu * mu.transpose() * draws as f64) / (draws - 1) as f64;
    let df = comp.df as f64;
    let kd = DMatrix::from_diagonal(&DVector::from_column_slice(&comp.k));
    let expected = (DMatrix::identity(n, n) + &v * kd * v.transpose()) * (df / (df - 2.0) * comp.s2);
    let worst = cov
        .iter()
        .zip(expected.iter())
        .map(|(a, b)| (a - b).abs() / b.abs())
        .fold(0.0, f64::max);
    outcome(worst < 0.05, format!("worst elementwise relative difference {worst:.3}"))
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn main() {
    let mut lines = Vec::new();
    let mut record = |id: &str, title: &str, limit: Option<Duration>, (out, took): (Outcome, Duration)| {
        let in_time = limit.is_none_or(|l| took <= l);
        let pass = out.pass && in_time;
        let timing = match limit {
            Some(l) => format!("{:.1}s, limit {}s", took.as_secs_f64(), l.as_secs()),
            None => format!("{:.1}s", took.as_secs_f64()),
        };
        let line = format!("[{}] {id:<3} {title}: {} ({timing})", if pass { "PASS" } else { "FAIL" }, out.detail);
        println!("{line}");
        lines.push(pass);
    };

    record("1", "closed form vs sampler", Some(Duration::from_secs(10)), timed(closed_form_vs_sampler));
    record("2", "ω* vs Monte Carlo marginal likelihoods", Some(Duration::from_secs(60)), timed(omega_star_vs_monte_carlo));
    record("3", "non-informative limit", None, timed(non_informative_limit));
    record("4", "dense-formula equivalence", None, timed(dense_equivalence));
    record("5", "simulation-based calibration", Some(Duration::from_secs(900)), timed(sbc_validity));

    let (s6a, t6a) = timed_scenario(|| scenario(100, 500, 0.5, 0.0, [3.0, 100.0], 606));
    let (s6b, t6b) = timed_scenario(|| scenario(100, 500, 0.5, 0.0, [1.0, 1.0], 607));
    let (s8, t8) = timed_scenario(|| scenario(100, 300, 0.3, 5.0, [1.0, 1.0], 808));

    record(
        "6a",
        "scenario 1, InvChiSq(3,100)",
        None,
        (
            outcome(
                s6a.avg_posterior_omega >= 0.9 && s6a.variance_reduction_pct.median > 0.0,
                format!(
                    "average posterior ω* {:.3} (ω draws {:.3}), median variance reduction {:.1}%",
                    s6a.avg_posterior_omega, s6a.avg_omega_draw, s6a.variance_reduction_pct.median
                ),
            ),
            t6a,
        ),
    );
    record(
        "6b",
        "scenario 1, InvChiSq(1,1)",
        None,
        (
            outcome(
                (0.18..=0.48).contains(&s6b.avg_posterior_omega),
                format!(
                    "average posterior ω* {:.3} (ω draws {:.3}), target [0.18, 0.48]",
                    s6b.avg_posterior_omega, s6b.avg_omega_draw
                ),
            ),
            t6b,
        ),
    );
    record(
        "7",
        "bias control",
        None,
        (
            outcome(
                s6a.mean_abs_bias < 0.05,
                format!("|mean(β̂₁ − 0)| = {:.4}", s6a.mean_abs_bias),
            ),
            Duration::ZERO,
        ),
    );
    record(
        "8",
        "large-shift recovery",
        None,
        (
            outcome(
                s8.variance_reduction_pct.median.abs() <= 5.0,
                format!(
                    "median variance reduction {:.2}% at bias shift 5 (ω* {:.3})",
                    s8.variance_reduction_pct.median, s8.avg_posterior_omega
                ),
            ),
            t8,
        ),
    );
    record("9", "ESS identity", None, timed(|| ess_identity(&[&s6a, &s6b, &s8])));
    record("10", "prior predictive t form", None, timed(prior_predictive_t));

    let passed = lines.iter().filter(|&&p| p).count();
    println!("{passed} of {} criteria passed", lines.len());
    if passed != lines.len() {
        std::process::exit(1);
    }
}

fn timed_scenario(f: impl FnOnce() -> ScenarioResult) -> (ScenarioResult, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}
