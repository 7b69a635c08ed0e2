mod common;

use bayes_procova::frequentist::{procova_fit, HcVariant};
use bayes_procova::posterior::{OmegaDensity, OmegaGrid};
use bayes_procova::prior::{calibrate_k, historical_regression};
use bayes_procova::sampler::sample_omega_inverse_cdf;
use bayes_procova::{build_design, PosteriorComponents, SubjectRecord, TrialDataset, WeightPrior};
use common::*;
use proptest::prelude::*;

fn trial_strategy() -> impl Strategy<Value = TrialDataset> {
    (6usize..40)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-3.0f64..3.0, n),
            )
        })
        .prop_map(|(y, m)| {
            let w: Vec<f64> = (0..y.len()).map(|i| (i % 2) as f64).collect();
            TrialDataset::from_columns(&y, &w, &m).unwrap()
        })
        .prop_filter("full rank", |t| build_design(t).is_ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_invariant_to_row_order(trial in trial_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let p = prior([0.1, 100.0, 0.1], 100.0, 2.0, 1.0);
        let a = PosteriorComponents::new(&build_design(&trial).unwrap(), &p).unwrap();
        let mut rows: Vec<SubjectRecord> = trial.subjects().to_vec();
        rows.shuffle(&mut rng(seed));
        let shuffled = TrialDataset::new(rows).unwrap();
        let b = PosteriorComponents::new(&build_design(&shuffled).unwrap(), &p).unwrap();
        for (x, y) in [(&a.informative, &b.informative), (&a.flat, &b.flat)] {
            prop_assert!((x.beta_mean - y.beta_mean).norm() <= 1e-9 * (1.0 + x.beta_mean.norm()));
            prop_assert!(rel_err(x.log_marginal, y.log_marginal) < 1e-9);
        }
    }

    #[test]
    fn centred_score_column_sums_to_zero(trial in trial_strategy()) {
        let d = build_design(&trial).unwrap();
        let sum: f64 = d.rows().iter().map(|r| r[2]).sum();
        let scale: f64 = d.rows().iter().map(|r| r[2].abs()).sum();
        prop_assert!(sum.abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn ols_residuals_orthogonal_and_hc1_is_scaled_hc0(trial in trial_strategy()) {
        let f0 = procova_fit(&trial, HcVariant::HC0).unwrap();
        let f1 = procova_fit(&trial, HcVariant::HC1).unwrap();
        let n = trial.len() as f64;
        let cols = [
            f0.residuals.iter().sum::<f64>(),
            f0.residuals.iter().zip(trial.subjects()).map(|(e, s)| e * s.treatment()).sum::<f64>(),
            f0.residuals.iter().zip(trial.subjects()).map(|(e, s)| e * s.score).sum::<f64>(),
        ];
        for c in cols {
            prop_assert!(c.abs() < 1e-8);
        }
        let ratio = n / (n - 3.0);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((f1.hc_cov[(i, j)] - f0.hc_cov[(i, j)] * ratio).abs() <= 1e-12 * f1.hc_cov.norm());
            }
        }
    }

    #[test]
    fn score_shift_only_moves_intercept(trial in trial_strategy(), shift in -10.0f64..10.0) {
        let moved: Vec<SubjectRecord> = trial
            .subjects()
            .iter()
            .map(|s| SubjectRecord::new(s.outcome, s.treated, s.score + shift))
            .collect();
        let a = procova_fit(&trial, HcVariant::HC1).unwrap();
        let b = procova_fit(&TrialDataset::new(moved).unwrap(), HcVariant::HC1).unwrap();
        prop_assert!((a.coefficients[1] - b.coefficients[1]).abs() < 1e-9);
        prop_assert!((a.coefficients[2] - b.coefficients[2]).abs() < 1e-9);
    }

    #[test]
    fn historical_fit_solves_normal_equations(
        y in prop::collection::vec(-5.0f64..5.0, 8..60),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let m: Vec<f64> = y.iter().map(|_| normal(&mut r)).collect();
        let f = historical_regression(&y, &m).unwrap();
        let resid: Vec<f64> = y.iter().zip(&m).map(|(y, m)| y - f.m_bar - f.beta0 - f.beta2 * (m - f.m_bar)).collect();
        let scale: f64 = y.iter().map(|v| v.abs()).sum::<f64>() + 1.0;
        prop_assert!(resid.iter().sum::<f64>().abs() < 1e-10 * scale);
        prop_assert!(resid.iter().zip(&m).map(|(e, m)| e * (m - f.m_bar)).sum::<f64>().abs() < 1e-9 * scale);
    }

    #[test]
    fn calibration_monotone_in_gamma(g1 in 0.01f64..10.0, g2 in 0.01f64..10.0, var_delta in 0.0f64..1.0) {
        let comp = prior([0.1, 100.0, 0.1], 100.0, 1.0, 1.0).informative;
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let a = calibrate_k(&comp, lo, var_delta).unwrap();
        let b = calibrate_k(&comp, hi, var_delta).unwrap();
        prop_assert!(a.0 <= b.0 && a.1 <= b.1);
    }

    #[test]
    fn inverse_cdf_is_monotone(raw in prop::collection::vec(0.0f64..5.0, 64), u1 in 0.001f64..0.999, u2 in 0.001f64..0.999) {
        let grid = OmegaGrid::new(64, &WeightPrior::default()).unwrap();
        let mut d = OmegaDensity::uniform(&grid);
        for (f, v) in d.density.iter_mut().zip(&raw) {
            *f = v + 1e-3;
        }
        let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
        let a = sample_omega_inverse_cdf(&d, lo).unwrap();
        let b = sample_omega_inverse_cdf(&d, hi).unwrap();
        prop_assert!(a <= b && a > 0.0 && b < 1.0);
    }
}
