#![allow(dead_code)]

use bayes_procova::exec::TaskRng;
use bayes_procova::{
    FlatComponent, HistoricalDataset, InformativeComponent, MixturePrior, TrialDataset, WeightPrior,
};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

pub fn rng(seed: u64) -> TaskRng {
    TaskRng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Trial with balanced arms, standard-normal scores and
/// `y = b0 + b1 w + b2 m + sigma ε`.
pub fn simulate_trial(n: usize, coef: [f64; 3], sigma: f64, rng: &mut impl Rng) -> TrialDataset {
    let w: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let m: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| coef[0] + coef[1] * w[i] + coef[2] * m[i] + sigma * normal(rng))
        .collect();
    TrialDataset::from_columns(&y, &w, &m).unwrap()
}

pub fn simulate_historical(n: usize, slope: f64, rng: &mut impl Rng) -> HistoricalDataset {
    let m: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let y: Vec<f64> = m.iter().map(|&x| slope * x + normal(rng)).collect();
    HistoricalDataset::new(y, m).unwrap()
}

pub fn prior(k: [f64; 3], flat_k: f64, nu0: f64, sigma0_sq: f64) -> MixturePrior {
    MixturePrior {
        informative: InformativeComponent {
            beta0_hat: 0.2,
            beta2_hat: 0.7,
            s2: 1.1,
            df: 30,
            k,
            ss_m: 30.0,
        },
        flat: FlatComponent {
            k: flat_k,
            nu0,
            sigma0_sq,
        },
        weight: WeightPrior::default(),
    }
}

/// Quantities of one conjugate component evaluated from the full `N`-row
/// design (`N × N` marginal covariance, augmented QR for β), as an
/// independent check of the 3 × 3 reductions.
pub struct DenseComponent {
    pub beta_mean: Vector3<f64>,
    pub cov_factor: Matrix3<f64>,
    pub sigma_scale: f64,
    pub log_marginal: f64,
}

pub fn dense_component(
    trial: &TrialDataset,
    mean: Vector3<f64>,
    k: Vector3<f64>,
    df: f64,
    scale: f64,
) -> DenseComponent {
    let subjects = trial.subjects();
    let n = subjects.len();
    let m_bar = subjects.iter().map(|s| s.score).sum::<f64>() / n as f64;
    let v = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => subjects[i].treatment(),
        _ => subjects[i].score - m_bar,
    });
    let y = DVector::from_fn(n, |i, _| subjects[i].outcome - m_bar);
    let kd = DMatrix::from_diagonal(&DVector::from_column_slice(k.as_slice()));
    let mu = DVector::from_column_slice(mean.as_slice());
    let sigma = DMatrix::identity(n, n) + &v * &kd * v.transpose();
    let sigma_inv = sigma.clone().try_inverse().unwrap();
    let r = &y - &v * &mu;
    let quad = (r.transpose() * &sigma_inv * &r)[(0, 0)];
    // β* and the covariance factor from the augmented least-squares system
    // [V; K^{-1/2}] β ≈ [y; K^{-1/2} μ], solved by QR over all N + 3 rows.
    let aug = DMatrix::from_fn(n + 3, 3, |i, j| {
        if i < n {
            v[(i, j)]
        } else if i - n == j {
            1.0 / k[j].sqrt()
        } else {
            0.0
        }
    });
    let rhs = DVector::from_fn(n + 3, |i, _| if i < n { y[i] } else { mu[i - n] / k[i - n].sqrt() });
    let qr = aug.qr();
    let r_inv = qr.r().try_inverse().unwrap();
    let b = &r_inv * (qr.q().transpose() * rhs);
    let cov = &r_inv * r_inv.transpose();
    let nf = n as f64;
    let log_marginal = ln_gamma(0.5 * (df + nf)) - ln_gamma(0.5 * df) - 0.5 * nf * (df * PI).ln()
        - 0.5 * nf * scale.ln()
        - 0.5 * sigma.determinant().ln()
        - 0.5 * (df + nf) * (1.0 + quad / (df * scale)).ln();
    DenseComponent {
        beta_mean: Vector3::new(b[0], b[1], b[2]),
        cov_factor: Matrix3::from_fn(|i, j| cov[(i, j)]),
        sigma_scale: (df * scale + quad) / (df + nf),
        log_marginal,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
