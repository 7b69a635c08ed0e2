//! PROCOVA baseline: OLS of the outcome on `(1, w, m)` with uncentered scores
//! and heteroskedasticity-consistent standard errors.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::TrialDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum HcVariant {
    HC0,
    #[default]
    HC1,
    HC3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vector3<f64>,
    pub classical_cov: Matrix3<f64>,
    pub hc_cov: Matrix3<f64>,
    pub residuals: Vec<f64>,
    pub s_sq: f64,
    pub hc_variant: HcVariant,
}

impl OlsFit {
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    pub fn beta1(&self) -> f64 {
        self.coefficients[1]
    }

    pub fn hc_se_beta1(&self) -> f64 {
        self.hc_cov[(1, 1)].max(0.0).sqrt()
    }

    pub fn classical_se_beta1(&self) -> f64 {
        self.classical_cov[(1, 1)].max(0.0).sqrt()
    }
}

pub fn procova_fit(trial: &TrialDataset, hc: HcVariant) -> Result<OlsFit> {
    let rows: Vec<Vector3<f64>> = trial
        .subjects()
        .iter()
        .map(|s| Vector3::new(1.0, s.treatment(), s.score))
        .collect();
    let n = rows.len();
    let mut xtx = Matrix3::zeros();
    let mut xty = Vector3::zeros();
    for (x, s) in rows.iter().zip(trial.subjects()) {
        xtx += x * x.transpose();
        xty += x * s.outcome;
    }
    // Unit-diagonal scaling makes the rank check independent of score units.
    let d = Vector3::from_fn(|i, _| xtx[(i, i)].sqrt());
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::RankDeficient("a design column is identically zero".into()));
    }
    let scaled = Matrix3::from_fn(|i, j| xtx[(i, j)] / (d[i] * d[j]));
    if scaled.determinant() <= 1e-12 {
        return Err(Error::RankDeficient("columns (1, w, m) are collinear".into()));
    }
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("XᵀX is singular".into()))?;
    let inv = (inv + inv.transpose()) * 0.5;
    let coefficients = inv * xty;
    let residuals: Vec<f64> = rows
        .iter()
        .zip(trial.subjects())
        .map(|(x, s)| s.outcome - x.dot(&coefficients))
        .collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let s_sq = rss / (n - 3) as f64;

    let mut meat = Matrix3::zeros();
    for (x, e) in rows.iter().zip(&residuals) {
        let a = match hc {
            HcVariant::HC0 => 1.0,
            HcVariant::HC1 => n as f64 / (n - 3) as f64,
            HcVariant::HC3 => {
                let h = x.dot(&(inv * x));
                if h < 1.0 {
                    (1.0 - h).powi(-2)
                } else {
                    // full leverage forces a zero residual
                    0.0
                }
            }
        };
        meat += x * x.transpose() * (a * e * e);
    }
    let hc_cov = inv * meat * inv;
    Ok(OlsFit {
        coefficients,
        classical_cov: inv * s_sq,
        hc_cov: (hc_cov + hc_cov.transpose()) * 0.5,
        residuals,
        s_sq,
        hc_variant: hc,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaldInference {
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub reject: bool,
}

/// Wald interval `β̂₁ ± t_{N−3, 1−α/2}·SE_HC`; rejects when it excludes zero.
pub fn procova_ci_and_test(fit: &OlsFit, alpha: f64) -> Result<WaldInference> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let df = fit.n() as f64 - 3.0;
    let t = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::NumericalFailure(e.to_string()))?;
    let crit = t.inverse_cdf(1.0 - alpha / 2.0);
    let estimate = fit.beta1();
    let se = fit.hc_se_beta1();
    let (lower, upper) = (estimate - crit * se, estimate + crit * se);
    Ok(WaldInference {
        estimate,
        se,
        lower,
        upper,
        reject: lower > 0.0 || upper < 0.0,
    })
}
