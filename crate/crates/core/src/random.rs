//! Random variates used by the Gibbs sampler and the prior-predictive
//! simulators.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Eigenvalues of a covariance may dip this far below zero before it is
/// rejected as not positive semidefinite.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Draw from the scaled inverse chi-square distribution, i.e.
/// `df * scale / X` with `X ~ χ²(df)`.
pub fn sample_scaled_inv_chisq<R: Rng + ?Sized>(df: f64, scale: f64, rng: &mut R) -> Result<f64> {
    ScaledInvChiSq::new(df, scale).map(|d| d.sample(rng))
}

/// Reusable scaled inverse chi-square sampler. The chi-square variate comes
/// from a Gamma(df/2, 2) draw.
#[derive(Clone, Copy, Debug)]
pub struct ScaledInvChiSq {
    df: f64,
    scale: f64,
    chi: ChiSquared<f64>,
}

impl ScaledInvChiSq {
    pub fn new(df: f64, scale: f64) -> Result<Self> {
        if !(df > 0.0) || !df.is_finite() {
            return Err(Error::invalid(format!("degrees of freedom must be positive, got {df}")));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid(format!("scale must be positive, got {scale}")));
        }
        let chi = ChiSquared::new(df).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(ScaledInvChiSq { df, scale, chi })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.df * self.scale / self.chi.sample(rng)
    }

    pub fn mean(&self) -> Option<f64> {
        (self.df > 2.0).then(|| self.df * self.scale / (self.df - 2.0))
    }
}

/// Multivariate normal over ℝ³ through a symmetric (eigen) square root, which
/// also covers singular covariances.
#[derive(Clone, Copy, Debug)]
pub struct Mvn3 {
    mean: Vector3<f64>,
    root: Matrix3<f64>,
}

impl Mvn3 {
    pub fn new(mean: Vector3<f64>, cov: &Matrix3<f64>) -> Result<Self> {
        Ok(Mvn3 {
            mean,
            root: symmetric_root(cov)?,
        })
    }

    pub fn mean(&self) -> &Vector3<f64> {
        &self.mean
    }

    /// `mean + scale * root * z`; the Gibbs sampler uses `scale = σ`.
    pub fn sample_scaled<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> Vector3<f64> {
        let z = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        self.mean + (self.root * z) * scale
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        self.sample_scaled(1.0, rng)
    }
}

pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &Vector3<f64>,
    cov: &Matrix3<f64>,
    rng: &mut R,
) -> Result<Vector3<f64>> {
    Ok(Mvn3::new(*mean, cov)?.sample(rng))
}

/// `R` with `R Rᵀ = cov`, built as `Q diag(√λ) Qᵀ`.
pub fn symmetric_root(cov: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if cov.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure("covariance has non-finite entries".into()));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE {
        return Err(Error::NumericalFailure(format!(
            "covariance is not positive semidefinite (min eigenvalue {min:.3e})"
        )));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(eig.eigenvectors * Matrix3::from_diagonal(&sqrt) * eig.eigenvectors.transpose())
}

/// Complete randomization: exactly `n_treated` of `n` subjects treated, with
/// the treated set uniformly at random. Returns 0/1 indicators.
pub fn complete_randomization<R: Rng + ?Sized>(n: usize, n_treated: usize, rng: &mut R) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let mut w: Vec<f64> = (0..n).map(|i| if i < n_treated { 1.0 } else { 0.0 }).collect();
    w.shuffle(rng);
    w
}

pub fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}
