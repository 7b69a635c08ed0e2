//! Closed-form posterior quantities given the mixture weight ω.
//!
//! Each prior component is conjugate, so conditional on ω the posterior of
//! `(β, σ²)` is a two-component mixture of Normal–scaled-inverse-χ²
//! distributions. All `N × N` expressions are reduced to 3 × 3 work via
//!
//! ```text
//! (I + V K Vᵀ)⁻¹ = I − V (K⁻¹ + VᵀV)⁻¹ Vᵀ
//! det(I + V K Vᵀ) = det(I₃ + K^{1/2} VᵀV K^{1/2})
//! ```
//!
//! and marginal likelihoods are carried in log space.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::prior::{log_prior_density_flat, log_prior_density_informative, MixturePrior, WeightPrior};

pub const DEFAULT_OMEGA_GRID: usize = 2048;

/// One conjugate component of the conditional posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentPosterior {
    /// `β*` (informative) or `b*` (flat).
    pub beta_mean: Vector3<f64>,
    /// Posterior covariance of β divided by σ².
    pub cov_factor: Matrix3<f64>,
    /// `s*²` or `σ₀,*²`.
    pub sigma_scale: f64,
    /// `N + N_H − 2` or `N + ν₀`.
    pub sigma_df: f64,
    /// Log marginal likelihood of `y⁽ᶜ⁾` under this prior component
    /// (multivariate t).
    pub log_marginal: f64,
}

impl ComponentPosterior {
    /// Marginal posterior covariance of β (multivariate t), defined for df > 2.
    pub fn beta_cov(&self) -> Option<Matrix3<f64>> {
        (self.sigma_df > 2.0).then(|| self.cov_factor * (self.sigma_df * self.sigma_scale / (self.sigma_df - 2.0)))
    }

    /// `log p(β, σ² | y)` within this component.
    pub fn log_density(&self, beta: &Vector3<f64>, sigma_sq: f64) -> Result<f64> {
        let chol = self
            .cov_factor
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("posterior covariance is not positive definite".into()))?;
        let d = beta - self.beta_mean;
        let solved = chol.solve(&d);
        let quad = d.dot(&solved);
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let ln_s = sigma_sq.ln();
        let normal = -1.5 * (2.0 * PI).ln() - 1.5 * ln_s - 0.5 * log_det - quad / (2.0 * sigma_sq);
        Ok(normal + log_scaled_inv_chisq(sigma_sq, self.sigma_df, self.sigma_scale))
    }
}

pub(crate) fn log_scaled_inv_chisq(x: f64, df: f64, scale: f64) -> f64 {
    let h = 0.5 * df;
    h * (h * scale).ln() - ln_gamma(h) - (h + 1.0) * x.ln() - df * scale / (2.0 * x)
}

/// Conjugate update for `β | σ² ~ N(mean, σ² diag(k))`, `σ² ~ df·scale/χ²(df)`.
fn conjugate_update(
    design: &DesignMatrix,
    prior_mean: &Vector3<f64>,
    k: &Vector3<f64>,
    prior_df: f64,
    prior_scale: f64,
) -> Result<ComponentPosterior> {
    if !(prior_scale > 0.0) || !(prior_df > 0.0) {
        return Err(Error::invalid(format!(
            "σ² prior needs positive df and scale, got df={prior_df}, scale={prior_scale}"
        )));
    }
    let n = design.n() as f64;
    let root_k = Matrix3::from_diagonal(&k.map(f64::sqrt));
    let inner = Matrix3::identity() + root_k * design.gram() * root_k;
    let chol = inner
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("I + K^½ VᵀV K^½ is not positive definite".into()))?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let inner_inv = chol.inverse();
    let mut cov_factor = root_k * inner_inv * root_k;
    cov_factor = (cov_factor + cov_factor.transpose()) * 0.5;

    // Vᵀ(y − Vμ)
    let u = design.cross() - design.gram() * prior_mean;
    let beta_mean = prior_mean + cov_factor * u;
    if beta_mean.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure("posterior mean is not finite".into()));
    }

    let rss = design.residual_ss(&beta_mean);
    let penalty: f64 = (0..3).map(|j| (beta_mean[j] - prior_mean[j]).powi(2) / k[j]).sum();
    // (y − Vμ)ᵀ(I + VKVᵀ)⁻¹(y − Vμ) as a sum of non-negative terms.
    let quad = rss + penalty;
    let sigma_df = n + prior_df;
    let sigma_scale = (rss + prior_df * prior_scale + penalty) / sigma_df;

    let log_marginal = ln_gamma(0.5 * sigma_df) - ln_gamma(0.5 * prior_df)
        - 0.5 * n * (prior_df * PI).ln()
        - 0.5 * n * prior_scale.ln()
        - 0.5 * log_det
        - 0.5 * sigma_df * (quad / (prior_df * prior_scale)).ln_1p();

    Ok(ComponentPosterior {
        beta_mean,
        cov_factor,
        sigma_scale,
        sigma_df,
        log_marginal,
    })
}

pub fn component_posterior_informative(
    design: &DesignMatrix,
    comp: &crate::prior::InformativeComponent,
) -> Result<ComponentPosterior> {
    comp.validate()?;
    conjugate_update(design, &comp.mean(), &comp.k_diag(), comp.df as f64, comp.s2)
}

pub fn component_posterior_flat(design: &DesignMatrix, comp: &crate::prior::FlatComponent) -> Result<ComponentPosterior> {
    comp.validate()?;
    conjugate_update(
        design,
        &Vector3::zeros(),
        &Vector3::repeat(comp.k),
        comp.nu0,
        comp.sigma0_sq,
    )
}

/// Posterior probability of the informative component given ω:
/// `ω* = 1 / (1 + exp(log((1−ω)/ω) + ℓ_F − ℓ_I))`.
pub fn omega_star(omega: f64, log_ml_informative: f64, log_ml_flat: f64) -> f64 {
    if omega <= 0.0 {
        return 0.0;
    }
    if omega >= 1.0 {
        return 1.0;
    }
    if log_ml_informative == log_ml_flat {
        return omega;
    }
    let logit = omega.ln() - (-omega).ln_1p() + log_ml_informative - log_ml_flat;
    if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPosterior {
    pub omega: f64,
    pub omega_star: f64,
    pub informative: ComponentPosterior,
    pub flat: ComponentPosterior,
    pub log_ml_informative: f64,
    pub log_ml_flat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaMoments {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Both component posteriors for one dataset. None of this depends on ω, so
/// the sampler builds it once and reuses it every iteration.
#[derive(Clone, Debug)]
pub struct PosteriorComponents {
    pub informative: ComponentPosterior,
    pub flat: ComponentPosterior,
}

impl PosteriorComponents {
    pub fn new(design: &DesignMatrix, prior: &MixturePrior) -> Result<Self> {
        Ok(PosteriorComponents {
            informative: component_posterior_informative(design, &prior.informative)?,
            flat: component_posterior_flat(design, &prior.flat)?,
        })
    }

    pub fn omega_star(&self, omega: f64) -> f64 {
        omega_star(omega, self.informative.log_marginal, self.flat.log_marginal)
    }

    pub fn conditional(&self, omega: f64) -> Result<ConditionalPosterior> {
        check_unit(omega)?;
        Ok(ConditionalPosterior {
            omega,
            omega_star: self.omega_star(omega),
            informative: self.informative.clone(),
            flat: self.flat.clone(),
            log_ml_informative: self.informative.log_marginal,
            log_ml_flat: self.flat.log_marginal,
        })
    }

    /// Mean and covariance of β given ω by the law of total variance.
    pub fn beta_moments(&self, omega: f64) -> Result<BetaMoments> {
        check_unit(omega)?;
        let w = self.omega_star(omega);
        let (inf, flat) = (&self.informative, &self.flat);
        let cov_i = inf.beta_cov().ok_or_else(|| {
            Error::UndefinedVariance(format!("informative df N + N_H − 2 = {} must exceed 2", inf.sigma_df))
        })?;
        let cov_f = flat.beta_cov().ok_or_else(|| {
            Error::UndefinedVariance(format!("flat df N + ν₀ = {} must exceed 2", flat.sigma_df))
        })?;
        let d = inf.beta_mean - flat.beta_mean;
        let mean = inf.beta_mean * w + flat.beta_mean * (1.0 - w);
        let mut cov = cov_i * w + cov_f * (1.0 - w) + d * d.transpose() * (w * (1.0 - w));
        cov = (cov + cov.transpose()) * 0.5;
        Ok(BetaMoments { mean, cov })
    }

    /// `log p(β, σ² | ω, y)`: the ω*-weighted mixture of the component
    /// posteriors.
    pub fn log_conditional_density(&self, omega: f64, beta: &Vector3<f64>, sigma_sq: f64) -> Result<f64> {
        let w = self.omega_star(omega);
        let a = w.ln() + self.informative.log_density(beta, sigma_sq)?;
        let b = (1.0 - w).ln() + self.flat.log_density(beta, sigma_sq)?;
        Ok(log_add_exp(a, b))
    }
}

fn check_unit(omega: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::invalid(format!("omega must lie in [0, 1], got {omega}")));
    }
    Ok(())
}

pub fn posterior_mixture_weight(omega: f64, design: &DesignMatrix, prior: &MixturePrior) -> Result<ConditionalPosterior> {
    PosteriorComponents::new(design, prior)?.conditional(omega)
}

pub fn conditional_beta_moments(omega: f64, design: &DesignMatrix, prior: &MixturePrior) -> Result<BetaMoments> {
    PosteriorComponents::new(design, prior)?.beta_moments(omega)
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Open midpoint grid on (0, 1) with the Beta prior evaluated on it.
#[derive(Clone, Debug)]
pub struct OmegaGrid {
    points: Vec<f64>,
    width: f64,
    /// `exp(log_prior − max)`, reused by the fast conditional evaluation.
    prior_scaled: Vec<f64>,
}

impl OmegaGrid {
    pub fn new(size: usize, weight: &WeightPrior) -> Result<Self> {
        if size < 2 {
            return Err(Error::invalid(format!("omega grid needs at least 2 points, got {size}")));
        }
        weight.validate()?;
        let width = 1.0 / size as f64;
        let points: Vec<f64> = (0..size).map(|i| (i as f64 + 0.5) * width).collect();
        let log_prior: Vec<f64> = points.iter().map(|&w| weight.log_density(w)).collect();
        let max = log_prior.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let prior_scaled = log_prior.iter().map(|l| (l - max).exp()).collect();
        Ok(OmegaGrid {
            points,
            width,
            prior_scaled,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The Beta prior itself, normalized on the grid.
    pub fn prior_density(&self) -> OmegaDensity {
        OmegaDensity::from_unnormalized(self, self.prior_scaled.clone())
            .expect("Beta prior is finite and positive on an open grid")
    }

    /// `p(ω | β, σ², y)` on the grid from the two component log prior
    /// densities at the current `(β, σ²)`. Avoids one `exp` per grid point.
    pub fn conditional_from_log_terms(&self, log_p_informative: f64, log_p_flat: f64) -> Result<OmegaDensity> {
        if log_p_informative.is_nan() || log_p_flat.is_nan() || log_p_informative == f64::INFINITY || log_p_flat == f64::INFINITY {
            return Err(Error::NonFiniteDensity(format!(
                "component prior log densities are ({log_p_informative}, {log_p_flat})"
            )));
        }
        if log_p_informative == f64::NEG_INFINITY && log_p_flat == f64::NEG_INFINITY {
            log::warn!("both component prior densities underflow; using the Beta prior for ω");
            return Ok(self.prior_density());
        }
        let m = log_p_informative.max(log_p_flat);
        let r = (log_p_informative - m).exp();
        let s = (log_p_flat - m).exp();
        let density: Vec<f64> = self
            .points
            .iter()
            .zip(&self.prior_scaled)
            .map(|(&w, &p)| p * (w * r + (1.0 - w) * s))
            .collect();
        OmegaDensity::from_unnormalized(self, density)
    }
}

/// Density values on an [`OmegaGrid`], normalized so the midpoint rule
/// integrates to one.
#[derive(Clone, Debug, PartialEq)]
pub struct OmegaDensity {
    pub points: Vec<f64>,
    pub density: Vec<f64>,
    pub width: f64,
}

impl OmegaDensity {
    fn from_unnormalized(grid: &OmegaGrid, mut density: Vec<f64>) -> Result<Self> {
        let total: f64 = density.iter().sum::<f64>() * grid.width;
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::NonFiniteDensity(format!("ω density has total mass {total}")));
        }
        density.iter_mut().for_each(|d| *d /= total);
        Ok(OmegaDensity {
            points: grid.points.clone(),
            density,
            width: grid.width,
        })
    }

    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.width
    }

    pub fn mean(&self) -> f64 {
        self.points.iter().zip(&self.density).map(|(w, d)| w * d).sum::<f64>() * self.width
    }

    /// Uniform density on the same grid (used in tests and as a reference).
    pub fn uniform(grid: &OmegaGrid) -> Self {
        OmegaDensity {
            points: grid.points.clone(),
            density: vec![1.0; grid.len()],
            width: grid.width,
        }
    }
}

/// Normalize log density values given on `grid` (max-shifted before `exp`).
/// If every value is `-inf` the Beta prior is returned and a warning logged.
pub fn normalize_omega_density(grid: &OmegaGrid, log_values: &[f64]) -> Result<OmegaDensity> {
    if log_values.len() != grid.len() {
        return Err(Error::invalid("log density length does not match the grid"));
    }
    if log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFiniteDensity("ω log density has NaN or +inf entries".into()));
    }
    let max = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        log::warn!("ω density underflows at every grid point; using the Beta prior");
        return Ok(grid.prior_density());
    }
    let density = log_values.iter().map(|v| (v - max).exp()).collect();
    OmegaDensity::from_unnormalized(grid, density)
}

/// Unnormalized `log p(ω | β, σ², y) = log p(ω) + log(ω p_I(β,σ²) + (1−ω) p_F(β,σ²))`.
pub fn log_conditional_omega_density(omega: f64, beta: &Vector3<f64>, sigma_sq: f64, prior: &MixturePrior) -> Result<f64> {
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::invalid(format!("omega must lie in (0, 1), got {omega}")));
    }
    let a = omega.ln() + log_prior_density_informative(beta, sigma_sq, &prior.informative);
    let b = (-omega).ln_1p() + log_prior_density_flat(beta, sigma_sq, &prior.flat);
    Ok(prior.weight.log_density(omega) + log_add_exp(a, b))
}

pub fn conditional_omega_density(
    grid: &OmegaGrid,
    beta: &Vector3<f64>,
    sigma_sq: f64,
    prior: &MixturePrior,
) -> Result<OmegaDensity> {
    grid.conditional_from_log_terms(
        log_prior_density_informative(beta, sigma_sq, &prior.informative),
        log_prior_density_flat(beta, sigma_sq, &prior.flat),
    )
}

/// Unnormalized `log p(ω | y) = log p(ω) + log(ω e^{ℓ_I} + (1−ω) e^{ℓ_F})`.
pub fn log_marginal_omega_density(omega: f64, components: &PosteriorComponents, weight: &WeightPrior) -> Result<f64> {
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::invalid(format!("omega must lie in (0, 1), got {omega}")));
    }
    Ok(weight.log_density(omega)
        + log_add_exp(
            omega.ln() + components.informative.log_marginal,
            (-omega).ln_1p() + components.flat.log_marginal,
        ))
}

/// The same marginal as a ratio `p(β, σ², ω | y) / p(β, σ² | ω, y)` (up to
/// the ω-free evidence), evaluated at an arbitrary `(β, σ²)`.
pub fn log_marginal_omega_ratio(
    omega: f64,
    beta: &Vector3<f64>,
    sigma_sq: f64,
    design: &DesignMatrix,
    prior: &MixturePrior,
    components: &PosteriorComponents,
) -> Result<f64> {
    let joint_prior = log_conditional_omega_density(omega, beta, sigma_sq, prior)?;
    let n = design.n() as f64;
    let log_lik = -0.5 * n * (2.0 * PI * sigma_sq).ln() - design.residual_ss(beta) / (2.0 * sigma_sq);
    Ok(joint_prior + log_lik - components.log_conditional_density(omega, beta, sigma_sq)?)
}

pub fn marginal_omega_density(grid: &OmegaGrid, components: &PosteriorComponents, weight: &WeightPrior) -> Result<OmegaDensity> {
    let logs = grid
        .points()
        .iter()
        .map(|&w| log_marginal_omega_density(w, components, weight))
        .collect::<Result<Vec<_>>>()?;
    normalize_omega_density(grid, &logs)
}

/// `ESS = N V₁ / V₂`.
pub fn ess(n: usize, v1: f64, v2: f64) -> Result<f64> {
    check_variances(v1, v2)?;
    Ok(n as f64 * (v1 / v2))
}

/// `ESS − N = N (V₁ / V₂ − 1)`.
pub fn ess_gain(n: usize, v1: f64, v2: f64) -> Result<f64> {
    check_variances(v1, v2)?;
    Ok(n as f64 * (v1 / v2 - 1.0))
}

fn check_variances(v1: f64, v2: f64) -> Result<()> {
    if !(v1 > 0.0 && v2 > 0.0) || !v1.is_finite() || !v2.is_finite() {
        return Err(Error::invalid(format!("variances must be positive and finite, got V1={v1}, V2={v2}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_design, TrialDataset};
    use crate::prior::{FlatComponent, InformativeComponent};

    fn design() -> DesignMatrix {
        let y = [0.3, 1.9, -0.4, 2.2, 0.8, 1.1, -0.2, 1.7];
        let w = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let m = [0.1, 0.9, -0.6, 1.2, 0.7, 0.2, -0.3, 0.4];
        build_design(&TrialDataset::from_columns(&y, &w, &m).unwrap()).unwrap()
    }

    fn prior() -> MixturePrior {
        MixturePrior {
            informative: InformativeComponent {
                beta0_hat: 0.05,
                beta2_hat: 0.9,
                s2: 0.8,
                df: 30,
                k: [0.03, 100.0, 0.05],
                ss_m: 20.0,
            },
            flat: FlatComponent {
                k: 100.0,
                nu0: 3.0,
                sigma0_sq: 1.0,
            },
            weight: WeightPrior::default(),
        }
    }

    #[test]
    fn tiny_k_pins_prior_mean() {
        let mut c = prior().informative;
        c.k = [1e-12; 3];
        let post = component_posterior_informative(&design(), &c).unwrap();
        assert!((post.beta_mean - c.mean()).norm() < 1e-6);
    }

    #[test]
    fn zero_residual_data() {
        let c = prior().informative;
        let base = design();
        // rebuild outcomes as V μ + m̄ exactly
        let subjects: Vec<_> = base
            .rows()
            .iter()
            .map(|r| {
                let y = c.beta0_hat + c.beta2_hat * r[2] + base.m_bar();
                crate::data::SubjectRecord::new(y, r[1] == 1.0, r[2] + base.m_bar())
            })
            .collect();
        let d = build_design(&TrialDataset::new(subjects).unwrap()).unwrap();
        let post = component_posterior_informative(&d, &c).unwrap();
        assert!((post.beta_mean - c.mean()).norm() < 1e-12);
        let expected = (c.df as f64) * c.s2 / (d.n() as f64 + c.df as f64);
        assert!((post.sigma_scale - expected).abs() < 1e-12);
    }

    #[test]
    fn flat_zero_outcomes() {
        let base = design();
        let subjects: Vec<_> = base
            .rows()
            .iter()
            .map(|r| crate::data::SubjectRecord::new(base.m_bar(), r[1] == 1.0, r[2] + base.m_bar()))
            .collect();
        let d = build_design(&TrialDataset::new(subjects).unwrap()).unwrap();
        let post = component_posterior_flat(&d, &prior().flat).unwrap();
        assert!(post.beta_mean.norm() < 1e-14);
    }

    #[test]
    fn omega_star_boundaries_and_identity() {
        let comps = PosteriorComponents::new(&design(), &prior()).unwrap();
        assert!(comps.omega_star(1e-300) < 1e-200);
        assert!(comps.omega_star(1.0 - 1e-16) > 1.0 - 1e-10);
        assert_eq!(omega_star(0.3, -5.0, -5.0), 0.3);
        let mut last = 0.0;
        for i in 1..100 {
            let w = comps.omega_star(i as f64 / 100.0);
            assert!(w >= last && (0.0..=1.0).contains(&w));
            last = w;
        }
    }

    #[test]
    fn identical_components_keep_omega() {
        let mut p = prior();
        p.informative.beta0_hat = 0.0;
        p.informative.beta2_hat = 0.0;
        p.informative.k = [2.0; 3];
        p.informative.df = 5;
        p.informative.s2 = 1.5;
        p.flat = FlatComponent {
            k: 2.0,
            nu0: 5.0,
            sigma0_sq: 1.5,
        };
        let c = posterior_mixture_weight(0.37, &design(), &p).unwrap();
        assert!((c.omega_star - 0.37).abs() < 1e-12);
    }

    #[test]
    fn degenerate_mixture_moments() {
        let comps = PosteriorComponents::new(&design(), &prior()).unwrap();
        let m = comps.beta_moments(1.0).unwrap();
        assert_eq!(m.mean, comps.informative.beta_mean);
        let expected = comps.informative.beta_cov().unwrap();
        assert!((m.cov - expected).norm() < 1e-14);
    }

    #[test]
    fn moments_covariance_is_psd() {
        let comps = PosteriorComponents::new(&design(), &prior()).unwrap();
        for w in [0.01, 0.3, 0.5, 0.9] {
            let m = comps.beta_moments(w).unwrap();
            let eig = m.cov.symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-8);
        }
    }

    #[test]
    fn uniform_conditional_when_terms_match() {
        let mut p = prior();
        p.weight = WeightPrior::default();
        let grid = OmegaGrid::new(2048, &p.weight).unwrap();
        let d = grid.conditional_from_log_terms(-3.0, -3.0).unwrap();
        assert!(d.density.iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert!((d.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conditional_increasing_at_informative_mean() {
        let mut p = prior();
        p.informative.k = [1e-4, 1e-4, 1e-4];
        let grid = OmegaGrid::new(512, &p.weight).unwrap();
        let b = p.informative.mean();
        let d = conditional_omega_density(&grid, &b, p.informative.s2, &p).unwrap();
        assert!(d.density.windows(2).all(|w| w[1] > w[0]));
        // and the fast path agrees with the scalar log density
        let logs: Vec<f64> = grid
            .points()
            .iter()
            .map(|&w| log_conditional_omega_density(w, &b, p.informative.s2, &p).unwrap())
            .collect();
        let slow = normalize_omega_density(&grid, &logs).unwrap();
        for (a, b) in d.density.iter().zip(&slow.density) {
            assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn underflow_falls_back_to_prior() {
        let p = prior();
        let grid = OmegaGrid::new(64, &p.weight).unwrap();
        let d = grid.conditional_from_log_terms(f64::NEG_INFINITY, f64::NEG_INFINITY).unwrap();
        assert_eq!(d, grid.prior_density());
        assert!(grid.conditional_from_log_terms(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn ratio_form_is_free_of_beta_sigma() {
        let d = design();
        let p = prior();
        let comps = PosteriorComponents::new(&d, &p).unwrap();
        for &w in &[0.1, 0.5, 0.8] {
            let direct = log_marginal_omega_density(w, &comps, &p.weight).unwrap();
            let a = log_marginal_omega_ratio(w, &Vector3::new(0.1, 1.0, 0.6), 0.9, &d, &p, &comps).unwrap();
            let b = log_marginal_omega_ratio(w, &Vector3::new(-0.3, 1.4, 1.1), 1.7, &d, &p, &comps).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            assert!((a - direct).abs() < 1e-10, "{a} vs {direct}");
        }
    }

    #[test]
    fn marginal_uniform_for_identical_components() {
        let comps = PosteriorComponents {
            informative: component_posterior_flat(&design(), &prior().flat).unwrap(),
            flat: component_posterior_flat(&design(), &prior().flat).unwrap(),
        };
        let grid = OmegaGrid::new(2048, &WeightPrior::default()).unwrap();
        let d = marginal_omega_density(&grid, &comps, &WeightPrior::default()).unwrap();
        assert!(d.density.iter().all(|x| (x - 1.0).abs() < 1e-10));
        assert!((d.integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ess_examples() {
        assert_eq!(ess(57, 1.3, 1.3).unwrap(), 57.0);
        assert_eq!(ess(100, 2.0, 1.0).unwrap(), 200.0);
        assert_eq!(ess_gain(100, 2.0, 1.0).unwrap(), 100.0);
        assert!(ess(10, 0.0, 1.0).is_err());
    }
}
