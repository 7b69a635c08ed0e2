//! The additive mixture prior: an informative Normal–scaled-inverse-χ²
//! component fitted to historical controls, a weakly informative component
//! centred at zero, and a Beta prior on the mixture weight.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::HistoricalDataset;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, task_rng, Domain, Execution};
use crate::random::ScaledInvChiSq;

pub const DEFAULT_K1: f64 = 100.0;
pub const DEFAULT_FLAT_K: f64 = 100.0;
/// Redraws allowed per bootstrap replicate before giving up on a degenerate
/// resample.
pub const BOOTSTRAP_RETRY_CAP: usize = 100;

/// Informative component `β | σ² ~ N((β̂₀,H, 0, β̂₂,H), σ² diag(K))`,
/// `σ² ~ df_H · s_H² / χ²(df_H)` with `df_H = N_H − 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InformativeComponent {
    #[serde(rename = "beta0_hat_H")]
    pub beta0_hat: f64,
    #[serde(rename = "beta2_hat_H")]
    pub beta2_hat: f64,
    #[serde(rename = "s2_H")]
    pub s2: f64,
    #[serde(rename = "df_H")]
    pub df: u32,
    #[serde(rename = "K")]
    pub k: [f64; 3],
    #[serde(rename = "ss_m_H")]
    pub ss_m: f64,
}

impl InformativeComponent {
    pub fn validate(&self) -> Result<()> {
        if !self.k.iter().all(|&k| k > 0.0 && k.is_finite()) {
            return Err(Error::invalid(format!("K entries must be positive, got {:?}", self.k)));
        }
        if !(self.s2 >= 0.0) || !self.s2.is_finite() {
            return Err(Error::invalid(format!("s2_H must be non-negative, got {}", self.s2)));
        }
        if self.df < 2 {
            return Err(Error::invalid(format!("df_H must be at least 2, got {}", self.df)));
        }
        if !self.beta0_hat.is_finite() || !self.beta2_hat.is_finite() || !self.ss_m.is_finite() {
            return Err(Error::invalid("informative component has non-finite entries"));
        }
        Ok(())
    }

    pub fn n_hist(&self) -> u32 {
        self.df + 2
    }

    pub fn mean(&self) -> Vector3<f64> {
        Vector3::new(self.beta0_hat, 0.0, self.beta2_hat)
    }

    pub fn k_diag(&self) -> Vector3<f64> {
        Vector3::from(self.k)
    }

    /// Copy with `K₀,H`, `K₂,H` replaced by the bias-shift calibration.
    pub fn with_calibrated_k(&self, gamma: f64, var_delta: f64) -> Result<Self> {
        let (k0, k2) = calibrate_k(self, gamma, var_delta)?;
        let mut out = self.clone();
        out.k[0] = k0;
        out.k[2] = k2;
        Ok(out)
    }
}

/// Weakly informative component `β | σ² ~ N(0, σ² k I)`,
/// `σ² ~ ν₀ σ₀² / χ²(ν₀)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatComponent {
    pub k: f64,
    pub nu0: f64,
    pub sigma0_sq: f64,
}

impl Default for FlatComponent {
    fn default() -> Self {
        FlatComponent {
            k: DEFAULT_FLAT_K,
            nu0: 1.0,
            sigma0_sq: 1.0,
        }
    }
}

impl FlatComponent {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k", self.k), ("nu0", self.nu0), ("sigma0_sq", self.sigma0_sq)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("flat component {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `ω ~ Beta(α₁, α₂)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightPrior {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for WeightPrior {
    fn default() -> Self {
        WeightPrior {
            alpha1: 1.0,
            alpha2: 1.0,
        }
    }
}

impl WeightPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > 0.0 && self.alpha2 > 0.0) || !self.alpha1.is_finite() || !self.alpha2.is_finite() {
            return Err(Error::invalid(format!(
                "Beta weight prior needs positive parameters, got ({}, {})",
                self.alpha1, self.alpha2
            )));
        }
        Ok(())
    }

    pub fn log_density(&self, omega: f64) -> f64 {
        let (a, b) = (self.alpha1, self.alpha2);
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * omega.ln() + (b - 1.0) * (1.0 - omega).ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        use rand_distr::{Beta, Distribution};
        Beta::new(self.alpha1, self.alpha2)
            .expect("validated Beta parameters")
            .sample(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixturePrior {
    pub informative: InformativeComponent,
    pub flat: FlatComponent,
    pub weight: WeightPrior,
}

impl MixturePrior {
    pub fn validate(&self) -> Result<()> {
        self.informative.validate()?;
        self.flat.validate()?;
        self.weight.validate()
    }

    /// One joint draw `(ω, z, β, σ²)` from the full prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PriorDraw> {
        let omega = self.weight.sample(rng);
        let informative = rng.random::<f64>() < omega;
        let (beta, sigma_sq) = if informative {
            sample_informative(&self.informative, rng)?
        } else {
            sample_flat(&self.flat, rng)?
        };
        Ok(PriorDraw {
            omega,
            informative,
            beta,
            sigma_sq,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorDraw {
    pub omega: f64,
    pub informative: bool,
    pub beta: Vector3<f64>,
    pub sigma_sq: f64,
}

/// How `K₀,H` (and `K₂,H`) are set when fitting the informative component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMode {
    /// `K₀,H = 1/N_H`, `K₂,H = 1/Σ(m − m̄)²`, the diagonal of `(V_HᵀV_H)⁻¹`.
    #[serde(rename = "inverse_N")]
    InverseN,
    /// `K₀,H = N_H^{-1/2}`, `K₂,H` as above.
    #[serde(rename = "inverse_sqrt_N")]
    InverseSqrtN,
    /// Bias-shift calibration with scaling `gamma` and shift variance `var_delta`.
    Calibrated { gamma: f64, var_delta: f64 },
    Explicit { k0: f64, k1: f64, k2: f64 },
}

/// Least-squares fit of `y − m̄_H` on `(1, m − m̄_H)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoricalRegression {
    pub beta0: f64,
    pub beta2: f64,
    pub rss: f64,
    pub tss: f64,
    pub m_bar: f64,
    pub ss_m: f64,
    pub n: usize,
}

pub fn historical_regression(outcomes: &[f64], scores: &[f64]) -> Result<HistoricalRegression> {
    let n = outcomes.len();
    if n != scores.len() || n < 2 {
        return Err(Error::invalid("historical regression needs matching columns with at least two rows"));
    }
    let nf = n as f64;
    let m_bar = scores.iter().sum::<f64>() / nf;
    let mut ss_m = 0.0;
    let mut s_my = 0.0;
    let mut sum_yc = 0.0;
    for (&y, &m) in outcomes.iter().zip(scores) {
        let dm = m - m_bar;
        ss_m += dm * dm;
        s_my += dm * (y - m_bar);
        sum_yc += y - m_bar;
    }
    if !(ss_m > 0.0) {
        return Err(Error::RankDeficient("historical prognostic scores are constant".into()));
    }
    let beta0 = sum_yc / nf;
    let beta2 = s_my / ss_m;
    let mut rss = 0.0;
    let mut tss = 0.0;
    for (&y, &m) in outcomes.iter().zip(scores) {
        let yc = y - m_bar;
        let r = yc - beta0 - beta2 * (m - m_bar);
        rss += r * r;
        tss += (yc - beta0) * (yc - beta0);
    }
    Ok(HistoricalRegression {
        beta0,
        beta2,
        rss,
        tss,
        m_bar,
        ss_m,
        n,
    })
}

/// Fit the informative component. `k1` is the prior variance scale of the
/// treatment effect, which the historical data cannot inform.
pub fn fit_informative_component(
    hist: &HistoricalDataset,
    mode: &KMode,
    k1: f64,
) -> Result<InformativeComponent> {
    let fit = historical_regression(hist.outcomes(), hist.scores())?;
    // A residual sum of squares at rounding level means the scores reproduce
    // the outcomes exactly; s_H² = 0 would make the σ² prior improper.
    let sum_sq = fit.tss + fit.n as f64 * fit.beta0 * fit.beta0;
    if fit.rss <= 1e-24 * sum_sq || fit.rss == 0.0 {
        return Err(Error::DegenerateFit(format!(
            "historical residual sum of squares is {:.3e}; s_H² would be zero",
            fit.rss
        )));
    }
    let n_h = fit.n as f64;
    let df = (fit.n - 2) as u32;
    let s2 = fit.rss / (n_h - 2.0);
    let k = match *mode {
        KMode::InverseN => [1.0 / n_h, k1, 1.0 / fit.ss_m],
        KMode::InverseSqrtN => [1.0 / n_h.sqrt(), k1, 1.0 / fit.ss_m],
        KMode::Explicit { k0, k1, k2 } => [k0, k1, k2],
        KMode::Calibrated { .. } => [1.0 / n_h, k1, 1.0 / fit.ss_m],
    };
    let mut comp = InformativeComponent {
        beta0_hat: fit.beta0,
        beta2_hat: fit.beta2,
        s2,
        df,
        k,
        ss_m: fit.ss_m,
    };
    if let KMode::Calibrated { gamma, var_delta } = *mode {
        comp = comp.with_calibrated_k(gamma, var_delta)?;
    }
    comp.validate()?;
    Ok(comp)
}

/// Shared Normal × scaled-inverse-χ² log density with diagonal `K`.
fn log_nix_diag(
    beta: &Vector3<f64>,
    sigma_sq: f64,
    mean: &Vector3<f64>,
    k: &Vector3<f64>,
    df: f64,
    scale: f64,
) -> f64 {
    if !(sigma_sq > 0.0) {
        return f64::NEG_INFINITY;
    }
    let half_df = 0.5 * df;
    let quad: f64 = (0..3).map(|j| (beta[j] - mean[j]).powi(2) / k[j]).sum();
    let log_k: f64 = k.iter().map(|x| x.ln()).sum();
    let ln_s = sigma_sq.ln();
    half_df * (half_df * scale).ln() - ln_gamma(half_df) - (half_df + 1.0) * ln_s
        - df * scale / (2.0 * sigma_sq)
        - 1.5 * (2.0 * PI).ln()
        - 1.5 * ln_s
        - 0.5 * log_k
        - quad / (2.0 * sigma_sq)
}

/// `log p_I(β, σ²)`, fully normalized.
pub fn log_prior_density_informative(beta: &Vector3<f64>, sigma_sq: f64, comp: &InformativeComponent) -> f64 {
    log_nix_diag(beta, sigma_sq, &comp.mean(), &comp.k_diag(), comp.df as f64, comp.s2)
}

/// `log p_F(β, σ²)`, fully normalized.
pub fn log_prior_density_flat(beta: &Vector3<f64>, sigma_sq: f64, comp: &FlatComponent) -> f64 {
    log_nix_diag(
        beta,
        sigma_sq,
        &Vector3::zeros(),
        &Vector3::repeat(comp.k),
        comp.nu0,
        comp.sigma0_sq,
    )
}

pub fn sample_informative<R: Rng + ?Sized>(comp: &InformativeComponent, rng: &mut R) -> Result<(Vector3<f64>, f64)> {
    let sigma_sq = ScaledInvChiSq::new(comp.df as f64, comp.s2)?.sample(rng);
    Ok((sample_diag_normal(&comp.mean(), &comp.k_diag(), sigma_sq, rng), sigma_sq))
}

pub fn sample_flat<R: Rng + ?Sized>(comp: &FlatComponent, rng: &mut R) -> Result<(Vector3<f64>, f64)> {
    let sigma_sq = ScaledInvChiSq::new(comp.nu0, comp.sigma0_sq)?.sample(rng);
    Ok((
        sample_diag_normal(&Vector3::zeros(), &Vector3::repeat(comp.k), sigma_sq, rng),
        sigma_sq,
    ))
}

fn sample_diag_normal<R: Rng + ?Sized>(
    mean: &Vector3<f64>,
    k: &Vector3<f64>,
    sigma_sq: f64,
    rng: &mut R,
) -> Vector3<f64> {
    use rand_distr::StandardNormal;
    Vector3::from_fn(|j, _| mean[j] + (sigma_sq * k[j]).sqrt() * rng.sample::<f64, _>(StandardNormal))
}

/// Bootstrap estimate of the twin-outcome bias shift variance: resample the
/// historical rows at the trial size, refit the centred regression intercept,
/// and return the sample variance of the `replicates` intercepts.
pub fn bootstrap_delta_variance(
    hist: &HistoricalDataset,
    trial_n: usize,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    if replicates < 100 {
        return Err(Error::invalid(format!("bootstrap needs at least 100 replicates, got {replicates}")));
    }
    if trial_n < 2 {
        return Err(Error::invalid(format!("bootstrap sample size must be at least 2, got {trial_n}")));
    }
    let y = hist.outcomes();
    let m = hist.scores();
    let intercepts = map_indexed(replicates, exec, |r| -> Result<f64> {
        let mut rng = task_rng(seed, Domain::Bootstrap, r as u64);
        let mut ys = vec![0.0; trial_n];
        let mut ms = vec![0.0; trial_n];
        for _ in 0..BOOTSTRAP_RETRY_CAP {
            for i in 0..trial_n {
                let j = rng.random_range(0..y.len());
                ys[i] = y[j];
                ms[i] = m[j];
            }
            if ms.iter().any(|&v| v != ms[0]) {
                return Ok(historical_regression(&ys, &ms)?.beta0);
            }
        }
        Err(Error::DegenerateResample {
            replicate: r,
            attempts: BOOTSTRAP_RETRY_CAP,
        })
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(sample_variance(&intercepts))
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// `K₀,H = γ/N_H + Var(Δ)/s_H²` and `K₂,H = γ / (N_H Σ(m − m̄_H)²)`.
pub fn calibrate_k(comp: &InformativeComponent, gamma: f64, var_delta: f64) -> Result<(f64, f64)> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    if !(var_delta >= 0.0) || !var_delta.is_finite() {
        return Err(Error::invalid(format!("Var(Δ) must be non-negative, got {var_delta}")));
    }
    if !(comp.s2 > 0.0) {
        return Err(Error::invalid("calibration needs s2_H > 0"));
    }
    if !(comp.ss_m > 0.0) {
        return Err(Error::invalid("calibration needs a positive score sum of squares"));
    }
    let n_h = comp.n_hist() as f64;
    Ok((gamma / n_h + var_delta / comp.s2, gamma / (n_h * comp.ss_m)))
}

/// Prior variance of the treatment effect given the weight, which may not exist.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorVariance {
    Finite(f64),
    Infinite,
}

impl PriorVariance {
    pub fn finite(self) -> Option<f64> {
        match self {
            PriorVariance::Finite(v) => Some(v),
            PriorVariance::Infinite => None,
        }
    }
}

/// `Var(β₁ | ω) = ω K₁,H E_I[σ²] + (1 − ω) k E_F[σ²]`. Both components have
/// prior mean zero for `β₁`, so there is no between-component term. A
/// component with zero weight does not need its σ² mean to exist.
pub fn prior_beta1_variance(prior: &MixturePrior, omega: f64) -> Result<PriorVariance> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::invalid(format!("omega must lie in [0, 1], got {omega}")));
    }
    let inf = &prior.informative;
    let flat = &prior.flat;
    let df_h = inf.df as f64;
    let mut total = 0.0;
    if omega > 0.0 {
        if df_h <= 2.0 {
            return Ok(PriorVariance::Infinite);
        }
        total += omega * inf.k[1] * df_h * inf.s2 / (df_h - 2.0);
    }
    if omega < 1.0 {
        if flat.nu0 <= 2.0 {
            return Ok(PriorVariance::Infinite);
        }
        total += (1.0 - omega) * flat.k * flat.nu0 * flat.sigma0_sq / (flat.nu0 - 2.0);
    }
    Ok(PriorVariance::Finite(total))
}

/// Size of a 1:1 trial whose flat-prior posterior variance of `β₁`,
/// `4 s² / N`, equals the prior variance: `N = 4 s² / Var(β₁ | ω)`.
pub fn prior_effective_sample_size(prior: &MixturePrior, omega: f64, s_sq_estimate: f64) -> Result<f64> {
    match prior_beta1_variance(prior, omega)? {
        PriorVariance::Infinite => Err(Error::UndefinedPriorEss(
            "Var(β₁ | ω) does not exist: a component with positive weight has ≤ 2 degrees of freedom for σ²".into(),
        )),
        PriorVariance::Finite(v) if v > 0.0 => Ok(4.0 * s_sq_estimate / v),
        PriorVariance::Finite(v) => Err(Error::UndefinedPriorEss(format!("Var(β₁ | ω) = {v} is not positive"))),
    }
}
