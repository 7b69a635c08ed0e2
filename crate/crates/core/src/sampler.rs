//! Gibbs sampler over `(β, σ², ω)`.
//!
//! Each iteration: compute ω* from the previous ω, draw the component
//! indicator `Z ~ Bernoulli(ω*)`, draw σ² and then β from the selected
//! conjugate component, and finally draw ω by inverting the grid CDF of
//! `p(ω | β, σ², y)`.

use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::exec::{compensated_mean, task_rng, Domain, TaskRng};
use crate::posterior::{OmegaDensity, OmegaGrid, PosteriorComponents, DEFAULT_OMEGA_GRID};
use crate::prior::{log_prior_density_flat, log_prior_density_informative, MixturePrior};
use crate::random::{Mvn3, ScaledInvChiSq};

pub use crate::random::{sample_mvn, sample_scaled_inv_chisq};

/// How ω moves between iterations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaUpdate {
    /// Full Gibbs step from the conditional density.
    #[default]
    Sampled,
    /// ω is held at this value; only steps 1–4 run. Values in `[0, 1]`.
    Fixed(f64),
}

/// `HalvedSigmaScale` deliberately halves the σ² draws. It exists as a
/// negative control for simulation-based calibration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerVariant {
    #[default]
    Exact,
    HalvedSigmaScale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub omega_init: f64,
    pub omega_grid_size: usize,
    pub omega_update: OmegaUpdate,
    pub variant: SamplerVariant,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            iterations: 1000,
            burn_in: 100,
            seed: 0,
            omega_init: 0.5,
            omega_grid_size: DEFAULT_OMEGA_GRID,
            omega_update: OmegaUpdate::Sampled,
            variant: SamplerVariant::Exact,
        }
    }
}

impl GibbsConfig {
    pub fn with_seed(seed: u64) -> Self {
        GibbsConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::invalid(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if !(self.omega_init > 0.0 && self.omega_init < 1.0) {
            return Err(Error::invalid(format!("omega_init must lie in (0, 1), got {}", self.omega_init)));
        }
        if self.omega_grid_size < 2 {
            return Err(Error::invalid("omega_grid_size must be at least 2"));
        }
        if let OmegaUpdate::Fixed(w) = self.omega_update {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(format!("fixed omega must lie in [0, 1], got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsDraw {
    pub beta: Vector3<f64>,
    pub sigma_sq: f64,
    pub omega: f64,
    /// `true` when the informative component generated this draw.
    pub z: bool,
    /// The ω* used for the indicator draw of this iteration.
    pub omega_star: f64,
}

/// Precomputed per-dataset state; a run only needs an RNG on top of this.
#[derive(Clone, Debug)]
pub struct GibbsSampler {
    prior: MixturePrior,
    components: PosteriorComponents,
    sigma_informative: ScaledInvChiSq,
    sigma_flat: ScaledInvChiSq,
    beta_informative: Mvn3,
    beta_flat: Mvn3,
    grid: OmegaGrid,
    config: GibbsConfig,
}

impl GibbsSampler {
    pub fn new(design: &DesignMatrix, prior: &MixturePrior, config: &GibbsConfig) -> Result<Self> {
        config.validate()?;
        prior.validate()?;
        let components = PosteriorComponents::new(design, prior)?;
        let sigma_factor = match config.variant {
            SamplerVariant::Exact => 1.0,
            SamplerVariant::HalvedSigmaScale => 0.5,
        };
        let inf = &components.informative;
        let flat = &components.flat;
        Ok(GibbsSampler {
            prior: prior.clone(),
            sigma_informative: ScaledInvChiSq::new(inf.sigma_df, inf.sigma_scale * sigma_factor)?,
            sigma_flat: ScaledInvChiSq::new(flat.sigma_df, flat.sigma_scale * sigma_factor)?,
            beta_informative: Mvn3::new(inf.beta_mean, &inf.cov_factor)?,
            beta_flat: Mvn3::new(flat.beta_mean, &flat.cov_factor)?,
            grid: OmegaGrid::new(config.omega_grid_size, &prior.weight)?,
            components,
            config: config.clone(),
        })
    }

    pub fn components(&self) -> &PosteriorComponents {
        &self.components
    }

    pub fn config(&self) -> &GibbsConfig {
        &self.config
    }

    pub fn run(&self) -> Result<Vec<GibbsDraw>> {
        let mut rng = task_rng(self.config.seed, Domain::Gibbs, 0);
        self.run_with(&mut rng)
    }

    pub fn run_with(&self, rng: &mut TaskRng) -> Result<Vec<GibbsDraw>> {
        let mut draws = Vec::with_capacity(self.config.iterations);
        let mut omega = match self.config.omega_update {
            OmegaUpdate::Sampled => self.config.omega_init,
            OmegaUpdate::Fixed(w) => w,
        };
        let mut cdf = Vec::with_capacity(self.grid.len() + 2);
        for iteration in 0..self.config.iterations {
            let omega_star = self.components.omega_star(omega);
            let z = rng.random::<f64>() < omega_star;
            let (sigma_sq, beta) = if z {
                let s = self.sigma_informative.sample(rng);
                (s, self.beta_informative.sample_scaled(s.sqrt(), rng))
            } else {
                let s = self.sigma_flat.sample(rng);
                (s, self.beta_flat.sample_scaled(s.sqrt(), rng))
            };
            if !sigma_sq.is_finite() || !(sigma_sq > 0.0) || beta.iter().any(|b| !b.is_finite()) {
                return Err(Error::ChainDiverged {
                    iteration,
                    message: format!("σ² = {sigma_sq}, β = {:?}", beta.as_slice()),
                });
            }
            if self.config.omega_update == OmegaUpdate::Sampled {
                let density = self.grid.conditional_from_log_terms(
                    log_prior_density_informative(&beta, sigma_sq, &self.prior.informative),
                    log_prior_density_flat(&beta, sigma_sq, &self.prior.flat),
                )?;
                let u: f64 = rng.random();
                omega = inverse_cdf_with(&density, u, &mut cdf);
            }
            draws.push(GibbsDraw {
                beta,
                sigma_sq,
                omega,
                z,
                omega_star,
            });
        }
        Ok(draws)
    }
}

pub fn gibbs_run(design: &DesignMatrix, prior: &MixturePrior, config: &GibbsConfig) -> Result<Vec<GibbsDraw>> {
    GibbsSampler::new(design, prior, config)?.run()
}

/// Invert the cumulative trapezoid of a grid density. The grid is extended
/// to 0 and 1 with the end values held constant, and the CDF is interpolated
/// linearly between nodes.
pub fn sample_omega_inverse_cdf(table: &OmegaDensity, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!("u must lie in (0, 1), got {u}")));
    }
    if table.points.is_empty() || table.points.len() != table.density.len() {
        return Err(Error::invalid("density table is empty or malformed"));
    }
    Ok(inverse_cdf_with(table, u, &mut Vec::new()))
}

fn inverse_cdf_with(table: &OmegaDensity, u: f64, cdf: &mut Vec<f64>) -> f64 {
    let pts = &table.points;
    let f = &table.density;
    let n = pts.len();
    // nodes: 0, points..., 1
    let node = |i: usize| -> (f64, f64) {
        if i == 0 {
            (0.0, f[0])
        } else if i == n + 1 {
            (1.0, f[n - 1])
        } else {
            (pts[i - 1], f[i - 1])
        }
    };
    cdf.clear();
    cdf.push(0.0);
    let mut acc = 0.0;
    let (mut x0, mut f0) = node(0);
    for i in 1..=n + 1 {
        let (x1, f1) = node(i);
        acc += 0.5 * (f0 + f1) * (x1 - x0);
        cdf.push(acc);
        x0 = x1;
        f0 = f1;
    }
    let target = u * acc;
    // first node whose cumulative mass reaches the target
    let k = cdf.partition_point(|&c| c < target).clamp(1, n + 1);
    let (xa, _) = node(k - 1);
    let (xb, _) = node(k);
    let (ca, cb) = (cdf[k - 1], cdf[k]);
    let x = if cb > ca { xa + (target - ca) / (cb - ca) * (xb - xa) } else { xb };
    x.clamp(1e-12, 1.0 - 1e-12)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub draws: usize,
    pub beta1_mean: f64,
    pub beta1_var: f64,
    pub beta1_q025: f64,
    pub beta1_q50: f64,
    pub beta1_q975: f64,
    pub omega_mean: f64,
    /// Mean of ω* over iterations, the posterior probability of the
    /// informative component.
    pub omega_star_mean: f64,
    pub prob_beta1_positive: f64,
    /// Fraction of iterations with `Z = 1`.
    pub informative_fraction: f64,
    /// Batch-means Monte Carlo standard error of `beta1_mean`.
    pub mc_se_beta1: f64,
}

pub const SUMMARY_BATCHES: usize = 20;

pub fn summarize(chain: &[GibbsDraw], burn_in: usize) -> Result<ChainSummary> {
    if burn_in >= chain.len() {
        return Err(Error::invalid(format!(
            "burn_in ({burn_in}) leaves no draws from a chain of {}",
            chain.len()
        )));
    }
    summarize_draws(&chain[burn_in..])
}

/// Summaries over draws that are already post-burn-in (e.g. pooled chains).
pub fn summarize_draws(kept: &[GibbsDraw]) -> Result<ChainSummary> {
    if kept.is_empty() {
        return Err(Error::invalid("no draws to summarize"));
    }
    let n = kept.len() as f64;
    let beta1: Vec<f64> = kept.iter().map(|d| d.beta[1]).collect();
    let mean = compensated_mean(&beta1);
    let var = if kept.len() > 1 {
        beta1.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mut sorted = beta1.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(ChainSummary {
        draws: kept.len(),
        beta1_mean: mean,
        beta1_var: var,
        beta1_q025: quantile_sorted(&sorted, 0.025),
        beta1_q50: quantile_sorted(&sorted, 0.5),
        beta1_q975: quantile_sorted(&sorted, 0.975),
        omega_mean: kept.iter().map(|d| d.omega).sum::<f64>() / n,
        omega_star_mean: kept.iter().map(|d| d.omega_star).sum::<f64>() / n,
        prob_beta1_positive: beta1.iter().filter(|&&b| b > 0.0).count() as f64 / n,
        informative_fraction: kept.iter().filter(|d| d.z).count() as f64 / n,
        mc_se_beta1: batch_means_se(&beta1, SUMMARY_BATCHES),
    })
}

/// Linear-interpolation quantile of sorted data (the "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Standard error of the mean from non-overlapping batch means.
pub fn batch_means_se(values: &[f64], batches: usize) -> f64 {
    let batches = batches.min(values.len());
    if batches < 2 {
        return f64::NAN;
    }
    let size = values.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| compensated_mean(&values[b * size..(b + 1) * size]))
        .collect();
    let grand = compensated_mean(&means);
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// Chain export with columns `iter,beta0,beta1,beta2,sigma_sq,omega,z`.
pub fn write_chain_csv(path: impl AsRef<Path>, chain: &[GibbsDraw]) -> Result<()> {
    let mut text = String::from("iter,beta0,beta1,beta2,sigma_sq,omega,z\n");
    for (i, d) in chain.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i,
            d.beta[0],
            d.beta[1],
            d.beta[2],
            d.sigma_sq,
            d.omega,
            u8::from(d.z)
        ));
    }
    crate::data::write_file(path.as_ref(), &text)
}
