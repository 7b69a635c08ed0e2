//! Simulation-based calibration of the Gibbs sampler.
//!
//! For each replication a parameter set is drawn from the full mixture
//! prior, a trial dataset is simulated from the outcome model, the sampler is
//! run on it and the rank of the true β₁ among thinned posterior draws is
//! recorded. Under a correct sampler the ranks are uniform.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{build_design, TrialDataset};
use crate::error::{Error, Result};
use crate::exec::{child_seed, map_indexed, task_rng, Domain, Execution, TaskRng};
use crate::prior::MixturePrior;
use crate::random::{complete_randomization, standard_normals};
use crate::sampler::{GibbsConfig, GibbsSampler};

/// Supplies treatment indicators and prognostic scores for one simulated
/// trial. Outcomes are generated by the caller.
pub trait DesignGenerator: Sync {
    fn generate(&self, rng: &mut TaskRng) -> (Vec<f64>, Vec<f64>);
}

/// `n` subjects, `⌊n·treated_fraction⌋` treated, standard-normal scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizedDesign {
    pub n: usize,
    pub treated_fraction: f64,
}

impl DesignGenerator for RandomizedDesign {
    fn generate(&self, rng: &mut TaskRng) -> (Vec<f64>, Vec<f64>) {
        let treated = (self.n as f64 * self.treated_fraction).floor() as usize;
        let w = complete_randomization(self.n, treated, rng);
        let m = standard_normals(self.n, rng);
        (w, m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbcConfig {
    pub replications: usize,
    pub rank_bins: usize,
    pub thin: usize,
    pub seed: u64,
    pub gibbs: GibbsConfig,
    pub execution: Execution,
}

impl Default for SbcConfig {
    fn default() -> Self {
        SbcConfig {
            replications: 500,
            rank_bins: 20,
            thin: 5,
            seed: 0,
            gibbs: GibbsConfig::default(),
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbcResult {
    pub ranks: Vec<usize>,
    /// Number of thinned draws per replication; ranks lie in `0..=max_rank`.
    pub max_rank: usize,
    pub bin_counts: Vec<usize>,
    pub expected_counts: Vec<f64>,
    pub chi_square: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Outcomes `y = m̄ + β₀ + β₁w + β₂(m − m̄) + σε`.
pub fn simulate_outcomes<R: Rng + ?Sized>(
    beta: &Vector3<f64>,
    sigma_sq: f64,
    w: &[f64],
    m: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let m_bar = m.iter().sum::<f64>() / m.len() as f64;
    let sigma = sigma_sq.sqrt();
    w.iter()
        .zip(m)
        .map(|(&wi, &mi)| {
            let eps: f64 = rng.sample(StandardNormal);
            m_bar + beta[0] + beta[1] * wi + beta[2] * (mi - m_bar) + sigma * eps
        })
        .collect()
}

pub fn sbc_validate<G: DesignGenerator>(prior: &MixturePrior, generator: &G, config: &SbcConfig) -> Result<SbcResult> {
    if config.replications == 0 {
        return Err(Error::invalid("replications must be positive"));
    }
    if config.rank_bins < 2 || config.thin == 0 {
        return Err(Error::invalid("rank_bins must be at least 2 and thin positive"));
    }
    config.gibbs.validate()?;
    prior.validate()?;
    let kept = config.gibbs.iterations - config.gibbs.burn_in;
    let max_rank = kept.div_ceil(config.thin);
    if max_rank + 1 < config.rank_bins {
        return Err(Error::invalid(format!(
            "{max_rank} thinned draws cannot fill {} rank bins",
            config.rank_bins
        )));
    }

    let ranks = map_indexed(config.replications, config.execution, |r| {
        sbc_replication(prior, generator, config, r as u64)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let bins = config.rank_bins;
    let bin_of = |rank: usize| rank * bins / (max_rank + 1);
    let mut bin_counts = vec![0usize; bins];
    for &r in &ranks {
        bin_counts[bin_of(r)] += 1;
    }
    let mut expected_counts = vec![0.0; bins];
    for rank in 0..=max_rank {
        expected_counts[bin_of(rank)] += config.replications as f64 / (max_rank + 1) as f64;
    }
    let chi_square = bin_counts
        .iter()
        .zip(&expected_counts)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum::<f64>();
    let df = bins - 1;
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::NumericalFailure(e.to_string()))?;
    Ok(SbcResult {
        ranks,
        max_rank,
        bin_counts,
        expected_counts,
        chi_square,
        df,
        p_value: dist.sf(chi_square),
    })
}

fn sbc_replication<G: DesignGenerator>(
    prior: &MixturePrior,
    generator: &G,
    config: &SbcConfig,
    index: u64,
) -> Result<usize> {
    let mut rng = task_rng(config.seed, Domain::Sbc, index);
    let truth = prior.sample(&mut rng)?;
    let (w, m) = generator.generate(&mut rng);
    let y = simulate_outcomes(&truth.beta, truth.sigma_sq, &w, &m, &mut rng);
    let trial = TrialDataset::from_columns(&y, &w, &m)?;
    let design = build_design(&trial)?;
    let gibbs = GibbsConfig {
        seed: child_seed(config.seed, Domain::Sbc, index),
        ..config.gibbs.clone()
    };
    let chain = GibbsSampler::new(&design, prior, &gibbs)?.run()?;
    let rank = chain[gibbs.burn_in..]
        .iter()
        .step_by(config.thin)
        .filter(|d| d.beta[1] < truth.beta[1])
        .count();
    Ok(rank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::tests::sample_prior;

    #[test]
    fn zero_replications_is_an_error() {
        let cfg = SbcConfig {
            replications: 0,
            ..Default::default()
        };
        let design = RandomizedDesign {
            n: 10,
            treated_fraction: 0.5,
        };
        assert!(sbc_validate(&sample_prior(), &design, &cfg).is_err());
    }

    #[test]
    fn expected_counts_sum_to_replications() {
        let cfg = SbcConfig {
            replications: 12,
            gibbs: GibbsConfig {
                iterations: 120,
                burn_in: 20,
                ..Default::default()
            },
            execution: Execution::Sequential,
            ..Default::default()
        };
        let design = RandomizedDesign {
            n: 12,
            treated_fraction: 0.5,
        };
        let res = sbc_validate(&sample_prior(), &design, &cfg).unwrap();
        assert_eq!(res.max_rank, 20);
        assert!((res.expected_counts.iter().sum::<f64>() - 12.0).abs() < 1e-9);
        assert_eq!(res.bin_counts.iter().sum::<usize>(), 12);
        assert!(res.ranks.iter().all(|&r| r <= res.max_rank));
    }
}
