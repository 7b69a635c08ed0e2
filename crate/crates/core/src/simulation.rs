//! Simulation harness: paired historical/trial data generation, replicate
//! orchestration and the evaluation metrics against PROCOVA.

use std::path::Path;

use log::{info, warn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{build_design, HistoricalDataset, TrialDataset};
use crate::error::{Error, Result};
use crate::exec::{child_seed, compensated_mean, map_indexed, task_rng, Domain, Execution, TaskRng};
use crate::frequentist::{procova_ci_and_test, procova_fit, HcVariant};
use crate::posterior::{ess_gain, DEFAULT_OMEGA_GRID};
use crate::prior::{fit_informative_component, FlatComponent, KMode, MixturePrior, WeightPrior, DEFAULT_FLAT_K, DEFAULT_K1};
use crate::random::{complete_randomization, standard_normals};
use crate::sampler::{quantile_sorted, summarize, GibbsConfig, GibbsSampler};

/// Largest correlation accepted when converting to a slope.
pub const MAX_CORRELATION: f64 = 0.99;

/// Share of replicates allowed to fail before a scenario is reported as failed.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

const GRID_TRIAL_N: [usize; 4] = [25, 50, 100, 250];
const GRID_HIST_N: [usize; 3] = [100, 300, 500];
const GRID_RHO_H: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

/// Slope on the prognostic score giving `Corr(m, y | w) = ρ` when
/// `m ~ N(0, 1)` and the residual standard deviation is `sigma`.
pub fn beta2_from_correlation(rho: f64, sigma: f64) -> Result<f64> {
    if !(0.0..=MAX_CORRELATION).contains(&rho) {
        return Err(Error::invalid(format!("correlation must lie in [0, {MAX_CORRELATION}], got {rho}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(rho * sigma / (1.0 - rho * rho).sqrt())
}

fn default_beta1() -> f64 {
    0.0
}
fn default_sigma_sq() -> f64 {
    1.0
}
fn default_rand_prob() -> f64 {
    0.5
}
fn default_weight_prior() -> [f64; 2] {
    [1.0, 1.0]
}
fn default_flat_sigma_prior() -> [f64; 2] {
    [1.0, 1.0]
}
fn default_k1() -> f64 {
    DEFAULT_K1
}
fn default_flat_k() -> f64 {
    DEFAULT_FLAT_K
}
fn default_iterations() -> usize {
    GibbsConfig::default().iterations
}
fn default_burn_in() -> usize {
    GibbsConfig::default().burn_in
}

/// One simulation scenario. Field names match the configuration file keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "trial_N")]
    pub trial_n: usize,
    #[serde(rename = "hist_N")]
    pub hist_n: usize,
    #[serde(rename = "rho_H")]
    pub rho_h: f64,
    #[serde(default)]
    pub rho_shift: f64,
    #[serde(default)]
    pub bias_shift: f64,
    #[serde(default = "default_beta1")]
    pub beta1_true: f64,
    #[serde(default = "default_sigma_sq")]
    pub sigma_sq_true: f64,
    #[serde(default = "default_rand_prob")]
    pub rand_prob: f64,
    #[serde(rename = "K0_mode", default = "default_k_mode")]
    pub k0_mode: KMode,
    /// `(α₁, α₂)` of the Beta prior on ω.
    #[serde(default = "default_weight_prior")]
    pub weight_prior: [f64; 2],
    /// `(ν₀, σ₀²)` of the flat component's σ² prior.
    #[serde(default = "default_flat_sigma_prior")]
    pub flat_sigma_prior: [f64; 2],
    #[serde(rename = "K1", default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_flat_k")]
    pub k: f64,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub hc_variant: HcVariant,
    #[serde(default)]
    pub execution: Execution,
}

fn default_k_mode() -> KMode {
    KMode::InverseN
}

impl ScenarioConfig {
    /// Scenario 1 of the reference design at `N = 100`, `N_H = 500`,
    /// `ρ_H = 0.5`: Beta(1, 1) weight prior, InvChiSq(1, 1) flat σ² prior,
    /// consistent data, 1000 replicates.
    pub fn baseline() -> Self {
        ScenarioConfig {
            trial_n: 100,
            hist_n: 500,
            rho_h: 0.5,
            rho_shift: 0.0,
            bias_shift: 0.0,
            beta1_true: 0.0,
            sigma_sq_true: 1.0,
            rand_prob: 0.5,
            k0_mode: KMode::InverseN,
            weight_prior: default_weight_prior(),
            flat_sigma_prior: default_flat_sigma_prior(),
            k1: DEFAULT_K1,
            k: DEFAULT_FLAT_K,
            replicates: 1000,
            seed: 0,
            iterations: default_iterations(),
            burn_in: default_burn_in(),
            hc_variant: HcVariant::default(),
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trial_n < 4 || self.hist_n < 4 {
            return Err(Error::invalid("trial_N and hist_N must be at least 4"));
        }
        let rho_t = self.rho_h + self.rho_shift;
        if !(0.0..1.0).contains(&self.rho_h) || !(0.0..1.0).contains(&rho_t) {
            return Err(Error::invalid(format!(
                "correlations must lie in [0, 1): rho_H = {}, rho_H + rho_shift = {rho_t}",
                self.rho_h
            )));
        }
        if !(self.sigma_sq_true > 0.0) {
            return Err(Error::invalid("sigma_sq_true must be positive"));
        }
        let treated = self.treated_count();
        if treated == 0 || treated >= self.trial_n {
            return Err(Error::invalid(format!(
                "rand_prob {} leaves an empty arm at trial_N = {}",
                self.rand_prob, self.trial_n
            )));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be positive"));
        }
        for v in [self.bias_shift, self.beta1_true, self.rho_shift] {
            if !v.is_finite() {
                return Err(Error::invalid("scenario shifts must be finite"));
            }
        }
        self.prior_parts()?;
        self.gibbs_config(0).validate()
    }

    /// Warn about settings outside the reference design grid.
    pub fn warn_off_grid(&self) {
        if !GRID_TRIAL_N.contains(&self.trial_n) {
            warn!("trial_N = {} is outside the reference grid {:?}", self.trial_n, GRID_TRIAL_N);
        }
        if !GRID_HIST_N.contains(&self.hist_n) {
            warn!("hist_N = {} is outside the reference grid {:?}", self.hist_n, GRID_HIST_N);
        }
        if !GRID_RHO_H.iter().any(|r| (r - self.rho_h).abs() < 1e-12) {
            warn!("rho_H = {} is outside the reference grid {:?}", self.rho_h, GRID_RHO_H);
        }
    }

    pub fn treated_count(&self) -> usize {
        (self.trial_n as f64 * self.rand_prob).floor() as usize
    }

    fn prior_parts(&self) -> Result<(FlatComponent, WeightPrior)> {
        let flat = FlatComponent {
            k: self.k,
            nu0: self.flat_sigma_prior[0],
            sigma0_sq: self.flat_sigma_prior[1],
        };
        let weight = WeightPrior {
            alpha1: self.weight_prior[0],
            alpha2: self.weight_prior[1],
        };
        flat.validate()?;
        weight.validate()?;
        Ok((flat, weight))
    }

    pub fn gibbs_config(&self, replicate: usize) -> GibbsConfig {
        GibbsConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            seed: child_seed(self.seed, Domain::Gibbs, replicate as u64),
            omega_grid_size: DEFAULT_OMEGA_GRID,
            ..GibbsConfig::default()
        }
    }

    /// Mixture prior built from a historical dataset under this scenario.
    pub fn build_prior(&self, hist: &HistoricalDataset) -> Result<MixturePrior> {
        let (flat, weight) = self.prior_parts()?;
        Ok(MixturePrior {
            informative: fit_informative_component(hist, &self.k0_mode, self.k1)?,
            flat,
            weight,
        })
    }
}

/// The five scenario families of the reference study, expanded over their
/// varied factor, at the sizes and correlation of `base`. Scenario 4
/// combinations with a negative trial correlation are skipped.
pub fn table1_scenarios(scenario: u8, base: &ScenarioConfig) -> Result<Vec<ScenarioConfig>> {
    let with = |f: &dyn Fn(&mut ScenarioConfig)| {
        let mut c = base.clone();
        c.weight_prior = [1.0, 1.0];
        c.flat_sigma_prior = [1.0, 1.0];
        c.rho_shift = 0.0;
        c.bias_shift = 0.0;
        f(&mut c);
        c
    };
    let out = match scenario {
        1 => vec![with(&|_| {})],
        2 => vec![with(&|c| c.weight_prior = [0.5, 0.5])],
        3 => vec![with(&|c| c.flat_sigma_prior = [3.0, 100.0])],
        4 => [-0.2, -0.1, 0.1, 0.2]
            .into_iter()
            .filter_map(|shift| {
                if base.rho_h + shift < 0.0 {
                    info!("skipping correlation shift {shift} at rho_H = {}", base.rho_h);
                    None
                } else {
                    Some(with(&|c| c.rho_shift = shift))
                }
            })
            .collect(),
        5 => [1.0, 2.0, 3.0, 4.0, 5.0]
            .into_iter()
            .flat_map(|shift| {
                [[1.0, 1.0], [3.0, 100.0]].map(|sigma_prior| {
                    with(&|c| {
                        c.bias_shift = shift;
                        c.flat_sigma_prior = sigma_prior;
                    })
                })
            })
            .collect(),
        other => return Err(Error::invalid(format!("scenario must be 1 to 5, got {other}"))),
    };
    Ok(out)
}

/// Where the data for each replicate comes from.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// Both datasets drawn from the outcome model.
    Synthetic,
    /// A fixed historical dataset; trial controls are resampled from its rows
    /// and shifted by `bias_shift`, treated outcomes also get `beta1_true`.
    Resampled(HistoricalDataset),
}

fn normal_errors(n: usize, sigma: f64, rng: &mut TaskRng) -> Vec<f64> {
    (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn generate_pair(config: &ScenarioConfig, replicate: usize) -> Result<(HistoricalDataset, TrialDataset)> {
    let sigma = config.sigma_sq_true.sqrt();
    let beta2_h = beta2_from_correlation(config.rho_h, sigma)?;
    let beta2_t = beta2_from_correlation(config.rho_h + config.rho_shift, sigma)?;
    let mut rng = task_rng(config.seed, Domain::Data, replicate as u64);

    let m_h = standard_normals(config.hist_n, &mut rng);
    let eps_h = normal_errors(config.hist_n, sigma, &mut rng);
    let mbar_h = mean(&m_h);
    let y_h: Vec<f64> = m_h
        .iter()
        .zip(&eps_h)
        .map(|(&m, &e)| beta2_h * (m - mbar_h) + mbar_h + e)
        .collect();

    let w = complete_randomization(config.trial_n, config.treated_count(), &mut rng);
    let m = standard_normals(config.trial_n, &mut rng);
    let eps = normal_errors(config.trial_n, sigma, &mut rng);
    let mbar = mean(&m);
    let y: Vec<f64> = (0..config.trial_n)
        .map(|i| config.bias_shift + config.beta1_true * w[i] + beta2_t * (m[i] - mbar) + mbar + eps[i])
        .collect();

    Ok((HistoricalDataset::new(y_h, m_h)?, TrialDataset::from_columns(&y, &w, &m)?))
}

fn resampled_trial(config: &ScenarioConfig, hist: &HistoricalDataset, replicate: usize) -> Result<TrialDataset> {
    let mut rng = task_rng(config.seed, Domain::Data, replicate as u64);
    let (ys, ms) = (hist.outcomes(), hist.scores());
    let w = complete_randomization(config.trial_n, config.treated_count(), &mut rng);
    let mut y = vec![0.0; config.trial_n];
    let mut m = vec![0.0; config.trial_n];
    for attempt in 0..crate::prior::BOOTSTRAP_RETRY_CAP {
        for i in 0..config.trial_n {
            let j = rng.random_range(0..ys.len());
            y[i] = ys[j] + config.bias_shift + config.beta1_true * w[i];
            m[i] = ms[j];
        }
        match TrialDataset::from_columns(&y, &w, &m).and_then(|t| build_design(&t).map(|_| t)) {
            Ok(t) => return Ok(t),
            Err(e) if attempt + 1 == crate::prior::BOOTSTRAP_RETRY_CAP => return Err(e),
            Err(_) => {}
        }
    }
    unreachable!("the retry loop returns on its last attempt")
}

/// Metrics for one simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    /// Posterior mean of β₁.
    pub beta1_mean: f64,
    /// Posterior variance of β₁ (`V₂`).
    pub beta1_var: f64,
    pub beta1_q025: f64,
    pub beta1_q975: f64,
    pub procova_beta1: f64,
    /// Squared PROCOVA HC standard error (`V₁`).
    pub procova_var: f64,
    pub variance_reduction_pct: f64,
    /// `V₁ / V₂`.
    pub ess_ratio: f64,
    /// `N (V₁ / V₂ − 1)`.
    pub ess_gain: f64,
    pub omega_mean: f64,
    pub omega_star_mean: f64,
    pub informative_fraction: f64,
    pub reject: bool,
    pub procova_reject: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q25 = quantile_sorted(&sorted, 0.25);
        let q75 = quantile_sorted(&sorted, 0.75);
        Distribution {
            mean: compensated_mean(values),
            median: quantile_sorted(&sorted, 0.5),
            q25,
            q75,
            iqr: q75 - q25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub hc_variant: HcVariant,
    pub completed: usize,
    pub failures: Vec<ReplicateFailure>,
    /// `|mean(β̂₁ − β₁)|` over replicates.
    pub mean_abs_bias: f64,
    pub mean_signed_bias: f64,
    /// `mean |β̂₁ − β₁|` over replicates.
    pub mean_abs_error: f64,
    pub procova_mean_signed_bias: f64,
    pub variance_reduction_pct: Distribution,
    pub ess_ratio: Distribution,
    /// Mean over replicates of the posterior mean of ω*, the posterior
    /// weight of the informative component.
    pub avg_posterior_omega: f64,
    /// Mean over replicates of the posterior mean of the prior weight ω
    /// itself. Under Beta(α₁, α₂) this stays within
    /// `[α₁/(α₁+α₂+1), (α₁+1)/(α₁+α₂+1)]`.
    pub avg_omega_draw: f64,
    pub avg_informative_fraction: f64,
    /// Share of replicates whose 95% central credible interval excludes 0.
    /// This is the type I error rate when `beta1_true = 0`.
    pub type1_error_rate: f64,
    pub procova_rejection_rate: f64,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
}

pub fn run_replicate(config: &ScenarioConfig, source: &DataSource, replicate: usize) -> Result<ReplicateRecord> {
    let (hist, trial) = match source {
        DataSource::Synthetic => generate_pair(config, replicate)?,
        DataSource::Resampled(h) => (h.clone(), resampled_trial(config, h, replicate)?),
    };
    let prior = config.build_prior(&hist)?;
    let design = build_design(&trial)?;
    let gibbs = config.gibbs_config(replicate);
    let chain = GibbsSampler::new(&design, &prior, &gibbs)?.run()?;
    let post = summarize(&chain, gibbs.burn_in)?;

    let fit = procova_fit(&trial, config.hc_variant)?;
    let wald = procova_ci_and_test(&fit, 0.05)?;
    let v1 = fit.hc_cov[(1, 1)];
    let v2 = post.beta1_var;
    let n = trial.len();
    Ok(ReplicateRecord {
        replicate,
        beta1_mean: post.beta1_mean,
        beta1_var: v2,
        beta1_q025: post.beta1_q025,
        beta1_q975: post.beta1_q975,
        procova_beta1: fit.beta1(),
        procova_var: v1,
        variance_reduction_pct: 100.0 * (1.0 - v2 / v1),
        ess_ratio: v1 / v2,
        ess_gain: ess_gain(n, v1, v2)?,
        omega_mean: post.omega_mean,
        omega_star_mean: post.omega_star_mean,
        informative_fraction: post.informative_fraction,
        reject: post.beta1_q025 > 0.0 || post.beta1_q975 < 0.0,
        procova_reject: wald.reject,
    })
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult> {
    config.warn_off_grid();
    run_scenario_with_source(config, &DataSource::Synthetic)
}

pub fn run_scenario_with_source(config: &ScenarioConfig, source: &DataSource) -> Result<ScenarioResult> {
    config.validate()?;
    let outcomes = map_indexed(config.replicates, config.execution, |r| run_replicate(config, source, r));
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (replicate, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(ReplicateFailure {
                replicate,
                error: e.to_string(),
            }),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * config.replicates as f64 || records.is_empty() {
        return Err(Error::ReplicateFailures {
            failed: failures.len(),
            total: config.replicates,
            first: failures.first().map(|f| f.error.clone()).unwrap_or_default(),
        });
    }
    for f in &failures {
        warn!("replicate {} failed: {}", f.replicate, f.error);
    }
    Ok(aggregate(config, records, failures))
}

fn aggregate(config: &ScenarioConfig, records: Vec<ReplicateRecord>, failures: Vec<ReplicateFailure>) -> ScenarioResult {
    let col = |f: fn(&ReplicateRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let truth = config.beta1_true;
    let errors: Vec<f64> = records.iter().map(|r| r.beta1_mean - truth).collect();
    let signed = compensated_mean(&errors);
    let rate = |f: fn(&ReplicateRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / records.len() as f64;
    ScenarioResult {
        config: config.clone(),
        hc_variant: config.hc_variant,
        completed: records.len(),
        failures,
        mean_abs_bias: signed.abs(),
        mean_signed_bias: signed,
        mean_abs_error: compensated_mean(&errors.iter().map(|e| e.abs()).collect::<Vec<_>>()),
        procova_mean_signed_bias: compensated_mean(&records.iter().map(|r| r.procova_beta1 - truth).collect::<Vec<_>>()),
        variance_reduction_pct: Distribution::of(&col(|r| r.variance_reduction_pct)),
        ess_ratio: Distribution::of(&col(|r| r.ess_ratio)),
        avg_posterior_omega: compensated_mean(&col(|r| r.omega_star_mean)),
        avg_omega_draw: compensated_mean(&col(|r| r.omega_mean)),
        avg_informative_fraction: compensated_mean(&col(|r| r.informative_fraction)),
        type1_error_rate: rate(|r| r.reject),
        procova_rejection_rate: rate(|r| r.procova_reject),
        records,
    }
}

impl ScenarioResult {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::NumericalFailure(e.to_string()))?;
        crate::data::write_file(path.as_ref(), &text)
    }

    pub fn write_records_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source: std::io::Error| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut writer = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
        for r in &self.records {
            writer.serialize(r).map_err(|e| io(e.into()))?;
        }
        writer.flush().map_err(io)
    }
}

/// One cell of a type I error table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Type1Row {
    pub gamma: f64,
    pub bias_shift: f64,
    pub k0: f64,
    pub k2_scale: f64,
    pub type1_error_rate: f64,
    pub median_variance_reduction_pct: f64,
    pub mean_variance_reduction_pct: f64,
}

/// Type I error rate and variance reduction over every `(γ, shift)` pair.
/// Each config supplies one bias shift; `K` is recalibrated with `γ` and
/// `var_delta` for every cell.
pub fn type1_error_curve(
    configs: &[ScenarioConfig],
    gamma_grid: &[f64],
    var_delta: f64,
    source: &DataSource,
) -> Result<Vec<Type1Row>> {
    if gamma_grid.is_empty() {
        return Err(Error::invalid("gamma grid is empty"));
    }
    if configs.is_empty() {
        return Err(Error::invalid("no scenarios given for the type I error curve"));
    }
    let mut rows = Vec::with_capacity(configs.len() * gamma_grid.len());
    for &gamma in gamma_grid {
        for base in configs {
            let mut cfg = base.clone();
            cfg.beta1_true = 0.0;
            cfg.k0_mode = KMode::Calibrated { gamma, var_delta };
            let res = run_scenario_with_source(&cfg, source)?;
            let (k0, k2_scale) = calibrated_terms(&cfg, gamma, var_delta, source)?;
            rows.push(Type1Row {
                gamma,
                bias_shift: cfg.bias_shift,
                k0,
                k2_scale,
                type1_error_rate: res.type1_error_rate,
                median_variance_reduction_pct: res.variance_reduction_pct.median,
                mean_variance_reduction_pct: res.variance_reduction_pct.mean,
            });
        }
    }
    Ok(rows)
}

/// `K₀,H` and `K₂,H·Σ(m − m̄)²` for reporting; with synthetic data these are
/// taken from the first replicate's historical fit.
fn calibrated_terms(cfg: &ScenarioConfig, gamma: f64, var_delta: f64, source: &DataSource) -> Result<(f64, f64)> {
    let hist = match source {
        DataSource::Synthetic => generate_pair(cfg, 0)?.0,
        DataSource::Resampled(h) => h.clone(),
    };
    let comp = fit_informative_component(&hist, &KMode::Calibrated { gamma, var_delta }, cfg.k1)?;
    Ok((comp.k[0], comp.k[2] * comp.ss_m))
}

/// Smallest `γ` whose largest error rate over all shifts stays at or below
/// `target`; smaller `γ` borrows more.
pub fn choose_gamma(rows: &[Type1Row], target: f64) -> Result<f64> {
    let mut gammas: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    gammas
        .into_iter()
        .find(|&g| {
            rows.iter()
                .filter(|r| r.gamma == g)
                .all(|r| r.type1_error_rate <= target)
        })
        .ok_or(Error::NoFeasibleGamma { target })
}
