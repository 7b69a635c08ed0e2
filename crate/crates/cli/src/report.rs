//! Machine-readable reports (JSON on stdout) and their human-readable
//! renderings (stderr).

use bayes_procova::simulation::Type1Row;
use bayes_procova::{ChainSummary, HcVariant, MixturePrior, OmegaUpdate, ScenarioResult, WaldInference};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct PosteriorBlock {
    pub beta1_mean: f64,
    pub beta1_sd: f64,
    pub beta1_ci95: [f64; 2],
    pub beta1_median: f64,
    pub prob_beta1_positive: f64,
    pub mc_se_beta1: f64,
    pub omega_mean: f64,
    /// Posterior weight of the informative component.
    pub omega_star_mean: f64,
    pub informative_fraction: f64,
    pub draws: usize,
}

impl From<&ChainSummary> for PosteriorBlock {
    fn from(s: &ChainSummary) -> Self {
        PosteriorBlock {
            beta1_mean: s.beta1_mean,
            beta1_sd: s.beta1_var.sqrt(),
            beta1_ci95: [s.beta1_q025, s.beta1_q975],
            beta1_median: s.beta1_q50,
            prob_beta1_positive: s.prob_beta1_positive,
            mc_se_beta1: s.mc_se_beta1,
            omega_mean: s.omega_mean,
            omega_star_mean: s.omega_star_mean,
            informative_fraction: s.informative_fraction,
            draws: s.draws,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EssBlock {
    pub n: usize,
    /// `N V₁ / V₂` with `V₁` the squared PROCOVA HC standard error.
    pub ess: f64,
    pub ess_minus_n: f64,
    pub v1: f64,
    pub v2: f64,
}

#[derive(Debug, Serialize)]
pub struct ProcovaBlock {
    pub hc_variant: HcVariant,
    pub beta1: f64,
    pub hc_se: f64,
    pub classical_se: f64,
    pub ci95: [f64; 2],
    pub reject: bool,
}

impl ProcovaBlock {
    pub fn new(hc_variant: HcVariant, wald: &WaldInference, classical_se: f64) -> Self {
        ProcovaBlock {
            hc_variant,
            beta1: wald.estimate,
            hc_se: wald.se,
            classical_se,
            ci95: [wald.lower, wald.upper],
            reject: wald.reject,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct HistoricalFit {
    pub n_hist: usize,
    pub beta0_hat: f64,
    pub beta2_hat: f64,
    pub s2: f64,
    pub ss_m: f64,
}

#[derive(Debug, Serialize)]
pub struct PriorBlock {
    pub source: String,
    pub mixture: MixturePrior,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub historical_fit: Option<HistoricalFit>,
}

#[derive(Debug, Serialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub omega_init: f64,
    pub omega_update: OmegaUpdate,
    pub omega_grid_size: usize,
    pub library_version: &'static str,
    pub cli_version: &'static str,
}

#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub posterior: PosteriorBlock,
    pub ess: EssBlock,
    pub procova: ProcovaBlock,
    pub prior: PriorBlock,
    pub metadata: RunMetadata,
}

impl AnalysisReport {
    pub fn render(&self) -> String {
        let p = &self.posterior;
        let f = &self.procova;
        let mix = &self.prior.mixture;
        let mut out = String::new();
        out.push_str(&format!("{:<28}{:>14}{:>14}\n", "", "Bayesian", "PROCOVA"));
        out.push_str(&format!("{:<28}{:>14.5}{:>14.5}\n", "beta1 estimate", p.beta1_mean, f.beta1));
        out.push_str(&format!("{:<28}{:>14.5}{:>14.5}\n", "beta1 sd / se", p.beta1_sd, f.hc_se));
        out.push_str(&format!("{:<28}{:>14.5}{:>14.5}\n", "95% interval lower", p.beta1_ci95[0], f.ci95[0]));
        out.push_str(&format!("{:<28}{:>14.5}{:>14.5}\n", "95% interval upper", p.beta1_ci95[1], f.ci95[1]));
        out.push_str(&format!("{:<28}{:>14.4}\n", "P(beta1 > 0)", p.prob_beta1_positive));
        out.push_str(&format!("{:<28}{:>14.4}\n", "posterior mean omega", p.omega_mean));
        out.push_str(&format!("{:<28}{:>14.4}\n", "posterior mean omega*", p.omega_star_mean));
        out.push_str(&format!("{:<28}{:>14.2}\n", "ESS", self.ess.ess));
        out.push_str(&format!("{:<28}{:>14.2}\n", "ESS - N", self.ess.ess_minus_n));
        out.push_str(&format!(
            "prior: K = {:?}, k = {}, nu0 = {}, sigma0^2 = {}, Beta({}, {})\n",
            mix.informative.k, mix.flat.k, mix.flat.nu0, mix.flat.sigma0_sq, mix.weight.alpha1, mix.weight.alpha2
        ));
        out.push_str(&format!(
            "seed {}, {} chain(s) x {} iterations, burn-in {}\n",
            self.metadata.seed, self.metadata.chains, self.metadata.iterations, self.metadata.burn_in
        ));
        out
    }
}

pub fn render_scenario(name: &str, r: &ScenarioResult) -> String {
    format!(
        "{name}: {} of {} replicates, bias {:+.4}, median VR {:.1}%, median ESS ratio {:.2}, omega* {:.3}, omega {:.3}, reject rate {:.3}\n",
        r.completed,
        r.config.replicates,
        r.mean_signed_bias,
        r.variance_reduction_pct.median,
        r.ess_ratio.median,
        r.avg_posterior_omega,
        r.avg_omega_draw,
        r.type1_error_rate
    )
}

pub fn render_type1_table(rows: &[Type1Row]) -> String {
    let mut out = format!("{:>10}{:>12}{:>12}{:>14}{:>14}\n", "gamma", "shift", "K0", "type I", "median VR %");
    for r in rows {
        out.push_str(&format!(
            "{:>10.4}{:>12.4}{:>12.5}{:>14.4}{:>14.2}\n",
            r.gamma, r.bias_shift, r.k0, r.type1_error_rate, r.median_variance_reduction_pct
        ));
    }
    out
}
