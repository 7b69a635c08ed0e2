use std::fs;
use std::path::Path;

use bayes_procova::exec::{child_seed, map_indexed, Domain};
use bayes_procova::prior::historical_regression;
use bayes_procova::sampler::{summarize_draws, write_chain_csv};
use bayes_procova::simulation::{choose_gamma, type1_error_curve};
use bayes_procova::{
    bootstrap_delta_variance, build_design, ess, ess_gain, fit_informative_component, load_historical_csv_with,
    load_trial_csv_with, prior_beta1_variance, procova_ci_and_test, procova_fit, run_scenario, sbc_validate,
    CsvColumns, DataSource, Error, Execution, FlatComponent, GibbsConfig, GibbsSampler, HcVariant, KMode,
    MixturePrior, OmegaUpdate, PriorVariance, RandomizedDesign, SamplerVariant, ScenarioConfig, SbcConfig,
    WeightPrior,
};
use serde::Serialize;

use crate::report::{
    render_scenario, render_type1_table, AnalysisReport, EssBlock, HistoricalFit, PosteriorBlock, PriorBlock,
    ProcovaBlock, RunMetadata,
};
use crate::{AnalyzeArgs, CalibrateArgs, CliError, K0Choice, PriorEssArgs, PriorFlags, SbcArgs, SimulateArgs};

type CliResult<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    match out {
        Some(path) => fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_prior(path: &Path) -> CliResult<MixturePrior> {
    let prior: MixturePrior = serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Config(format!("invalid prior file {}: {e}", path.display())))?;
    prior.validate()?;
    Ok(prior)
}

impl PriorFlags {
    fn k_mode(&self) -> KMode {
        match self.k0_mode {
            K0Choice::InverseN => KMode::InverseN,
            K0Choice::InverseSqrtN => KMode::InverseSqrtN,
        }
    }

    fn flat(&self) -> FlatComponent {
        let mut flat = FlatComponent::default();
        self.apply_flat(&mut flat);
        flat
    }

    fn weight(&self) -> WeightPrior {
        let mut weight = WeightPrior::default();
        self.apply_weight(&mut weight);
        weight
    }

    fn apply_flat(&self, flat: &mut FlatComponent) {
        if let Some(v) = self.k {
            flat.k = v;
        }
        if let Some(v) = self.nu0 {
            flat.nu0 = v;
        }
        if let Some(v) = self.sigma0_sq {
            flat.sigma0_sq = v;
        }
    }

    fn apply_weight(&self, weight: &mut WeightPrior) {
        if let Some(v) = self.alpha1 {
            weight.alpha1 = v;
        }
        if let Some(v) = self.alpha2 {
            weight.alpha2 = v;
        }
    }

    fn apply(&self, prior: &mut MixturePrior) {
        for (slot, value) in [(0, self.k0), (1, self.k1), (2, self.k2)] {
            if let Some(v) = value {
                prior.informative.k[slot] = v;
            }
        }
        self.apply_flat(&mut prior.flat);
        self.apply_weight(&mut prior.weight);
    }

    fn k1_or_default(&self) -> f64 {
        self.k1.unwrap_or(bayes_procova::prior::DEFAULT_K1)
    }
}

pub fn analyze(args: AnalyzeArgs, seed: u64) -> CliResult<()> {
    let columns = CsvColumns {
        outcome: args.y_col.clone(),
        treatment: args.w_col.clone(),
        score: args.m_col.clone(),
    };
    let trial = load_trial_csv_with(&args.trial, &columns)?;
    let flags = &args.prior_flags;
    let (prior, source, historical_fit) = match (&args.prior, &args.historical) {
        (Some(path), _) => {
            let mut prior = load_prior(path)?;
            flags.apply(&mut prior);
            (prior, format!("file {}", path.display()), None)
        }
        (None, Some(path)) => {
            let hist = load_historical_csv_with(path, &columns)?;
            let informative = fit_informative_component(&hist, &flags.k_mode(), flags.k1_or_default())?;
            let reg = historical_regression(hist.outcomes(), hist.scores())?;
            let mut prior = MixturePrior {
                informative,
                flat: flags.flat(),
                weight: flags.weight(),
            };
            flags.apply(&mut prior);
            let fit = HistoricalFit {
                n_hist: reg.n,
                beta0_hat: reg.beta0,
                beta2_hat: reg.beta2,
                s2: prior.informative.s2,
                ss_m: reg.ss_m,
            };
            (prior, format!("historical fit of {}", path.display()), Some(fit))
        }
        (None, None) => {
            return Err(CliError::Config("analyze needs --historical or --prior".into()));
        }
    };
    prior.validate()?;

    let design = build_design(&trial)?;
    let base = GibbsConfig {
        iterations: args.iterations,
        burn_in: args.burn_in,
        seed,
        omega_init: args.omega_init,
        omega_update: match args.omega_fixed {
            Some(w) => OmegaUpdate::Fixed(w),
            None => OmegaUpdate::Sampled,
        },
        ..GibbsConfig::default()
    };
    if args.chains == 0 {
        return Err(CliError::Core(Error::InvalidArgument("--chains must be positive".into())));
    }
    base.validate()?;
    let chains = map_indexed(args.chains, Execution::Parallel, |c| {
        let cfg = GibbsConfig {
            seed: child_seed(seed, Domain::Chains, c as u64),
            ..base.clone()
        };
        GibbsSampler::new(&design, &prior, &cfg)?.run()
    })
    .into_iter()
    .collect::<Result<Vec<_>, Error>>()?;
    if let Some(path) = &args.chain_csv {
        write_chain_csv(path, &chains[0])?;
    }
    let pooled: Vec<_> = chains.iter().flat_map(|c| c[base.burn_in..].iter().copied()).collect();
    let summary = summarize_draws(&pooled)?;

    let hc: HcVariant = args.hc.into();
    let fit = procova_fit(&trial, hc)?;
    let wald = procova_ci_and_test(&fit, 0.05)?;
    let v1 = fit.hc_cov[(1, 1)];
    let v2 = summary.beta1_var;
    let report = AnalysisReport {
        posterior: PosteriorBlock::from(&summary),
        ess: EssBlock {
            n: trial.len(),
            ess: ess(trial.len(), v1, v2)?,
            ess_minus_n: ess_gain(trial.len(), v1, v2)?,
            v1,
            v2,
        },
        procova: ProcovaBlock::new(hc, &wald, fit.classical_se_beta1()),
        prior: PriorBlock {
            source,
            mixture: prior,
            historical_fit,
        },
        metadata: RunMetadata {
            seed,
            iterations: base.iterations,
            burn_in: base.burn_in,
            chains: args.chains,
            omega_init: base.omega_init,
            omega_update: base.omega_update,
            omega_grid_size: base.omega_grid_size,
            library_version: bayes_procova::VERSION,
            cli_version: env!("CARGO_PKG_VERSION"),
        },
    };
    eprint!("{}", report.render());
    emit_json(&report, args.out.as_deref())
}

fn parse_scenarios(path: &Path) -> CliResult<Vec<ScenarioConfig>> {
    let text = read_text(path)?;
    let bad = |e: String| CliError::Config(format!("invalid scenario file {}: {e}", path.display()));
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        match value.get("scenario") {
            Some(list) => serde_json::from_value(list.clone()).map_err(|e| bad(e.to_string())),
            None => serde_json::from_value(value).map(|c| vec![c]).map_err(|e| bad(e.to_string())),
        }
    } else {
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        match table.remove("scenario") {
            Some(list) if table.is_empty() => list.try_into().map_err(|e: toml::de::Error| bad(e.to_string())),
            Some(_) => Err(bad("a file with a `scenario` array cannot have other top-level keys".into())),
            None => toml::Value::Table(table)
                .try_into()
                .map(|c| vec![c])
                .map_err(|e: toml::de::Error| bad(e.to_string())),
        }
    }
}

#[derive(Serialize)]
struct SimulateEntry {
    scenario: String,
    summary_json: String,
    replicates_csv: String,
    completed: usize,
    failed: usize,
    mean_signed_bias: f64,
    median_variance_reduction_pct: f64,
    avg_posterior_omega: f64,
    type1_error_rate: f64,
}

pub fn simulate(args: SimulateArgs, seed: Option<u64>) -> CliResult<()> {
    let scenarios = parse_scenarios(&args.config)?;
    if scenarios.is_empty() {
        return Err(CliError::Config("scenario file defines no scenarios".into()));
    }
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let mut entries = Vec::with_capacity(scenarios.len());
    for (i, mut cfg) in scenarios.into_iter().enumerate() {
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(r) = args.replicates {
            cfg.replicates = r;
        }
        let name = format!("scenario_{:02}", i + 1);
        let result = run_scenario(&cfg)?;
        let json = args.out_dir.join(format!("{name}.json"));
        let csv = args.out_dir.join(format!("{name}_replicates.csv"));
        result.write_json(&json)?;
        result.write_records_csv(&csv)?;
        eprint!("{}", render_scenario(&name, &result));
        entries.push(SimulateEntry {
            scenario: name,
            summary_json: json.display().to_string(),
            replicates_csv: csv.display().to_string(),
            completed: result.completed,
            failed: result.failures.len(),
            mean_signed_bias: result.mean_signed_bias,
            median_variance_reduction_pct: result.variance_reduction_pct.median,
            avg_posterior_omega: result.avg_posterior_omega,
            type1_error_rate: result.type1_error_rate,
        });
    }
    emit_json(&entries, None)
}

#[derive(Serialize)]
struct CalibrationReport {
    var_delta: f64,
    shifts: Vec<f64>,
    target_alpha: f64,
    table: Vec<bayes_procova::simulation::Type1Row>,
    chosen_gamma: f64,
    prior: MixturePrior,
}

pub fn calibrate(args: CalibrateArgs, seed: u64) -> CliResult<()> {
    if args.gamma_grid.is_empty() {
        return Err(CliError::Core(Error::InvalidArgument("--gamma-grid is empty".into())));
    }
    if args.shift_steps == 0 || !(args.shift_sd_max >= 0.0) {
        return Err(CliError::Core(Error::InvalidArgument(
            "--shift-steps must be positive and --shift-sd-max non-negative".into(),
        )));
    }
    let columns = CsvColumns::default();
    let hist = load_historical_csv_with(&args.historical, &columns)?;
    let flags = &args.prior_flags;
    let var_delta = bootstrap_delta_variance(&hist, args.trial_n, args.bootstrap, seed, Execution::Parallel)?;
    let max_shift = args.shift_sd_max * var_delta.sqrt();
    let shifts: Vec<f64> = if args.shift_steps == 1 {
        vec![0.0]
    } else {
        (0..args.shift_steps)
            .map(|i| max_shift * i as f64 / (args.shift_steps - 1) as f64)
            .collect()
    };
    let flat = flags.flat();
    let weight = flags.weight();
    let base = ScenarioConfig {
        trial_n: args.trial_n,
        hist_n: hist.len(),
        rho_h: 0.0,
        rand_prob: args.rand_prob,
        flat_sigma_prior: [flat.nu0, flat.sigma0_sq],
        weight_prior: [weight.alpha1, weight.alpha2],
        k: flat.k,
        k1: flags.k1_or_default(),
        replicates: args.replicates,
        iterations: args.iterations,
        burn_in: args.burn_in,
        seed,
        ..ScenarioConfig::baseline()
    };
    let configs: Vec<ScenarioConfig> = shifts
        .iter()
        .map(|&s| ScenarioConfig {
            bias_shift: s,
            ..base.clone()
        })
        .collect();
    let rows = type1_error_curve(&configs, &args.gamma_grid, var_delta, &DataSource::Resampled(hist.clone()))?;
    eprint!("{}", render_type1_table(&rows));
    let gamma = choose_gamma(&rows, args.target_alpha)?;
    eprintln!("chosen gamma: {gamma}");
    let informative = fit_informative_component(
        &hist,
        &KMode::Calibrated { gamma, var_delta },
        flags.k1_or_default(),
    )?;
    let prior = MixturePrior {
        informative,
        flat,
        weight,
    };
    if let Some(path) = &args.prior_out {
        emit_json(&prior, Some(path))?;
    }
    emit_json(
        &CalibrationReport {
            var_delta,
            shifts,
            target_alpha: args.target_alpha,
            table: rows,
            chosen_gamma: gamma,
            prior,
        },
        None,
    )
}

#[derive(Serialize)]
struct PriorEssReport {
    omega: f64,
    s_sq: f64,
    status: &'static str,
    prior_beta1_variance: Option<f64>,
    ess: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

pub fn prior_ess(args: PriorEssArgs) -> CliResult<()> {
    let prior = load_prior(&args.prior)?;
    if !(args.s_sq > 0.0) || !args.s_sq.is_finite() {
        return Err(CliError::Core(Error::InvalidArgument(format!(
            "--s-sq must be positive, got {}",
            args.s_sq
        ))));
    }
    let report = match prior_beta1_variance(&prior, args.omega)? {
        PriorVariance::Finite(v) => match bayes_procova::prior_effective_sample_size(&prior, args.omega, args.s_sq) {
            Ok(n) => PriorEssReport {
                omega: args.omega,
                s_sq: args.s_sq,
                status: "defined",
                prior_beta1_variance: Some(v),
                ess: Some(n),
                reason: None,
            },
            Err(e) => PriorEssReport {
                omega: args.omega,
                s_sq: args.s_sq,
                status: "undefined",
                prior_beta1_variance: Some(v),
                ess: None,
                reason: Some(e.to_string()),
            },
        },
        PriorVariance::Infinite => PriorEssReport {
            omega: args.omega,
            s_sq: args.s_sq,
            status: "undefined",
            prior_beta1_variance: None,
            ess: None,
            reason: Some("the prior variance of beta1 does not exist (df <= 2 in a component with positive weight)".into()),
        },
    };
    match report.ess {
        Some(n) => eprintln!("prior ESS at omega = {}: {n:.3}", args.omega),
        None => eprintln!("prior ESS at omega = {}: undefined", args.omega),
    }
    emit_json(&report, None)
}

pub fn sbc(args: SbcArgs, seed: u64) -> CliResult<()> {
    let prior = load_prior(&args.prior)?;
    let config = SbcConfig {
        replications: args.replications,
        rank_bins: args.bins,
        thin: args.thin,
        seed,
        gibbs: GibbsConfig {
            iterations: args.iterations,
            burn_in: args.burn_in,
            variant: if args.corrupt {
                SamplerVariant::HalvedSigmaScale
            } else {
                SamplerVariant::Exact
            },
            ..GibbsConfig::default()
        },
        execution: Execution::Parallel,
    };
    let design = RandomizedDesign {
        n: args.n,
        treated_fraction: 0.5,
    };
    let result = sbc_validate(&prior, &design, &config)?;
    eprintln!(
        "SBC: {} replications, chi-square {:.2} on {} df, p = {:.4}",
        args.replications, result.chi_square, result.df, result.p_value
    );
    emit_json(&result, None)
}
