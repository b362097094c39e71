//! Subcommand implementations. Each command reads its upstream artifacts
//! from the output directory, writes tidy CSVs plus a manifest, and is
//! idempotent given (config, seed).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use polsens::confound::fit_sensitivity;
use polsens::data::{
    load_dataset, split_folds, write_dataset, write_results, Cell, Dataset, FoldSplit,
    ResultsTable,
};
use polsens::glm::{fit_cv, fit_nuisance, predict, FitTarget, LambdaRule, NuisanceEstimates};
use polsens::mathutil::quantile_of;
use polsens::policy::{direct_policy_value, make_policy_family, subgroup_ate, Policy};
use polsens::rr::rr_sweep;
use polsens::synth::{
    censor, default_subgroups, generate_truth, load_truth, run_validation_suite,
    write_truth, SyntheticTruth, ThresholdGrid,
};

use crate::config::{censoring_label, RunConfig};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_GATE: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Gate(String),
    Io(String),
    Core(polsens::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Gate(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<polsens::Error> for CliError {
    fn from(e: polsens::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "polsens", version, about = "Offline policy evaluation with confounding sensitivity analysis")]
pub struct Cli {
    /// JSON config file; defaults apply when omitted
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the config output directory
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Cap the worker thread count (0 = library default)
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic truth and its censored observational views
    Synth,
    /// Split folds and fit the risk and nuisance models per censoring
    FitNuisance,
    /// Materialize the threshold policy family per censoring
    Policies,
    /// Direct (ignorability) policy-value estimates per censoring
    EvaluateDirect,
    /// Posterior sensitivity bands per censoring
    Sensitivity {
        /// Comma-separated K values for a prior-robustness sweep
        #[arg(long)]
        sweep_k: Option<String>,
        /// Comma-separated sigma_tau values for a prior-robustness sweep
        #[arg(long)]
        sweep_sigma_tau: Option<String>,
        /// Also dump raw draws as (chain, iteration, parameter, value)
        #[arg(long)]
        dump_draws: bool,
    },
    /// Min/max policy-value envelopes over the four-parameter grid
    RrSweep,
    /// Subgroup treatment effects: direct, posterior bands, and oracle
    Subgroup,
    /// Ranking robustness: learned-vs-oracle quantile policy curves
    RankCheck,
    /// End-to-end synthetic validation with coverage reporting
    Validate,
    /// Summarize all artifacts; fails if any expected artifact is missing
    Report,
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg: RunConfig = match &cli.config {
        Some(path) => {
            let raw = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&raw)
                .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.display().to_string();
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn config_hash(cfg: &RunConfig) -> String {
    let canon = serde_json::to_string(cfg).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(canon.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write_manifest(cfg: &RunConfig, out: &Path, command: &str) -> CliResult<()> {
    let manifest = serde_json::json!({
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    let path = out.join(format!("manifest_{command}.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn ensure_out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

fn require_artifact(path: &Path, produced_by: &str) -> CliResult<()> {
    if !path.exists() {
        return Err(CliError::Config(format!(
            "missing artifact {}; run `polsens {produced_by}` first",
            path.display()
        )));
    }
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    if cli.threads > 0 {
        // ignore failures when a global pool already exists (tests)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let cfg = load_config(&cli)?;
    let out = ensure_out_dir(&cfg)?;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg, &out),
        Command::FitNuisance => cmd_fit_nuisance(&cfg, &out),
        Command::Policies => cmd_policies(&cfg, &out),
        Command::EvaluateDirect => cmd_evaluate_direct(&cfg, &out),
        Command::Sensitivity { sweep_k, sweep_sigma_tau, dump_draws } => {
            cmd_sensitivity(&cfg, &out, sweep_k.as_deref(), sweep_sigma_tau.as_deref(), *dump_draws)
        }
        Command::RrSweep => cmd_rr_sweep(&cfg, &out),
        Command::Subgroup => cmd_subgroup(&cfg, &out),
        Command::RankCheck => cmd_rank_check(&cfg, &out),
        Command::Validate => cmd_validate(&cfg, &out),
        Command::Report => cmd_report(&cfg, &out),
    }
}

// ---- artifact paths -----------------------------------------------------

fn truth_path(out: &Path) -> PathBuf {
    out.join("truth.csv")
}

fn obs_path(out: &Path, label: &str) -> PathBuf {
    out.join(format!("obs_{label}.csv"))
}

fn folds_path(out: &Path, label: &str) -> PathBuf {
    out.join(format!("folds_{label}.csv"))
}

fn nuisance_path(out: &Path, label: &str) -> PathBuf {
    out.join(format!("nuisance_{label}.csv"))
}

fn scores_path(out: &Path, label: &str) -> PathBuf {
    out.join(format!("policy_scores_{label}.csv"))
}

// ---- synth ---------------------------------------------------------------

fn cmd_synth(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let spec = cfg.scenario_spec();
    let truth = generate_truth(&spec, cfg.seed)?;
    write_truth(&truth, &truth_path(out))?;
    fs::write(
        out.join("scenario.json"),
        serde_json::to_string_pretty(&spec).unwrap(),
    )
    .map_err(|e| CliError::Io(format!("cannot write scenario.json: {e}")))?;
    for keep in &cfg.censorings {
        let obs = censor(&truth, keep)?;
        write_dataset(&obs, &obs_path(out, &censoring_label(keep)))?;
    }
    write_manifest(cfg, out, "synth")?;
    println!("synth: wrote truth.csv and {} censored views", cfg.censorings.len());
    Ok(())
}

// ---- fit-nuisance ----------------------------------------------------------

struct LoadedCensoring {
    observed: Dataset,
    folds: FoldSplit,
    eval_ds: Dataset,
    label: String,
}

fn load_censoring(cfg: &RunConfig, out: &Path, keep: &[String]) -> CliResult<LoadedCensoring> {
    let label = censoring_label(keep);
    let path = obs_path(out, &label);
    require_artifact(&path, "synth")?;
    let observed = load_dataset(&path, keep)?;
    let folds = split_folds(&observed, cfg.seed, cfg.fractions)?;
    let eval_ds = observed.subset(&folds.eval_fold);
    Ok(LoadedCensoring { observed, folds, eval_ds, label })
}

fn cmd_fit_nuisance(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    for keep in &cfg.censorings {
        let lc = load_censoring(cfg, out, keep)?;
        let ncfg = cfg.nuisance_config();

        let mut folds_table = ResultsTable::new(&["id", "fold"]);
        for r in lc.observed.records() {
            let fold = if lc.folds.policy_fold.contains(&r.id) {
                "policy"
            } else if lc.folds.nuisance_fold.contains(&r.id) {
                "nuisance"
            } else {
                "eval"
            };
            folds_table.push(vec![Cell::Int(r.id as i64), Cell::Text(fold.into())]);
        }
        write_results(&folds_table, &folds_path(out, &lc.label))?;

        let released: HashSet<u64> = lc
            .observed
            .records()
            .iter()
            .filter(|r| lc.folds.policy_fold.contains(&r.id) && r.treatment == 0)
            .map(|r| r.id)
            .collect();
        let risk_cfg = ncfg.clone().with_rule(LambdaRule::MinLoss);
        let risk_fit = fit_cv(&lc.observed, FitTarget::Outcome, &released, &risk_cfg)?;
        let scores = predict(&risk_fit, &lc.eval_ds)?;
        let mut scores_table = ResultsTable::new(&["id", "score"]);
        for (r, s) in lc.eval_ds.records().iter().zip(&scores) {
            scores_table.push(vec![Cell::Int(r.id as i64), Cell::Float(*s)]);
        }
        write_results(&scores_table, &scores_path(out, &lc.label))?;

        let nz = fit_nuisance(&lc.observed, &lc.folds.nuisance_fold, &lc.eval_ds, &ncfg)?;
        let mut nz_table = ResultsTable::new(&["id", "mu0_hat", "mu1_hat", "e_hat"]);
        for (i, r) in lc.eval_ds.records().iter().enumerate() {
            nz_table.push(vec![
                Cell::Int(r.id as i64),
                Cell::Float(nz.mu0_hat[i]),
                Cell::Float(nz.mu1_hat[i]),
                Cell::Float(nz.e_hat[i]),
            ]);
        }
        write_results(&nz_table, &nuisance_path(out, &lc.label))?;
        println!("fit-nuisance[{}]: {} eval units", lc.label, lc.eval_ds.len());
    }
    write_manifest(cfg, out, "fit-nuisance")?;
    Ok(())
}

// ---- shared loaders -------------------------------------------------------

fn read_float_columns(path: &Path, expected: &[&str]) -> CliResult<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Io(format!("bad header in {}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    if got != expected {
        return Err(CliError::Config(format!(
            "unexpected header in {}: {got:?}",
            path.display()
        )));
    }
    let mut cols = vec![Vec::new(); expected.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Io(format!("bad row in {}: {e}", path.display())))?;
        for (j, col) in cols.iter_mut().enumerate() {
            let v: f64 = rec
                .get(j)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("non-numeric cell in {}", path.display())))?;
            col.push(v);
        }
    }
    Ok(cols)
}

struct EvalInputs {
    lc: LoadedCensoring,
    nz: NuisanceEstimates,
    policies: Vec<Policy>,
    thresholds: Vec<f64>,
}

fn load_eval_inputs(cfg: &RunConfig, out: &Path, keep: &[String]) -> CliResult<EvalInputs> {
    let lc = load_censoring(cfg, out, keep)?;
    let nz_file = nuisance_path(out, &lc.label);
    require_artifact(&nz_file, "fit-nuisance")?;
    let sc_file = scores_path(out, &lc.label);
    require_artifact(&sc_file, "fit-nuisance")?;

    let nz_cols = read_float_columns(&nz_file, &["id", "mu0_hat", "mu1_hat", "e_hat"])?;
    let sc_cols = read_float_columns(&sc_file, &["id", "score"])?;
    let eval_ids = lc.eval_ds.ids();
    let ids_match = |col: &[f64]| -> bool {
        col.len() == eval_ids.len()
            && col.iter().zip(&eval_ids).all(|(a, &b)| *a as u64 == b)
    };
    if !ids_match(&nz_cols[0]) || !ids_match(&sc_cols[0]) {
        return Err(CliError::Config(
            "artifact ids do not match the eval fold; re-run `polsens fit-nuisance`".into(),
        ));
    }
    let nz = NuisanceEstimates::from_probabilities(
        nz_cols[1].clone(),
        nz_cols[2].clone(),
        nz_cols[3].clone(),
    )?;
    let scores = sc_cols[1].clone();
    let levels = ThresholdGrid::default_levels(cfg.threshold_points);
    let thresholds = levels.resolve(&scores);
    let policies = make_policy_family(&scores, &eval_ids, &thresholds)?;
    Ok(EvalInputs { lc, nz, policies, thresholds })
}

// ---- policies ----------------------------------------------------------

fn cmd_policies(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    for keep in &cfg.censorings {
        let inputs = load_eval_inputs(cfg, out, keep)?;
        let mut table = ResultsTable::new(&["threshold", "release_rate"]);
        for (s, pi) in inputs.thresholds.iter().zip(&inputs.policies) {
            table.push(vec![Cell::Float(*s), Cell::Float(pi.release_rate())]);
        }
        write_results(&table, &out.join(format!("policies_{}.csv", inputs.lc.label)))?;
        println!("policies[{}]: {} thresholds", inputs.lc.label, inputs.thresholds.len());
    }
    write_manifest(cfg, out, "policies")?;
    Ok(())
}

// ---- evaluate-direct ------------------------------------------------------

fn cmd_evaluate_direct(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    for keep in &cfg.censorings {
        let inputs = load_eval_inputs(cfg, out, keep)?;
        let mut table =
            ResultsTable::new(&["threshold", "release_rate", "value", "n_agree", "n_disagree"]);
        for (s, pi) in inputs.thresholds.iter().zip(&inputs.policies) {
            let est = direct_policy_value(&inputs.lc.eval_ds, pi, &inputs.nz)?;
            table.push(vec![
                Cell::Float(*s),
                Cell::Float(est.release_rate),
                Cell::Float(est.value),
                Cell::Int(est.n_agree as i64),
                Cell::Int(est.n_disagree as i64),
            ]);
        }
        write_results(&table, &out.join(format!("direct_{}.csv", inputs.lc.label)))?;
        println!("evaluate-direct[{}]: done", inputs.lc.label);
    }
    write_manifest(cfg, out, "evaluate-direct")?;
    Ok(())
}

// ---- sensitivity ------------------------------------------------------------

fn parse_list(raw: &str, what: &str) -> CliResult<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad {what} entry '{s}'")))
        })
        .collect()
}

fn band_quantiles(values: &[f64]) -> (f64, f64, f64, f64, f64) {
    (
        quantile_of(values, 0.025),
        quantile_of(values, 0.25),
        quantile_of(values, 0.50),
        quantile_of(values, 0.75),
        quantile_of(values, 0.975),
    )
}

fn cmd_sensitivity(
    cfg: &RunConfig,
    out: &Path,
    sweep_k: Option<&str>,
    sweep_sigma_tau: Option<&str>,
    dump_draws: bool,
) -> CliResult<()> {
    let ks = match sweep_k {
        Some(raw) => parse_list(raw, "sweep-k")?.iter().map(|v| *v as usize).collect(),
        None => vec![cfg.sensitivity.k],
    };
    let sigmas = match sweep_sigma_tau {
        Some(raw) => parse_list(raw, "sweep-sigma-tau")?,
        None => vec![cfg.sensitivity.sigma_tau],
    };
    let sweeping = ks.len() > 1 || sigmas.len() > 1;

    let mut gate_failures = Vec::new();
    for keep in &cfg.censorings {
        let inputs = load_eval_inputs(cfg, out, keep)?;
        for &k in &ks {
            for &sigma_tau in &sigmas {
                let spec = cfg.sensitivity_spec_with(k, sigma_tau);
                let fit = fit_sensitivity(&inputs.lc.eval_ds, &inputs.nz, &spec)?;

                let mut table = ResultsTable::new(&[
                    "threshold",
                    "release_rate",
                    "q025",
                    "q25",
                    "q50",
                    "q75",
                    "q975",
                ]);
                for (s, pi) in inputs.thresholds.iter().zip(&inputs.policies) {
                    let values = fit.policy_values(pi)?;
                    let (q025, q25, q50, q75, q975) = band_quantiles(&values);
                    table.push(vec![
                        Cell::Float(*s),
                        Cell::Float(pi.release_rate()),
                        Cell::Float(q025),
                        Cell::Float(q25),
                        Cell::Float(q50),
                        Cell::Float(q75),
                        Cell::Float(q975),
                    ]);
                }
                let suffix = if sweeping {
                    format!("{}_K{k}_st{sigma_tau}", inputs.lc.label)
                } else {
                    inputs.lc.label.clone()
                };
                write_results(&table, &out.join(format!("sensitivity_{suffix}.csv")))?;

                let diag = serde_json::json!({
                    "censoring": inputs.lc.label,
                    "k": k,
                    "sigma_tau": sigma_tau,
                    "max_rhat": fit.draws.max_rhat(),
                    "divergence_rate": fit.draws.divergence_rate(),
                    "divergence_flag": fit.draws.divergence_flag(),
                    "accept_rate": fit.draws.accept_rate,
                    "step_sizes": fit.draws.step_sizes,
                    "rhat_ok": fit.rhat_ok,
                });
                let diag_path = out.join(format!("diagnostics_{suffix}.json"));
                fs::write(&diag_path, serde_json::to_string_pretty(&diag).unwrap())
                    .map_err(|e| CliError::Io(format!("cannot write diagnostics: {e}")))?;

                if dump_draws {
                    let mut dump =
                        ResultsTable::new(&["chain", "iteration", "parameter", "value"]);
                    for c in 0..fit.draws.chains {
                        for it in 0..fit.draws.iters {
                            let draw = fit.draws.draw(c, it);
                            for (j, name) in fit.draws.parameter_names.iter().enumerate() {
                                dump.push(vec![
                                    Cell::Int(c as i64),
                                    Cell::Int(it as i64),
                                    Cell::Text(name.clone()),
                                    Cell::Float(draw[j]),
                                ]);
                            }
                        }
                    }
                    write_results(&dump, &out.join(format!("draws_{suffix}.csv")))?;
                }

                if !fit.rhat_ok {
                    gate_failures.push(format!(
                        "{suffix}: max R-hat {:.4} (see {})",
                        fit.draws.max_rhat(),
                        diag_path.display()
                    ));
                }
                println!(
                    "sensitivity[{suffix}]: max R-hat {:.4}, divergence rate {:.4}",
                    fit.draws.max_rhat(),
                    fit.draws.divergence_rate()
                );
            }
        }
    }
    write_manifest(cfg, out, "sensitivity")?;
    if !gate_failures.is_empty() {
        return Err(CliError::Gate(format!(
            "R-hat gate failed: {}",
            gate_failures.join("; ")
        )));
    }
    Ok(())
}

// ---- rr-sweep ------------------------------------------------------------

fn cmd_rr_sweep(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    for keep in &cfg.censorings {
        let inputs = load_eval_inputs(cfg, out, keep)?;
        let mut table = ResultsTable::new(&[
            "threshold",
            "release_rate",
            "direct_value",
            "rr_min",
            "rr_max",
            "regime",
        ]);
        for (label, grid) in cfg.regimes() {
            let envelopes = rr_sweep(&inputs.lc.eval_ds, &inputs.nz, &inputs.policies, &grid)?;
            for ((s, pi), env) in
                inputs.thresholds.iter().zip(&inputs.policies).zip(&envelopes)
            {
                let direct = direct_policy_value(&inputs.lc.eval_ds, pi, &inputs.nz)?;
                table.push(vec![
                    Cell::Float(*s),
                    Cell::Float(pi.release_rate()),
                    Cell::Float(direct.value),
                    Cell::Float(env.min),
                    Cell::Float(env.max),
                    Cell::Text(label.clone()),
                ]);
            }
        }
        write_results(&table, &out.join(format!("rr_{}.csv", inputs.lc.label)))?;
        println!("rr-sweep[{}]: done", inputs.lc.label);
    }
    write_manifest(cfg, out, "rr-sweep")?;
    Ok(())
}

// ---- subgroup ------------------------------------------------------------

fn load_truth_artifact(cfg: &RunConfig, out: &Path) -> CliResult<SyntheticTruth> {
    let path = truth_path(out);
    require_artifact(&path, "synth")?;
    Ok(load_truth(&path, &cfg.scenario_spec().schema())?)
}

fn cmd_subgroup(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let truth = load_truth_artifact(cfg, out)?;
    for keep in &cfg.censorings {
        let inputs = load_eval_inputs(cfg, out, keep)?;
        let spec = cfg.sensitivity_spec();
        let fit = fit_sensitivity(&inputs.lc.eval_ds, &inputs.nz, &spec)?;
        let mut table = ResultsTable::new(&[
            "subgroup",
            "n_units",
            "direct",
            "oracle",
            "q025",
            "q25",
            "q50",
            "q75",
            "q975",
        ]);
        for (name, group) in default_subgroups(&truth) {
            let in_eval: HashSet<u64> = group
                .intersection(&inputs.lc.folds.eval_fold)
                .copied()
                .collect();
            if in_eval.is_empty() {
                continue;
            }
            let positions: Vec<usize> =
                in_eval.iter().map(|&id| (id - 1) as usize).collect();
            let oracle = truth.mean_effect(&positions);
            let direct = subgroup_ate(&inputs.lc.eval_ds, &in_eval, |pi| {
                Ok(direct_policy_value(&inputs.lc.eval_ds, pi, &inputs.nz)?.value)
            })?;
            let post = fit.subgroup_ate(&in_eval)?;
            let (q025, q25, q50, q75, q975) = band_quantiles(&post);
            table.push(vec![
                Cell::Text(name),
                Cell::Int(in_eval.len() as i64),
                Cell::Float(direct),
                Cell::Float(oracle),
                Cell::Float(q025),
                Cell::Float(q25),
                Cell::Float(q50),
                Cell::Float(q75),
                Cell::Float(q975),
            ]);
        }
        write_results(&table, &out.join(format!("subgroup_{}.csv", inputs.lc.label)))?;
        println!("subgroup[{}]: done", inputs.lc.label);
    }
    write_manifest(cfg, out, "subgroup")?;
    Ok(())
}

// ---- rank-check ------------------------------------------------------------

fn cmd_rank_check(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let truth = load_truth_artifact(cfg, out)?;
    let grid = polsens::ranking::default_quantile_grid(cfg.quantile_points);
    for keep in &cfg.censorings {
        let label = censoring_label(keep);
        let points =
            polsens::ranking::ranking_robustness(&truth, keep, &grid, &cfg.nuisance_config())?;
        let mut table = ResultsTable::new(&[
            "quantile",
            "release_rate",
            "learned_value",
            "oracle_value",
        ]);
        for p in &points {
            table.push(vec![
                Cell::Float(p.quantile),
                Cell::Float(p.release_rate),
                Cell::Float(p.learned_value),
                Cell::Float(p.oracle_value),
            ]);
        }
        write_results(&table, &out.join(format!("rank_{label}.csv")))?;
        println!("rank-check[{label}]: done");
    }
    write_manifest(cfg, out, "rank-check")?;
    Ok(())
}

// ---- validate ------------------------------------------------------------

fn cmd_validate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let spec = cfg.scenario_spec();
    let truth = generate_truth(&spec, cfg.seed)?;
    let vcfg = cfg.validation_config();
    let report = run_validation_suite(&truth, &cfg.censorings, &vcfg)?;
    write_results(&report.policy_table(), &out.join("coverage.csv"))?;
    write_results(&report.subgroup_table(), &out.join("subgroup_coverage.csv"))?;

    let mut summaries = Vec::new();
    let mut gate_failures = Vec::new();
    for c in &report.censorings {
        summaries.push(serde_json::json!({
            "censoring": c.censoring,
            "coverage_fraction": c.coverage_fraction(),
            "mean_band_width": c.mean_band_width(),
            "max_rhat": c.max_rhat,
            "divergence_rate": c.divergence_rate,
            "rhat_ok": c.rhat_ok,
        }));
        if !c.rhat_ok {
            gate_failures.push(format!("{}: max R-hat {:.4}", c.censoring, c.max_rhat));
        }
        println!(
            "validate[{}]: coverage {:.3}, mean band width {:.4}, max R-hat {:.4}",
            c.censoring,
            c.coverage_fraction(),
            c.mean_band_width(),
            c.max_rhat
        );
    }
    fs::write(
        out.join("validate_summary.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "censorings": summaries })).unwrap(),
    )
    .map_err(|e| CliError::Io(format!("cannot write validate_summary.json: {e}")))?;
    write_manifest(cfg, out, "validate")?;
    if !gate_failures.is_empty() {
        return Err(CliError::Gate(format!(
            "R-hat gate failed: {}",
            gate_failures.join("; ")
        )));
    }
    Ok(())
}

// ---- report ------------------------------------------------------------

fn cmd_report(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let mut artifacts = Vec::new();
    let mut combined = ResultsTable::new(&["artifact", "row"]);
    for keep in &cfg.censorings {
        let label = censoring_label(keep);
        for (kind, produced_by) in [
            (format!("direct_{label}.csv"), "evaluate-direct"),
            (format!("sensitivity_{label}.csv"), "sensitivity"),
            (format!("rr_{label}.csv"), "rr-sweep"),
            (format!("subgroup_{label}.csv"), "subgroup"),
            (format!("rank_{label}.csv"), "rank-check"),
        ] {
            let path = out.join(&kind);
            require_artifact(&path, produced_by)?;
            let content = fs::read_to_string(&path)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            let rows = content.lines().count().saturating_sub(1);
            for line in content.lines().skip(1) {
                combined.push(vec![Cell::Text(kind.clone()), Cell::Text(line.to_string())]);
            }
            artifacts.push(serde_json::json!({ "artifact": kind, "rows": rows }));
        }
        // diagnostics are informative but optional in the summary
        let diag_path = out.join(format!("diagnostics_{label}.json"));
        if let Ok(raw) = fs::read_to_string(&diag_path) {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(&raw) {
                artifacts.push(serde_json::json!({
                    "artifact": format!("diagnostics_{label}.json"),
                    "diagnostics": v,
                }));
            }
        }
    }
    write_results(&combined, &out.join("report.csv"))?;
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "config_hash": config_hash(cfg),
            "artifacts": artifacts,
        }))
        .unwrap(),
    )
    .map_err(|e| CliError::Io(format!("cannot write report.json: {e}")))?;
    println!("report: {} artifacts summarized", artifacts.len());
    write_manifest(cfg, out, "report")?;
    Ok(())
}
