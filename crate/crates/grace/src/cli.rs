//! Command-line pipeline: `gen`, `train`, `eval`, `sim`, and `report`
//! subcommands with reproducible run manifests.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
//! 4 solver non-convergence (artifacts still written with diagnostics),
//! 5 training/holdout leakage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::caresim::{env_csv, run_suite, Env, PolicyKind, SuiteInput, SuiteUser};
use crate::config::{Config, ConfigError};
use crate::datagen::{generate_dataset, read_dataset, user_file_name, write_dataset};
use crate::eval::{oracle_nmcc, run_scenario, EvalContext, Scenario};
use crate::gridlab::{assemble_from_masks, compute_bound, membership_mask, write_shards, GridSpec};
use crate::manifest::{dir_digest, RunManifest};
use crate::model::{
    classifier_from_weight_file, classifier_to_weight_file, decoder_to_weight_file,
    encoder_from_weight_file, encoder_to_weight_file, train_encoder, train_feasibility,
    GracePredictor, Method,
};
use crate::nn::WeightFile;
use crate::ocsvm::{fit_detailed, FromModel, OcsvmError};

#[derive(Debug, Parser)]
#[command(
    name = "grace",
    version,
    about = "Personalized range-of-motion prediction and caregiving policy simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of users with emulated mobility limits.
    Gen {
        /// Master seed; the entire dataset is a pure function of it.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Built-in profile: `test` (fast) or `paper` (full resolution).
        #[arg(long, default_value = "test")]
        profile: String,
        /// Flat key-value TOML file applied over the profile.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Individual key=value overrides applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit per-user completions, build the labeled grid, train the encoder
    /// and feasibility classifier, and write the model bundle.
    Train {
        /// Dataset directory produced by `gen`.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "test")]
        profile: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a cross-validation scenario for one or more methods.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// loo-user | loo-participant | loo-condition | within-condition.
        #[arg(long)]
        scenario: String,
        /// Comma-separated: grace, gt-condition, user-agnostic; or `all`.
        #[arg(long, default_value = "all")]
        methods: String,
        /// Comma-separated seed list; defaults to the config's eval seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value = "test")]
        profile: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the caregiving tasks on the bundle's held-out users.
    Sim {
        #[arg(long)]
        dataset: PathBuf,
        /// Model bundle directory produced by `train`.
        #[arg(long)]
        bundle: PathBuf,
        /// Comma-separated: handover, rehab, dressing, bathing; or `all`.
        #[arg(long, default_value = "all")]
        envs: String,
        /// Comma-separated policies (grace-opt, grace-cons, heur-opt,
        /// heur-cons, oracle) or `all`.
        #[arg(long, default_value = "all")]
        policies: String,
        /// Comma-separated seed list; defaults to the config's sim seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value = "test")]
        profile: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge eval/sim result directories into one plot-ready long table.
    Report {
        /// Result directories to merge.
        #[arg(long, num_args = 1.., value_name = "DIR")]
        results: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Convergence(String),
    #[error("{0}")]
    Leakage(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Convergence(_) => 4,
            CliError::Leakage(_) => 5,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<crate::datagen::DatagenError> for CliError {
    fn from(e: crate::datagen::DatagenError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<crate::gridlab::GridlabError> for CliError {
    fn from(e: crate::gridlab::GridlabError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<crate::model::ModelError> for CliError {
    fn from(e: crate::model::ModelError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<crate::eval::EvalError> for CliError {
    fn from(e: crate::eval::EvalError) -> Self {
        match &e {
            crate::eval::EvalError::InsufficientFolds { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

fn build_config(
    profile: &str,
    config_path: &Option<PathBuf>,
    sets: &[String],
) -> Result<Config, CliError> {
    let mut config = Config::profile(profile)?;
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        config.apply_file(&text)?;
    }
    for pair in sets {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(CliError::Usage(format!(
                "--set expects KEY=VALUE, got {pair:?}"
            )));
        };
        config.set(key.trim(), value.trim())?;
    }
    config.validate()?;
    Ok(config)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen {
            seed,
            profile,
            config,
            sets,
            out,
        } => cmd_gen(seed, &profile, &config, &sets, &out),
        Command::Train {
            dataset,
            seed,
            profile,
            config,
            sets,
            out,
        } => cmd_train(&dataset, seed, &profile, &config, &sets, &out),
        Command::Eval {
            dataset,
            scenario,
            methods,
            seeds,
            profile,
            config,
            sets,
            out,
        } => cmd_eval(
            &dataset, &scenario, &methods, &seeds, &profile, &config, &sets, &out,
        ),
        Command::Sim {
            dataset,
            bundle,
            envs,
            policies,
            seeds,
            profile,
            config,
            sets,
            out,
        } => cmd_sim(
            &dataset, &bundle, &envs, &policies, &seeds, &profile, &config, &sets, &out,
        ),
        Command::Report { results, out } => cmd_report(&results, &out),
    }
}

fn config_snapshot(config: &Config) -> serde_json::Value {
    serde_json::to_value(config).expect("config serializes")
}

fn cmd_gen(
    seed: u64,
    profile: &str,
    config_path: &Option<PathBuf>,
    sets: &[String],
    out: &Path,
) -> Result<(), CliError> {
    let config = build_config(profile, config_path, sets)?;
    let mut manifest = RunManifest::begin("gen", seed, config_snapshot(&config));
    let dataset = generate_dataset(&config.datagen, seed);
    write_dataset(&dataset, out)?;
    manifest.note(
        "n_users",
        serde_json::json!(dataset.records.len()),
    );
    manifest.hash_outputs(out)?;
    manifest.finish(out)?;
    Ok(())
}

/// Everything `sim` needs to reload a trained bundle.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct BundleConfig {
    pub config: Config,
    pub master_seed: u64,
    pub dataset_hash: String,
    pub grid: GridSpec,
    pub union_indices: Vec<u32>,
    pub train_users: Vec<(u32, u32)>,
    pub holdout_users: Vec<(u32, u32)>,
}

fn fit_completions(
    records: &[crate::datagen::UserRecord],
    params: &crate::ocsvm::OcsvmParams,
) -> (Vec<FromModel>, Vec<((u32, u32), String)>) {
    let outcomes: Vec<(FromModel, Option<String>)> = records
        .par_iter()
        .map(|rec| match fit_detailed(&rec.from_samples, params) {
            Ok((model, _)) => (model, None),
            Err(OcsvmError::NotConverged {
                model,
                kkt_violation,
                iterations,
                ..
            }) => (
                *model,
                Some(format!(
                    "kkt violation {kkt_violation:.3e} after {iterations} iterations"
                )),
            ),
            Err(e) => panic!("completion failed for user {:?}: {e}", rec.key()),
        })
        .collect();
    let mut models = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (rec, (model, failure)) in records.iter().zip(outcomes) {
        models.push(model);
        if let Some(f) = failure {
            failures.push((rec.key(), f));
        }
    }
    (models, failures)
}

fn cmd_train(
    dataset_dir: &Path,
    seed: u64,
    profile: &str,
    config_path: &Option<PathBuf>,
    sets: &[String],
    out: &Path,
) -> Result<(), CliError> {
    let config = build_config(profile, config_path, sets)?;
    let dataset = read_dataset(dataset_dir)?;
    let dataset_hash = dir_digest(dataset_dir)?;
    let mut manifest = RunManifest::begin("train", seed, config_snapshot(&config));
    manifest.hash_inputs(dataset_dir)?;

    let holdout = &config.holdout_users;
    let train_records: Vec<crate::datagen::UserRecord> = dataset
        .records
        .iter()
        .filter(|r| !holdout.contains(&r.key()))
        .cloned()
        .collect();
    if train_records.len() < 2 {
        return Err(CliError::Usage(format!(
            "holdout_users leaves {} training users; need at least 2",
            train_records.len()
        )));
    }
    let train_users: Vec<(u32, u32)> = train_records.iter().map(|r| r.key()).collect();

    let (completions, failures) = fit_completions(&train_records, &config.ocsvm);
    let grid = compute_bound(&train_records, config.bundle_samples_per_dim)?;
    let masks: Vec<Vec<bool>> = completions
        .par_iter()
        .map(|m| membership_mask(&grid, m))
        .collect();
    let cd = assemble_from_masks(&grid, &train_records, &masks);
    let positive_fraction = cd.positive_fraction();
    if !(0.05..=0.95).contains(&positive_fraction) {
        log::warn!("grid labels heavily imbalanced: positive fraction {positive_fraction:.3}");
    }

    std::fs::create_dir_all(out)?;
    write_shards(&cd, &out.join("grid"), config.rows_per_shard, &dataset_hash)?;

    let users: Vec<(crate::datagen::ScoreVector, u32)> = cd
        .users
        .iter()
        .map(|u| (u.scores, u.condition_id))
        .collect();
    let (encoder, decoder, enc_log) = train_encoder(&users, &config.encoder, seed)?;
    let (classifier, clf_log) = train_feasibility(&cd, &encoder, &config.classifier, seed)?;

    std::fs::write(
        out.join("encoder.json"),
        serde_json::to_string_pretty(&encoder_to_weight_file(&encoder, &config.encoder)).unwrap(),
    )?;
    std::fs::write(
        out.join("decoder.json"),
        serde_json::to_string_pretty(&decoder_to_weight_file(&decoder, &config.encoder)).unwrap(),
    )?;
    std::fs::write(
        out.join("classifier.json"),
        serde_json::to_string_pretty(&classifier_to_weight_file(&classifier, &config.classifier))
            .unwrap(),
    )?;
    let bundle = BundleConfig {
        config: config.clone(),
        master_seed: seed,
        dataset_hash: dataset_hash.clone(),
        grid: grid.clone(),
        union_indices: cd.union_indices.clone(),
        train_users: train_users.clone(),
        holdout_users: holdout.clone(),
    };
    std::fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&bundle).unwrap(),
    )?;
    let ocsvm_dir = out.join("ocsvm");
    std::fs::create_dir_all(&ocsvm_dir)?;
    for (rec, model) in train_records.iter().zip(&completions) {
        std::fs::write(
            ocsvm_dir.join(format!(
                "{}.json",
                user_file_name(rec.participant_id, rec.condition_id).trim_end_matches(".csv")
            )),
            model.to_json(),
        )?;
    }

    manifest.note("dataset_hash", serde_json::json!(dataset_hash));
    manifest.note("bound_policy", serde_json::json!("train-users"));
    manifest.note("union_policy", serde_json::json!("train-users"));
    manifest.note("n_union_points", serde_json::json!(cd.union_indices.len()));
    manifest.note("positive_fraction", serde_json::json!(positive_fraction));
    manifest.note(
        "encoder_final_mse",
        serde_json::json!(enc_log.mse.last().copied()),
    );
    manifest.note(
        "classifier_final_bce",
        serde_json::json!(clf_log.bce.last().copied()),
    );
    if !failures.is_empty() {
        manifest.note(
            "non_converged_users",
            serde_json::to_value(&failures).unwrap(),
        );
    }
    manifest.hash_outputs(out)?;
    manifest.finish(out)?;

    if !failures.is_empty() {
        return Err(CliError::Convergence(format!(
            "{} completion(s) hit the iteration cap; bundle written with best iterates (see manifest)",
            failures.len()
        )));
    }
    Ok(())
}

pub fn load_bundle(bundle_dir: &Path) -> Result<(BundleConfig, GracePredictor), CliError> {
    let read = |name: &str| -> Result<String, CliError> {
        std::fs::read_to_string(bundle_dir.join(name))
            .map_err(|e| CliError::Io(format!("cannot read bundle file {name}: {e}")))
    };
    let bundle: BundleConfig = serde_json::from_str(&read("config.json")?)
        .map_err(|e| CliError::Io(format!("bad bundle config.json: {e}")))?;
    let enc_file: WeightFile = serde_json::from_str(&read("encoder.json")?)
        .map_err(|e| CliError::Io(format!("bad encoder.json: {e}")))?;
    let clf_file: WeightFile = serde_json::from_str(&read("classifier.json")?)
        .map_err(|e| CliError::Io(format!("bad classifier.json: {e}")))?;
    let encoder = encoder_from_weight_file(&enc_file, &bundle.config.encoder)?;
    let classifier = classifier_from_weight_file(
        &clf_file,
        bundle.config.encoder.latent,
        &bundle.config.classifier,
    )?;
    let predictor = GracePredictor::new(encoder, classifier)?;
    Ok((bundle, predictor))
}

fn parse_list<T>(
    raw: &str,
    kind: &str,
    valid: &str,
    parse_one: impl Fn(&str) -> Option<T>,
) -> Result<Vec<T>, CliError> {
    raw.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| {
            parse_one(t).ok_or_else(|| {
                CliError::Usage(format!("unknown {kind} {t:?}; valid options: {valid}"))
            })
        })
        .collect()
}

fn parse_seed_list(raw: &Option<String>, fallback: &[u64]) -> Result<Vec<u64>, CliError> {
    match raw {
        None => Ok(fallback.to_vec()),
        Some(text) => text
            .split(',')
            .map(|t| t.trim())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse()
                    .map_err(|_| CliError::Usage(format!("bad seed {t:?}")))
            })
            .collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    dataset_dir: &Path,
    scenario_raw: &str,
    methods_raw: &str,
    seeds_raw: &Option<String>,
    profile: &str,
    config_path: &Option<PathBuf>,
    sets: &[String],
    out: &Path,
) -> Result<(), CliError> {
    let config = build_config(profile, config_path, sets)?;
    let scenario = Scenario::parse(scenario_raw).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown scenario {scenario_raw:?}; valid options: loo-user, loo-participant, loo-condition, within-condition"
        ))
    })?;
    let methods: Vec<Method> = if methods_raw == "all" {
        Method::all().to_vec()
    } else {
        parse_list(
            methods_raw,
            "method",
            "grace, gt-condition, user-agnostic",
            Method::parse,
        )?
    };
    let seeds = parse_seed_list(seeds_raw, &config.eval_seeds)?;
    if seeds.is_empty() {
        return Err(CliError::Usage("empty seed list".into()));
    }

    let dataset = read_dataset(dataset_dir)?;
    let mut manifest = RunManifest::begin("eval", seeds[0], config_snapshot(&config));
    manifest.hash_inputs(dataset_dir)?;
    manifest.note("dataset_hash", serde_json::json!(dir_digest(dataset_dir)?));
    manifest.note("scenario", serde_json::json!(scenario.tag()));
    manifest.note("seeds", serde_json::json!(seeds));
    manifest.note("union_policy", serde_json::json!("per-split"));

    let ctx = EvalContext::build(dataset, config.samples_per_dim, &config.ocsvm)
        .map_err(CliError::from)?;
    let scenario_dir = out.join(scenario.tag());
    std::fs::create_dir_all(&scenario_dir)?;

    let mut summary = BTreeMap::new();
    for method in &methods {
        let result = run_scenario(
            &ctx,
            scenario,
            *method,
            &seeds,
            &config.encoder,
            &config.classifier,
        )?;
        std::fs::write(
            scenario_dir.join(format!("{}.csv", method.tag())),
            result.to_csv_string(),
        )?;
        summary.insert(
            method.tag().to_string(),
            serde_json::json!({
                "mean": result.mean,
                "std": result.std,
                "n_folds": result.folds.len(),
                "seeds": seeds,
            }),
        );
    }
    let oracle = oracle_nmcc(&ctx);
    std::fs::write(
        scenario_dir.join("completion-oracle.csv"),
        oracle.to_csv_string(),
    )?;
    summary.insert(
        "completion-oracle".into(),
        serde_json::json!({"mean": oracle.mean, "std": oracle.std, "n_folds": oracle.folds.len()}),
    );
    std::fs::write(
        scenario_dir.join("summary.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "scenario": scenario.tag(),
            "methods": summary,
        }))
        .unwrap(),
    )?;
    manifest.hash_outputs(out)?;
    manifest.finish(out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sim(
    dataset_dir: &Path,
    bundle_dir: &Path,
    envs_raw: &str,
    policies_raw: &str,
    seeds_raw: &Option<String>,
    profile: &str,
    config_path: &Option<PathBuf>,
    sets: &[String],
    out: &Path,
) -> Result<(), CliError> {
    let cli_config = build_config(profile, config_path, sets)?;
    let envs: Vec<Env> = if envs_raw == "all" {
        Env::all().to_vec()
    } else {
        parse_list(
            envs_raw,
            "environment",
            "handover, rehab, dressing, bathing",
            Env::parse,
        )?
    };
    let policies: Vec<PolicyKind> = if policies_raw == "all" {
        PolicyKind::all().to_vec()
    } else {
        parse_list(
            policies_raw,
            "policy",
            "grace-opt, grace-cons, heur-opt, heur-cons, oracle",
            PolicyKind::parse,
        )?
    };
    let (bundle, predictor) = load_bundle(bundle_dir)?;
    let seeds = parse_seed_list(seeds_raw, &cli_config.sim_seeds)?;
    let dataset = read_dataset(dataset_dir)?;

    // Leakage guard: the bundle must not have trained on the users it is
    // about to be evaluated on.
    if bundle.holdout_users.is_empty() {
        return Err(CliError::Leakage(
            "bundle has no held-out users; it was trained on the full dataset".into(),
        ));
    }
    let leaked: Vec<(u32, u32)> = bundle
        .holdout_users
        .iter()
        .filter(|k| bundle.train_users.contains(k))
        .copied()
        .collect();
    if !leaked.is_empty() {
        return Err(CliError::Leakage(format!(
            "bundle training set overlaps held-out users: {leaked:?}"
        )));
    }
    let dataset_hash = dir_digest(dataset_dir)?;
    if dataset_hash != bundle.dataset_hash {
        log::warn!(
            "dataset hash {dataset_hash} differs from the bundle's {}; results may mix datasets",
            bundle.dataset_hash
        );
    }

    let users: Vec<SuiteUser> = bundle
        .holdout_users
        .iter()
        .map(|&key| {
            dataset
                .records
                .iter()
                .find(|r| r.key() == key)
                .map(|record| SuiteUser { record })
                .ok_or_else(|| {
                    CliError::Usage(format!("held-out user {key:?} not present in the dataset"))
                })
        })
        .collect::<Result<_, _>>()?;

    let mut manifest = RunManifest::begin("sim", seeds.first().copied().unwrap_or(0), {
        config_snapshot(&cli_config)
    });
    manifest.hash_inputs(dataset_dir)?;
    manifest.note("bundle_hash", serde_json::json!(dir_digest(bundle_dir)?));
    manifest.note("dataset_hash", serde_json::json!(dataset_hash));
    manifest.note("seeds", serde_json::json!(seeds));
    manifest.note("envs", serde_json::json!(envs.iter().map(|e| e.tag()).collect::<Vec<_>>()));

    let input = SuiteInput {
        grid: &bundle.grid,
        union_indices: &bundle.union_indices,
        predictor: &predictor,
        users,
        config: cli_config.sim.clone(),
    };
    let rows = run_suite(&input, &envs, &seeds);
    let keep: Vec<String> = policies.iter().map(|p| p.tag().to_string()).collect();
    let rows: Vec<crate::caresim::TrialRow> = rows
        .into_iter()
        .filter(|r| keep.contains(&r.policy))
        .collect();

    std::fs::create_dir_all(out)?;
    let mut summary = BTreeMap::new();
    for env in &envs {
        std::fs::write(out.join(format!("{}.csv", env.tag())), env_csv(&rows, *env))?;
        let mut per_policy = BTreeMap::new();
        for policy in &policies {
            let subset: Vec<crate::caresim::TrialRow> = rows
                .iter()
                .filter(|r| r.env == env.tag() && r.policy == policy.tag())
                .cloned()
                .collect();
            let (success, agency) = crate::caresim::summarize(&subset);
            per_policy.insert(
                policy.tag().to_string(),
                serde_json::json!({
                    "success_rate": success,
                    "mean_normalized_agency": agency,
                    "n_trials": subset.len(),
                }),
            );
        }
        summary.insert(env.tag().to_string(), per_policy);
    }
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).unwrap(),
    )?;
    manifest.hash_outputs(out)?;
    manifest.finish(out)?;
    Ok(())
}

const EVAL_HEADER: &str = "fold,seed,nmcc,n_test,positives";
const SIM_HEADER: &str = "policy,user,task,seed,success,agency_raw,agency_norm";

fn cmd_report(results: &[PathBuf], out: &Path) -> Result<(), CliError> {
    if results.is_empty() {
        return Err(CliError::Io("no result directories given".into()));
    }
    // key: (group, method, metric, item, seed) -> value
    let mut rows: BTreeMap<(String, String, String, String, u64), f64> = BTreeMap::new();
    let mut found_any = false;
    for dir in results {
        if !dir.is_dir() {
            return Err(CliError::Io(format!(
                "missing results directory {}",
                dir.display()
            )));
        }
        let mut csvs = Vec::new();
        collect_csvs(dir, 0, &mut csvs)?;
        for path in csvs {
            let text = std::fs::read_to_string(&path)?;
            let mut lines = text.lines();
            let Some(header) = lines.next() else { continue };
            let group_method = |p: &Path| -> (String, String) {
                let method = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_default();
                let group = p
                    .parent()
                    .and_then(|d| d.file_name())
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_default();
                (group, method)
            };
            if header == EVAL_HEADER {
                found_any = true;
                let (group, method) = group_method(&path);
                for line in lines.filter(|l| !l.is_empty()) {
                    let p: Vec<&str> = line.split(',').collect();
                    if p.len() != 5 {
                        return Err(CliError::Io(format!(
                            "malformed row in {}: {line:?}",
                            path.display()
                        )));
                    }
                    let seed: u64 = p[1].parse().map_err(|_| {
                        CliError::Io(format!("bad seed in {}: {line:?}", path.display()))
                    })?;
                    let value: f64 = p[2].parse().map_err(|_| {
                        CliError::Io(format!("bad nmcc in {}: {line:?}", path.display()))
                    })?;
                    insert_row(
                        &mut rows,
                        (group.clone(), method.clone(), "nmcc".into(), p[0].into(), seed),
                        value,
                    )?;
                }
            } else if header == SIM_HEADER {
                found_any = true;
                let env = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_default();
                for line in lines.filter(|l| !l.is_empty()) {
                    let p: Vec<&str> = line.split(',').collect();
                    if p.len() != 7 {
                        return Err(CliError::Io(format!(
                            "malformed row in {}: {line:?}",
                            path.display()
                        )));
                    }
                    let policy = p[0].to_string();
                    let item = format!("{}#{}", p[1], p[2]);
                    let seed: u64 = p[3].parse().map_err(|_| {
                        CliError::Io(format!("bad seed in {}: {line:?}", path.display()))
                    })?;
                    let success: f64 = p[4].parse().map_err(|_| {
                        CliError::Io(format!("bad success in {}: {line:?}", path.display()))
                    })?;
                    insert_row(
                        &mut rows,
                        (env.clone(), policy.clone(), "success".into(), item.clone(), seed),
                        success,
                    )?;
                    let raw: f64 = p[5].parse().map_err(|_| {
                        CliError::Io(format!("bad agency in {}: {line:?}", path.display()))
                    })?;
                    insert_row(
                        &mut rows,
                        (env.clone(), policy.clone(), "agency_raw".into(), item.clone(), seed),
                        raw,
                    )?;
                    if !p[6].is_empty() {
                        let norm: f64 = p[6].parse().map_err(|_| {
                            CliError::Io(format!("bad agency_norm in {}: {line:?}", path.display()))
                        })?;
                        insert_row(
                            &mut rows,
                            (env.clone(), policy.clone(), "agency_norm".into(), item, seed),
                            norm,
                        )?;
                    }
                }
            }
        }
    }
    if !found_any {
        return Err(CliError::Io(
            "no recognizable result CSVs found in the given directories".into(),
        ));
    }
    std::fs::create_dir_all(out)?;
    let mut text = String::from("group,method,metric,item,seed,value\n");
    for ((group, method, metric, item, seed), value) in &rows {
        text.push_str(&format!("{group},{method},{metric},{item},{seed},{value}\n"));
    }
    std::fs::write(out.join("report.csv"), text)?;
    let mut manifest = RunManifest::begin("report", 0, serde_json::json!({}));
    for dir in results {
        manifest.note(
            &format!("input:{}", dir.display()),
            serde_json::json!(dir_digest(dir)?),
        );
    }
    manifest.hash_outputs(out)?;
    manifest.finish(out)?;
    Ok(())
}

fn insert_row(
    rows: &mut BTreeMap<(String, String, String, String, u64), f64>,
    key: (String, String, String, String, u64),
    value: f64,
) -> Result<(), CliError> {
    if rows.contains_key(&key) {
        return Err(CliError::Usage(format!(
            "duplicate result row for (group={}, method={}, metric={}, item={}, seed={})",
            key.0, key.1, key.2, key.3, key.4
        )));
    }
    rows.insert(key, value);
    Ok(())
}

fn collect_csvs(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            if depth < 3 {
                collect_csvs(&path, depth + 1, out)?;
            }
        } else if path.extension().is_some_and(|e| e == "csv") {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_match_the_contract() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Io("x".into()).exit_code(), 3);
        assert_eq!(CliError::Convergence("x".into()).exit_code(), 4);
        assert_eq!(CliError::Leakage("x".into()).exit_code(), 5);
    }

    #[test]
    fn parse_lists_reject_unknown_entries() {
        let err = parse_list("handover,flying", "environment", "handover", Env::parse)
            .unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert!(err.to_string().contains("flying"));
        let ok = parse_list("handover, rehab", "environment", "...", Env::parse).unwrap();
        assert_eq!(ok, vec![Env::Handover, Env::Rehab]);
    }

    #[test]
    fn seed_list_falls_back_to_config() {
        assert_eq!(
            parse_seed_list(&None, &[1, 2, 3]).unwrap(),
            vec![1, 2, 3]
        );
        assert_eq!(
            parse_seed_list(&Some("7,9".into()), &[1]).unwrap(),
            vec![7, 9]
        );
        assert!(parse_seed_list(&Some("x".into()), &[1]).is_err());
    }
}
