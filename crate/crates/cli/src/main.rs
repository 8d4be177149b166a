//! `ipmn`: command-line driver for the IPMN risk-stratification pipeline.
//!
//! Configuration is layered: built-in defaults, then an optional TOML file
//! (`--config`), then explicit flags, then `--set key.path=value` overrides.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ipmn_core::phantom::{generate_study, PhantomSpec};
use ipmn_core::pipeline::{run_pipeline, run_stage, PipelineConfig, Report, Stage};
use ipmn_core::Error;

#[derive(Parser)]
#[command(
    name = "ipmn",
    version,
    about = "Multi-contrast MRI radiomics and decision fusion for IPMN risk stratification"
)]
struct Cli {
    /// Worker threads for per-case stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-center study.
    Phantom(PhantomArgs),
    /// Blind split, bias correction, denoising, ROI crop and Nyul standardization.
    Preprocess(StageArgs),
    /// Radiomics features for T1 and T2.
    Extract(StageArgs),
    /// Stepwise screening of the clinical covariates.
    Clinical(StageArgs),
    /// Scaler, grid search, final classifier and out-of-fold predictions.
    Train(StageArgs),
    /// Choose the fusion parameters on the out-of-fold predictions.
    Fuse(StageArgs),
    /// Blind-test evaluation and reports.
    Evaluate(StageArgs),
    /// Every stage end to end.
    Run(RunArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Output study directory.
    #[arg(long)]
    out: PathBuf,
    /// Fixes the whole study byte for byte.
    #[arg(long)]
    seed: u64,
    /// Cases per class.
    #[arg(long)]
    cases_per_class: Option<usize>,
    /// Cubic grid edge length in voxels.
    #[arg(long)]
    size: Option<usize>,
    /// Relative growth of the pancreas per class step.
    #[arg(long)]
    volume_effect: Option<f64>,
    /// Also write synthetic DL probabilities with this accuracy.
    #[arg(long)]
    dl_accuracy: Option<f64>,
    /// Full phantom spec as JSON; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Study directory written by `ipmn phantom` or laid out the same way.
    #[arg(long)]
    study: Option<PathBuf>,
    /// Directory for artifacts and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fraction of cases held out for the blind test (default 0.2).
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Stratified folds for the grid search (default 5).
    #[arg(long)]
    cv_folds: Option<usize>,
    /// t1, t2, t1_t2 or t1_t2_clinical.
    #[arg(long)]
    feature_set: Option<String>,
    /// Gray levels for texture discretization (default 32).
    #[arg(long)]
    bin_count: Option<usize>,
    /// Deep-learning probabilities CSV (`case_id,p_healthy,p_low,p_high`).
    #[arg(long)]
    dl_probs: Option<PathBuf>,
    /// Report cross-validated accuracy of every feature set.
    #[arg(long)]
    ablation: bool,
    /// Mean-impute empty clinical cells instead of rejecting them.
    #[arg(long)]
    impute_missing: bool,
    /// Override any configuration key, e.g. `--set gbt.max_depth=[3,4]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Seed for the blind split and fold assignment.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Seed for the blind split and fold assignment.
    #[arg(long)]
    seed: u64,
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> anyhow::Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| anyhow::anyhow!("empty key in `{key}`"))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow::anyhow!("`{p}` in `{key}` is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    // Bare words that are not TOML literals are taken as strings.
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn build_config(a: &ConfigArgs, seed: Option<u64>) -> anyhow::Result<PipelineConfig> {
    let mut t = match &a.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?
            .parse::<toml::Table>()?,
        None => toml::Table::new(),
    };
    let path = |p: &PathBuf| toml::Value::String(p.to_string_lossy().into_owned());
    if let Some(p) = &a.study {
        set_path(&mut t, "study_dir", path(p))?;
    }
    if let Some(p) = &a.out {
        set_path(&mut t, "out_dir", path(p))?;
    }
    if let Some(s) = seed {
        set_path(&mut t, "seed", toml::Value::Integer(i64::try_from(s)?))?;
    }
    if let Some(f) = a.test_fraction {
        set_path(&mut t, "test_fraction", toml::Value::Float(f))?;
    }
    if let Some(k) = a.cv_folds {
        set_path(&mut t, "cv_folds", toml::Value::Integer(k as i64))?;
    }
    if let Some(f) = &a.feature_set {
        set_path(&mut t, "feature_set", toml::Value::String(f.clone()))?;
    }
    if let Some(n) = a.bin_count {
        set_path(&mut t, "bin_count", toml::Value::Integer(n as i64))?;
    }
    if let Some(p) = &a.dl_probs {
        set_path(&mut t, "fusion.dl_probabilities", path(p))?;
    }
    if a.ablation {
        set_path(&mut t, "ablation", toml::Value::Boolean(true))?;
    }
    if a.impute_missing {
        set_path(&mut t, "clinical.impute_missing", toml::Value::Boolean(true))?;
    }
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got `{o}`"))?;
        set_path(&mut t, k.trim(), parse_value(v.trim()))?;
    }
    for key in ["study_dir", "out_dir", "seed"] {
        if !t.contains_key(key) {
            anyhow::bail!("missing `{key}`: give it in the config file or as a flag");
        }
    }
    let cfg: PipelineConfig = t.try_into()?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(r: &Report) {
    println!(
        "radiomics: acc {:.4} auc {:.4} pr {:.4} rc {:.4}",
        r.radiomics.acc, r.radiomics.auc, r.radiomics.pr, r.radiomics.rc
    );
    if let Some(f) = &r.fused {
        println!(
            "fused:     acc {:.4} auc {:.4} pr {:.4} rc {:.4}",
            f.acc, f.auc, f.pr, f.rc
        );
    }
    for n in &r.notices {
        println!("note: {n}");
    }
}

fn phantom(a: &PhantomArgs) -> anyhow::Result<()> {
    let mut spec: PhantomSpec = match &a.spec {
        Some(p) => {
            serde_json::from_str(&std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?)?
        }
        None => PhantomSpec::default(),
    };
    spec.seed = a.seed;
    if let Some(n) = a.cases_per_class {
        spec.n_cases = [n; 3];
    }
    if let Some(s) = a.size {
        spec.dims = [s; 3];
    }
    if let Some(v) = a.volume_effect {
        spec.volume_effect = v;
    }
    let m = generate_study(&spec, &a.out, a.dl_accuracy)?;
    println!("wrote {} cases to {}", m.cases.len(), a.out.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let stage = |args: &StageArgs, stage: Stage| -> anyhow::Result<()> {
        let cfg = build_config(&args.cfg, args.seed)?;
        if let Some(r) = run_stage(&cfg, stage)? {
            print_report(&r);
        }
        Ok(())
    };
    match &cli.cmd {
        Command::Phantom(a) => phantom(a),
        Command::Preprocess(a) => stage(a, Stage::Preprocess),
        Command::Extract(a) => stage(a, Stage::Extract),
        Command::Clinical(a) => stage(a, Stage::Clinical),
        Command::Train(a) => stage(a, Stage::Train),
        Command::Fuse(a) => stage(a, Stage::Fuse),
        Command::Evaluate(a) => stage(a, Stage::Evaluate),
        Command::Run(a) => {
            let cfg = build_config(&a.cfg, Some(a.seed))?;
            print_report(&run_pipeline(&cfg)?);
            Ok(())
        }
    }
}

fn category(e: &anyhow::Error) -> &'static str {
    if let Some(e) = e.downcast_ref::<Error>() {
        e.category()
    } else if e.downcast_ref::<toml::de::Error>().is_some() {
        "config"
    } else {
        "usage"
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error[usage]: cannot size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", category(&e));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ipmn_core::pipeline::FeatureSet;

    fn args() -> ConfigArgs {
        ConfigArgs {
            config: None,
            study: Some("s".into()),
            out: Some("o".into()),
            test_fraction: None,
            cv_folds: None,
            feature_set: None,
            bin_count: None,
            dl_probs: None,
            ablation: false,
            impute_missing: false,
            overrides: vec![],
        }
    }

    #[test]
    fn flags_and_overrides_layer() {
        let mut a = args();
        a.feature_set = Some("t1_t2".into());
        a.overrides = vec!["gbt.max_depth=[3]".into(), "preprocess.bias_sigma_mm=20.0".into()];
        let c = build_config(&a, Some(9)).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.feature_set, FeatureSet::T1T2);
        assert_eq!(c.gbt.max_depth, vec![3]);
        assert_eq!(c.preprocess.bias_sigma_mm, 20.0);
        assert_eq!(c.test_fraction, 0.2);
    }

    #[test]
    fn missing_seed_is_rejected() {
        assert!(build_config(&args(), None).is_err());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut a = args();
        a.overrides = vec!["gbt.depth=3".into()];
        assert!(build_config(&a, Some(1)).is_err());
    }
}
