//! Subcommands and their flag sets.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dmkit::dataset::BatchDataset;
use dmkit::diff::{DpConfig, TrainConfig};
use dmkit::digest::digest_of;
use dmkit::env::{self, EnvHyper, EnvKind, Environment};
use dmkit::eval::{self, ClassifierConfig, DiscriminativeConfig, MetricReport, PredictiveTarget};
use dmkit::policy::{self, GroundTruth, ProbeConfig};
use dmkit::scenario::{Scenario, ScenarioConfig};

/// Default checkpoint directory when `DMKIT_CACHE` is unset.
const DEFAULT_CACHE: &str = ".dmkit-cache";

/// Misuse of the command line that clap cannot see (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Unwrap a flag that the chosen mode requires, and check the file exists.
fn input_file<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    let p = p.as_deref().ok_or_else(|| usage(format!("--{flag} is required here")))?;
    if !p.exists() {
        return Err(usage(format!("--{flag}: no such file '{}'", p.display())));
    }
    Ok(p)
}

fn existing(p: &Path, flag: &str) -> Result<()> {
    if !p.exists() {
        return Err(usage(format!("--{flag}: no such file '{}'", p.display())));
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "dmkit", version, about = "Simulate and benchmark sequential clinical decision datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a dataset from a scenario config.
    Generate(GenerateArgs),
    /// Fit an environment model to a dataset.
    Train(TrainArgs),
    /// Compute a benchmark metric and print a JSON report.
    Evaluate(EvaluateArgs),
    /// Summarize a dataset, checkpoint, policy or scenario file.
    Inspect(InspectArgs),
    /// Write a 2-D PCA projection of two datasets as CSV.
    Project(ProjectArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub n: usize,
    /// Root seed; replaces the seed in the scenario file.
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the wide CSV export here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Worker threads for trajectory generation (output is identical for any value).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EnvArg {
    Tforce,
    Balanced,
    Css,
    Svae,
}

impl From<EnvArg> for EnvKind {
    fn from(a: EnvArg) -> Self {
        match a {
            EnvArg::Tforce => EnvKind::Tforce,
            EnvArg::Balanced => EnvKind::Balanced,
            EnvArg::Css => EnvKind::Css,
            EnvArg::Svae => EnvKind::Svae,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub env: EnvArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Checkpoint path; defaults to a file under `$DMKIT_CACHE`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss-curve CSV; defaults to `<out>.curve.csv`.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// JSON file with model hyperparameters.
    #[arg(long)]
    pub hyper: Option<PathBuf>,
    /// Per-example gradient clipping norm for private training.
    #[arg(long)]
    pub dp_clip: Option<f64>,
    /// Gaussian noise multiplier; 0 disables private training altogether.
    #[arg(long)]
    pub dp_noise: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Predictive,
    Discriminative,
    ActionMatch,
    GroundTruth,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub metric: Metric,
    #[arg(long)]
    pub seed: u64,
    /// Number of seed repetitions (seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    #[arg(long)]
    pub real: Option<PathBuf>,
    /// `feature:NAME`, `action`, `action:CLASS` or `action-ovr`.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Policy spec or ground-truth export (action-match).
    #[arg(long)]
    pub policy_a: Option<PathBuf>,
    #[arg(long)]
    pub policy_b: Option<PathBuf>,
    /// Dataset whose prefixes are used as probe histories (action-match).
    #[arg(long)]
    pub probes: Option<PathBuf>,
    /// Recovered ground-truth export (ground-truth).
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
    /// For a scenario: write its policy's ground-truth export here.
    #[arg(long)]
    pub export_ground_truth: Option<PathBuf>,
    /// For a scenario or policy: probe budget for the Markovianity measurement.
    #[arg(long)]
    pub markov_budget: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => with_jobs(a.jobs, || generate(&a)),
        Command::Train(a) => with_jobs(a.jobs, || train(&a)),
        Command::Evaluate(a) => with_jobs(a.jobs, || evaluate(&a)),
        Command::Inspect(a) => inspect(&a),
        Command::Project(a) => project(&a),
    }
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(0) => Err(usage("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building the worker pool")?
            .install(f),
    }
}

/// Write to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    emit(&serde_json::to_string_pretty(v)?)
}

fn load_dataset(p: &Path) -> Result<BatchDataset> {
    BatchDataset::load(p).with_context(|| format!("reading dataset '{}'", p.display()))
}

fn generate(a: &GenerateArgs) -> Result<()> {
    existing(&a.scenario, "scenario")?;
    let mut cfg = ScenarioConfig::load(&a.scenario).with_context(|| format!("in scenario file '{}'", a.scenario.display()))?;
    cfg.seed = a.seed;
    let scenario = Scenario::from_config(cfg, a.scenario.parent())
        .with_context(|| format!("in scenario file '{}'", a.scenario.display()))?;
    let data = scenario.generate_batch(a.n)?;
    data.save(&a.out).with_context(|| format!("writing '{}'", a.out.display()))?;
    if let Some(csv) = &a.csv {
        data.save_csv(csv)?;
    }
    let lens: Vec<usize> = data.trajectories.iter().map(|t| t.len()).collect();
    let mean = if lens.is_empty() { 0.0 } else { lens.iter().sum::<usize>() as f64 / lens.len() as f64 };
    print_json(&json!({
        "trajectories": data.len(),
        "steps": data.total_steps(),
        "length": {"min": lens.iter().min(), "mean": mean, "max": lens.iter().max()},
        "confoundedness": scenario.confoundedness(),
        "hidden_columns": data.hidden_columns,
        "seed": data.seed,
        "provenance": data.provenance,
        "digest": data.digest()?,
        "out": a.out,
    }))
}

fn cache_dir() -> PathBuf {
    std::env::var_os("DMKIT_CACHE").map_or_else(|| PathBuf::from(DEFAULT_CACHE), PathBuf::from)
}

fn train(a: &TrainArgs) -> Result<()> {
    existing(&a.data, "data")?;
    let data = load_dataset(&a.data)?;
    let hyper: EnvHyper = match &a.hyper {
        Some(p) => {
            existing(p, "hyper")?;
            serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("in hyperparameter file '{}'", p.display()))?
        }
        None => EnvHyper::default(),
    };
    let dp = match (a.dp_clip, a.dp_noise) {
        (_, Some(noise)) if noise == 0.0 => {
            eprintln!("note: --dp-noise 0 turns private training off; --dp-clip is ignored");
            None
        }
        (Some(clip), Some(noise)) => Some(DpConfig { clip_norm: clip, noise_multiplier: noise }),
        (None, Some(_)) => return Err(usage("--dp-noise needs --dp-clip")),
        (Some(_), None) => return Err(usage("--dp-clip needs --dp-noise")),
        (None, None) => None,
    };
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        batch_size: a.batch_size,
        grad_clip: a.grad_clip,
        momentum: a.momentum,
        dp,
        seed: a.seed,
    };
    let kind = EnvKind::from(a.env);
    let train_digest = digest_of(&json!({
        "kind": kind.name(),
        "train": cfg,
        "hyperparameters": hyper,
        "data": data.digest()?,
    }))?;
    let trained = env::train_env(kind, &data, &hyper, &cfg)?;

    let out = match &a.out {
        Some(p) => p.clone(),
        None => {
            let dir = cache_dir();
            fs::create_dir_all(&dir).with_context(|| format!("creating cache directory '{}'", dir.display()))?;
            dir.join(format!("{}-{}.json", kind.name(), &train_digest[..16]))
        }
    };
    trained.env.save(&out, Some(train_digest.clone()))?;
    let curve_path = a.curve.clone().unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".curve.csv");
        PathBuf::from(s)
    });
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in trained.curve.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(&curve_path, csv)?;
    print_json(&json!({
        "kind": kind.name(),
        "checkpoint": out,
        "curve": curve_path,
        "epochs": a.epochs,
        "final_loss": trained.curve.last(),
        "train_config_digest": train_digest,
    }))
}

fn parse_target(s: &str) -> Result<PredictiveTarget> {
    Ok(match s {
        "action" => PredictiveTarget::Action { class: None },
        "action-ovr" => PredictiveTarget::ActionOneVsRest,
        _ => {
            if let Some(name) = s.strip_prefix("feature:") {
                PredictiveTarget::Feature { name: name.to_string() }
            } else if let Some(c) = s.strip_prefix("action:") {
                let class = c.parse().map_err(|_| usage(format!("--target: bad action class '{c}'")))?;
                PredictiveTarget::Action { class: Some(class) }
            } else {
                return Err(usage(format!(
                    "--target must be feature:NAME, action, action:CLASS or action-ovr (got '{s}')"
                )));
            }
        }
    })
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    if a.repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    let seeds: Vec<u64> = (0..a.repeats).map(|i| a.seed.wrapping_add(i)).collect();
    let classifier = |seed: u64| {
        let mut c = ClassifierConfig { seed, ..ClassifierConfig::default() };
        if let Some(e) = a.epochs {
            c.epochs = e;
        }
        if let Some(h) = a.hidden {
            c.hidden = h;
            c.dense = h;
        }
        c
    };
    let settings = json!({
        "metric": a.metric, "seed": a.seed, "repeats": a.repeats, "target": a.target,
        "epochs": a.epochs, "hidden": a.hidden,
    });
    let report = match a.metric {
        Metric::Predictive => {
            let syn = load_dataset(input_file(&a.synthetic, "synthetic")?)?;
            let real = load_dataset(input_file(&a.real, "real")?)?;
            let target = parse_target(a.target.as_deref().ok_or_else(|| usage("--target is required for predictive"))?)?;
            let digest = digest_of(&json!({"settings": settings, "synthetic": syn.digest()?, "real": real.digest()?}))?;
            MetricReport::over_seeds("predictive", &seeds, digest, |s| {
                eval::predictive_score(&syn, &real, &target, &classifier(s))
            })?
        }
        Metric::Discriminative => {
            let syn = load_dataset(input_file(&a.synthetic, "synthetic")?)?;
            let real = load_dataset(input_file(&a.real, "real")?)?;
            let digest = digest_of(&json!({"settings": settings, "synthetic": syn.digest()?, "real": real.digest()?}))?;
            MetricReport::over_seeds("discriminative", &seeds, digest, |s| {
                let cfg = DiscriminativeConfig { classifier: classifier(s), ..DiscriminativeConfig::default() };
                eval::discriminative_score(&syn, &real, &cfg)
            })?
        }
        Metric::ActionMatch => {
            let pa = policy::load_policy_file(input_file(&a.policy_a, "policy-a")?)?;
            let pb = policy::load_policy_file(input_file(&a.policy_b, "policy-b")?)?;
            let probes = load_dataset(input_file(&a.probes, "probes")?)?;
            let m = eval::action_match(&pa, &pb, &probes)?;
            let digest = digest_of(&json!({"settings": settings, "a": digest_of(&pa)?, "b": digest_of(&pb)?, "probes": probes.digest()?}))?;
            let mut r = MetricReport::from_values("action-match", vec![a.seed], vec![m.agreement], digest);
            r.details = serde_json::to_value(m)?;
            r
        }
        Metric::GroundTruth => {
            let read = |p: &Path| -> Result<GroundTruth> {
                GroundTruth::load(p).with_context(|| format!("reading ground truth '{}'", p.display()))
            };
            let hat = read(input_file(&a.estimate, "estimate")?)?;
            let truth = read(input_file(&a.truth, "truth")?)?;
            let cmp = eval::compare_ground_truth(&hat, &truth);
            let value = match &cmp {
                eval::GroundTruthComparison::Comparable { weight_l1_error, .. } => *weight_l1_error,
                eval::GroundTruthComparison::Incomparable { .. } => f64::NAN,
            };
            let digest = digest_of(&json!({"settings": settings, "estimate": hat.digest, "truth": truth.digest}))?;
            let mut r = MetricReport::from_values("ground-truth", vec![a.seed], vec![value], digest);
            r.details = serde_json::to_value(&cmp)?;
            r
        }
    };
    let text = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => fs::write(p, format!("{text}\n"))?,
        None => emit(&text)?,
    }
    Ok(())
}

fn inspect(a: &InspectArgs) -> Result<()> {
    existing(&a.path, "path")?;
    let text = fs::read_to_string(&a.path)?;
    let first = text.lines().next().unwrap_or("");
    let head: serde_json::Value = serde_json::from_str(first)
        .or_else(|_| serde_json::from_str(&text))
        .with_context(|| format!("'{}' is neither a dataset nor a JSON file", a.path.display()))?;
    let probe = |p: &policy::PolicySpec| -> Result<serde_json::Value> {
        Ok(match a.markov_budget {
            Some(budget) => {
                let m = policy::measure_markovianity(p, &ProbeConfig { budget, ..ProbeConfig::default() })?;
                json!(m.to_string())
            }
            None => serde_json::Value::Null,
        })
    };
    let describe_policy = |p: &policy::PolicySpec| -> Result<serde_json::Value> {
        let components: Vec<_> = p
            .components
            .iter()
            .zip(&p.weights)
            .map(|(c, w)| {
                json!({
                    "weight": w, "decider": c.decider.kind_name(), "beta": c.beta,
                    "lag": c.lag.to_string(), "rationality": c.rationality(p.temporal_dim),
                })
            })
            .collect();
        Ok(json!({"actions": p.actions, "mode": p.mode, "components": components, "markovianity": probe(p)?}))
    };

    let summary = if head.get("schema_digest").is_some() {
        let d = load_dataset(&a.path)?;
        let lens: Vec<usize> = d.trajectories.iter().map(|t| t.len()).collect();
        json!({
            "type": "dataset", "domain": d.schema.name, "trajectories": d.len(), "steps": d.total_steps(),
            "length": {"min": lens.iter().min(), "max": lens.iter().max()},
            "hidden_columns": d.hidden_columns, "seed": d.seed, "provenance": d.provenance, "digest": d.digest()?,
        })
    } else if head.get("format").and_then(|f| f.as_str()) == Some(dmkit::diff::checkpoint::FORMAT) {
        let env = Environment::load(&a.path)?;
        let train: Option<String> = head.get("train_config_digest").and_then(|v| v.as_str()).map(str::to_string);
        json!({
            "type": "checkpoint", "kind": env.kind().name(), "domain": env.schema.name,
            "parameters": env_param_count(&env), "train_config_digest": train,
        })
    } else if head.get("digest").is_some() && head.get("policy").is_some() {
        let g = GroundTruth::load(&a.path)?;
        let p = policy::load_ground_truth(&g)?;
        json!({"type": "ground-truth", "digest": g.digest, "policy": describe_policy(&p)?})
    } else if head.get("domain").is_some() {
        let scenario = Scenario::load(&a.path)?;
        if let Some(out) = &a.export_ground_truth {
            policy::export_ground_truth(&scenario.policy)?.save(out)?;
        }
        json!({
            "type": "scenario", "domain": scenario.schema.name, "environment": scenario.env.kind().name(),
            "horizon": scenario.horizon(), "confoundedness": scenario.confoundedness(),
            "provenance": scenario.provenance(), "policy": describe_policy(&scenario.policy)?,
        })
    } else if head.get("components").is_some() {
        let p = policy::load_policy_file(&a.path)?;
        json!({"type": "policy", "policy": describe_policy(&p)?})
    } else {
        return Err(usage(format!("'{}': unrecognized file type", a.path.display())));
    };
    if a.export_ground_truth.is_some() && summary["type"] != "scenario" {
        return Err(usage("--export-ground-truth only applies to scenario files"));
    }
    print_json(&summary)
}

fn env_param_count(env: &Environment) -> usize {
    use dmkit::env::EnvironmentModel::*;
    match &env.model {
        Tforce(m) => m.params.num_scalars(),
        Balanced(m) => m.params.num_scalars(),
        Css(m) => m.params.num_scalars(),
        Svae(m) => m.params.num_scalars(),
    }
}

fn project(a: &ProjectArgs) -> Result<()> {
    existing(&a.real, "real")?;
    existing(&a.synthetic, "synthetic")?;
    let real = load_dataset(&a.real)?;
    let syn = load_dataset(&a.synthetic)?;
    let pts = eval::project2d(&real, &syn)?;
    eval::save_projection_csv(&pts, &a.out)?;
    print_json(&json!({"points": pts.len(), "out": a.out}))
}
