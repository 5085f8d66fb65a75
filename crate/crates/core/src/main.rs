use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use esgnn::experiments::{self, presets, OutDir, Plan, Prepared};
use esgnn::graph::{homophily_ratio, SplitScheme};
use esgnn::io::{self, Dataset, FeatureNorm};
use esgnn::model::{EsGnn, ModelKind, Variant};
use esgnn::synth::{self, generate, row_for_target, SynthConfig};
use esgnn::train::{RunRecord, TrainConfig};
use esgnn::{Error, Result};

#[derive(Parser)]
#[command(name = "esgnn", version, about = "Edge-splitting GNN experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic bundle.
    Gen(GenArgs),
    /// Train one model and optionally save a checkpoint.
    Train(TrainArgs),
    /// Accuracy against homophily over all generator rows.
    Sweep(SweepArgs),
    /// Accuracy and fake-edge removal under random edge injection.
    Robustness(RobustnessArgs),
    /// Accuracy against depth.
    Depth(DepthArgs),
    /// ES-GNN variants with identical settings.
    Ablate(AblateArgs),
    /// Pearson correlation of a trained ES-GNN's latent columns.
    Corr(CorrArgs),
    /// Aggregation step against one gradient step of the denoising objective.
    LemmaCheck(LemmaArgs),
    /// Accuracy against the ICR coefficient.
    Sensitivity(SensitivityArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Homophily target of a generator row (0.0, 0.1, ..., 1.0).
    #[arg(long, conflicts_with_all = ["p_e", "p_i", "kappa"])]
    h_target: Option<f64>,
    #[arg(long, requires_all = ["p_i", "kappa"])]
    p_e: Option<f64>,
    #[arg(long)]
    p_i: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, default_value_t = 1200)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    features: usize,
    #[arg(long, default_value_t = 1e-5)]
    q: f64,
    #[arg(long, default_value_t = 1.0)]
    mean_scale: f64,
    #[arg(long, default_value_t = 10.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset bundle directory.
    #[arg(long, conflicts_with_all = ["content", "h_target"])]
    data: Option<PathBuf>,
    /// Planetoid-style `.content` file (with --cites).
    #[arg(long, requires = "cites")]
    content: Option<PathBuf>,
    #[arg(long)]
    cites: Option<PathBuf>,
    /// Generate the synthetic graph of this homophily target instead.
    #[arg(long)]
    h_target: Option<f64>,
    /// Generator seed for --h-target.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// dense, sparse or rate:<train fraction>.
    #[arg(long, default_value = "dense")]
    scheme: String,
    /// none, row_l1, row_l2 or standardize.
    #[arg(long, default_value = "none")]
    feature_norm: FeatureNorm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Short schedules tuned for the synthetic graphs.
    Desk,
    /// Library defaults.
    Default,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// File of `key = value` lines applied after the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone)]
struct OutArgs {
    #[arg(long)]
    out: PathBuf,
    /// Allow adding to a directory that already holds results.
    #[arg(long)]
    append: bool,
}

#[derive(Args, Clone)]
struct PlanArgs {
    #[arg(long, default_value_t = 5)]
    splits: usize,
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Pair split i with seed i instead of crossing splits and seeds.
    #[arg(long)]
    paired: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "esgnn")]
    model: ModelKind,
    #[arg(long, default_value_t = 0)]
    split_id: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for the trained checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Append the run record to this CSV.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 0.6)]
    label_rate: f64,
    #[arg(long, value_delimiter = ',', default_value = "esgnn,gcn,mlp")]
    models: Vec<ModelKind>,
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = 1200)]
    n: usize,
    #[arg(long, default_value = "none")]
    feature_norm: FeatureNorm,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct RobustnessArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1.0")]
    rates: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "esgnn,gcn")]
    models: Vec<ModelKind>,
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct DepthArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8")]
    depths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "esgnn,gcn")]
    models: Vec<ModelKind>,
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "full,no_icr,no_es,dual_head,dual_head+no_icr,dual_head+no_es"
    )]
    variants: Vec<Variant>,
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CorrArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint written by `train --checkpoint`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct LemmaArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Explicit coefficients; overrides the log grid.
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
    #[arg(long, default_value_t = 1e-6)]
    lo: f64,
    #[arg(long, default_value_t = 1e-1)]
    hi: f64,
    #[arg(long, default_value_t = 6)]
    count: usize,
    /// Prepend 0 to the grid.
    #[arg(long)]
    with_zero: bool,
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArgs,
}

fn parse_scheme(s: &str) -> Result<SplitScheme> {
    match s.trim() {
        "dense" => Ok(SplitScheme::DENSE),
        "sparse" => Ok(SplitScheme::SPARSE),
        other => match other.strip_prefix("rate:").map(str::parse::<f64>) {
            Some(Ok(r)) => Ok(SplitScheme::label_rate(r)),
            _ => Err(Error::Contract(format!("unknown split scheme `{other}`"))),
        },
    }
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        Ok(self.load_raw()?.normalized(self.feature_norm))
    }

    fn load_raw(&self) -> Result<Dataset> {
        if let Some(dir) = &self.data {
            return io::load_bundle(dir);
        }
        if let (Some(content), Some(cites)) = (&self.content, &self.cites) {
            let (d, report) = io::load_content_cites(content, cites)?;
            log::info!("ingest: {report:?}");
            return Ok(d);
        }
        if let Some(h) = self.h_target {
            let row = row_for_target(h)?;
            let syn = generate(&SynthConfig::from_row(row, self.data_seed))?;
            return Ok(Dataset::from_synth(format!("syn-h{h:.1}"), syn));
        }
        Err(Error::Contract(
            "no dataset: pass --data, --content/--cites or --h-target".into(),
        ))
    }

    fn scheme(&self) -> Result<SplitScheme> {
        parse_scheme(&self.scheme)
    }

    fn describe(&self) -> serde_json::Value {
        json!({
            "data": self.data,
            "content": self.content,
            "cites": self.cites,
            "h_target": self.h_target,
            "data_seed": self.data_seed,
            "scheme": self.scheme,
            "feature_norm": self.feature_norm,
        })
    }
}

impl ConfigArgs {
    fn build(&self, model: ModelKind) -> Result<TrainConfig> {
        let mut cfg = match self.preset {
            Preset::Desk => presets::for_model(model),
            Preset::Default => TrainConfig {
                model,
                ..TrainConfig::default()
            },
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.clone()))?;
            cfg.apply_file(&text)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Contract(format!("--set expects key=value, got `{kv}`")))?;
            cfg.set(k, v)?;
        }
        // Overrides may not change the model being built.
        cfg.model = model;
        cfg.validate()?;
        Ok(cfg)
    }

    fn build_all(&self, models: &[ModelKind]) -> Result<Vec<TrainConfig>> {
        models.iter().map(|&m| self.build(m)).collect()
    }
}

impl PlanArgs {
    fn plan(&self) -> Plan {
        if self.paired {
            Plan {
                splits: self.splits,
                seeds: (0..self.splits as u64).collect(),
                paired: true,
            }
        } else {
            Plan {
                splits: self.splits,
                seeds: (0..self.seeds as u64).collect(),
                paired: false,
            }
        }
    }
}

fn finish<T: serde::Serialize>(
    out: &OutDir,
    command: &str,
    config: serde_json::Value,
    seeds: &[u64],
    rows: &[T],
    runs: &[RunRecord],
) -> Result<()> {
    let path = out.write_csv("results.csv", rows)?;
    out.write_csv("runs.csv", runs)?;
    out.write_manifest(command, config, seeds)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn print_mean<T>(
    rows: &[T],
    label: &str,
    groups: &[(String, Box<dyn Fn(&T) -> bool + '_>)],
    f: impl Fn(&T) -> f64,
) {
    for (name, keep) in groups {
        let m = experiments::mean_by(rows, keep, &f);
        println!("{label} {name}: {m:.4}");
    }
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let (p_e, p_i, kappa) = match (a.h_target, a.p_e, a.p_i, a.kappa) {
        (Some(h), ..) => {
            let r = row_for_target(h)?;
            (r.p_e, r.p_i, r.kappa)
        }
        (None, Some(pe), Some(pi), Some(k)) => (pe, pi, k),
        _ => {
            return Err(Error::Contract(
                "pass --h-target or all of --p-e, --p-i, --kappa".into(),
            ))
        }
    };
    let cfg = SynthConfig {
        n: a.n,
        features: a.features,
        p_e,
        p_i,
        q: a.q,
        kappa,
        mean_scale: a.mean_scale,
        noise_std: a.noise_std,
        seed: a.seed,
    };
    let syn = generate(&cfg)?;
    let name = a.out.file_name().map_or_else(
        || "synthetic".to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    let data = Dataset::from_synth(name, syn);
    io::save_bundle(&data, &a.out)?;
    let report = json!({
        "p_e": p_e,
        "p_i": p_i,
        "kappa": kappa,
        "n": a.n,
        "edges": data.graph.num_edges(),
        "measured_homophily": homophily_ratio(&data.graph, &data.labels)?,
        "expected_homophily": synth::expected_homophily(p_e, p_i, a.n),
        "measured_avg_degree": data.graph.average_degree(),
        "expected_avg_degree": synth::expected_avg_degree(p_e, p_i, a.n, kappa),
        "layout_avg_degree": synth::layout_avg_degree(&cfg),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let data = a.data.load()?;
    let mut cfg = a.config.build(a.model)?;
    cfg.seed = a.seed;
    let split = experiments::split_for(&data, a.data.scheme()?, a.split_id)?;
    let prepared = Prepared::new(data);
    let res = prepared.train(&split, &cfg)?;
    let name = prepared.data.name.clone();
    let rec = RunRecord::new(
        experiments::run_id(&name, &cfg, a.split_id, ""),
        &name,
        a.split_id,
        &cfg,
        &res,
    );
    println!(
        "{}: acc_val={:.4} acc_test={:.4} best_epoch={} epochs={} wall_ms={}",
        rec.run_id, res.acc_val, res.acc_test, res.best_epoch, res.epochs_run, res.wall_ms
    );
    if res.clamped_degrees > 0 {
        log::warn!("{} degree clamps during training", res.clamped_degrees);
    }
    if let Some(dir) = &a.checkpoint {
        io::save_checkpoint(
            dir,
            cfg.model.as_str(),
            cfg.seed,
            serde_json::to_value(cfg)?,
            &res.params,
        )?;
        println!("checkpoint: {}", dir.display());
    }
    if let Some(path) = &a.record {
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let out = OutDir {
            path: dir.to_path_buf(),
        };
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.write_csv(&name, &[rec])?;
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let out = OutDir::prepare(&a.out.out, a.out.append)?;
    let models = a.config.build_all(&a.models)?;
    let seeds: Vec<u64> = (0..a.seeds as u64).collect();
    let base = SynthConfig {
        n: a.n,
        ..SynthConfig::default()
    };
    let (rows, runs) =
        experiments::sweep_homophily(&base, a.feature_norm, a.label_rate, &models, &seeds)?;
    for m in &models {
        let name = m.model.to_string();
        let curve: Vec<String> = synth::appendix_param_table()
            .iter()
            .map(|r| {
                let acc = experiments::mean_by(
                    &rows,
                    |x| x.model == name && x.h_target == r.h_target,
                    |x| x.acc_test,
                );
                format!("{:.3}", acc)
            })
            .collect();
        println!("{name}: {}", curve.join(" "));
    }
    let config = json!({
        "label_rate": a.label_rate,
        "n": a.n,
        "feature_norm": a.feature_norm,
        "models": models,
    });
    finish(&out, "sweep", config, &seeds, &rows, &runs)
}

fn cmd_robustness(a: &RobustnessArgs) -> Result<()> {
    let out = OutDir::prepare(&a.out.out, a.out.append)?;
    let data = a.data.load()?;
    let models = a.config.build_all(&a.models)?;
    let plan = a.plan.plan();
    let (rows, runs) = experiments::robustness(&data, a.data.scheme()?, &a.rates, &models, &plan)?;
    for &rate in &a.rates {
        let groups: Vec<(String, Box<dyn Fn(&experiments::RobustnessRow) -> bool>)> = models
            .iter()
            .map(|m| {
                let name = m.model.to_string();
                let label = format!("{name} rate={rate}");
                (
                    label,
                    Box::new(move |r: &experiments::RobustnessRow| {
                        r.model == name && r.rate == rate
                    }) as Box<_>,
                )
            })
            .collect();
        print_mean(&rows, "acc_test", &groups, |r| r.acc_test);
        let removal = experiments::mean_by(
            &rows,
            |r| r.rate == rate && r.removal_fraction.is_some(),
            |r| r.removal_fraction.unwrap_or(f64::NAN),
        );
        if !removal.is_nan() {
            let collateral = experiments::mean_by(
                &rows,
                |r| r.rate == rate && r.original_below_half.is_some(),
                |r| r.original_below_half.unwrap_or(f64::NAN),
            );
            println!("removal rate={rate}: injected {removal:.4}, original {collateral:.4}");
        }
    }
    let config =
        json!({ "data": a.data.describe(), "rates": a.rates, "models": models, "plan": plan });
    finish(&out, "robustness", config, &plan.seeds, &rows, &runs)
}

fn cmd_depth(a: &DepthArgs) -> Result<()> {
    let out = OutDir::prepare(&a.out.out, a.out.append)?;
    let data = a.data.load()?;
    let models = a.config.build_all(&a.models)?;
    let plan = a.plan.plan();
    let (rows, runs) =
        experiments::depth_sweep(&data, a.data.scheme()?, &a.depths, &models, &plan)?;
    for m in &models {
        let name = m.model.to_string();
        let curve: Vec<String> = a
            .depths
            .iter()
            .map(|&k| {
                format!(
                    "K{k}={:.3}",
                    experiments::mean_by(&rows, |r| r.model == name && r.k == k, |r| r.acc_test)
                )
            })
            .collect();
        println!("{name}: {}", curve.join(" "));
    }
    let config =
        json!({ "data": a.data.describe(), "depths": a.depths, "models": models, "plan": plan });
    finish(&out, "depth", config, &plan.seeds, &rows, &runs)
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let out = OutDir::prepare(&a.out.out, a.out.append)?;
    let data = a.data.load()?;
    let base = a.config.build(ModelKind::Esgnn)?;
    let plan = a.plan.plan();
    let (rows, runs) = experiments::ablate(&data, a.data.scheme()?, &a.variants, &base, &plan)?;
    for v in &a.variants {
        let name = v.name();
        let acc = experiments::mean_by(&rows, |r| r.variant == name, |r| r.acc_test);
        println!("{name}: {acc:.4}");
    }
    let variants: Vec<String> = a.variants.iter().map(|v| v.name()).collect();
    let config =
        json!({ "data": a.data.describe(), "variants": variants, "base": base, "plan": plan });
    finish(&out, "ablate", config, &plan.seeds, &rows, &runs)
}

fn cmd_corr(a: &CorrArgs) -> Result<()> {
    let out = OutDir::prepare(&a.out.out, a.out.append)?;
    let data = a.data.load()?;
    let (params, manifest) = io::load_checkpoint(&a.checkpoint)?;
    let cfg: TrainConfig = serde_json::from_value(manifest.config.clone())?;
    if cfg.model != ModelKind::Esgnn {
        return Err(Error::Contract(format!(
            "checkpoint holds a {} model, not esgnn",
            cfg.model
        )));
    }
    let model = EsGnn::new(cfg.esgnn())?;
    let prepared = Prepared::new(data);
    let (corr, blocks) = experiments::latent_correlation(&model, &params, &prepared.input())?;
    let half = corr.ncols() / 2;
    let header: Vec<String> = (0..corr.ncols())
        .map(|j| {
            if j < half {
                format!("R{j}")
            } else {
                format!("IR{}", j - half)
            }
        })
        .collect();
    out.write_matrix("results.csv", &corr, &header)?;
    fs::write(
        out.path.join("blocks.json"),
        serde_json::to_string_pretty(&blocks)? + "\n",
    )?;
    out.write_manifest(
        "corr",
        json!({ "data": a.data.describe(), "checkpoint": a.checkpoint, "train": cfg }),
        &[cfg.seed],
    )?;
    println!("{}", serde_json::to_string_pretty(&blocks)?);
    Ok(())
}

fn cmd_lemma(a: &LemmaArgs) -> Result<bool> {
    let report = experiments::lemma_trials(a.seed, a.n, a.d, a.trials)?;
    let pass = report.max_dev <= a.tol;
    let mut value = serde_json::to_value(&report)?;
    value["pass"] = json!(pass);
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(pass)
}

fn cmd_sensitivity(a: &SensitivityArgs) -> Result<()> {
    let out = OutDir::prepare(&a.out.out, a.out.append)?;
    let data = a.data.load()?;
    let base = a.config.build(ModelKind::Esgnn)?;
    let lambdas = if a.lambdas.is_empty() {
        experiments::log_grid(a.lo, a.hi, a.count, a.with_zero)?
    } else {
        a.lambdas.clone()
    };
    let plan = a.plan.plan();
    let (rows, runs) = experiments::sensitivity(&data, a.data.scheme()?, &lambdas, &base, &plan)?;
    for &l in &lambdas {
        let acc = experiments::mean_by(&rows, |r| r.lambda_icr == l, |r| r.acc_test);
        println!("lambda_icr={l:e}: {acc:.4}");
    }
    let config =
        json!({ "data": a.data.describe(), "lambdas": lambdas, "base": base, "plan": plan });
    finish(&out, "sensitivity", config, &plan.seeds, &rows, &runs)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.cmd {
        Cmd::Gen(a) => cmd_gen(a)?,
        Cmd::Train(a) => cmd_train(a)?,
        Cmd::Sweep(a) => cmd_sweep(a)?,
        Cmd::Robustness(a) => cmd_robustness(a)?,
        Cmd::Depth(a) => cmd_depth(a)?,
        Cmd::Ablate(a) => cmd_ablate(a)?,
        Cmd::Corr(a) => cmd_corr(a)?,
        Cmd::LemmaCheck(a) => return cmd_lemma(a),
        Cmd::Sensitivity(a) => cmd_sensitivity(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
