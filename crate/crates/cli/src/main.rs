use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use t2boot::bootstrap::{bootstrap_infer_detailed, bootstrap_scalar_fit, BootstrapConfig};
use t2boot::distribution::{write_distributions_csv, T2Distribution};
use t2boot::experiment::{
    export_plotdata, run_experiment, write_run, ExperimentConfig, ExperimentKind, ExperimentReport, Method, ModelSet,
};
use t2boot::kernel::build_kernel;
use t2boot::mlp::{train, MlpModel, SubsetMode, TrainConfig, Variant};
use t2boot::nnls::{choose_lambda, nnls_solve, NnlsConfig};
use t2boot::scalar::fit_monoexponential;
use t2boot::stats::{read_biomarkers, separation_of, KsMode, DEFAULT_HELLINGER_BINS};
use t2boot::synth::{write_dataset_streaming, Dataset, GenerationConfig};

#[derive(Parser)]
#[command(name = "t2boot", version, about = "T2 distribution estimation and synthetic-cohort experiments")]
struct Cli {
    /// JSON settings for the subcommand (generation, training, NNLS, bootstrap or experiment config).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the seed in --config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (`<stem>.json` + `<stem>.csv`).
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        preset: Option<String>,
    },
    /// Train a network on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "p2t2")]
        variant: Variant,
        /// Train on random echo subsets of this size.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict a distribution for every dataset row.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        io: DataIo,
    },
    /// Regularized NNLS inversion of every dataset row.
    Nnls {
        #[command(flatten)]
        io: DataIo,
        #[arg(long)]
        lambda: Option<f64>,
        /// Pick λ per row from these candidates by the discrepancy rule.
        #[arg(long, value_delimiter = ',')]
        auto_lambda: Option<Vec<f64>>,
        /// Refocusing angle of the kernel, degrees.
        #[arg(long, default_value_t = 180.0)]
        alpha: f64,
    },
    /// Mono-exponential fit of every dataset row.
    ScalarFit {
        #[command(flatten)]
        io: DataIo,
        /// Average the fit over B echo subsets of size m.
        #[arg(long)]
        bootstrap: bool,
        #[command(flatten)]
        boot: BootArgs,
    },
    /// Bootstrap ensemble inference over echo subsets.
    BootstrapInfer {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        io: DataIo,
        #[command(flatten)]
        boot: BootArgs,
    },
    /// Separation statistics of a biomarker CSV (group, subject_id, roi, value).
    Metrics {
        #[arg(long)]
        biomarkers: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HELLINGER_BINS)]
        bins: usize,
        #[arg(long, default_value = "auto")]
        ks_mode: KsMode,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a synthetic-cohort experiment into a run directory.
    Experiment {
        #[command(subcommand)]
        kind: ExperimentCmd,
    },
    /// Write plot data (biomarkers.csv, summary.json) from an experiment report.
    Export {
        /// A report JSON, or a run directory containing reports/<kind>.json.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    TestRetest(ExperimentArgs),
    GroupSep(ExperimentArgs),
    Ablation(ExperimentArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Directory of model files (miml.json, miml_e<k>.json, p2t2.json, p2t2_m<m>.json).
    #[arg(long)]
    models: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of methods.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
}

#[derive(Args)]
struct DataIo {
    /// Dataset stem or either of its files.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BootArgs {
    #[arg(long = "b")]
    b: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("setting up the thread pool")?;
    }
    match &cli.command {
        Command::GenData { out, count, preset } => gen_data(&cli, out, *count, preset.as_deref()),
        Command::Train {
            data,
            out,
            variant,
            m,
            epochs,
        } => train_cmd(&cli, data, out, *variant, *m, *epochs),
        Command::Infer { model, io } => infer(model, io),
        Command::Nnls {
            io,
            lambda,
            auto_lambda,
            alpha,
        } => nnls_cmd(&cli, io, *lambda, auto_lambda.as_deref(), *alpha),
        Command::ScalarFit { io, bootstrap, boot } => scalar_cmd(&cli, io, *bootstrap, boot),
        Command::BootstrapInfer { model, io, boot } => bootstrap_cmd(&cli, model, io, boot),
        Command::Metrics {
            biomarkers,
            bins,
            ks_mode,
            out,
        } => metrics(biomarkers, *bins, *ks_mode, out.as_deref()),
        Command::Experiment { kind } => {
            let (kind, args) = match kind {
                ExperimentCmd::TestRetest(a) => (ExperimentKind::TestRetest, a),
                ExperimentCmd::GroupSep(a) => (ExperimentKind::GroupSeparation, a),
                ExperimentCmd::Ablation(a) => (ExperimentKind::Ablation, a),
            };
            experiment(&cli, kind, args)
        }
        Command::Export { report, out } => export(report, out),
    }
}

fn load_config<T: DeserializeOwned + Default>(cli: &Cli) -> Result<T> {
    match &cli.config {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_data(path: &Path) -> Result<Dataset> {
    Dataset::read(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn ids(data: &Dataset) -> Vec<String> {
    data.samples.iter().map(|s| s.sample_id.to_string()).collect()
}

fn write_dists(path: &Path, data: &Dataset, dists: Vec<T2Distribution>) -> Result<()> {
    let rows: Vec<(String, T2Distribution)> = ids(data).into_iter().zip(dists).collect();
    write_distributions_csv(path, &rows, data.grid.len()).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(cli: &Cli, out: &Path, count: Option<usize>, preset: Option<&str>) -> Result<()> {
    let mut config: GenerationConfig = load_config(cli)?;
    if let Some(n) = count {
        config.count = n;
    }
    if let Some(p) = preset {
        config.schedule_preset = p.to_string();
    }
    let seed = cli.seed.unwrap_or(0);
    let hash = write_dataset_streaming(&config, seed, out)?;
    println!("wrote {} samples (seed {seed}), body sha256 {hash}", config.count);
    Ok(())
}

fn train_cmd(
    cli: &Cli,
    data: &Path,
    out: &Path,
    variant: Variant,
    m: Option<usize>,
    epochs: Option<usize>,
) -> Result<()> {
    let mut config: TrainConfig = load_config(cli)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(e) = epochs {
        config.epochs = e;
    }
    let data = read_data(data)?;
    let n = data.schedule().n_echoes();
    let (mode, m) = match m {
        Some(m) if m < n => (SubsetMode::RandomM, m),
        Some(m) if m > n => bail!("--m {m} exceeds the {n} echoes of the dataset"),
        _ => (SubsetMode::Full, n),
    };
    let model = train(variant, &data, mode, m, &config)?;
    model.save(out)?;
    let meta = &model.train_meta;
    println!(
        "trained {variant} on {} samples for {} epochs; final loss {:.5}, validation mean W1 {} ms",
        data.samples.len(),
        meta.epochs,
        meta.loss_curve.last().copied().unwrap_or(f64::NAN),
        meta.val_mean_w1.map_or("n/a".into(), |w| format!("{w:.3}"))
    );
    Ok(())
}

fn infer(model: &Path, io: &DataIo) -> Result<()> {
    let model = MlpModel::load(model).with_context(|| format!("loading {}", model.display()))?;
    let data = read_data(&io.data)?;
    let dists = data
        .samples
        .par_iter()
        .map(|s| model.predict(&s.signal_noisy))
        .collect::<t2boot::Result<Vec<_>>>()?;
    write_dists(&io.out, &data, dists)
}

fn nnls_cmd(cli: &Cli, io: &DataIo, lambda: Option<f64>, auto: Option<&[f64]>, alpha: f64) -> Result<()> {
    let mut config: NnlsConfig = load_config(cli)?;
    if let Some(l) = lambda {
        config.lambda = l;
    }
    let data = read_data(&io.data)?;
    let kernel = build_kernel(&data.schedule().with_refocus(alpha)?, &data.grid)?;
    let dists = data
        .samples
        .par_iter()
        .map(|s| {
            let mut c = config.clone();
            if let Some(cands) = auto {
                c.lambda = choose_lambda(&s.signal_noisy, &kernel, cands, &config)?;
            }
            Ok(nnls_solve(&s.signal_noisy, &kernel, &c)?.distribution)
        })
        .collect::<t2boot::Result<Vec<_>>>()?;
    write_dists(&io.out, &data, dists)
}

fn boot_config(cli: &Cli, boot: &BootArgs) -> Result<BootstrapConfig> {
    let mut c: BootstrapConfig = load_config(cli)?;
    if let Some(b) = boot.b {
        c.b_iterations = b;
    }
    if let Some(m) = boot.m {
        c.subset_size = m;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    Ok(c)
}

fn scalar_cmd(cli: &Cli, io: &DataIo, bootstrap: bool, boot: &BootArgs) -> Result<()> {
    let data = read_data(&io.data)?;
    let config = boot_config(cli, boot)?;
    // (t2, m0, quality): r2 for a single fit, member T2 std for a bootstrap fit.
    let fits: Vec<Option<(f64, f64, f64)>> = data
        .samples
        .par_iter()
        .map(|s| {
            if bootstrap {
                bootstrap_scalar_fit(&s.signal_noisy, &config)
                    .ok()
                    .map(|f| (f.t2_ms, f.m0, f.t2_member_std))
            } else {
                fit_monoexponential(&s.signal_noisy).ok().map(|f| (f.t2_ms, f.m0, f.r2))
            }
        })
        .collect();
    let mut w = csv::Writer::from_path(&io.out).with_context(|| format!("writing {}", io.out.display()))?;
    let quality = if bootstrap { "t2_member_std" } else { "r2" };
    w.write_record(["sample_id", "t2_ms", "m0", quality, "converged"])?;
    let mut failed = 0;
    for (id, f) in ids(&data).into_iter().zip(fits) {
        match f {
            Some((t2, m0, q)) => w.write_record([id, fmt(t2), fmt(m0), fmt(q), "1".into()])?,
            None => {
                failed += 1;
                w.write_record([id, String::new(), String::new(), String::new(), "0".into()])?
            }
        }
    }
    w.flush()?;
    if failed > 0 {
        eprintln!("warning: {failed} rows did not converge");
    }
    Ok(())
}

fn fmt(x: f64) -> String {
    t2boot::io::fmt17(x)
}

fn bootstrap_cmd(cli: &Cli, model: &Path, io: &DataIo, boot: &BootArgs) -> Result<()> {
    let model = MlpModel::load(model).with_context(|| format!("loading {}", model.display()))?;
    let mut config = boot_config(cli, boot)?;
    if boot.m.is_none() {
        config.subset_size = model.input_echoes();
    }
    let data = read_data(&io.data)?;
    let outs = data
        .samples
        .par_iter()
        .map(|s| bootstrap_infer_detailed(&s.signal_noisy, &model, &config))
        .collect::<t2boot::Result<Vec<_>>>()?;
    let spread_path = io.out.with_extension("spread.csv");
    let mut w = csv::Writer::from_path(&spread_path)?;
    w.write_record(["sample_id", "member_spread_ms"])?;
    for (id, o) in ids(&data).into_iter().zip(&outs) {
        w.write_record([id, fmt(o.member_spread)])?;
    }
    w.flush()?;
    write_dists(&io.out, &data, outs.into_iter().map(|o| o.distribution).collect())
}

fn metrics(biomarkers: &Path, bins: usize, mode: KsMode, out: Option<&Path>) -> Result<()> {
    let samples = read_biomarkers(biomarkers).with_context(|| format!("reading {}", biomarkers.display()))?;
    let stats = separation_of(&samples, bins, mode)?;
    match out {
        Some(p) => write_json(p, &stats),
        None => {
            println!("{}", serde_json::to_string_pretty(&stats)?);
            Ok(())
        }
    }
}

fn experiment_config(cli: &Cli, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut user = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<Value>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Value::Object(Default::default()),
    };
    let obj = user.as_object_mut().context("experiment config must be a JSON object")?;
    let want = serde_json::to_value(kind)?;
    match obj.get("experiment") {
        Some(v) if *v != want => bail!("config is for experiment {v}, not {want}"),
        _ => {
            obj.insert("experiment".into(), want);
        }
    }
    if let Some(s) = cli.seed {
        obj.insert("seed".into(), s.into());
    }
    Ok(ExperimentConfig::from_json(&user.to_string())?)
}

fn experiment(cli: &Cli, kind: ExperimentKind, args: &ExperimentArgs) -> Result<()> {
    let mut config = experiment_config(cli, kind)?;
    if let Some(m) = &args.methods {
        config.methods = m.clone();
        config.validate()?;
    }
    let models = ModelSet::load_dir(&args.models).with_context(|| format!("loading models from {}", args.models.display()))?;
    let run = run_experiment(&config, &models)?;
    let manifest = write_run(&args.out, &config, &models, &run)?;
    print_table(&run.report);
    println!("run directory {} ({} declared outputs)", args.out.display(), manifest.outputs.len());
    Ok(())
}

fn print_table(report: &ExperimentReport) {
    println!(
        "{:<22} {:>4} {:>10} {:>10} {:>7} {:>9} {:>7} {:>10}",
        "method", "m", "median", "iqr", "auc", "hellinger", "ks_d", "ks_p"
    );
    for r in &report.methods {
        let (med, iqr) = r.summary.map_or((f64::NAN, f64::NAN), |s| (s.median, s.iqr));
        let m = r.m.map_or("-".to_string(), |m| m.to_string());
        match &r.stats {
            Some(s) => println!(
                "{:<22} {m:>4} {med:>10.4} {iqr:>10.4} {:>7.3} {:>9.3} {:>7.3} {:>10.3e}",
                r.method, s.auc, s.hellinger, s.ks_d, s.ks_p
            ),
            None => println!("{:<22} {m:>4} {med:>10.4} {iqr:>10.4}", r.method),
        }
        if !r.failures.is_empty() {
            println!("  {} failures", r.failures.len());
        }
    }
}

fn export(report: &Path, out: &Path) -> Result<()> {
    let path = if report.is_dir() {
        let manifest: Value = serde_json::from_str(&std::fs::read_to_string(report.join("manifest.json"))?)?;
        let kind = manifest["config"]["experiment"]
            .as_str()
            .context("manifest has no experiment kind")?;
        let kind: ExperimentKind = serde_json::from_value(Value::String(kind.into()))?;
        report.join("reports").join(format!("{kind}.json"))
    } else {
        report.to_path_buf()
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report: ExperimentReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    for p in export_plotdata(&report, out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
