use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedfusion::data::{load_csv_many, normalize, synth_generate, IngestReport, Modality, PairedDataset, CLASS_NAMES};
use fedfusion::experiment::{
    centralized_pipeline, evaluate_checkpoints, federated_pipeline, prepare_data, run_experiment, save_checkpoints,
    train_encoders, write_outputs, ExperimentConfig, ExperimentName, ExperimentResult, FeatureSet, Manifest,
};
use fedfusion::fed::{Execution, RoundLogRecord};
use fedfusion::metrics::{write_metrics_csv, ScopedMetrics};
use fedfusion::nn::mse_loss;
use fedfusion::Error;

/// Federated multimodal intrusion detection for EV charging stations.
///
/// Settings come from built-in defaults, then the `--config` TOML file,
/// then command-line flags; later sources win.
#[derive(Debug, Parser)]
#[command(name = "fedfusion", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load CSV tables and print per-class and feature counts.
    Ingest(Common),
    /// Write a synthetic paired dataset as two CSV files.
    Synth(Common),
    /// Train the per-modality autoencoders on pooled training data.
    TrainAe {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fused", value_parser = parse_features)]
        features: FeatureSet,
    },
    /// Train the classifier centrally.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fused", value_parser = parse_features)]
        features: FeatureSet,
    },
    /// Train the classifier with simulated federated rounds.
    TrainFed {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fused", value_parser = parse_features)]
        features: FeatureSet,
    },
    /// Evaluate saved checkpoints on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory; defaults to `<out>/checkpoints`.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Run one of the experiment protocols.
    Experiment {
        #[arg(value_parser = parse_experiment)]
        name: ExperimentName,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML run description.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for client training (default: all processors).
    #[arg(long)]
    jobs: Option<usize>,
    /// Network-traffic CSV files or directories of them.
    #[arg(long, num_args = 1.., conflicts_with = "synth")]
    dataset_net: Vec<PathBuf>,
    /// Kernel/HPC CSV files or directories of them.
    #[arg(long, num_args = 1.., conflicts_with = "synth")]
    dataset_kernel: Vec<PathBuf>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    cap_per_class: Option<usize>,
    /// Use the synthetic generator even if the config names CSV files.
    #[arg(long)]
    synth: bool,
}

fn parse_features(s: &str) -> Result<FeatureSet, String> {
    match s {
        "fused" => Ok(FeatureSet::Fused),
        "network" => Ok(FeatureSet::Network),
        "kernel" => Ok(FeatureSet::Kernel),
        _ => Err("expected fused, network or kernel".into()),
    }
}

fn parse_experiment(s: &str) -> Result<ExperimentName, String> {
    [
        ExperimentName::FusionVsSingle,
        ExperimentName::CentralizedVsFederated,
        ExperimentName::ClientSweep,
    ]
    .into_iter()
    .find(|n| n.as_str() == s)
    .ok_or_else(|| "expected fusion-vs-single, centralized-vs-federated or client-sweep".into())
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = Result<T, Failure>;

/// Expands directories to the `.csv` files they contain, sorted by name.
fn expand_paths(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = fs::read_dir(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
                .collect();
            if found.is_empty() {
                return Err(Failure::Usage(format!("{} contains no .csv files", p.display())));
            }
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(Failure::Usage(format!("{} does not exist", p.display())));
        }
    }
    Ok(out)
}

fn resolve(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Failure::Usage(format!("config file {} not found", path.display())));
            }
            ExperimentConfig::load(path)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(n) = common.clients {
        cfg.training.n_clients = n;
    }
    if let Some(r) = common.rounds {
        cfg.training.rounds = r;
    }
    if common.cap_per_class.is_some() {
        cfg.data.cap_per_class = common.cap_per_class;
    }
    if common.synth {
        cfg.data.net_paths.clear();
        cfg.data.kernel_paths.clear();
    }
    if !common.dataset_net.is_empty() {
        cfg.data.net_paths = expand_paths(&common.dataset_net)?;
    }
    if !common.dataset_kernel.is_empty() {
        cfg.data.kernel_paths = expand_paths(&common.dataset_kernel)?;
    }
    setup_jobs(common.jobs, &mut cfg)?;
    Ok(cfg)
}

#[cfg(feature = "parallel")]
fn setup_jobs(jobs: Option<usize>, cfg: &mut ExperimentConfig) -> CliResult<()> {
    match jobs {
        Some(0) => Err(Failure::Usage("--jobs must be at least 1".into())),
        Some(1) => {
            cfg.training.execution = Execution::Sequential;
            Ok(())
        }
        Some(n) => {
            // a second call in the same process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(())
        }
        None => Ok(()),
    }
}

#[cfg(not(feature = "parallel"))]
fn setup_jobs(jobs: Option<usize>, cfg: &mut ExperimentConfig) -> CliResult<()> {
    if jobs.is_some_and(|n| n > 1) {
        log::warn!("built without the `parallel` feature; --jobs ignored");
    }
    cfg.training.execution = Execution::Sequential;
    Ok(())
}

fn print_ingest(report: &IngestReport) {
    println!(
        "{} ({} file(s)): {} rows read, {} dropped, {} features",
        report.modality.tag(),
        report.paths.len(),
        report.rows_read,
        report.rows_dropped,
        report.feature_count
    );
    for (name, count) in &report.class_counts {
        println!("  {name:<8} {count}");
    }
    if !report.rejected_columns.is_empty() {
        println!("  rejected non-numeric columns: {}", report.rejected_columns.join(", "));
    }
}

fn cmd_ingest(cfg: &ExperimentConfig) -> CliResult<()> {
    let d = &cfg.data;
    if !d.uses_csv() {
        return Err(Failure::Usage(
            "ingest needs --dataset-net and/or --dataset-kernel".into(),
        ));
    }
    let mut reports = Vec::new();
    for (paths, modality, schema) in [
        (&d.net_paths, Modality::NetworkTraffic, &d.net_schema),
        (&d.kernel_paths, Modality::KernelHpc, &d.kernel_schema),
    ] {
        if paths.is_empty() {
            continue;
        }
        let (ds, report) = load_csv_many(paths, modality, schema)?;
        normalize(&ds, None)?;
        print_ingest(&report);
        reports.push(report);
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io {
        path: cfg.out_dir.clone(),
        source: e,
    })?;
    let path = cfg.out_dir.join("ingest.json");
    let json = serde_json::to_vec_pretty(&reports).map_err(Error::from)?;
    fs::write(&path, json).map_err(|e| Error::Io { path, source: e })?;
    Ok(())
}

fn write_modality_csv(path: &Path, ds: &PairedDataset, modality: Modality) -> fedfusion::Result<()> {
    let x = ds.features(modality);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..x.shape()[1]).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (i, &label) in ds.labels.iter().enumerate() {
        let mut row: Vec<String> = x.row(i).iter().map(|v| format!("{v}")).collect();
        row.push(CLASS_NAMES[label].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_synth(cfg: &ExperimentConfig) -> CliResult<()> {
    let ds = synth_generate(&cfg.data.synth)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let net = out.join("network.csv");
    let kernel = out.join("kernel.csv");
    write_modality_csv(&net, &ds, Modality::NetworkTraffic)?;
    write_modality_csv(&kernel, &ds, Modality::KernelHpc)?;
    println!("{} paired rows, class counts {:?}", ds.len(), ds.class_counts());
    println!("wrote {} and {}", net.display(), kernel.display());
    Ok(())
}

fn cmd_train_ae(cfg: &ExperimentConfig, set: FeatureSet) -> CliResult<()> {
    let data = prepare_data(cfg)?;
    let enc = train_encoders(
        &data.train,
        set,
        &cfg.autoencoder,
        cfg.seed,
        u64::MAX,
        cfg.training.execution,
    )?;
    for (m, ae) in [
        (Modality::NetworkTraffic, &enc.network),
        (Modality::KernelHpc, &enc.kernel),
    ] {
        if let Some(ae) = ae {
            let x = data.test.features(m);
            let mse = mse_loss(&ae.reconstruct(x)?, x)?;
            println!("{} autoencoder: test reconstruction mse {mse:.6}", m.tag());
        }
    }
    let manifest = Manifest {
        mode: "autoencoder".into(),
        clients: 1,
        feature_set: set,
    };
    save_checkpoints(&cfg.out_dir.join("checkpoints"), &manifest, &[enc], None)?;
    write_config(cfg)?;
    Ok(())
}

fn write_config(cfg: &ExperimentConfig) -> fedfusion::Result<()> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io {
        path: cfg.out_dir.clone(),
        source: e,
    })?;
    let path = cfg.out_dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).map_err(|e| Error::Io { path, source: e })
}

fn print_summary(name: &str, metrics: Vec<ScopedMetrics>, rounds: Vec<RoundLogRecord>, seed: u64) {
    let result = ExperimentResult {
        name: name.to_string(),
        seed,
        metrics,
        rounds,
    };
    print!("{}", result.summary());
}

fn cmd_train(cfg: &ExperimentConfig, set: FeatureSet) -> CliResult<()> {
    let data = prepare_data(cfg)?;
    let run = centralized_pipeline(cfg, &data, set, "centralized")?;
    write_outputs(&cfg.out_dir, cfg, "train", &run.metrics, &[])?;
    let manifest = Manifest {
        mode: "centralized".into(),
        clients: cfg.training.n_clients,
        feature_set: set,
    };
    save_checkpoints(
        &cfg.out_dir.join("checkpoints"),
        &manifest,
        &[run.encoders],
        Some(&run.cnn),
    )?;
    print_summary("train", run.metrics, Vec::new(), cfg.seed);
    Ok(())
}

fn cmd_train_fed(cfg: &ExperimentConfig, set: FeatureSet) -> CliResult<()> {
    let data = prepare_data(cfg)?;
    let run = federated_pipeline(cfg, &data, cfg.training.n_clients, set, "federated")?;
    let rounds: Vec<RoundLogRecord> = run.rounds.iter().map(|r| RoundLogRecord::new("federated", r)).collect();
    write_outputs(&cfg.out_dir, cfg, "train-fed", &run.metrics, &rounds)?;
    let manifest = Manifest {
        mode: "federated".into(),
        clients: cfg.training.n_clients,
        feature_set: set,
    };
    save_checkpoints(
        &cfg.out_dir.join("checkpoints"),
        &manifest,
        &run.encoders,
        Some(&run.cnn),
    )?;
    print_summary("train-fed", run.metrics, rounds, cfg.seed);
    Ok(())
}

fn cmd_eval(common: &Common, checkpoints: Option<&Path>) -> CliResult<()> {
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| ExperimentConfig::default().out_dir);
    let dir = checkpoints
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join("checkpoints"));
    if !dir.join("manifest.json").is_file() {
        return Err(Failure::Usage(format!("no checkpoint manifest in {}", dir.display())));
    }
    let mut common = common.clone();
    if common.config.is_none() {
        let sibling = dir.parent().map(|p| p.join("config.toml"));
        match sibling {
            Some(p) if p.is_file() => common.config = Some(p),
            _ => {
                return Err(Failure::Usage(
                    "eval needs --config (no config.toml next to the checkpoints)".into(),
                ))
            }
        }
    }
    let cfg = resolve(&common)?;
    let metrics = evaluate_checkpoints(&cfg, &dir)?;
    let stdout = io::stdout();
    write_metrics_csv(&metrics, stdout.lock())?;
    Ok(())
}

fn cmd_experiment(name: ExperimentName, cfg: &ExperimentConfig) -> CliResult<()> {
    let result = run_experiment(name, cfg)?;
    write_outputs(&cfg.out_dir, cfg, &result.name, &result.metrics, &result.rounds)?;
    println!("{} (seed {})", result.name, result.seed);
    print!("{}", result.summary());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest(c) => cmd_ingest(&resolve(&c)?),
        Command::Synth(c) => cmd_synth(&resolve(&c)?),
        Command::TrainAe { common, features } => cmd_train_ae(&resolve(&common)?, features),
        Command::Train { common, features } => cmd_train(&resolve(&common)?, features),
        Command::TrainFed { common, features } => cmd_train_fed(&resolve(&common)?, features),
        Command::Eval { common, checkpoints } => cmd_eval(&common, checkpoints.as_deref()),
        Command::Experiment { name, common } => cmd_experiment(name, &resolve(&common)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    };
    let _ = io::stdout().flush();
    code
}
