//! End-to-end pipelines and the three experiment protocols.
//!
//! Data flow for every arm:
//!
//! 1. load and pair (or synthesize), stratified split, z-score with train stats;
//! 2. train the autoencoder(s) on training rows;
//! 3. encode and fuse, train the CNN centrally or across clients;
//! 4. evaluate on test slices, one per client, each encoded by its owner.
//!
//! In federated runs every client trains its own autoencoders on its own
//! shard. All clients start from the same autoencoder initialization.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::classifier::{CnnConfig, CnnModel};
use crate::data::{
    load_csv_many, normalize_paired, pair_modalities, partition_clients, split, synth_generate, ClientShard, CsvSchema,
    IngestReport, Modality, NormStats, PairedDataset, PartitionScheme, SynthSpec,
};
use crate::encoder::{encode, fuse, train_autoencoder, AeConfig, AutoencoderModel, LATENT_DIM};
use crate::error::{Error, Result};
use crate::fed::{
    map_clients, run_centralized, run_federated, ClientData, Execution, FedConfig, RoundLogRecord, RoundReport,
};
use crate::metrics::{compute_metrics, confusion, write_metrics_csv, ConfusionMatrix, ScopedMetrics};
use crate::seed::{self, stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Network-traffic CSV files. When both path lists are empty the
    /// synthetic generator is used instead.
    pub net_paths: Vec<PathBuf>,
    pub kernel_paths: Vec<PathBuf>,
    pub net_schema: CsvSchema,
    pub kernel_schema: CsvSchema,
    pub synth: SynthSpec,
    pub cap_per_class: Option<usize>,
    pub test_fraction: f64,
    pub partition: PartitionScheme,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            net_paths: Vec::new(),
            kernel_paths: Vec::new(),
            net_schema: CsvSchema::default(),
            kernel_schema: CsvSchema::default(),
            synth: SynthSpec::default(),
            cap_per_class: None,
            test_fraction: 0.2,
            partition: PartitionScheme::IidStratified,
        }
    }
}

impl DataConfig {
    pub fn uses_csv(&self) -> bool {
        !self.net_paths.is_empty() || !self.kernel_paths.is_empty()
    }
}

/// Declarative description of a run. Serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub autoencoder: AeConfig,
    pub cnn: CnnConfig,
    pub training: FedConfig,
    pub sweep_clients: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            autoencoder: AeConfig::default(),
            cnn: CnnConfig::default(),
            training: FedConfig::default(),
            sweep_clients: vec![3, 6, 8, 10],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    fn fed_config(&self, n_clients: usize) -> FedConfig {
        FedConfig {
            n_clients,
            seed: self.seed,
            ..self.training.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    Fused,
    Network,
    Kernel,
}

impl FeatureSet {
    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Fused => "fused",
            FeatureSet::Network => "network",
            FeatureSet::Kernel => "kernel",
        }
    }

    fn modalities(self) -> &'static [Modality] {
        match self {
            FeatureSet::Fused => &[Modality::NetworkTraffic, Modality::KernelHpc],
            FeatureSet::Network => &[Modality::NetworkTraffic],
            FeatureSet::Kernel => &[Modality::KernelHpc],
        }
    }

    pub fn input_len(self) -> usize {
        LATENT_DIM * self.modalities().len()
    }
}

pub struct PreparedData {
    pub train: PairedDataset,
    pub test: PairedDataset,
    pub norm: [NormStats; 2],
    pub ingest: Vec<IngestReport>,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let d = &cfg.data;
    let (paired, ingest) = if d.uses_csv() {
        if d.net_paths.is_empty() || d.kernel_paths.is_empty() {
            return Err(Error::Config("both network and kernel datasets are required".into()));
        }
        let (net, r1) = load_csv_many(&d.net_paths, Modality::NetworkTraffic, &d.net_schema)?;
        let (kernel, r2) = load_csv_many(&d.kernel_paths, Modality::KernelHpc, &d.kernel_schema)?;
        let seed = seed::derive(cfg.seed, &[stream::PAIRING]);
        (pair_modalities(&net, &kernel, d.cap_per_class, seed)?, vec![r1, r2])
    } else {
        (synth_generate(&d.synth)?, Vec::new())
    };
    let (train, test) = split(&paired, d.test_fraction, cfg.seed)?;
    let (train, test, norm) = normalize_paired(&train, &test)?;
    Ok(PreparedData {
        train,
        test,
        norm,
        ingest,
    })
}

/// The autoencoders one participant holds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Encoders {
    pub network: Option<AutoencoderModel>,
    pub kernel: Option<AutoencoderModel>,
}

impl Encoders {
    fn get(&self, m: Modality) -> Option<&AutoencoderModel> {
        match m {
            Modality::NetworkTraffic => self.network.as_ref(),
            Modality::KernelHpc => self.kernel.as_ref(),
        }
    }

    /// CNN input for `set`: one latent block or the fused pair.
    pub fn inputs(&self, ds: &PairedDataset, set: FeatureSet) -> Result<Tensor> {
        let mut blocks = Vec::with_capacity(2);
        for &m in set.modalities() {
            let model = self
                .get(m)
                .ok_or_else(|| Error::Evaluation(format!("missing {} encoder", m.tag())))?;
            let x = ds.features(m);
            if x.rank() != 2 || x.shape()[1] == 0 {
                return Err(Error::Evaluation(format!("missing {} modality in data", m.tag())));
            }
            blocks.push(encode(model, x)?);
        }
        match blocks.as_slice() {
            [one] => Ok(one.clone()),
            [a, b] => fuse(a, b),
            _ => unreachable!(),
        }
    }

    pub fn quantize_f32(&mut self) {
        for ae in [&mut self.network, &mut self.kernel].into_iter().flatten() {
            ae.quantize_f32();
        }
    }
}

/// Trains the autoencoders `set` needs on `ds`. Initial weights depend only
/// on the run seed; minibatch order also depends on `owner`.
pub fn train_encoders(
    ds: &PairedDataset,
    set: FeatureSet,
    ae: &AeConfig,
    run_seed: u64,
    owner: u64,
    exec: Execution,
) -> Result<Encoders> {
    let trained = map_clients(exec, set.modalities(), |&m| {
        let tag = m as u64;
        let init = seed::derive(run_seed, &[stream::AE_INIT, tag]);
        let shuffle = seed::derive(run_seed, &[stream::AE_SHUFFLE, tag, owner]);
        train_autoencoder(ds.features(m), m, ae, init, shuffle).map(|o| o.model)
    });
    let mut enc = Encoders::default();
    for (m, model) in set.modalities().iter().zip(trained) {
        match m {
            Modality::NetworkTraffic => enc.network = Some(model?),
            Modality::KernelHpc => enc.kernel = Some(model?),
        }
    }
    Ok(enc)
}

/// Test rows split into `n` station slices; same split for every arm.
pub fn test_slices(test: &PairedDataset, n: usize, run_seed: u64) -> Result<Vec<ClientShard>> {
    partition_clients(
        &test.labels,
        n,
        PartitionScheme::IidStratified,
        seed::derive(run_seed, &[stream::TEST_PARTITION]),
    )
}

/// Per-slice and pooled metrics. `encoders[i]` encodes slice `i`; a single
/// entry is shared by all slices.
pub fn evaluate(
    arm: &str,
    encoders: &[Encoders],
    cnn: &CnnModel,
    test: &PairedDataset,
    slices: &[ClientShard],
    set: FeatureSet,
) -> Result<Vec<ScopedMetrics>> {
    if encoders.len() != 1 && encoders.len() != slices.len() {
        return Err(Error::Evaluation(format!(
            "{} encoder sets for {} test slices",
            encoders.len(),
            slices.len()
        )));
    }
    let mut rows = Vec::with_capacity(slices.len() + 1);
    let mut pooled = ConfusionMatrix::default();
    for (i, shard) in slices.iter().enumerate() {
        let part = test.select(&shard.indices);
        let enc = &encoders[if encoders.len() == 1 { 0 } else { i }];
        let pred = cnn.predict(&enc.inputs(&part, set)?)?;
        let cm = confusion(&part.labels, &pred)?;
        pooled += cm;
        rows.push(ScopedMetrics {
            arm: arm.to_string(),
            scope: format!("client-{}", shard.client_id),
            confusion: cm,
            report: compute_metrics(&cm)?,
        });
    }
    rows.insert(
        0,
        ScopedMetrics {
            arm: arm.to_string(),
            scope: "global".into(),
            confusion: pooled,
            report: compute_metrics(&pooled)?,
        },
    );
    Ok(rows)
}

fn cnn_for(cfg: &ExperimentConfig, set: FeatureSet) -> Result<CnnModel> {
    let config = CnnConfig {
        input_len: set.input_len(),
        ..cfg.cnn
    };
    CnnModel::new(config, cfg.seed)
}

/// Marker for the centrally trained autoencoders' shuffle stream.
const CENTRAL_OWNER: u64 = u64::MAX;

pub struct CentralizedRun {
    pub encoders: Encoders,
    pub cnn: CnnModel,
    pub metrics: Vec<ScopedMetrics>,
    pub total_steps: usize,
    pub epoch_loss: Vec<f64>,
}

/// Pools all training rows in one place. Models are rounded to `f32` before
/// the final evaluation so the reported metrics match reloaded checkpoints.
pub fn centralized_pipeline(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    set: FeatureSet,
    arm: &str,
) -> Result<CentralizedRun> {
    let fed = cfg.fed_config(cfg.training.n_clients);
    let mut encoders = train_encoders(
        &data.train,
        set,
        &cfg.autoencoder,
        cfg.seed,
        CENTRAL_OWNER,
        fed.execution,
    )?;
    let train = ClientData {
        client_id: 0,
        inputs: encoders.inputs(&data.train, set)?,
        labels: data.train.labels.clone(),
    };
    let test = ClientData {
        client_id: 0,
        inputs: encoders.inputs(&data.test, set)?,
        labels: data.test.labels.clone(),
    };
    let slices = test_slices(&data.test, fed.n_clients, cfg.seed)?;
    let outcome = run_centralized(&fed, cnn_for(cfg, set)?, &train, std::slice::from_ref(&test))?;
    let mut cnn = outcome.model;
    cnn.quantize_f32();
    encoders.quantize_f32();
    let metrics = evaluate(arm, std::slice::from_ref(&encoders), &cnn, &data.test, &slices, set)?;
    Ok(CentralizedRun {
        encoders,
        cnn,
        metrics,
        total_steps: outcome.total_steps,
        epoch_loss: outcome.history.iter().map(|h| h.loss).collect(),
    })
}

pub struct FederatedRun {
    pub encoders: Vec<Encoders>,
    pub cnn: CnnModel,
    pub rounds: Vec<RoundReport>,
    pub metrics: Vec<ScopedMetrics>,
    pub total_steps: usize,
}

pub fn federated_pipeline(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    n_clients: usize,
    set: FeatureSet,
    arm: &str,
) -> Result<FederatedRun> {
    let fed = cfg.fed_config(n_clients);
    fed.validate()?;
    let train_shards = partition_clients(
        &data.train.labels,
        n_clients,
        cfg.data.partition,
        seed::derive(cfg.seed, &[stream::PARTITION]),
    )?;
    let slices = test_slices(&data.test, n_clients, cfg.seed)?;

    // client-side: local autoencoders, then encode own train and test rows
    let work: Vec<(&ClientShard, &ClientShard)> = train_shards.iter().zip(&slices).collect();
    let prepared = map_clients(
        fed.execution,
        &work,
        |(shard, slice)| -> Result<(Encoders, ClientData, ClientData)> {
            let wrap = |e: Error| Error::Client {
                client_id: shard.client_id,
                source: Box::new(e),
            };
            let local = data.train.select(&shard.indices);
            let enc = train_encoders(
                &local,
                set,
                &cfg.autoencoder,
                cfg.seed,
                shard.client_id as u64,
                Execution::Sequential,
            )
            .map_err(wrap)?;
            let train = ClientData {
                client_id: shard.client_id,
                inputs: enc.inputs(&local, set).map_err(wrap)?,
                labels: local.labels.clone(),
            };
            let local_test = data.test.select(&slice.indices);
            let test = ClientData {
                client_id: slice.client_id,
                inputs: enc.inputs(&local_test, set).map_err(wrap)?,
                labels: local_test.labels,
            };
            Ok((enc, train, test))
        },
    );
    let mut encoders = Vec::with_capacity(n_clients);
    let mut clients = Vec::with_capacity(n_clients);
    let mut tests = Vec::with_capacity(n_clients);
    for r in prepared {
        let (e, tr, te) = r?;
        encoders.push(e);
        clients.push(tr);
        tests.push(te);
    }

    let outcome = run_federated(&fed, cnn_for(cfg, set)?, &clients, &tests)?;
    let mut cnn = outcome.model;
    cnn.quantize_f32();
    encoders.iter_mut().for_each(Encoders::quantize_f32);
    let metrics = evaluate(arm, &encoders, &cnn, &data.test, &slices, set)?;
    Ok(FederatedRun {
        encoders,
        cnn,
        rounds: outcome.rounds,
        metrics,
        total_steps: outcome.total_steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    FusionVsSingle,
    CentralizedVsFederated,
    ClientSweep,
}

impl ExperimentName {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::FusionVsSingle => "fusion-vs-single",
            ExperimentName::CentralizedVsFederated => "centralized-vs-federated",
            ExperimentName::ClientSweep => "client-sweep",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub name: String,
    pub seed: u64,
    pub metrics: Vec<ScopedMetrics>,
    pub rounds: Vec<RoundLogRecord>,
}

impl ExperimentResult {
    pub fn global(&self, arm: &str) -> Option<&ScopedMetrics> {
        self.metrics.iter().find(|m| m.arm == arm && m.scope == "global")
    }

    /// Fixed-width table of the global rows.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "arm", "acc", "prec", "recall", "f1", "fpr"
        );
        for m in self.metrics.iter().filter(|m| m.scope == "global") {
            let r = &m.report;
            s.push_str(&format!(
                "{:<16} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}\n",
                m.arm, r.accuracy, r.precision, r.recall, r.f1, r.fpr_binary
            ));
        }
        s
    }
}

pub fn run_experiment(name: ExperimentName, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let data = prepare_data(cfg)?;
    let mut metrics = Vec::new();
    let mut rounds = Vec::new();
    let context = |arm: &str| {
        let arm = arm.to_string();
        move |e: Error| Error::Training(format!("{} arm '{arm}' failed: {e}", name.as_str()))
    };
    match name {
        ExperimentName::FusionVsSingle => {
            for set in [FeatureSet::Fused, FeatureSet::Network, FeatureSet::Kernel] {
                let run = centralized_pipeline(cfg, &data, set, set.name()).map_err(context(set.name()))?;
                metrics.extend(run.metrics.into_iter().filter(|m| m.scope == "global"));
            }
        }
        ExperimentName::CentralizedVsFederated => {
            let central =
                centralized_pipeline(cfg, &data, FeatureSet::Fused, "centralized").map_err(context("centralized"))?;
            metrics.extend(central.metrics);
            let fed = federated_pipeline(cfg, &data, cfg.training.n_clients, FeatureSet::Fused, "federated")
                .map_err(context("federated"))?;
            metrics.extend(fed.metrics);
            rounds.extend(fed.rounds.iter().map(|r| RoundLogRecord::new("federated", r)));
        }
        ExperimentName::ClientSweep => {
            if cfg.sweep_clients.is_empty() {
                return Err(Error::Config("sweep_clients is empty".into()));
            }
            for &n in &cfg.sweep_clients {
                let arm = format!("clients-{n}");
                let fed = federated_pipeline(cfg, &data, n, FeatureSet::Fused, &arm).map_err(context(&arm))?;
                metrics.extend(fed.metrics.into_iter().filter(|m| m.scope == "global"));
                rounds.extend(fed.rounds.iter().map(|r| RoundLogRecord::new(&arm, r)));
            }
        }
    }
    Ok(ExperimentResult {
        name: name.as_str().to_string(),
        seed: cfg.seed,
        metrics,
        rounds,
    })
}

#[derive(Serialize)]
struct MetricsDocument<'a> {
    experiment: &'a str,
    seed: u64,
    results: &'a [ScopedMetrics],
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `config.toml`, `metrics.json`, `metrics.csv` and, when there are
/// rounds, `rounds.jsonl` into `out`.
pub fn write_outputs(
    out: &Path,
    cfg: &ExperimentConfig,
    name: &str,
    metrics: &[ScopedMetrics],
    rounds: &[RoundLogRecord],
) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
    let doc = MetricsDocument {
        experiment: name,
        seed: cfg.seed,
        results: metrics,
    };
    write_file(&out.join("metrics.json"), &serde_json::to_vec_pretty(&doc)?)?;
    let mut csv = Vec::new();
    write_metrics_csv(metrics, &mut csv)?;
    write_file(&out.join("metrics.csv"), &csv)?;
    if !rounds.is_empty() {
        let mut buf = Vec::new();
        for r in rounds {
            serde_json::to_writer(&mut buf, r)?;
            buf.write_all(b"\n").expect("write to Vec");
        }
        write_file(&out.join("rounds.jsonl"), &buf)?;
    }
    Ok(())
}

/// Layout of a `checkpoints/` directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: String,
    pub clients: usize,
    pub feature_set: FeatureSet,
}

fn ae_file(m: Modality, client: Option<usize>) -> String {
    match client {
        Some(c) => format!("ae_{}_client{c}.bin", m.tag()),
        None => format!("ae_{}.bin", m.tag()),
    }
}

pub fn save_checkpoints(dir: &Path, manifest: &Manifest, encoders: &[Encoders], cnn: Option<&CnnModel>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let per_client = encoders.len() > 1 || manifest.mode == "federated";
    for (i, enc) in encoders.iter().enumerate() {
        for m in [Modality::NetworkTraffic, Modality::KernelHpc] {
            if let Some(ae) = enc.get(m) {
                let name = ae_file(m, per_client.then_some(i));
                ae.to_checkpoint().save(&dir.join(name))?;
            }
        }
    }
    if let Some(cnn) = cnn {
        cnn.to_checkpoint().save(&dir.join("cnn.bin"))?;
    }
    write_file(&dir.join("manifest.json"), &serde_json::to_vec_pretty(manifest)?)
}

pub struct LoadedModels {
    pub manifest: Manifest,
    pub encoders: Vec<Encoders>,
    pub cnn: CnnModel,
}

pub fn load_checkpoints(dir: &Path) -> Result<LoadedModels> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    let per_client = manifest.mode == "federated";
    let owners = if per_client { manifest.clients } else { 1 };
    let mut encoders = Vec::with_capacity(owners);
    for i in 0..owners {
        let mut enc = Encoders::default();
        for &m in manifest.feature_set.modalities() {
            let path = dir.join(ae_file(m, per_client.then_some(i)));
            let ae = AutoencoderModel::from_checkpoint(&Checkpoint::load(&path)?)?;
            if ae.modality != m {
                return Err(Error::Checkpoint(format!(
                    "{} holds a {} model",
                    path.display(),
                    ae.modality.tag()
                )));
            }
            match m {
                Modality::NetworkTraffic => enc.network = Some(ae),
                Modality::KernelHpc => enc.kernel = Some(ae),
            }
        }
        encoders.push(enc);
    }
    let cnn = CnnModel::from_checkpoint(&Checkpoint::load(&dir.join("cnn.bin"))?)?;
    Ok(LoadedModels {
        manifest,
        encoders,
        cnn,
    })
}

/// Re-derives the test split from `cfg` and evaluates reloaded models.
pub fn evaluate_checkpoints(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<ScopedMetrics>> {
    let models = load_checkpoints(dir)?;
    let data = prepare_data(cfg)?;
    let slices = test_slices(&data.test, models.manifest.clients, cfg.seed)?;
    evaluate(
        &models.manifest.mode,
        &models.encoders,
        &models.cnn,
        &data.test,
        &slices,
        models.manifest.feature_set,
    )
}
