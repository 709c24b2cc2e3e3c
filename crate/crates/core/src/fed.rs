//! Federated training of the CNN across simulated charging stations.
//!
//! Each round the server broadcasts the global parameters, every
//! participating client trains a private copy on its own fused latents,
//! and the server replaces the global parameters with the sample-weighted
//! mean of the returned vectors:
//!
//! ```text
//! θ_{t+1} = Σ_i (n_i / Σ_j n_j) · θ_i
//! ```
//!
//! The server side ([`aggregate_weighted`]) only ever receives
//! [`ClientUpdate`]s: parameter vectors, sample counts and a scalar loss.

use std::time::Instant;

use serde::{Deserialize, Serialize};

#[cfg(test)]
use crate::classifier::CnnConfig;
use crate::classifier::{minibatch_steps, train_epochs, CnnModel, EpochStats, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, confusion, ConfusionMatrix, MetricsReport};
use crate::nn::OptimizerKind;
use crate::seed::{self, stream};
use crate::tensor::Tensor;

/// How independent per-client work is scheduled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Sequential,
    /// Rayon work-stealing pool; falls back to sequential when the
    /// `parallel` feature is disabled.
    #[default]
    Parallel,
}

/// Maps `f` over `items`, preserving order.
pub fn map_clients<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedConfig {
    pub n_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub participation: f64,
    pub optimizer: OptimizerKind,
    /// Set from the run seed, not read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub execution: Execution,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            n_clients: 10,
            rounds: 10,
            local_epochs: 1,
            batch: 32,
            lr: 1e-3,
            participation: 1.0,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 || self.rounds == 0 || self.local_epochs == 0 || self.batch == 0 {
            return Err(Error::Config(format!(
                "clients, rounds, local epochs and batch must be ≥ 1 (got {}, {}, {}, {})",
                self.n_clients, self.rounds, self.local_epochs, self.batch
            )));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Config(format!(
                "participation {} outside (0, 1]",
                self.participation
            )));
        }
        Ok(())
    }

    fn local_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.local_epochs,
            batch: self.batch,
            lr: self.lr,
            optimizer: self.optimizer,
        }
    }

    /// Clients drawn per round: `ceil(participation · n_clients)`.
    pub fn clients_per_round(&self) -> usize {
        ((self.participation * self.n_clients as f64).ceil() as usize).clamp(1, self.n_clients)
    }
}

/// A client's CNN inputs: fused latents and labels. Stays client-side.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub client_id: usize,
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl ClientData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Flat parameter vector in the model's canonical layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatParams(pub Vec<f64>);

impl FlatParams {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Everything a client sends to the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: FlatParams,
    pub sample_count: usize,
    pub local_loss: f64,
}

/// Trains a copy of `global` on one client's data. Returns `None` for an
/// empty shard, which callers leave out of aggregation.
pub fn local_update(
    global: &CnnModel,
    data: &ClientData,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Option<(ClientUpdate, Vec<EpochStats>)>> {
    if data.is_empty() {
        log::warn!("client {} has no training rows; skipped", data.client_id);
        return Ok(None);
    }
    let mut local = global.clone();
    let history = train_epochs(&mut local, &data.inputs, &data.labels, cfg, seed).map_err(|e| Error::Client {
        client_id: data.client_id,
        source: Box::new(e),
    })?;
    let update = ClientUpdate {
        client_id: data.client_id,
        params: FlatParams(local.flat_params()),
        sample_count: data.len(),
        local_loss: history.last().map_or(0.0, |h| h.loss),
    };
    Ok(Some((update, history)))
}

/// `n_i / Σ n` for each update, in the order given.
pub fn aggregation_weights(updates: &[ClientUpdate]) -> Result<Vec<f64>> {
    let total: usize = updates.iter().map(|u| u.sample_count).sum();
    if total == 0 {
        return Err(Error::Aggregation("updates carry zero samples in total".into()));
    }
    Ok(updates.iter().map(|u| u.sample_count as f64 / total as f64).collect())
}

/// Sample-weighted mean of client parameter vectors. Updates are summed in
/// `client_id` order, so the result does not depend on arrival order.
pub fn aggregate_weighted(updates: &[ClientUpdate]) -> Result<FlatParams> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Aggregation("no client updates".into()))?;
    let len = first.params.len();
    if let Some(bad) = updates.iter().find(|u| u.params.len() != len) {
        return Err(Error::Aggregation(format!(
            "client {} sent {} parameters, expected {len}",
            bad.client_id,
            bad.params.len()
        )));
    }
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);
    let total: usize = ordered.iter().map(|u| u.sample_count).sum();
    if total == 0 {
        return Err(Error::Aggregation("updates carry zero samples in total".into()));
    }
    let mut out = vec![0.0; len];
    for u in ordered {
        let w = u.sample_count as f64 / total as f64;
        for (acc, &v) in out.iter_mut().zip(&u.params.0) {
            *acc += w * v;
        }
    }
    Ok(FlatParams(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub clients: Vec<usize>,
    pub weights: Vec<f64>,
    /// Sample-weighted mean of the clients' final local epoch loss.
    pub loss: f64,
    pub metrics: MetricsReport,
    pub duration_ms: u64,
}

/// One JSON line of `rounds.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLogRecord {
    pub arm: String,
    pub round: usize,
    pub clients: Vec<usize>,
    pub weights: Vec<f64>,
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub duration_ms: u64,
}

impl RoundLogRecord {
    pub fn new(arm: &str, r: &RoundReport) -> Self {
        Self {
            arm: arm.to_string(),
            round: r.round,
            clients: r.clients.clone(),
            weights: r.weights.clone(),
            loss: r.loss,
            accuracy: r.metrics.accuracy,
            precision: r.metrics.precision,
            recall: r.metrics.recall,
            f1: r.metrics.f1,
            fpr: r.metrics.fpr_binary,
            duration_ms: r.duration_ms,
        }
    }
}

/// Pooled confusion matrix of `model` over every evaluation slice.
pub fn evaluate_slices(model: &CnnModel, slices: &[ClientData]) -> Result<Vec<ConfusionMatrix>> {
    slices
        .iter()
        .map(|s| {
            let pred = if s.is_empty() {
                Vec::new()
            } else {
                model.predict(&s.inputs)?
            };
            confusion(&s.labels, &pred)
        })
        .collect()
}

fn pooled_metrics(model: &CnnModel, test: &[ClientData]) -> Result<MetricsReport> {
    let total = evaluate_slices(model, test)?
        .into_iter()
        .fold(ConfusionMatrix::default(), |a, b| a + b);
    compute_metrics(&total)
}

#[derive(Debug, Clone)]
pub struct FederatedOutcome {
    pub model: CnnModel,
    pub rounds: Vec<RoundReport>,
    pub total_steps: usize,
}

/// Seed used by `client_id` in `round` for its minibatch order.
pub fn client_seed(seed: u64, client_id: usize, round: usize) -> u64 {
    seed::derive(seed, &[stream::CNN_SHUFFLE, client_id as u64, round as u64])
}

/// Clients taking part in `round`, ascending.
pub fn select_participants(cfg: &FedConfig, round: usize) -> Vec<usize> {
    let k = cfg.clients_per_round();
    if k == cfg.n_clients {
        return (0..cfg.n_clients).collect();
    }
    let mut rng = seed::rng(cfg.seed, &[stream::PARTICIPATION, round as u64]);
    let mut chosen = rand::seq::index::sample(&mut rng, cfg.n_clients, k).into_vec();
    chosen.sort_unstable();
    chosen
}

/// Runs `cfg.rounds` synchronous rounds starting from `initial`.
///
/// `clients[i]` must carry `client_id == i`. `test` holds evaluation slices
/// (already encoded by their owners); round metrics pool all of them.
pub fn run_federated(
    cfg: &FedConfig,
    initial: CnnModel,
    clients: &[ClientData],
    test: &[ClientData],
) -> Result<FederatedOutcome> {
    cfg.validate()?;
    if clients.len() != cfg.n_clients {
        return Err(Error::Config(format!(
            "{} client datasets for {} configured clients",
            clients.len(),
            cfg.n_clients
        )));
    }
    if let Some((i, c)) = clients.iter().enumerate().find(|(i, c)| c.client_id != *i) {
        return Err(Error::Config(format!("client slot {i} holds client {}", c.client_id)));
    }
    let local_cfg = cfg.local_train_config();
    let mut global = initial;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut total_steps = 0;
    for round in 0..cfg.rounds {
        let started = Instant::now();
        let participants: Vec<&ClientData> = select_participants(cfg, round)
            .into_iter()
            .map(|i| &clients[i])
            .collect();
        let results = map_clients(cfg.execution, &participants, |c| {
            local_update(&global, c, &local_cfg, client_seed(cfg.seed, c.client_id, round))
        });
        let mut updates = Vec::with_capacity(results.len());
        for r in results {
            if let Some((u, history)) = r? {
                total_steps += history.iter().map(|h| h.steps).sum::<usize>();
                updates.push(u);
            }
        }
        if updates.is_empty() {
            return Err(Error::Aggregation(format!(
                "round {round}: no client produced an update"
            )));
        }
        let weights = aggregation_weights(&updates)?;
        let loss = updates.iter().zip(&weights).map(|(u, w)| w * u.local_loss).sum();
        global.load_flat(&aggregate_weighted(&updates)?.0)?;
        let metrics = pooled_metrics(&global, test)?;
        log::info!(
            "round {round}: loss {loss:.4}, accuracy {:.2}%, fpr {:.2}%",
            metrics.accuracy,
            metrics.fpr_binary
        );
        rounds.push(RoundReport {
            round,
            clients: updates.iter().map(|u| u.client_id).collect(),
            weights,
            loss,
            metrics,
            duration_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok(FederatedOutcome {
        model: global,
        rounds,
        total_steps,
    })
}

#[derive(Debug, Clone)]
pub struct CentralizedOutcome {
    pub model: CnnModel,
    pub history: Vec<EpochStats>,
    pub metrics: MetricsReport,
    pub total_steps: usize,
}

/// Trains on pooled data for `rounds × local_epochs` epochs so the epoch
/// budget matches a federated run with the same config.
pub fn run_centralized(
    cfg: &FedConfig,
    initial: CnnModel,
    train: &ClientData,
    test: &[ClientData],
) -> Result<CentralizedOutcome> {
    cfg.validate()?;
    let train_cfg = TrainConfig {
        epochs: cfg.rounds * cfg.local_epochs,
        ..cfg.local_train_config()
    };
    let mut model = initial;
    let history = train_epochs(
        &mut model,
        &train.inputs,
        &train.labels,
        &train_cfg,
        centralized_seed(cfg.seed),
    )?;
    let metrics = pooled_metrics(&model, test)?;
    let total_steps = history.iter().map(|h| h.steps).sum();
    debug_assert_eq!(
        total_steps,
        minibatch_steps(train.len(), train_cfg.batch, train_cfg.epochs)
    );
    Ok(CentralizedOutcome {
        model,
        history,
        metrics,
        total_steps,
    })
}

pub fn centralized_seed(seed: u64) -> u64 {
    seed::derive(seed, &[stream::CNN_SHUFFLE, u64::MAX])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn update(id: usize, n: usize, params: Vec<f64>) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            params: FlatParams(params),
            sample_count: n,
            local_loss: 0.0,
        }
    }

    #[test]
    fn identical_updates_are_a_fixed_point() {
        let u = vec![update(0, 3, vec![0.5, -1.0]), update(1, 7, vec![0.5, -1.0])];
        assert_eq!(aggregate_weighted(&u).unwrap().0, vec![0.5, -1.0]);
    }

    #[test]
    fn weighted_mean() {
        let u = vec![update(0, 1, vec![0.0, 0.0]), update(1, 3, vec![2.0, 2.0])];
        assert_eq!(aggregate_weighted(&u).unwrap().0, vec![1.5, 1.5]);
        assert_eq!(aggregation_weights(&u).unwrap(), vec![0.25, 0.75]);
    }

    #[test]
    fn aggregation_errors() {
        assert!(matches!(aggregate_weighted(&[]), Err(Error::Aggregation(_))));
        let zero = vec![update(0, 0, vec![1.0]), update(1, 0, vec![2.0])];
        assert!(matches!(aggregate_weighted(&zero), Err(Error::Aggregation(_))));
        let ragged = vec![update(0, 1, vec![1.0]), update(1, 1, vec![2.0, 3.0])];
        assert!(matches!(aggregate_weighted(&ragged), Err(Error::Aggregation(_))));
    }

    #[test]
    fn participation_draw() {
        let cfg = FedConfig {
            n_clients: 7,
            participation: 0.5,
            seed: 3,
            ..FedConfig::default()
        };
        assert_eq!(cfg.clients_per_round(), 4);
        for round in 0..5 {
            let p = select_participants(&cfg, round);
            assert_eq!(p.len(), 4);
            assert!(p.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(p, select_participants(&cfg, round));
        }
        let full = FedConfig {
            n_clients: 4,
            ..FedConfig::default()
        };
        assert_eq!(select_participants(&full, 0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn config_validation() {
        assert!(FedConfig::default().validate().is_ok());
        for bad in [
            FedConfig {
                rounds: 0,
                ..FedConfig::default()
            },
            FedConfig {
                participation: 0.0,
                ..FedConfig::default()
            },
            FedConfig {
                participation: 1.5,
                ..FedConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn empty_shard_is_skipped() {
        let model = CnnModel::new(CnnConfig::default(), 0).unwrap();
        let empty = ClientData {
            client_id: 4,
            inputs: Tensor::zeros(&[0, 64]),
            labels: vec![],
        };
        assert!(local_update(&model, &empty, &TrainConfig::default(), 0)
            .unwrap()
            .is_none());
    }

    #[test]
    fn map_clients_preserves_order() {
        let items: Vec<usize> = (0..50).collect();
        let seq = map_clients(Execution::Sequential, &items, |x| x * x);
        let par = map_clients(Execution::Parallel, &items, |x| x * x);
        assert_eq!(seq, par);
    }
}
