use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::indices_by_class;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// How training rows are spread over simulated charging stations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PartitionScheme {
    /// Per-class round-robin after a seeded shuffle.
    #[default]
    IidStratified,
    /// Per-class client proportions drawn from a symmetric Dirichlet.
    LabelSkew { alpha: f64 },
}

/// One station's slice of a dataset, as row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
    pub sample_count: usize,
}

/// Partitions row indices `0..labels.len()` into `n_clients` disjoint,
/// covering, non-empty shards. Indices inside each shard are ascending.
pub fn partition_clients(
    labels: &[usize],
    n_clients: usize,
    scheme: PartitionScheme,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if n_clients == 0 {
        return Err(Error::Partition("need at least one client".into()));
    }
    if n_clients > labels.len() {
        return Err(Error::Partition(format!(
            "{n_clients} clients but only {} samples",
            labels.len()
        )));
    }
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    match scheme {
        PartitionScheme::IidStratified => {
            // one running cursor across classes keeps totals within ±1
            let mut cursor = 0;
            for (class, mut idx) in indices_by_class(labels).into_iter().enumerate() {
                idx.shuffle(&mut seed::rng(seed, &[stream::PARTITION, class as u64]));
                for i in idx {
                    buckets[cursor % n_clients].push(i);
                    cursor += 1;
                }
            }
        }
        PartitionScheme::LabelSkew { alpha } => {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::Partition(format!("concentration {alpha} must be positive")));
            }
            let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Partition(e.to_string()))?;
            for (class, mut idx) in indices_by_class(labels).into_iter().enumerate() {
                let mut rng = seed::rng(seed, &[stream::PARTITION, class as u64]);
                idx.shuffle(&mut rng);
                let draws: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = draws.iter().sum();
                let n = idx.len();
                let mut start = 0;
                let mut acc = 0.0;
                for (c, w) in draws.iter().enumerate() {
                    acc += w;
                    // NaN (all draws underflowed) casts to 0 and clamps to `start`
                    let end = if c + 1 == n_clients {
                        n
                    } else {
                        ((acc / total) * n as f64).round() as usize
                    }
                    .clamp(start, n);
                    buckets[c].extend_from_slice(&idx[start..end]);
                    start = end;
                }
            }
            // every station keeps at least one row
            for c in 0..n_clients {
                if buckets[c].is_empty() {
                    let donor = (0..n_clients)
                        .max_by_key(|&j| (buckets[j].len(), usize::MAX - j))
                        .unwrap();
                    let moved = buckets[donor].pop().expect("donor is non-empty");
                    buckets[c].push(moved);
                }
            }
        }
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(client_id, mut indices)| {
            indices.sort_unstable();
            ClientShard {
                client_id,
                sample_count: indices.len(),
                indices,
            }
        })
        .collect())
}
