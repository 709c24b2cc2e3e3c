use rand::seq::SliceRandom;

use super::{indices_by_class, ModalityDataset, PairedDataset, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::NUM_CLASSES;

/// Builds multimodal samples by matching rows of the same class.
///
/// Per class, both modalities are shuffled under `seed` and matched
/// positionally; `min(count_net, count_kernel, cap)` pairs are kept, so no
/// row is used twice. Output rows are grouped by class.
pub fn pair_modalities(
    net: &ModalityDataset,
    kernel: &ModalityDataset,
    per_class_cap: Option<usize>,
    seed: u64,
) -> Result<PairedDataset> {
    let net_by_class = indices_by_class(&net.labels);
    let kernel_by_class = indices_by_class(&kernel.labels);
    let mut net_rows = Vec::new();
    let mut kernel_rows = Vec::new();
    let mut labels = Vec::new();
    for class in 0..NUM_CLASSES {
        let (mut a, mut b) = (net_by_class[class].clone(), kernel_by_class[class].clone());
        match (a.is_empty(), b.is_empty()) {
            (true, true) => continue,
            (true, false) | (false, true) => {
                return Err(Error::Pairing(format!(
                    "class {} present in only one modality (network {}, kernel {})",
                    CLASS_NAMES[class],
                    a.len(),
                    b.len()
                )))
            }
            _ => {}
        }
        a.shuffle(&mut seed::rng(seed, &[stream::PAIRING, class as u64, 0]));
        b.shuffle(&mut seed::rng(seed, &[stream::PAIRING, class as u64, 1]));
        let n = a.len().min(b.len()).min(per_class_cap.unwrap_or(usize::MAX));
        net_rows.extend_from_slice(&a[..n]);
        kernel_rows.extend_from_slice(&b[..n]);
        labels.extend(std::iter::repeat_n(class, n));
    }
    Ok(PairedDataset {
        net_features: net.features.select_rows(&net_rows),
        kernel_features: kernel.features.select_rows(&kernel_rows),
        labels,
        pairing_seed: seed,
    })
}

/// Stratified train/test split. Per class, `round(test_fraction · n_c)`
/// samples (clamped to leave at least one on each side) go to the test
/// split. Both outputs keep the original row order.
pub fn split(ds: &PairedDataset, test_fraction: f64, seed: u64) -> Result<(PairedDataset, PairedDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class, mut idx) in indices_by_class(&ds.labels).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Split(format!(
                "class {} has {} sample(s); need at least 2",
                CLASS_NAMES[class],
                idx.len()
            )));
        }
        idx.shuffle(&mut seed::rng(seed, &[stream::SPLIT, class as u64]));
        let n_test = ((test_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        test_idx.extend_from_slice(&idx[..n_test]);
        train_idx.extend_from_slice(&idx[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.select(&train_idx), ds.select(&test_idx)))
}
