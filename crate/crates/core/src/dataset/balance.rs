use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalanceMode {
    /// Every attack kept, benign (class 0) subsampled to the attack total.
    Binary,
    /// Every class subsampled to the smallest class count.
    Multiclass,
}

/// Returns the retained record indices in ascending (original) order.
///
/// Sampling is uniform without replacement, driven by `seed`.
pub fn balance(labels: &[u16], mode: BalanceMode, seed: u64) -> Result<Vec<usize>, DatasetError> {
    let mut by_class: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(DatasetError::SingleClassDataset(labels.first().copied().unwrap_or(0)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(labels.len());
    match mode {
        BalanceMode::Binary => {
            let benign = by_class.remove(&0).unwrap_or_default();
            let attack_total: usize = by_class.values().map(Vec::len).sum();
            if benign.is_empty() {
                return Err(DatasetError::SingleClassDataset(*by_class.keys().next().unwrap()));
            }
            if benign.len() < attack_total {
                log::warn!(
                    "only {} benign flows for {} attack flows; keeping all benign",
                    benign.len(),
                    attack_total
                );
            }
            keep.extend(by_class.into_values().flatten());
            keep.extend(sample(&benign, attack_total, &mut rng));
        }
        BalanceMode::Multiclass => {
            let target = by_class.values().map(Vec::len).min().unwrap();
            for members in by_class.values() {
                keep.extend(sample(members, target, &mut rng));
            }
        }
    }
    keep.sort_unstable();
    Ok(keep)
}

fn sample(members: &[usize], amount: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if amount >= members.len() {
        return members.to_vec();
    }
    rand::seq::index::sample(rng, members.len(), amount)
        .into_iter()
        .map(|i| members[i])
        .collect()
}
