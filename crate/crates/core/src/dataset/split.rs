use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.64,
            val: 0.16,
            test: 0.20,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(DatasetError::InvalidSplit("fractions must be non-negative".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidSplit(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

fn members_by_class(labels: &[u16]) -> BTreeMap<u16, Vec<usize>> {
    let mut by_class: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    by_class
}

// Absorbs representation error such as 0.29 * 100 = 28.999999999999996.
fn floor_share(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Stratified seeded split: per class, shuffle then cut; train and val round
/// down, the remainder goes to test.
pub fn split(labels: &[u16], fractions: SplitFractions, seed: u64) -> Result<Vec<Split>, DatasetError> {
    fractions.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Split::Test; labels.len()];
    for (_, mut members) in members_by_class(labels) {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = floor_share(fractions.train, n);
        let n_val = floor_share(fractions.val, n).min(n - n_train);
        for (pos, &i) in members.iter().enumerate() {
            out[i] = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

/// Stratified fold ids in `0..k`. Classes are dealt round-robin into folds with
/// a running position, so fold sizes differ by at most one overall and per class.
pub fn kfold(labels: &[u16], k: usize, seed: u64) -> Result<Vec<usize>, DatasetError> {
    if k < 2 {
        return Err(DatasetError::InvalidSplit("k must be >= 2".into()));
    }
    let by_class = members_by_class(labels);
    if let Some((&class, members)) = by_class.iter().find(|(_, m)| m.len() < k) {
        return Err(DatasetError::TooFewRecords {
            class,
            count: members.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; labels.len()];
    let mut position = 0usize;
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        for i in members {
            out[i] = position % k;
            position += 1;
        }
    }
    Ok(out)
}

/// `index split` lines, one per record.
pub fn split_manifest(assignment: &[Split]) -> String {
    let mut s = String::new();
    for (i, a) in assignment.iter().enumerate() {
        let _ = writeln!(s, "{i} {}", a.as_str());
    }
    s
}
