mod common;

use common::{check_folds, check_split};
use did::dataset::{balance, kfold, read_matrices_from, split, write_matrices_to, BalanceMode, MatrixFile, SplitFractions};
use did::matrix::FlowMatrix;
use proptest::prelude::*;

fn labels_10000_100() -> Vec<u16> {
    let mut labels = vec![0u16; 10_000];
    labels.extend(std::iter::repeat_n(1u16, 100));
    labels
}

#[test]
fn binary_balance_keeps_every_attack() {
    let labels = labels_10000_100();
    let keep = balance(&labels, BalanceMode::Binary, 7).unwrap();
    let benign = keep.iter().filter(|&&i| labels[i] == 0).count();
    let attack = keep.iter().filter(|&&i| labels[i] == 1).count();
    assert_eq!((benign, attack), (100, 100));
    assert!(keep.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn multiclass_balance_cuts_to_smallest() {
    let mut labels = vec![0u16; 500];
    labels.extend(std::iter::repeat_n(3u16, 40));
    labels.extend(std::iter::repeat_n(5u16, 90));
    let keep = balance(&labels, BalanceMode::Multiclass, 1).unwrap();
    for c in [0, 3, 5] {
        assert_eq!(keep.iter().filter(|&&i| labels[i] == c).count(), 40);
    }
}

#[test]
fn single_class_is_rejected() {
    assert!(balance(&[0, 0, 0], BalanceMode::Binary, 0).is_err());
    assert!(balance(&[2, 2], BalanceMode::Multiclass, 0).is_err());
}

#[test]
fn split_and_folds_on_balanced_set() {
    let labels = labels_10000_100();
    let keep = balance(&labels, BalanceMode::Binary, 3).unwrap();
    let kept: Vec<u16> = keep.iter().map(|&i| labels[i]).collect();
    let parts = split(&kept, SplitFractions::default(), 3).unwrap();
    check_split(&kept, &parts, true).unwrap();
    check_folds(&kept, &kfold(&kept, 10, 3).unwrap(), 10).unwrap();
}

#[test]
fn kfold_needs_k_per_class() {
    assert!(kfold(&[0, 0, 0, 1, 1], 3, 0).is_err());
    assert!(kfold(&[0, 1], 1, 0).is_err());
}

fn matrix_file() -> impl Strategy<Value = MatrixFile> {
    (1usize..5, 20usize..40, 0usize..6, any::<bool>()).prop_flat_map(|(p, b, n, meta)| {
        let cells = (1 + p) * (1 + b);
        let record = (
            prop::collection::vec(0.0f32..=1.0, cells),
            prop::option::of(0u16..7),
            "[a-z0-9:.>-]{0,24}",
        );
        prop::collection::vec(record, n).prop_map(move |records| {
            let records = records
                .into_iter()
                .map(|(values, label, flow_id)| FlowMatrix {
                    rows: 1 + p,
                    cols: 1 + b,
                    values,
                    label,
                    flow_id,
                })
                .collect();
            let mut f = MatrixFile::new(p, b, records);
            if meta {
                f.metadata = Some("seed=1\nmax_packets=3".into());
            }
            f
        })
    })
}

proptest! {
    #[test]
    fn didm_round_trips(file in matrix_file()) {
        let mut bytes = Vec::new();
        write_matrices_to(&mut bytes, &file).unwrap();
        let back = read_matrices_from(&bytes[..]).unwrap();
        prop_assert_eq!(&back, &file);
        let mut again = Vec::new();
        write_matrices_to(&mut again, &back).unwrap();
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn split_partitions_by_class(
        counts in prop::collection::vec(0usize..300, 1..5),
        seed in any::<u64>(),
    ) {
        let labels: Vec<u16> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c as u16, n))
            .collect();
        let parts = split(&labels, SplitFractions::default(), seed).unwrap();
        prop_assert_eq!(parts.len(), labels.len());
        let checked = check_split(&labels, &parts, false);
        prop_assert!(checked.is_ok(), "{:?}", checked);
    }

    #[test]
    fn folds_are_stratified(
        counts in prop::collection::vec(10usize..200, 1..5),
        k in 2usize..11,
        seed in any::<u64>(),
    ) {
        let labels: Vec<u16> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c as u16, n))
            .collect();
        let folds = kfold(&labels, k, seed).unwrap();
        let checked = check_folds(&labels, &folds, k);
        prop_assert!(checked.is_ok(), "{:?}", checked);
    }

    #[test]
    fn balance_is_a_subset_with_equal_sides(
        benign in 1usize..400,
        attacks in prop::collection::vec(1usize..100, 1..4),
        seed in any::<u64>(),
    ) {
        let mut labels = vec![0u16; benign];
        for (c, &n) in attacks.iter().enumerate() {
            labels.extend(std::iter::repeat_n(c as u16 + 1, n));
        }
        let keep = balance(&labels, BalanceMode::Binary, seed).unwrap();
        let attack_total: usize = attacks.iter().sum();
        let kept_attack = keep.iter().filter(|&&i| labels[i] > 0).count();
        let kept_benign = keep.len() - kept_attack;
        prop_assert_eq!(kept_attack, attack_total);
        prop_assert_eq!(kept_benign, benign.min(attack_total));
        prop_assert_eq!(keep, balance(&labels, BalanceMode::Binary, seed).unwrap());
    }
}
