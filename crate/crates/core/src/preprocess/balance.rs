//! Class-balance utilities: stratified splitting and SMOTE oversampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Column, Dataset};
use crate::error::{Error, Result};

// ── Stratified split ────────────────────────────────────────────────────

/// Splits row indices so every class contributes floor(fraction * count)
/// rows to the first side. Rows are shuffled per class with a seeded
/// generator; both outputs come back sorted ascending. Every class must
/// have at least two rows so neither side can lose a class entirely.
pub fn stratified_split_indices(
    labels: &[usize],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, rows) in per_class.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(Error::Data(format!(
                "class {class} has a single row; stratified split needs at least two"
            )));
        }
        let mut shuffled = rows.clone();
        // Fisher-Yates, driven by the one generator in ascending class order
        // so the draw sequence is reproducible.
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        let take = (train_fraction * rows.len() as f64).floor() as usize;
        train.extend_from_slice(&shuffled[..take]);
        test.extend_from_slice(&shuffled[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified split of a dataset into (train, test).
pub fn stratified_split(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (ti, vi) = stratified_split_indices(&ds.labels, train_fraction, seed)?;
    let mut train = ds.take_rows(&ti);
    let mut test = ds.take_rows(&vi);
    train.log(format!(
        "split: fraction={train_fraction} seed={seed} side=train rows={}",
        ti.len()
    ));
    test.log(format!(
        "split: fraction={train_fraction} seed={seed} side=test rows={}",
        vi.len()
    ));
    Ok((train, test))
}

// ── SMOTE ───────────────────────────────────────────────────────────────

/// Where one synthetic row came from: interpolation between rows `base` and
/// `neighbor` (dataset row indices before oversampling) at `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoteOrigin {
    pub class: usize,
    pub base: usize,
    pub neighbor: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SmoteOutcome {
    /// (class id, synthetic rows added).
    pub added: Vec<(usize, usize)>,
    /// Classes skipped because a single row has no neighbors.
    pub skipped_singletons: Vec<usize>,
    /// Provenance per synthetic row, in append order.
    pub origins: Vec<SmoteOrigin>,
}

/// Oversamples minority classes by interpolating between a row and one of
/// its k nearest same-class neighbors (Euclidean distance over all feature
/// columns): new = base + lambda * (neighbor - base), lambda uniform in
/// [0, 1). Classes are topped up to floor(target_ratio * majority count);
/// classes already at or above the target are untouched, so the dataset
/// never shrinks. Requires a fully numeric dataset.
pub fn smote(
    ds: &mut Dataset,
    k_neighbors: usize,
    target_ratio: f64,
    seed: u64,
) -> Result<SmoteOutcome> {
    if k_neighbors == 0 {
        return Err(Error::Config("smote needs at least one neighbor".into()));
    }
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::Config(format!(
            "smote target ratio must lie in (0, 1], got {target_ratio}"
        )));
    }
    let matrix = ds.matrix()?;
    let counts = ds.class_counts();
    let majority = counts.iter().copied().max().unwrap_or(0);
    let target = (target_ratio * majority as f64).floor() as usize;

    let mut outcome = SmoteOutcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut new_rows: Vec<Vec<f64>> = Vec::new();
    let mut new_labels: Vec<usize> = Vec::new();

    for (class, &count) in counts.iter().enumerate() {
        if count == 0 || count >= target {
            continue;
        }
        if count == 1 {
            outcome.skipped_singletons.push(class);
            continue;
        }
        let rows: Vec<usize> = (0..ds.rows()).filter(|&i| ds.labels[i] == class).collect();
        // k nearest same-class neighbors per row, by (distance, index).
        let neighbors: Vec<Vec<usize>> = rows
            .iter()
            .map(|&a| {
                let mut dists: Vec<(f64, usize)> = rows
                    .iter()
                    .filter(|&&b| b != a)
                    .map(|&b| {
                        let d = matrix
                            .row(a)
                            .iter()
                            .zip(matrix.row(b))
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>();
                        (d, b)
                    })
                    .collect();
                dists.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
                dists.truncate(k_neighbors);
                dists.into_iter().map(|(_, b)| b).collect()
            })
            .collect();
        let need = target - count;
        for _ in 0..need {
            // Draw order (base, neighbor, lambda) is part of the format:
            // reruns with one seed must reproduce rows exactly.
            let bi = rng.random_range(0..rows.len());
            let base = rows[bi];
            let nn = &neighbors[bi];
            let neighbor = nn[rng.random_range(0..nn.len())];
            let lambda = rng.random::<f64>();
            let row: Vec<f64> = matrix
                .row(base)
                .iter()
                .zip(matrix.row(neighbor))
                .map(|(x, y)| x + lambda * (y - x))
                .collect();
            new_rows.push(row);
            new_labels.push(class);
            outcome.origins.push(SmoteOrigin {
                class,
                base,
                neighbor,
                lambda,
            });
        }
        outcome.added.push((class, need));
    }

    for (ri, row) in new_rows.iter().enumerate() {
        for (ci, col) in ds.columns.iter_mut().enumerate() {
            match col {
                Column::Continuous { values, .. } | Column::Indicator { values, .. } => {
                    values.push(row[ci])
                }
                Column::Categorical { .. } => unreachable!("matrix() rejected categoricals"),
            }
        }
        ds.labels.push(new_labels[ri]);
        ds.synthetic.push(true);
    }
    for &(class, n) in &outcome.added {
        ds.log(format!(
            "smote: class '{}' +{n} synthetic rows (k={k_neighbors}, ratio={target_ratio}, seed={seed})",
            ds.class_names[class]
        ));
    }
    for &class in &outcome.skipped_singletons {
        ds.log(format!(
            "smote: class '{}' skipped, single row has no neighbors",
            ds.class_names[class]
        ));
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn numeric_dataset(values: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Dataset {
        let cols = values[0].len();
        let columns = (0..cols)
            .map(|j| Column::Continuous {
                name: format!("f{j}"),
                values: values.iter().map(|r| r[j]).collect(),
            })
            .collect();
        let synthetic = vec![false; labels.len()];
        Dataset {
            columns,
            synthetic,
            labels,
            class_names: (0..classes).map(|c| format!("c{c}")).collect(),
            provenance: Vec::new(),
        }
    }

    #[test]
    fn split_takes_floor_per_class_and_sorts_outputs() {
        // 10 of class 0, 5 of class 1 at 0.8 -> 8 + 4 train rows.
        let labels: Vec<usize> = (0..15).map(|i| usize::from(i >= 10)).collect();
        let (train, test) = stratified_split_indices(&labels, 0.8, 7).unwrap();
        assert_eq!(train.len(), 12);
        assert_eq!(test.len(), 3);
        assert!(train.windows(2).all(|w| w[0] < w[1]));
        assert!(test.windows(2).all(|w| w[0] < w[1]));
        let train_c1 = train.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(train_c1, 4);
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let a = stratified_split_indices(&labels, 0.75, 1).unwrap();
        let b = stratified_split_indices(&labels, 0.75, 1).unwrap();
        let c = stratified_split_indices(&labels, 0.75, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_singleton_class_and_bad_fraction() {
        let labels = vec![0, 0, 1];
        assert!(stratified_split_indices(&labels, 0.8, 0).is_err());
        let ok = vec![0, 0, 1, 1];
        assert!(stratified_split_indices(&ok, 0.0, 0).is_err());
        assert!(stratified_split_indices(&ok, 1.0, 0).is_err());
    }

    #[test]
    fn split_partitions_all_rows_exactly_once() {
        let labels: Vec<usize> = (0..53).map(|i| i % 4).collect();
        let (train, test) = stratified_split_indices(&labels, 0.8, 3).unwrap();
        let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..53).collect::<Vec<_>>());
    }

    #[test]
    fn smote_tops_up_minority_to_target() {
        // Majority 20, minority 4, ratio 0.5 -> minority becomes 10.
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            values.push(vec![i as f64, 0.0]);
            labels.push(0);
        }
        for i in 0..4 {
            values.push(vec![100.0 + i as f64, 1.0]);
            labels.push(1);
        }
        let mut ds = numeric_dataset(values, labels, 2);
        let outcome = smote(&mut ds, 3, 0.5, 11).unwrap();
        assert_eq!(ds.class_counts(), vec![20, 10]);
        assert_eq!(outcome.added, vec![(1, 6)]);
        assert_eq!(outcome.origins.len(), 6);
        assert_eq!(ds.synthetic.iter().filter(|&&s| s).count(), 6);
    }

    #[test]
    fn smote_rows_interpolate_between_base_and_neighbor() {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            values.push(vec![i as f64 * 10.0]);
            labels.push(0);
        }
        values.push(vec![0.0]);
        values.push(vec![1.0]);
        labels.push(1);
        labels.push(1);
        let mut ds = numeric_dataset(values.clone(), labels, 2);
        let outcome = smote(&mut ds, 5, 0.5, 3).unwrap();
        for (row_offset, origin) in outcome.origins.iter().enumerate() {
            let base = values[origin.base][0];
            let neighbor = values[origin.neighbor][0];
            let expected = base + origin.lambda * (neighbor - base);
            let col = ds.columns[0].numeric_values().unwrap();
            let got = col[12 + row_offset];
            assert_eq!(got, expected);
            assert!((0.0..1.0).contains(&origin.lambda));
        }
    }

    #[test]
    fn smote_skips_singleton_class_with_warning() {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..9 {
            values.push(vec![i as f64]);
            labels.push(0);
        }
        values.push(vec![50.0]);
        labels.push(1);
        let mut ds = numeric_dataset(values, labels, 2);
        let outcome = smote(&mut ds, 5, 0.5, 3).unwrap();
        assert_eq!(outcome.skipped_singletons, vec![1]);
        assert_eq!(ds.class_counts(), vec![9, 1]);
        assert!(ds.provenance.iter().any(|p| p.contains("skipped")));
    }

    #[test]
    fn smote_never_shrinks_a_class() {
        // Class 1 already above target: untouched.
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            values.push(vec![i as f64]);
            labels.push(0);
        }
        for i in 0..8 {
            values.push(vec![100.0 + i as f64]);
            labels.push(1);
        }
        let mut ds = numeric_dataset(values, labels, 2);
        smote(&mut ds, 5, 0.5, 3).unwrap();
        assert_eq!(ds.class_counts(), vec![10, 8]);
    }

    #[test]
    fn smote_is_deterministic_per_seed() {
        let build = || {
            let mut values = Vec::new();
            let mut labels = Vec::new();
            for i in 0..30 {
                values.push(vec![i as f64, (i * i) as f64]);
                labels.push(0);
            }
            for i in 0..5 {
                values.push(vec![200.0 + i as f64, i as f64]);
                labels.push(1);
            }
            numeric_dataset(values, labels, 2)
        };
        let mut a = build();
        let mut b = build();
        let mut c = build();
        smote(&mut a, 5, 0.9, 4).unwrap();
        smote(&mut b, 5, 0.9, 4).unwrap();
        smote(&mut c, 5, 0.9, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn smote_lambda_bounds_hold(seed in 0u64..500) {
            let mut values = Vec::new();
            let mut labels = Vec::new();
            for i in 0..12 {
                values.push(vec![i as f64]);
                labels.push(0);
            }
            for i in 0..3 {
                values.push(vec![50.0 + i as f64]);
                labels.push(1);
            }
            let mut ds = numeric_dataset(values, labels, 2);
            let outcome = smote(&mut ds, 2, 0.75, seed).unwrap();
            for o in &outcome.origins {
                prop_assert!(o.lambda >= 0.0 && o.lambda < 1.0);
                prop_assert!(o.base != o.neighbor);
            }
            // Synthetic values stay inside the minority class hull in 1-D.
            let col = ds.columns[0].numeric_values().unwrap();
            for (i, &v) in col.iter().enumerate().skip(15) {
                prop_assert!(ds.synthetic[i]);
                prop_assert!((50.0..=52.0).contains(&v));
            }
        }
    }
}
