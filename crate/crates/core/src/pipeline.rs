//! End-to-end data preparation: raw flow records in, model-ready window
//! batches out.
//!
//! The stages run in a fixed order: deduplicate, time-sort, stratified
//! train/test split, fit the tabular transform on the training side and
//! replay it on the test side, oversample training minorities, then cut
//! sliding windows and build one traffic graph per window. Everything is
//! seeded, so a rerun with the same inputs is bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{build_graph, normalize_adjacency, GraphFeatureConfig, NODE_FEATURE_DIM};
use crate::ingest::{deduplicate, FlowRecord};
use crate::model::WindowInput;
use crate::preprocess::{
    apply_transform, fit_transform, make_windows, smote, stratified_split_indices,
    FittedTransform, Matrix, PipelineOptions, SmoteOrigin,
};
use crate::schema::SchemaSpec;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Fraction of records assigned to the training side, stratified by class.
    pub train_fraction: f64,
    /// Events per window.
    pub window_len: usize,
    /// Events between consecutive window starts.
    pub stride: usize,
    /// Neighbors considered per oversampled row.
    pub smote_k: usize,
    /// Minority classes are topped up to this fraction of the majority count.
    pub smote_ratio: f64,
    /// Treat adjacency as undirected for normalization.
    pub symmetrize: bool,
    pub seed: u64,
    pub transform: PipelineOptions,
    pub graph: GraphFeatureConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train_fraction: 0.8,
            window_len: 50,
            stride: 5,
            smote_k: 5,
            smote_ratio: 0.5,
            symmetrize: true,
            seed: 42,
            transform: PipelineOptions::default(),
            graph: GraphFeatureConfig::default(),
        }
    }
}

/// One side of the split, ready to feed the model.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub windows: Vec<WindowInput>,
    /// Class index per window (label of the window's final event).
    pub labels: Vec<usize>,
    /// True when any event in the window was synthesized by oversampling.
    pub synthetic: Vec<bool>,
}

/// Output of the full preparation pipeline.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub class_names: Vec<String>,
    pub transform: FittedTransform,
    /// Width of each window's per-event feature rows.
    pub tabular_dim: usize,
    /// Width of each graph node's feature row.
    pub node_dim: usize,
    pub train: PreparedSplit,
    pub test: PreparedSplit,
    pub log: Vec<String>,
}

/// Synthesizes stand-in flow records for oversampled rows so windowing and
/// graph construction see a coherent event stream. Raw continuous columns
/// are interpolated with the same coefficient that produced the synthetic
/// feature row; the timestamp, endpoints, and categorical columns come from
/// the base record, since fractional entities do not exist.
fn shadow_records(
    originals: &[FlowRecord],
    origins: &[SmoteOrigin],
    class_names: &[String],
) -> Vec<FlowRecord> {
    origins
        .iter()
        .map(|o| {
            let base = &originals[o.base];
            let neighbor = &originals[o.neighbor];
            let continuous = base
                .continuous
                .iter()
                .zip(&neighbor.continuous)
                .map(|(b, n)| b + o.lambda * (n - b))
                .collect();
            FlowRecord {
                timestamp: base.timestamp,
                src: base.src.clone(),
                dst: base.dst.clone(),
                label: class_names[o.class].clone(),
                continuous,
                categorical: base.categorical.clone(),
            }
        })
        .collect()
}

/// Cuts windows over time-ordered records and assembles the model input for
/// each: the window's traffic graph, normalized adjacency, per-event
/// endpoint indices, and per-event transformed feature rows.
///
/// `matrix_rows[i]` names the transformed-matrix row belonging to
/// `records[i]`; the two sequences must already share one time order.
fn assemble_windows(
    records: &[FlowRecord],
    matrix: &Matrix,
    matrix_rows: &[usize],
    labels: &[usize],
    synthetic: &[bool],
    schema: &SchemaSpec,
    config: &PipelineConfig,
    log: &mut Vec<String>,
    side: &str,
) -> Result<PreparedSplit> {
    let timestamps: Vec<f64> = records.iter().map(|r| r.timestamp).collect();
    let set = make_windows(&timestamps, labels, config.window_len, config.stride)?;
    if set.is_empty() {
        log.push(format!(
            "{side}: {} records are fewer than one {}-event window",
            records.len(),
            config.window_len
        ));
        return Ok(PreparedSplit {
            windows: Vec::new(),
            labels: Vec::new(),
            synthetic: Vec::new(),
        });
    }
    let mut windows = Vec::with_capacity(set.len());
    let mut flags = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        let range = set.window(i);
        let slice = &records[range.clone()];
        let graph = build_graph(slice, schema, &config.graph)?;
        let n = graph.node_count();
        let adjacency = normalize_adjacency(&graph.adjacency, n, config.symmetrize)?;
        let steps = slice
            .iter()
            .map(|r| {
                let src = graph.node_index(&r.src).expect("endpoint is a node");
                let dst = graph.node_index(&r.dst).expect("endpoint is a node");
                (src, dst)
            })
            .collect();
        let mut tabular = Vec::with_capacity(config.window_len * matrix.cols);
        for k in range.clone() {
            tabular.extend_from_slice(matrix.row(matrix_rows[k]));
        }
        windows.push(WindowInput {
            n_nodes: n,
            adjacency: adjacency.values,
            node_x: graph.x.clone(),
            steps,
            tabular,
        });
        flags.push(range.clone().any(|k| synthetic[k]));
    }
    log.push(format!(
        "{side}: {} windows of {} events at stride {} ({} with synthetic events)",
        set.len(),
        config.window_len,
        config.stride,
        flags.iter().filter(|&&f| f).count()
    ));
    Ok(PreparedSplit {
        windows,
        labels: set.labels,
        synthetic: flags,
    })
}

/// Runs the whole preparation pipeline on parsed records.
pub fn prepare(
    records: &[FlowRecord],
    schema: &SchemaSpec,
    config: &PipelineConfig,
) -> Result<PreparedData> {
    if records.is_empty() {
        return Err(Error::Data("no records to prepare".into()));
    }
    let mut log = Vec::new();

    let (mut clean, dropped) = deduplicate(records.to_vec());
    log.push(format!(
        "dedup: {} records in, {dropped} exact duplicates removed",
        records.len()
    ));
    clean.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));

    // Stratified split over the time-sorted records. Index lists come back
    // ascending, so each side keeps its time order.
    let class_names: Vec<String> = {
        let mut names: Vec<String> = clean.iter().map(|r| r.label.clone()).collect();
        names.sort();
        names.dedup();
        names
    };
    let label_ids: Vec<usize> = clean
        .iter()
        .map(|r| class_names.iter().position(|c| *c == r.label).unwrap())
        .collect();
    let (train_idx, test_idx) =
        stratified_split_indices(&label_ids, config.train_fraction, config.seed)?;
    log.push(format!(
        "split: {} train / {} test records (fraction {}, seed {})",
        train_idx.len(),
        test_idx.len(),
        config.train_fraction,
        config.seed
    ));
    let train_records: Vec<FlowRecord> = train_idx.iter().map(|&i| clean[i].clone()).collect();
    let test_records: Vec<FlowRecord> = test_idx.iter().map(|&i| clean[i].clone()).collect();

    // Fit on train only; the test side replays the frozen transform.
    let (fitted, mut train_ds) = fit_transform(&train_records, schema, &config.transform)?;
    if fitted.class_names != class_names {
        return Err(Error::Data(
            "training split lost a class; lower the split fraction or add data".into(),
        ));
    }
    let outcome = smote(&mut train_ds, config.smote_k, config.smote_ratio, config.seed)?;
    for (class, added) in &outcome.added {
        log.push(format!(
            "smote: class '{}' +{added} synthetic rows",
            class_names[*class]
        ));
    }
    for class in &outcome.skipped_singletons {
        log.push(format!(
            "smote: class '{}' skipped (single row)",
            class_names[*class]
        ));
    }

    // The oversampled matrix rows correspond to shadow records appended
    // after the originals; one permutation re-sorts both into time order.
    let shadows = shadow_records(&train_records, &outcome.origins, &class_names);
    let mut combined = train_records;
    combined.extend(shadows);
    let matrix = train_ds.matrix()?;
    debug_assert_eq!(matrix.rows, combined.len());
    let mut perm: Vec<usize> = (0..combined.len()).collect();
    perm.sort_by(|&a, &b| {
        combined[a]
            .timestamp
            .total_cmp(&combined[b].timestamp)
            .then(a.cmp(&b))
    });
    let sorted_records: Vec<FlowRecord> = perm.iter().map(|&i| combined[i].clone()).collect();
    let sorted_labels: Vec<usize> = perm.iter().map(|&i| train_ds.labels[i]).collect();
    let sorted_synth: Vec<bool> = perm.iter().map(|&i| train_ds.synthetic[i]).collect();

    let train = assemble_windows(
        &sorted_records,
        &matrix,
        &perm,
        &sorted_labels,
        &sorted_synth,
        schema,
        config,
        &mut log,
        "train",
    )?;

    let test_ds = apply_transform(&fitted, &test_records, schema)?;
    let test_matrix = test_ds.matrix()?;
    let identity: Vec<usize> = (0..test_records.len()).collect();
    let test = assemble_windows(
        &test_records,
        &test_matrix,
        &identity,
        &test_ds.labels,
        &vec![false; test_records.len()],
        schema,
        config,
        &mut log,
        "test",
    )?;

    Ok(PreparedData {
        class_names,
        transform: fitted,
        tabular_dim: matrix.cols,
        node_dim: NODE_FEATURE_DIM,
        train,
        test,
        log,
    })
}

/// Splits prepared training windows further, e.g. to carve a calibration
/// set; kept here so callers never reimplement the stratified rule.
pub fn split_windows(
    split: &PreparedSplit,
    fraction: f64,
    seed: u64,
) -> Result<(PreparedSplit, PreparedSplit)> {
    let (a_idx, b_idx) = stratified_split_indices(&split.labels, fraction, seed)?;
    let take = |idx: &[usize]| PreparedSplit {
        windows: idx.iter().map(|&i| split.windows[i].clone()).collect(),
        labels: idx.iter().map(|&i| split.labels[i]).collect(),
        synthetic: idx.iter().map(|&i| split.synthetic[i]).collect(),
    };
    Ok((take(&a_idx), take(&b_idx)))
}

/// Deterministically shuffles window order; useful before training on
/// corpora whose windows arrive grouped by class.
pub fn shuffle_windows(split: &mut PreparedSplit, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = split.windows.len();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        split.windows.swap(i, j);
        split.labels.swap(i, j);
        split.synthetic.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, AttackKind, AttackSpec, ScenarioSpec};

    fn corpus() -> (Vec<FlowRecord>, SchemaSpec) {
        let spec = ScenarioSpec {
            duration: 240.0,
            background_rate: 8.0,
            entities: 10,
            attacks: vec![
                AttackSpec {
                    kind: AttackKind::Ddos,
                    start: 60.0,
                    duration: 25.0,
                    intensity: 12.0,
                },
                AttackSpec {
                    kind: AttackKind::Exfiltration,
                    start: 120.0,
                    duration: 80.0,
                    intensity: 0.5,
                },
            ],
            seed: 11,
        };
        let corpus = generate(&spec).unwrap();
        let schema = corpus.schema().unwrap();
        (corpus.records, schema)
    }

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            window_len: 20,
            stride: 5,
            transform: PipelineOptions {
                top_k: 12,
                ..PipelineOptions::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn prepare_produces_consistent_window_inputs() {
        let (records, schema) = corpus();
        let config = small_config();
        let prepared = prepare(&records, &schema, &config).unwrap();

        assert_eq!(prepared.node_dim, NODE_FEATURE_DIM);
        assert!(prepared.tabular_dim <= config.transform.top_k);
        assert!(!prepared.train.windows.is_empty());
        assert!(!prepared.test.windows.is_empty());
        for split in [&prepared.train, &prepared.test] {
            assert_eq!(split.windows.len(), split.labels.len());
            assert_eq!(split.windows.len(), split.synthetic.len());
            for (w, &label) in split.windows.iter().zip(&split.labels) {
                assert!(label < prepared.class_names.len());
                assert_eq!(w.steps.len(), config.window_len);
                assert_eq!(w.tabular.len(), config.window_len * prepared.tabular_dim);
                assert_eq!(w.adjacency.len(), w.n_nodes * w.n_nodes);
                assert_eq!(w.node_x.len(), w.n_nodes * prepared.node_dim);
                for &(s, d) in &w.steps {
                    assert!(s < w.n_nodes && d < w.n_nodes);
                }
                assert!(w.tabular.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn oversampled_events_are_flagged_only_on_the_training_side() {
        let (records, schema) = corpus();
        let prepared = prepare(&records, &schema, &small_config()).unwrap();
        assert!(
            prepared.train.synthetic.iter().any(|&f| f),
            "expected some training window to carry synthetic events"
        );
        assert!(prepared.test.synthetic.iter().all(|&f| !f));
        assert!(prepared.log.iter().any(|l| l.starts_with("smote:")));
    }

    #[test]
    fn preparation_is_bit_deterministic() {
        let (records, schema) = corpus();
        let config = small_config();
        let a = prepare(&records, &schema, &config).unwrap();
        let b = prepare(&records, &schema, &config).unwrap();
        assert_eq!(a.train.labels, b.train.labels);
        assert_eq!(a.test.labels, b.test.labels);
        for (x, y) in a.train.windows.iter().zip(&b.train.windows) {
            assert_eq!(x.n_nodes, y.n_nodes);
            assert_eq!(x.steps, y.steps);
            let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x.adjacency), bits(&y.adjacency));
            assert_eq!(bits(&x.node_x), bits(&y.node_x));
            assert_eq!(bits(&x.tabular), bits(&y.tabular));
        }
    }

    #[test]
    fn class_table_covers_every_window_label() {
        let (records, schema) = corpus();
        let prepared = prepare(&records, &schema, &small_config()).unwrap();
        assert_eq!(prepared.class_names.len(), 3);
        assert!(prepared.class_names.windows(2).all(|w| w[0] < w[1]));
        let seen: std::collections::BTreeSet<usize> = prepared
            .train
            .labels
            .iter()
            .chain(&prepared.test.labels)
            .copied()
            .collect();
        assert!(seen.iter().all(|&c| c < 3));
    }

    #[test]
    fn split_windows_keeps_fields_aligned() {
        let (records, schema) = corpus();
        let prepared = prepare(&records, &schema, &small_config()).unwrap();
        let (a, b) = split_windows(&prepared.train, 0.75, 5).unwrap();
        assert_eq!(a.windows.len() + b.windows.len(), prepared.train.windows.len());
        assert_eq!(a.windows.len(), a.labels.len());
        assert_eq!(b.windows.len(), b.synthetic.len());
    }

    #[test]
    fn shuffle_is_a_seeded_permutation() {
        let (records, schema) = corpus();
        let prepared = prepare(&records, &schema, &small_config()).unwrap();
        let mut shuffled = prepared.train.clone();
        shuffle_windows(&mut shuffled, 3);
        let mut again = prepared.train.clone();
        shuffle_windows(&mut again, 3);
        assert_eq!(shuffled.labels, again.labels);
        let mut sorted_a = shuffled.labels.clone();
        let mut sorted_b = prepared.train.labels.clone();
        sorted_a.sort_unstable();
        sorted_b.sort_unstable();
        assert_eq!(sorted_a, sorted_b);
    }

    #[test]
    fn empty_input_is_rejected() {
        let schema = SchemaSpec::parse(crate::datagen::GENERATED_SCHEMA).unwrap();
        assert!(prepare(&[], &schema, &PipelineConfig::default()).is_err());
    }

    #[test]
    fn too_few_records_for_one_window_yields_empty_sides_with_log() {
        let (records, schema) = corpus();
        let config = PipelineConfig {
            window_len: 100_000,
            ..small_config()
        };
        let prepared = prepare(&records, &schema, &config).unwrap();
        assert!(prepared.train.windows.is_empty());
        assert!(prepared.test.windows.is_empty());
        assert!(prepared
            .log
            .iter()
            .any(|l| l.contains("fewer than one 100000-event window")));
    }
}
