//! Fitted column transforms: imputation, one-hot encoding, min-max scaling,
//! collinearity pruning, and mutual-information feature selection.
//!
//! Each stage is a fit/apply pair. Fitting computes statistics on one
//! dataset and immediately applies them through the same code path used for
//! replay, so running [`fit_transform`] and then [`apply_transform`] on the
//! identical records produces bit-identical outputs.

use std::collections::HashMap;

use super::stats::{average_ranks, mean, median, mutual_information, pearson, sample_skewness};
use super::{Column, Dataset};
use crate::error::{Error, Result};
use crate::ingest::FlowRecord;
use crate::schema::SchemaSpec;

/// Marker appended to every one-hot group for values outside the fitted
/// vocabulary.
pub const UNSEEN: &str = "__unseen__";

// ── Imputation ──────────────────────────────────────────────────────────

/// Per-column override for the imputation statistic; `Auto` routes on
/// skewness (|g1| > 1 uses the median, otherwise the mean).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputeChoice {
    Auto,
    Mean,
    Median,
}

#[derive(Debug, Clone, Default)]
pub struct ImputePolicy {
    pub overrides: HashMap<String, ImputeChoice>,
    /// Columns with a missing fraction above this are dropped outright.
    pub max_missing: f64,
}

impl ImputePolicy {
    pub fn new() -> Self {
        ImputePolicy {
            overrides: HashMap::new(),
            max_missing: 0.3,
        }
    }

    fn choice(&self, column: &str) -> ImputeChoice {
        self.overrides
            .get(column)
            .copied()
            .unwrap_or(ImputeChoice::Auto)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImputeRule {
    /// Column dropped for excessive missingness (fraction recorded).
    Drop(f64),
    Mean(f64),
    Median(f64),
    /// Most frequent category; ties resolve to the lexicographically
    /// smallest value.
    Mode(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImputeFit {
    /// One rule per fitted column, in the column order seen at fit time.
    pub rules: Vec<(String, ImputeRule)>,
}

fn fit_impute(ds: &Dataset, policy: &ImputePolicy) -> ImputeFit {
    let rows = ds.rows();
    let mut rules = Vec::new();
    for col in &ds.columns {
        let rule = match col {
            Column::Continuous { name, values } => {
                let present: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
                let missing = (rows - present.len()) as f64 / rows.max(1) as f64;
                if missing > policy.max_missing {
                    ImputeRule::Drop(missing)
                } else {
                    let use_median = match policy.choice(name) {
                        ImputeChoice::Mean => false,
                        ImputeChoice::Median => true,
                        ImputeChoice::Auto => sample_skewness(&present).abs() > 1.0,
                    };
                    if use_median {
                        ImputeRule::Median(median(&present))
                    } else {
                        ImputeRule::Mean(mean(&present))
                    }
                }
            }
            Column::Categorical { values, .. } => {
                let mut counts: HashMap<&str, usize> = HashMap::new();
                for v in values.iter().flatten() {
                    *counts.entry(v.as_str()).or_insert(0) += 1;
                }
                let missing = values.iter().filter(|v| v.is_none()).count() as f64
                    / rows.max(1) as f64;
                if missing > policy.max_missing {
                    ImputeRule::Drop(missing)
                } else {
                    let mode = counts
                        .iter()
                        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                        .map(|(v, _)| v.to_string())
                        .unwrap_or_default();
                    ImputeRule::Mode(mode)
                }
            }
            // Indicators only exist after encoding, which runs post-impute.
            Column::Indicator { .. } => continue,
        };
        rules.push((col.name().to_string(), rule));
    }
    ImputeFit { rules }
}

fn apply_impute(ds: &mut Dataset, fit: &ImputeFit) -> Result<()> {
    for (name, rule) in &fit.rules {
        let pos = ds.column_position(name).ok_or_else(|| {
            Error::Format(format!("imputation rule references unknown column '{name}'"))
        })?;
        match rule {
            ImputeRule::Drop(_) => {
                ds.columns.remove(pos);
            }
            ImputeRule::Mean(fill) | ImputeRule::Median(fill) => match &mut ds.columns[pos] {
                Column::Continuous { values, .. } => {
                    for v in values.iter_mut() {
                        if v.is_nan() {
                            *v = *fill;
                        }
                    }
                }
                _ => {
                    return Err(Error::Format(format!(
                        "numeric imputation rule targets non-continuous column '{name}'"
                    )))
                }
            },
            ImputeRule::Mode(fill) => match &mut ds.columns[pos] {
                Column::Categorical { values, .. } => {
                    for v in values.iter_mut() {
                        if v.is_none() {
                            *v = Some(fill.clone());
                        }
                    }
                }
                _ => {
                    return Err(Error::Format(format!(
                        "mode imputation rule targets non-categorical column '{name}'"
                    )))
                }
            },
        }
    }
    Ok(())
}

/// Fits and applies imputation in one step, logging dropped columns.
pub fn impute_missing(ds: &mut Dataset, policy: &ImputePolicy) -> Result<ImputeFit> {
    let fit = fit_impute(ds, policy);
    apply_impute(ds, &fit)?;
    for (name, rule) in &fit.rules {
        match rule {
            ImputeRule::Drop(frac) => ds.log(format!(
                "impute: dropped '{name}' ({:.1}% missing)",
                frac * 100.0
            )),
            ImputeRule::Mean(v) => ds.log(format!("impute: '{name}' mean={v}")),
            ImputeRule::Median(v) => ds.log(format!("impute: '{name}' median={v}")),
            ImputeRule::Mode(v) => ds.log(format!("impute: '{name}' mode={v}")),
        }
    }
    Ok(fit)
}

// ── One-hot encoding ────────────────────────────────────────────────────

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodeFit {
    /// Vocabulary per categorical column, values in order of first
    /// appearance in the fitting data.
    pub vocabs: Vec<(String, Vec<String>)>,
}

fn fit_encode(ds: &Dataset) -> EncodeFit {
    let mut vocabs = Vec::new();
    for col in &ds.columns {
        if let Column::Categorical { name, values } = col {
            let mut vocab: Vec<String> = Vec::new();
            for v in values.iter().flatten() {
                if !vocab.iter().any(|seen| seen == v) {
                    vocab.push(v.clone());
                }
            }
            vocabs.push((name.clone(), vocab));
        }
    }
    EncodeFit { vocabs }
}

fn apply_encode(ds: &mut Dataset, fit: &EncodeFit) -> Result<()> {
    for (name, vocab) in &fit.vocabs {
        let pos = ds.column_position(name).ok_or_else(|| {
            Error::Format(format!("encoding rule references unknown column '{name}'"))
        })?;
        let values = match ds.columns.remove(pos) {
            Column::Categorical { values, .. } => values,
            _ => {
                return Err(Error::Format(format!(
                    "encoding rule targets non-categorical column '{name}'"
                )))
            }
        };
        // One indicator per vocabulary value plus a trailing unseen bucket,
        // spliced in place of the original column.
        let width = vocab.len() + 1;
        let mut indicators = vec![vec![0.0; values.len()]; width];
        for (row, v) in values.iter().enumerate() {
            let slot = match v {
                Some(v) => vocab.iter().position(|w| w == v).unwrap_or(vocab.len()),
                None => vocab.len(),
            };
            indicators[slot][row] = 1.0;
        }
        for (slot, column_values) in indicators.into_iter().enumerate().rev() {
            let suffix = vocab.get(slot).map(String::as_str).unwrap_or(UNSEEN);
            ds.columns.insert(
                pos,
                Column::Indicator {
                    name: format!("{name}={suffix}"),
                    values: column_values,
                },
            );
        }
    }
    Ok(())
}

/// Fits and applies one-hot encoding, logging each expanded column.
pub fn one_hot_encode(ds: &mut Dataset) -> Result<EncodeFit> {
    let fit = fit_encode(ds);
    apply_encode(ds, &fit)?;
    for (name, vocab) in &fit.vocabs {
        ds.log(format!(
            "encode: '{name}' -> {} indicators (+unseen)",
            vocab.len()
        ));
    }
    Ok(fit)
}

// ── Min-max scaling ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScaleFit {
    /// (column, min, max) observed at fit time; only original continuous
    /// columns are scaled, indicators are already in [0, 1].
    pub ranges: Vec<(String, f64, f64)>,
}

fn fit_scale(ds: &Dataset) -> ScaleFit {
    let mut ranges = Vec::new();
    for col in &ds.columns {
        if let Column::Continuous { name, values } = col {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            ranges.push((name.clone(), lo, hi));
        }
    }
    ScaleFit { ranges }
}

fn apply_scale(ds: &mut Dataset, fit: &ScaleFit) -> Result<()> {
    for (name, lo, hi) in &fit.ranges {
        let pos = ds.column_position(name).ok_or_else(|| {
            Error::Format(format!("scaling rule references unknown column '{name}'"))
        })?;
        match &mut ds.columns[pos] {
            Column::Continuous { values, .. } => {
                let span = hi - lo;
                for v in values.iter_mut() {
                    // Constant columns carry no signal; pin them to zero.
                    *v = if span == 0.0 {
                        0.0
                    } else {
                        ((*v - lo) / span).clamp(0.0, 1.0)
                    };
                }
            }
            _ => {
                return Err(Error::Format(format!(
                    "scaling rule targets non-continuous column '{name}'"
                )))
            }
        }
    }
    Ok(())
}

/// Fits and applies min-max scaling to [0, 1] with clamping on replay.
pub fn minmax_scale(ds: &mut Dataset) -> Result<ScaleFit> {
    let fit = fit_scale(ds);
    apply_scale(ds, &fit)?;
    for (name, lo, hi) in &fit.ranges {
        ds.log(format!("scale: '{name}' range [{lo}, {hi}]"));
    }
    Ok(fit)
}

// ── Mutual information scores ───────────────────────────────────────────

/// Mutual information of each numeric column with the label, in nats.
/// Continuous columns are discretized into at most `bins` equal-frequency
/// bins; indicators are already discrete but pass through the same binning,
/// which leaves 0/1 values intact.
pub fn mi_scores(ds: &Dataset, bins: usize) -> Result<HashMap<String, f64>> {
    if bins < 2 {
        return Err(Error::Config("mi bins must be at least 2".into()));
    }
    let mut scores = HashMap::new();
    for col in &ds.columns {
        let values = col.numeric_values().ok_or_else(|| {
            Error::Data(format!(
                "column '{}' is still categorical; encode before scoring",
                col.name()
            ))
        })?;
        scores.insert(
            col.name().to_string(),
            mutual_information(values, &ds.labels, bins),
        );
    }
    Ok(scores)
}

// ── Collinearity pruning ────────────────────────────────────────────────

/// Drops one column of every highly correlated continuous pair until no
/// pair exceeds `threshold` on max(|pearson|, |spearman|). The column with
/// the lower mutual information goes; on ties the later column goes.
/// Returns dropped names in drop order.
pub fn prune_collinear(
    ds: &mut Dataset,
    threshold: f64,
    mi: &HashMap<String, f64>,
) -> Result<Vec<String>> {
    let mut dropped = Vec::new();
    loop {
        // Continuous columns only; indicators stay as encoded.
        let cont: Vec<(usize, &str, &[f64])> = ds
            .columns
            .iter()
            .enumerate()
            .filter_map(|(i, c)| match c {
                Column::Continuous { name, values } => Some((i, name.as_str(), values.as_slice())),
                _ => None,
            })
            .collect();
        let ranks: Vec<Vec<f64>> = cont.iter().map(|(_, _, v)| average_ranks(v)).collect();
        let mut victim: Option<usize> = None;
        'scan: for a in 0..cont.len() {
            for b in a + 1..cont.len() {
                let p = pearson(cont[a].2, cont[b].2)?.abs();
                let s = pearson(&ranks[a], &ranks[b])?.abs();
                if p.max(s) > threshold {
                    let mi_a = *mi.get(cont[a].1).ok_or_else(|| {
                        Error::Data(format!("no mutual information score for '{}'", cont[a].1))
                    })?;
                    let mi_b = *mi.get(cont[b].1).ok_or_else(|| {
                        Error::Data(format!("no mutual information score for '{}'", cont[b].1))
                    })?;
                    // Keep the more informative column; ties drop the later one.
                    victim = Some(if mi_a < mi_b { cont[a].0 } else { cont[b].0 });
                    break 'scan;
                }
            }
        }
        match victim {
            Some(pos) => {
                dropped.push(ds.columns[pos].name().to_string());
                ds.columns.remove(pos);
            }
            None => break,
        }
    }
    for name in &dropped {
        ds.log(format!("prune: dropped collinear '{name}'"));
    }
    Ok(dropped)
}

// ── Feature selection ───────────────────────────────────────────────────

/// Keeps the `k` columns with the highest mutual information (ties favor
/// the earlier column), preserving original column order. Asking for at
/// least as many columns as exist keeps everything and logs a warning.
pub fn select_top_k(
    ds: &mut Dataset,
    mi: &HashMap<String, f64>,
    k: usize,
) -> Result<Vec<String>> {
    let names: Vec<String> = ds.columns.iter().map(|c| c.name().to_string()).collect();
    if k >= names.len() {
        ds.log(format!(
            "select: requested {k} of {} columns; keeping all",
            names.len()
        ));
        return Ok(names);
    }
    let mut order: Vec<usize> = (0..names.len()).collect();
    let score = |i: usize| -> Result<f64> {
        mi.get(&names[i])
            .copied()
            .ok_or_else(|| Error::Data(format!("no mutual information score for '{}'", names[i])))
    };
    for &i in &order {
        score(i)?;
    }
    order.sort_by(|&a, &b| {
        let sa = mi[&names[a]];
        let sb = mi[&names[b]];
        sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = order[..k].to_vec();
    keep.sort_unstable();
    let kept: Vec<String> = keep.iter().map(|&i| names[i].clone()).collect();
    retain_columns(ds, &kept)?;
    ds.log(format!("select: kept {k} of {} columns", names.len()));
    Ok(kept)
}

/// Keeps exactly the named columns, in the order listed.
fn retain_columns(ds: &mut Dataset, names: &[String]) -> Result<()> {
    let mut columns = Vec::with_capacity(names.len());
    for name in names {
        let pos = ds.column_position(name).ok_or_else(|| {
            Error::Format(format!("selection references unknown column '{name}'"))
        })?;
        columns.push(ds.columns.remove(pos));
    }
    ds.columns = columns;
    Ok(())
}

// ── Full fitted pipeline ────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub impute: ImputePolicy,
    pub collinear_threshold: f64,
    pub mi_bins: usize,
    pub top_k: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            impute: ImputePolicy::new(),
            collinear_threshold: 0.85,
            mi_bins: 10,
            top_k: 35,
        }
    }
}

/// Everything fitted on the training split, sufficient to replay the exact
/// transform on held-out records.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedTransform {
    pub class_names: Vec<String>,
    pub impute: ImputeFit,
    pub encode: EncodeFit,
    pub scale: ScaleFit,
    /// Collinear columns dropped, in drop order.
    pub pruned: Vec<String>,
    /// Columns surviving selection, in original column order.
    pub selected: Vec<String>,
    pub provenance: Vec<String>,
}

/// Fits the full pipeline on `records` and returns the transform together
/// with the transformed dataset.
pub fn fit_transform(
    records: &[FlowRecord],
    schema: &SchemaSpec,
    opts: &PipelineOptions,
) -> Result<(FittedTransform, Dataset)> {
    let mut ds = Dataset::from_records(records, schema);
    ds.log(format!("fit: {} rows", ds.rows()));
    let impute = impute_missing(&mut ds, &opts.impute)?;
    let encode = one_hot_encode(&mut ds)?;
    let scale = minmax_scale(&mut ds)?;
    let mi = mi_scores(&ds, opts.mi_bins)?;
    let pruned = prune_collinear(&mut ds, opts.collinear_threshold, &mi)?;
    let selected = select_top_k(&mut ds, &mi, opts.top_k)?;
    let fitted = FittedTransform {
        class_names: ds.class_names.clone(),
        impute,
        encode,
        scale,
        pruned,
        selected,
        provenance: ds.provenance.clone(),
    };
    Ok((fitted, ds))
}

/// Replays a fitted transform on new records. Labels must come from the
/// fitted class table.
pub fn apply_transform(
    fitted: &FittedTransform,
    records: &[FlowRecord],
    schema: &SchemaSpec,
) -> Result<Dataset> {
    let mut ds = Dataset::from_records_with_classes(records, schema, &fitted.class_names)?;
    apply_impute(&mut ds, &fitted.impute)?;
    apply_encode(&mut ds, &fitted.encode)?;
    apply_scale(&mut ds, &fitted.scale)?;
    for name in &fitted.pruned {
        let pos = ds.column_position(name).ok_or_else(|| {
            Error::Format(format!("prune list references unknown column '{name}'"))
        })?;
        ds.columns.remove(pos);
    }
    retain_columns(&mut ds, &fitted.selected)?;
    ds.provenance = fitted.provenance.clone();
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{record, schema};
    use super::*;

    fn base_records() -> Vec<FlowRecord> {
        vec![
            record(1.0, "a", "b", Some("tcp"), 0.5, 100.0, "normal"),
            record(2.0, "b", "c", Some("udp"), 0.7, 200.0, "ddos"),
            record(3.0, "c", "a", Some("tcp"), f64::NAN, 300.0, "normal"),
            record(4.0, "a", "c", Some("tcp"), 0.9, 400.0, "ddos"),
            record(5.0, "b", "a", None, 1.1, 500.0, "normal"),
        ]
    }

    #[test]
    fn impute_fills_mean_for_low_skew_and_mode_for_categorical() {
        let mut ds = Dataset::from_records(&base_records(), &schema());
        let fit = impute_missing(&mut ds, &ImputePolicy::new()).unwrap();
        match ds.column("duration").unwrap() {
            Column::Continuous { values, .. } => {
                let expected = (0.5 + 0.7 + 0.9 + 1.1) / 4.0;
                assert!((values[2] - expected).abs() < 1e-12);
            }
            _ => panic!("expected continuous"),
        }
        match ds.column("proto").unwrap() {
            Column::Categorical { values, .. } => {
                assert_eq!(values[4].as_deref(), Some("tcp"));
            }
            _ => panic!("expected categorical"),
        }
        assert!(fit
            .rules
            .iter()
            .any(|(n, r)| n == "proto" && matches!(r, ImputeRule::Mode(m) if m == "tcp")));
    }

    #[test]
    fn impute_uses_median_when_skew_exceeds_one() {
        // A lone extreme value pushes |g1| above 1.
        let mut records = base_records();
        records[3].continuous[0] = 1000.0;
        let mut ds = Dataset::from_records(&records, &schema());
        let fit = impute_missing(&mut ds, &ImputePolicy::new()).unwrap();
        let rule = fit.rules.iter().find(|(n, _)| n == "duration").unwrap();
        assert!(matches!(rule.1, ImputeRule::Median(_)), "got {:?}", rule.1);
    }

    #[test]
    fn impute_drops_columns_above_missing_threshold() {
        let mut records = base_records();
        for r in records.iter_mut().take(3) {
            r.continuous[0] = f64::NAN;
        }
        let mut ds = Dataset::from_records(&records, &schema());
        impute_missing(&mut ds, &ImputePolicy::new()).unwrap();
        assert!(ds.column("duration").is_none());
        assert!(ds.provenance.iter().any(|p| p.contains("dropped")));
    }

    #[test]
    fn mode_tie_takes_lexicographically_smallest() {
        let records = vec![
            record(1.0, "a", "b", Some("udp"), 0.1, 1.0, "normal"),
            record(2.0, "a", "b", Some("tcp"), 0.1, 1.0, "normal"),
            record(3.0, "a", "b", Some("udp"), 0.1, 1.0, "normal"),
            record(4.0, "a", "b", Some("tcp"), 0.1, 1.0, "normal"),
            record(5.0, "a", "b", None, 0.1, 1.0, "normal"),
        ];
        let mut ds = Dataset::from_records(&records, &schema());
        let fit = impute_missing(&mut ds, &ImputePolicy::new()).unwrap();
        let rule = fit.rules.iter().find(|(n, _)| n == "proto").unwrap();
        assert!(matches!(&rule.1, ImputeRule::Mode(m) if m == "tcp"));
    }

    #[test]
    fn one_hot_uses_first_appearance_order_and_appends_unseen() {
        let records = vec![
            record(1.0, "a", "b", Some("tcp"), 0.1, 1.0, "normal"),
            record(2.0, "a", "b", Some("udp"), 0.2, 2.0, "normal"),
            record(3.0, "a", "b", Some("icmp"), 0.3, 3.0, "normal"),
            record(4.0, "a", "b", Some("udp"), 0.4, 4.0, "normal"),
        ];
        let mut ds = Dataset::from_records(&records, &schema());
        one_hot_encode(&mut ds).unwrap();
        assert_eq!(
            ds.feature_names(),
            vec![
                "duration",
                "bytes",
                "proto=tcp",
                "proto=udp",
                "proto=icmp",
                "proto=__unseen__"
            ]
        );
        // Row 1 is udp: [0, 1, 0, 0] across the group.
        let group: Vec<f64> = ["proto=tcp", "proto=udp", "proto=icmp", "proto=__unseen__"]
            .iter()
            .map(|n| ds.column(n).unwrap().numeric_values().unwrap()[1])
            .collect();
        assert_eq!(group, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn unseen_category_routes_to_unseen_indicator() {
        let train = vec![
            record(1.0, "a", "b", Some("tcp"), 0.1, 1.0, "normal"),
            record(2.0, "a", "b", Some("udp"), 0.2, 2.0, "normal"),
        ];
        let mut ds = Dataset::from_records(&train, &schema());
        let fit = fit_encode(&ds);
        apply_encode(&mut ds, &fit).unwrap();

        let test = vec![record(3.0, "a", "b", Some("sctp"), 0.3, 3.0, "normal")];
        let mut test_ds =
            Dataset::from_records_with_classes(&test, &schema(), &["normal".to_string()]).unwrap();
        apply_encode(&mut test_ds, &fit).unwrap();
        let unseen = test_ds.column("proto=__unseen__").unwrap();
        assert_eq!(unseen.numeric_values().unwrap(), &[1.0]);
        let tcp = test_ds.column("proto=tcp").unwrap();
        assert_eq!(tcp.numeric_values().unwrap(), &[0.0]);
    }

    #[test]
    fn scaling_maps_to_unit_interval_and_clamps_on_replay() {
        let train = vec![
            record(1.0, "a", "b", Some("tcp"), 0.0, 100.0, "normal"),
            record(2.0, "a", "b", Some("tcp"), 10.0, 300.0, "normal"),
        ];
        let mut ds = Dataset::from_records(&train, &schema());
        let fit = fit_scale(&ds);
        apply_scale(&mut ds, &fit).unwrap();
        assert_eq!(
            ds.column("duration").unwrap().numeric_values().unwrap(),
            &[0.0, 1.0]
        );

        // Out-of-range replay value clamps rather than extrapolating.
        let test = vec![record(3.0, "a", "b", Some("tcp"), 20.0, 50.0, "normal")];
        let mut test_ds =
            Dataset::from_records_with_classes(&test, &schema(), &["normal".to_string()]).unwrap();
        apply_scale(&mut test_ds, &fit).unwrap();
        assert_eq!(
            test_ds.column("duration").unwrap().numeric_values().unwrap(),
            &[1.0]
        );
        assert_eq!(
            test_ds.column("bytes").unwrap().numeric_values().unwrap(),
            &[0.0]
        );
    }

    #[test]
    fn constant_column_scales_to_zero() {
        let train = vec![
            record(1.0, "a", "b", Some("tcp"), 7.5, 1.0, "normal"),
            record(2.0, "a", "b", Some("tcp"), 7.5, 2.0, "normal"),
        ];
        let mut ds = Dataset::from_records(&train, &schema());
        minmax_scale(&mut ds).unwrap();
        assert_eq!(
            ds.column("duration").unwrap().numeric_values().unwrap(),
            &[0.0, 0.0]
        );
    }

    #[test]
    fn prune_drops_lower_mi_member_of_correlated_pair() {
        // bytes2 = 2 * bytes exactly: |pearson| = 1.
        let n = 40;
        let mut columns = Vec::new();
        let bytes: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let bytes2: Vec<f64> = bytes.iter().map(|v| 2.0 * v).collect();
        let noise: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64).collect();
        columns.push(Column::Continuous {
            name: "bytes".into(),
            values: bytes,
        });
        columns.push(Column::Continuous {
            name: "bytes2".into(),
            values: bytes2,
        });
        columns.push(Column::Continuous {
            name: "noise".into(),
            values: noise,
        });
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
        let mut ds = Dataset {
            columns,
            labels,
            class_names: vec!["a".into(), "b".into()],
            synthetic: vec![false; n],
            provenance: Vec::new(),
        };
        let mut mi = HashMap::new();
        mi.insert("bytes".to_string(), 0.9);
        mi.insert("bytes2".to_string(), 0.2);
        mi.insert("noise".to_string(), 0.5);
        let dropped = prune_collinear(&mut ds, 0.85, &mi).unwrap();
        assert_eq!(dropped, vec!["bytes2".to_string()]);
        assert_eq!(ds.feature_names(), vec!["bytes", "noise"]);
    }

    #[test]
    fn prune_tie_drops_later_column() {
        let n = 20;
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let ys = xs.clone();
        let mut ds = Dataset {
            columns: vec![
                Column::Continuous {
                    name: "x".into(),
                    values: xs,
                },
                Column::Continuous {
                    name: "y".into(),
                    values: ys,
                },
            ],
            labels: vec![0; n],
            class_names: vec!["a".into()],
            synthetic: vec![false; n],
            provenance: Vec::new(),
        };
        let mut mi = HashMap::new();
        mi.insert("x".to_string(), 0.4);
        mi.insert("y".to_string(), 0.4);
        let dropped = prune_collinear(&mut ds, 0.85, &mi).unwrap();
        assert_eq!(dropped, vec!["y".to_string()]);
    }

    #[test]
    fn spearman_catches_monotone_nonlinear_pair() {
        // x^5 has weak linear correlation structure on symmetric input but
        // a perfect rank correlation.
        let xs: Vec<f64> = (-10..=10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|v| v.powi(5)).collect();
        let p = pearson(&xs, &ys).unwrap().abs();
        let s = pearson(&average_ranks(&xs), &average_ranks(&ys))
            .unwrap()
            .abs();
        assert!(s > 0.999);
        assert!(s > p);
        let mut ds = Dataset {
            columns: vec![
                Column::Continuous {
                    name: "x".into(),
                    values: xs,
                },
                Column::Continuous {
                    name: "y".into(),
                    values: ys,
                },
            ],
            labels: vec![0; 21],
            class_names: vec!["a".into()],
            synthetic: vec![false; 21],
            provenance: Vec::new(),
        };
        let mut mi = HashMap::new();
        mi.insert("x".to_string(), 0.4);
        mi.insert("y".to_string(), 0.1);
        let dropped = prune_collinear(&mut ds, 0.85, &mi).unwrap();
        assert_eq!(dropped, vec!["y".to_string()]);
    }

    #[test]
    fn select_keeps_top_k_in_original_order() {
        let mut ds = Dataset {
            columns: vec![
                Column::Continuous {
                    name: "a".into(),
                    values: vec![0.0],
                },
                Column::Continuous {
                    name: "b".into(),
                    values: vec![0.0],
                },
                Column::Continuous {
                    name: "c".into(),
                    values: vec![0.0],
                },
            ],
            labels: vec![0],
            class_names: vec!["x".into()],
            synthetic: vec![false],
            provenance: Vec::new(),
        };
        let mut mi = HashMap::new();
        mi.insert("a".to_string(), 0.1);
        mi.insert("b".to_string(), 0.9);
        mi.insert("c".to_string(), 0.5);
        let kept = select_top_k(&mut ds, &mi, 2).unwrap();
        assert_eq!(kept, vec!["b".to_string(), "c".to_string()]);
        assert_eq!(ds.feature_names(), vec!["b", "c"]);
    }

    #[test]
    fn select_mi_tie_favors_earlier_column() {
        let mut ds = Dataset {
            columns: vec![
                Column::Continuous {
                    name: "a".into(),
                    values: vec![0.0],
                },
                Column::Continuous {
                    name: "b".into(),
                    values: vec![0.0],
                },
            ],
            labels: vec![0],
            class_names: vec!["x".into()],
            synthetic: vec![false],
            provenance: Vec::new(),
        };
        let mut mi = HashMap::new();
        mi.insert("a".to_string(), 0.4);
        mi.insert("b".to_string(), 0.4);
        let kept = select_top_k(&mut ds, &mi, 1).unwrap();
        assert_eq!(kept, vec!["a".to_string()]);
    }

    #[test]
    fn select_with_k_too_large_keeps_all_and_warns() {
        let mut ds = Dataset {
            columns: vec![Column::Continuous {
                name: "a".into(),
                values: vec![0.0],
            }],
            labels: vec![0],
            class_names: vec!["x".into()],
            synthetic: vec![false],
            provenance: Vec::new(),
        };
        let kept = select_top_k(&mut ds, &HashMap::new(), 35).unwrap();
        assert_eq!(kept, vec!["a".to_string()]);
        assert!(ds.provenance.iter().any(|p| p.contains("keeping all")));
    }

    #[test]
    fn fit_then_apply_on_same_records_is_bit_identical() {
        let records = base_records();
        let opts = PipelineOptions {
            top_k: 4,
            ..PipelineOptions::default()
        };
        let (fitted, train_ds) = fit_transform(&records, &schema(), &opts).unwrap();
        let replayed = apply_transform(&fitted, &records, &schema()).unwrap();
        assert_eq!(train_ds, replayed);
    }

    #[test]
    fn apply_rejects_labels_outside_fitted_classes() {
        let (fitted, _) =
            fit_transform(&base_records(), &schema(), &PipelineOptions::default()).unwrap();
        let test = vec![record(9.0, "a", "b", Some("tcp"), 0.5, 1.0, "worm")];
        let err = apply_transform(&fitted, &test, &schema()).unwrap_err();
        assert!(err.to_string().contains("worm"));
    }
}
