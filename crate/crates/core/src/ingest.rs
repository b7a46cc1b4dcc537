//! Flow-record CSV ingestion.
//!
//! Records are read against a [`SchemaSpec`]: the header must match the
//! declared column names in order. Empty cells are missing values; a
//! continuous cell that fails to parse becomes a missing marker and is
//! counted, never a crash. Timestamps and labels are load-bearing and must
//! parse.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::{ColumnKind, SchemaSpec};

/// One parsed flow. Continuous values are aligned with
/// `schema.continuous_names()` (`NaN` = missing); categorical values with
/// `schema.categorical_names()` (`None` = missing).
#[derive(Debug, Clone)]
pub struct FlowRecord {
    pub timestamp: f64,
    /// Joined src_entity column values (multiple columns joined with ':').
    pub src: String,
    pub dst: String,
    pub label: String,
    pub continuous: Vec<f64>,
    pub categorical: Vec<Option<String>>,
}

impl FlowRecord {
    /// Value of the named continuous feature, if the schema declares it.
    pub fn continuous_by_name(&self, schema: &SchemaSpec, name: &str) -> Option<f64> {
        schema
            .continuous_names()
            .iter()
            .position(|n| *n == name)
            .map(|i| self.continuous[i])
    }

    /// Value of the named categorical feature.
    pub fn categorical_by_name<'a>(
        &'a self,
        schema: &SchemaSpec,
        name: &str,
    ) -> Option<&'a Option<String>> {
        schema
            .categorical_names()
            .iter()
            .position(|n| *n == name)
            .map(|i| &self.categorical[i])
    }
}

/// Side facts from a parse worth surfacing to the operator.
#[derive(Debug, Default, Clone, Copy)]
pub struct ParseStats {
    pub rows: usize,
    /// Continuous cells that failed to parse and were turned into missing.
    pub unparseable_cells: usize,
}

/// Reads a flow CSV against the schema. The header must match the schema's
/// column names exactly and in order.
pub fn parse_flow_csv(path: &Path, schema: &SchemaSpec) -> Result<(Vec<FlowRecord>, ParseStats)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;

    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?
        .clone();
    let expected = schema.column_names();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        let mismatches: Vec<String> = expected
            .iter()
            .enumerate()
            .filter_map(|(i, want)| match got.get(i) {
                Some(g) if g == want => None,
                Some(g) => Some(format!("column {}: expected '{}', found '{}'", i + 1, want, g)),
                None => Some(format!("column {}: expected '{}', missing", i + 1, want)),
            })
            .chain(
                got.len()
                    .checked_sub(expected.len())
                    .map(|extra| format!("{} unexpected trailing column(s)", extra))
                    .filter(|_| got.len() > expected.len()),
            )
            .collect();
        return Err(Error::Schema(format!(
            "header does not match schema: {}",
            mismatches.join("; ")
        )));
    }

    let ts_idx = schema.single_index(ColumnKind::Timestamp);
    let label_idx = schema.single_index(ColumnKind::Label);
    let src_idx = schema.indices_of(ColumnKind::SrcEntity);
    let dst_idx = schema.indices_of(ColumnKind::DstEntity);
    let cont_idx = schema.indices_of(ColumnKind::Continuous);
    let cat_idx = schema.indices_of(ColumnKind::Categorical);

    let mut records = Vec::new();
    let mut stats = ParseStats::default();
    for (rowno, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("row {}: {}", rowno + 2, e)))?;
        if row.len() != schema.columns.len() {
            return Err(Error::Data(format!(
                "row {}: {} cells, schema declares {}",
                rowno + 2,
                row.len(),
                schema.columns.len()
            )));
        }
        let ts_cell = row.get(ts_idx).unwrap_or("");
        let timestamp: f64 = ts_cell.trim().parse().map_err(|_| {
            Error::Data(format!("row {}: unparseable timestamp '{}'", rowno + 2, ts_cell))
        })?;
        let label = row.get(label_idx).unwrap_or("").to_string();
        if label.is_empty() {
            return Err(Error::Data(format!("row {}: empty label", rowno + 2)));
        }
        let join = |idx: &[usize]| {
            idx.iter()
                .map(|&i| row.get(i).unwrap_or(""))
                .collect::<Vec<_>>()
                .join(":")
        };
        let continuous = cont_idx
            .iter()
            .map(|&i| {
                let cell = row.get(i).unwrap_or("").trim();
                if cell.is_empty() {
                    f64::NAN
                } else {
                    cell.parse().unwrap_or_else(|_| {
                        stats.unparseable_cells += 1;
                        f64::NAN
                    })
                }
            })
            .collect();
        let categorical = cat_idx
            .iter()
            .map(|&i| {
                let cell = row.get(i).unwrap_or("");
                if cell.is_empty() {
                    None
                } else {
                    Some(cell.to_string())
                }
            })
            .collect();
        records.push(FlowRecord {
            timestamp,
            src: join(&src_idx),
            dst: join(&dst_idx),
            label,
            continuous,
            categorical,
        });
        stats.rows += 1;
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    Ok((records, stats))
}

/// Hashable full-record identity; NaN compares equal to NaN via bit patterns
/// (all missing markers share one bit pattern).
#[derive(PartialEq, Eq, Hash)]
struct RecordKey {
    ts: u64,
    src: String,
    dst: String,
    label: String,
    continuous: Vec<u64>,
    categorical: Vec<Option<String>>,
}

impl RecordKey {
    fn of(r: &FlowRecord) -> RecordKey {
        RecordKey {
            ts: r.timestamp.to_bits(),
            src: r.src.clone(),
            dst: r.dst.clone(),
            label: r.label.clone(),
            continuous: r
                .continuous
                .iter()
                .map(|v| if v.is_nan() { f64::NAN.to_bits() } else { v.to_bits() })
                .collect(),
            categorical: r.categorical.clone(),
        }
    }
}

/// Removes exact duplicates (every field equal, timestamp included), keeping
/// the first occurrence. Returns the survivors and the number removed.
pub fn deduplicate(records: Vec<FlowRecord>) -> (Vec<FlowRecord>, usize) {
    let mut seen = HashSet::with_capacity(records.len());
    let before = records.len();
    let kept: Vec<FlowRecord> = records
        .into_iter()
        .filter(|r| seen.insert(RecordKey::of(r)))
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// Writes records back out as CSV matching the schema (used by the synthetic
/// generator and by tests). Missing cells become empty.
pub fn write_flow_csv(path: &Path, schema: &SchemaSpec, records: &[FlowRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    w.write_record(schema.column_names())?;
    let cont_names = schema.continuous_names();
    let cat_names = schema.categorical_names();
    for r in records {
        let mut cont_it = 0usize;
        let mut cat_it = 0usize;
        let mut src_it = 0usize;
        let mut dst_it = 0usize;
        let src_parts: Vec<&str> = r.src.split(':').collect();
        let dst_parts: Vec<&str> = r.dst.split(':').collect();
        let mut row: Vec<String> = Vec::with_capacity(schema.columns.len());
        for c in &schema.columns {
            let cell = match c.kind {
                ColumnKind::Timestamp => format!("{}", r.timestamp),
                ColumnKind::Label => r.label.clone(),
                ColumnKind::SrcEntity => {
                    let v = src_parts.get(src_it).unwrap_or(&"").to_string();
                    src_it += 1;
                    v
                }
                ColumnKind::DstEntity => {
                    let v = dst_parts.get(dst_it).unwrap_or(&"").to_string();
                    dst_it += 1;
                    v
                }
                ColumnKind::Continuous => {
                    let v = r.continuous[cont_it];
                    cont_it += 1;
                    if v.is_nan() {
                        String::new()
                    } else {
                        format!("{}", v)
                    }
                }
                ColumnKind::Categorical => {
                    let v = r.categorical[cat_it].clone().unwrap_or_default();
                    cat_it += 1;
                    v
                }
                ColumnKind::Ignore => String::new(),
            };
            row.push(cell);
        }
        debug_assert_eq!(cont_it, cont_names.len());
        debug_assert_eq!(cat_it, cat_names.len());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
