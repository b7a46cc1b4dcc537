//! Dataset layout declaration.
//!
//! A schema file names every CSV column in order and assigns it a role. The
//! parser and the whole preprocessing pipeline are driven by this declaration
//! rather than by any hard-coded dataset layout.
//!
//! File format: one `name kind` pair per line, whitespace-separated, `#`
//! starts a comment, blank lines ignored.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Role of one CSV column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Label,
    Timestamp,
    SrcEntity,
    DstEntity,
    Ignore,
}

impl ColumnKind {
    fn parse(s: &str) -> Option<ColumnKind> {
        Some(match s {
            "continuous" => ColumnKind::Continuous,
            "categorical" => ColumnKind::Categorical,
            "label" => ColumnKind::Label,
            "timestamp" => ColumnKind::Timestamp,
            "src_entity" => ColumnKind::SrcEntity,
            "dst_entity" => ColumnKind::DstEntity,
            "ignore" => ColumnKind::Ignore,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ColumnKind::Continuous => "continuous",
            ColumnKind::Categorical => "categorical",
            ColumnKind::Label => "label",
            ColumnKind::Timestamp => "timestamp",
            ColumnKind::SrcEntity => "src_entity",
            ColumnKind::DstEntity => "dst_entity",
            ColumnKind::Ignore => "ignore",
        }
    }
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One declared column.
#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Ordered column declaration for a flow CSV.
#[derive(Debug, Clone)]
pub struct SchemaSpec {
    pub columns: Vec<ColumnSpec>,
}

impl SchemaSpec {
    /// Builds and validates a schema from ordered (name, kind) pairs.
    pub fn new(columns: Vec<ColumnSpec>) -> Result<SchemaSpec> {
        let schema = SchemaSpec { columns };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name '{}'", c.name)));
            }
        }
        let count = |k: ColumnKind| self.columns.iter().filter(|c| c.kind == k).count();
        if count(ColumnKind::Label) != 1 {
            return Err(Error::Schema(format!(
                "exactly one label column required, found {}",
                count(ColumnKind::Label)
            )));
        }
        if count(ColumnKind::Timestamp) != 1 {
            return Err(Error::Schema(format!(
                "exactly one timestamp column required, found {}",
                count(ColumnKind::Timestamp)
            )));
        }
        if count(ColumnKind::SrcEntity) == 0 {
            return Err(Error::Schema("at least one src_entity column required".into()));
        }
        if count(ColumnKind::DstEntity) == 0 {
            return Err(Error::Schema("at least one dst_entity column required".into()));
        }
        if count(ColumnKind::Continuous) + count(ColumnKind::Categorical) == 0 {
            return Err(Error::Schema("schema declares no feature columns".into()));
        }
        Ok(())
    }

    /// Parses a schema file. See module docs for the format.
    pub fn load(path: &Path) -> Result<SchemaSpec> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<SchemaSpec> {
        let mut columns = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts.next().unwrap().to_string();
            let kind_str = parts.next().ok_or_else(|| {
                Error::Schema(format!("line {}: missing kind after '{}'", lineno + 1, name))
            })?;
            if let Some(extra) = parts.next() {
                return Err(Error::Schema(format!(
                    "line {}: unexpected token '{}'",
                    lineno + 1,
                    extra
                )));
            }
            let kind = ColumnKind::parse(kind_str).ok_or_else(|| {
                Error::Schema(format!("line {}: unknown kind '{}'", lineno + 1, kind_str))
            })?;
            columns.push(ColumnSpec { name, kind });
        }
        SchemaSpec::new(columns)
    }

    /// Serializes back to the file format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.columns {
            s.push_str(&c.name);
            s.push(' ');
            s.push_str(c.kind.as_str());
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Column names in declaration order (the expected CSV header).
    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Names of continuous feature columns, in schema order.
    pub fn continuous_names(&self) -> Vec<&str> {
        self.names_of(ColumnKind::Continuous)
    }

    /// Names of categorical feature columns, in schema order.
    pub fn categorical_names(&self) -> Vec<&str> {
        self.names_of(ColumnKind::Categorical)
    }

    fn names_of(&self, kind: ColumnKind) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.name.as_str())
            .collect()
    }

    /// Index of the single column with the given kind.
    pub fn single_index(&self, kind: ColumnKind) -> usize {
        self.columns
            .iter()
            .position(|c| c.kind == kind)
            .expect("validated schema has the column")
    }

    /// Indices of all columns with the given kind, in schema order.
    pub fn indices_of(&self, kind: ColumnKind) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }
}
