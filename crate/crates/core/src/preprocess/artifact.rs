//! Versioned on-disk form of a fitted transform.
//!
//! The format is line-oriented text: a version header, then one section per
//! stage, each introduced by a `<keyword> <count>` line. Free-form strings
//! (category values, class names, log entries) always sit last on their
//! line and run to end of line. Floats are written in shortest
//! round-trip form, so save followed by load reproduces every statistic
//! bit for bit. Lines are separated by '\n' only.

use std::fs;
use std::path::Path;

use super::transforms::{EncodeFit, FittedTransform, ImputeFit, ImputeRule, ScaleFit};
use crate::error::{Error, Result};

const HEADER: &str = "flowsentry transform v1";

impl FittedTransform {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FittedTransform> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        let mut line = |s: String| {
            out.push_str(&s);
            out.push('\n');
        };
        line(HEADER.to_string());
        line(format!("classes {}", self.class_names.len()));
        for c in &self.class_names {
            line(format!("class {}", checked(c)?));
        }
        line(format!("impute {}", self.impute.rules.len()));
        for (name, rule) in &self.impute.rules {
            match rule {
                ImputeRule::Drop(f) => line(format!("drop {name} {f}")),
                ImputeRule::Mean(v) => line(format!("mean {name} {v}")),
                ImputeRule::Median(v) => line(format!("median {name} {v}")),
                ImputeRule::Mode(v) => line(format!("mode {name} {}", checked(v)?)),
            }
        }
        line(format!("encode {}", self.encode.vocabs.len()));
        for (name, vocab) in &self.encode.vocabs {
            line(format!("vocab {name} {}", vocab.len()));
            for v in vocab {
                line(format!("value {}", checked(v)?));
            }
        }
        line(format!("scale {}", self.scale.ranges.len()));
        for (name, lo, hi) in &self.scale.ranges {
            line(format!("range {name} {lo} {hi}"));
        }
        line(format!("pruned {}", self.pruned.len()));
        for name in &self.pruned {
            line(format!("prune {}", checked(name)?));
        }
        line(format!("selected {}", self.selected.len()));
        for name in &self.selected {
            line(format!("keep {}", checked(name)?));
        }
        line(format!("provenance {}", self.provenance.len()));
        for entry in &self.provenance {
            line(format!("log {}", checked(entry)?));
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<FittedTransform> {
        let mut lines = Lines::new(text);
        let (n, header) = lines.next()?;
        if header != HEADER {
            return Err(Error::Format(format!(
                "line {n}: expected '{HEADER}', found '{header}'"
            )));
        }
        let mut class_names = Vec::new();
        for _ in 0..lines.count_line("classes")? {
            class_names.push(lines.rest("class")?.to_string());
        }
        let mut impute = ImputeFit::default();
        for _ in 0..lines.count_line("impute")? {
            let (n, line) = lines.next()?;
            let mut parts = line.splitn(3, ' ');
            let keyword = parts.next().unwrap_or_default();
            let name = parts
                .next()
                .ok_or_else(|| Error::Format(format!("line {n}: missing column name")))?
                .to_string();
            let tail = parts
                .next()
                .ok_or_else(|| Error::Format(format!("line {n}: missing value")))?;
            let rule = match keyword {
                "drop" => ImputeRule::Drop(parse_f64(n, tail)?),
                "mean" => ImputeRule::Mean(parse_f64(n, tail)?),
                "median" => ImputeRule::Median(parse_f64(n, tail)?),
                "mode" => ImputeRule::Mode(tail.to_string()),
                other => {
                    return Err(Error::Format(format!(
                        "line {n}: unknown imputation rule '{other}'"
                    )))
                }
            };
            impute.rules.push((name, rule));
        }
        let mut encode = EncodeFit::default();
        for _ in 0..lines.count_line("encode")? {
            let (n, line) = lines.next()?;
            let (name, len) = line
                .strip_prefix("vocab ")
                .and_then(|rest| rest.split_once(' '))
                .ok_or_else(|| Error::Format(format!("line {n}: expected 'vocab <name> <n>'")))?;
            let len: usize = len
                .parse()
                .map_err(|_| Error::Format(format!("line {n}: bad vocabulary size '{len}'")))?;
            let mut vocab = Vec::with_capacity(len);
            for _ in 0..len {
                vocab.push(lines.rest("value")?.to_string());
            }
            encode.vocabs.push((name.to_string(), vocab));
        }
        let mut scale = ScaleFit::default();
        for _ in 0..lines.count_line("scale")? {
            let (n, line) = lines.next()?;
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() != 4 || fields[0] != "range" {
                return Err(Error::Format(format!(
                    "line {n}: expected 'range <name> <min> <max>'"
                )));
            }
            scale.ranges.push((
                fields[1].to_string(),
                parse_f64(n, fields[2])?,
                parse_f64(n, fields[3])?,
            ));
        }
        let mut pruned = Vec::new();
        for _ in 0..lines.count_line("pruned")? {
            pruned.push(lines.rest("prune")?.to_string());
        }
        let mut selected = Vec::new();
        for _ in 0..lines.count_line("selected")? {
            selected.push(lines.rest("keep")?.to_string());
        }
        let mut provenance = Vec::new();
        for _ in 0..lines.count_line("provenance")? {
            provenance.push(lines.rest("log")?.to_string());
        }
        if let Ok((n, line)) = lines.next() {
            return Err(Error::Format(format!(
                "line {n}: trailing content '{line}'"
            )));
        }
        Ok(FittedTransform {
            class_names,
            impute,
            encode,
            scale,
            pruned,
            selected,
            provenance,
        })
    }
}

/// Rejects strings the line format cannot carry.
fn checked(s: &str) -> Result<&str> {
    if s.contains('\n') {
        return Err(Error::Format(
            "transform artifact cannot store values containing newlines".into(),
        ));
    }
    Ok(s)
}

fn parse_f64(line: usize, s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Format(format!("line {line}: bad number '{s}'")))
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Split<'a, char>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let body = text.strip_suffix('\n').unwrap_or(text);
        Lines {
            iter: body.split('\n').enumerate(),
        }
    }

    /// Next line as (1-based number, content).
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.iter
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Format("transform file ends unexpectedly".into()))
    }

    /// Reads `<keyword> <count>`.
    fn count_line(&mut self, keyword: &str) -> Result<usize> {
        let (n, line) = self.next()?;
        let rest = line.strip_prefix(keyword).and_then(|r| r.strip_prefix(' '));
        match rest.and_then(|r| r.parse().ok()) {
            Some(count) => Ok(count),
            None => Err(Error::Format(format!(
                "line {n}: expected '{keyword} <count>', found '{line}'"
            ))),
        }
    }

    /// Reads `<keyword> <rest-of-line>` and returns the rest.
    fn rest(&mut self, keyword: &str) -> Result<&'a str> {
        let (n, line) = self.next()?;
        line.strip_prefix(keyword)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| {
                Error::Format(format!("line {n}: expected '{keyword} ...', found '{line}'"))
            })
    }
}
