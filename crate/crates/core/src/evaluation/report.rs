//! Report structure, JSON I/O and the aligned text tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{HoiId, SplitName};
use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub hoi_id: HoiId,
    pub ap: f64,
    pub num_gt: usize,
    #[serde(skip)]
    pub num_detections: usize,
}

/// Mean AP (percentage points) over a split's full / unseen / seen sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitAggregate {
    pub full: f64,
    pub unseen: f64,
    pub seen: f64,
}

/// mAP report. Aggregates are percentage points; `per_class` lists classes
/// with at least one ground-truth instance, ascending by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub full: f64,
    pub rare: f64,
    pub non_rare: f64,
    pub splits: BTreeMap<String, SplitAggregate>,
    pub per_class: Vec<ClassAp>,
}

impl EvalReport {
    pub fn load(path: &Path) -> Result<Self> {
        jsonl::read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        jsonl::write_json_pretty(path, self)
    }

    /// Split names in reporting order (known names first, then any others).
    fn split_columns(&self) -> Vec<&str> {
        let mut names: Vec<&str> = SplitName::ALL
            .iter()
            .map(|n| n.as_str())
            .filter(|n| *n != SplitName::Default.as_str() && self.splits.contains_key(*n))
            .collect();
        names.extend(
            self.splits
                .keys()
                .map(String::as_str)
                .filter(|k| k.parse::<SplitName>().is_err()),
        );
        names
    }

    /// Row values in table column order.
    fn row(&self, columns: &[&str]) -> Vec<f64> {
        let mut v = vec![self.full, self.rare, self.non_rare];
        for c in columns {
            let s = &self.splits[*c];
            v.extend([s.full, s.unseen, s.seen]);
        }
        v
    }
}

/// Rounds to the two decimals shown in tables.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

const LABEL_WIDTH: usize = 12;
const CELL: usize = 9;

fn header(columns: &[&str], label_width: usize) -> String {
    let group_width = CELL * 3;
    let mut top = format!("{:label_width$}", "");
    let mut sub = format!("{:label_width$}", "");
    let mut groups = vec![("default", ["full", "rare", "non-rare"])];
    groups.extend(columns.iter().map(|c| (*c, ["full", "unseen", "seen"])));
    for (name, cols) in groups {
        write!(top, " |{name:^group_width$}").unwrap();
        sub.push_str(" |");
        for c in cols {
            write!(sub, "{c:>CELL$}").unwrap();
        }
    }
    let rule = "-".repeat(sub.len());
    format!("{top}\n{sub}\n{rule}\n")
}

fn format_row(label: &str, values: &[f64], label_width: usize, signed: bool) -> String {
    let mut line = format!("{label:<label_width$}");
    for (i, v) in values.iter().enumerate() {
        if i % 3 == 0 {
            line.push_str(" |");
        }
        if signed {
            write!(line, "{v:>+CELL$.2}").unwrap();
        } else {
            write!(line, "{v:>CELL$.2}").unwrap();
        }
    }
    line.push('\n');
    line
}

/// Aligned table with one row per labelled report, columns grouped as
/// default (full / rare / non-rare) followed by each split (full / unseen / seen).
pub fn render_table(rows: &[(String, EvalReport)]) -> Result<String> {
    let Some((_, first)) = rows.first() else {
        return Ok(String::new());
    };
    check_compatible(rows)?;
    let columns = first.split_columns();
    let width = rows
        .iter()
        .map(|(l, _)| l.chars().count() + 1)
        .max()
        .unwrap_or(0)
        .max(LABEL_WIDTH);
    let mut out = header(&columns, width);
    for (label, report) in rows {
        out.push_str(&format_row(label, &report.row(&columns), width, false));
    }
    Ok(out)
}

fn check_compatible(rows: &[(String, EvalReport)]) -> Result<()> {
    let (first_label, first) = &rows[0];
    for (label, r) in &rows[1..] {
        if r.splits.keys().ne(first.splits.keys()) {
            return Err(Error::Validation(format!(
                "reports {first_label:?} and {label:?} cover different splits"
            )));
        }
    }
    Ok(())
}

/// Per-column differences `row - baseline`, computed on two-decimal values.
pub fn deltas(baseline: &EvalReport, other: &EvalReport) -> Result<Vec<f64>> {
    if other.splits.keys().ne(baseline.splits.keys()) {
        return Err(Error::Validation("reports cover different splits".into()));
    }
    let columns = baseline.split_columns();
    Ok(other
        .row(&columns)
        .iter()
        .zip(baseline.row(&columns))
        .map(|(a, b)| round2(round2(*a) - round2(b)))
        .collect())
}

/// Side-by-side table of two or more reports followed by the delta of every
/// report against the first.
pub fn compare_reports(rows: &[(String, EvalReport)]) -> Result<String> {
    if rows.len() < 2 {
        return Err(Error::Validation("compare needs at least two reports".into()));
    }
    check_compatible(rows)?;
    let (base_label, base) = &rows[0];
    let columns = base.split_columns();
    let labels: Vec<String> = rows[1..]
        .iter()
        .map(|(l, _)| format!("{l} - {base_label}"))
        .collect();
    let width = labels
        .iter()
        .map(|l| l.chars().count() + 1)
        .chain(rows.iter().map(|(l, _)| l.chars().count() + 1))
        .max()
        .unwrap()
        .max(LABEL_WIDTH);
    let mut out = header(&columns, width);
    for (label, report) in rows {
        out.push_str(&format_row(label, &report.row(&columns), width, false));
    }
    out.push_str(&"-".repeat(out.lines().nth(1).map_or(0, str::len)));
    out.push('\n');
    for ((_, report), label) in rows[1..].iter().zip(&labels) {
        out.push_str(&format_row(label, &deltas(base, report)?, width, true));
    }
    Ok(out)
}
