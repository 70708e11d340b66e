//! Record tables.
//!
//! TSV layout (schema `icprobe.records v1`):
//!
//! ```text
//! # icprobe.records v1
//! stim_id  model  measure  role  anchor  target  layer  value  coverage  <condition columns, sorted>
//! ```
//!
//! Missing values are written as `NA`; `value` and `coverage` use six fixed
//! decimals, so TSV round trips are exact to six decimals. The JSON-lines
//! format (`{"format":"icprobe.records","version":1}` header, then one record
//! per line) keeps full precision.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, write_file, ReportError, Result};
use crate::experiments::{PreferenceRecord, PreferenceSummary};
use crate::measures::{MeasureKind, MeasurementRecord};
use crate::stats::{StatResult, SummaryRow};
use crate::stimgen::Role;
use crate::util::fmt6;

pub const TSV_SCHEMA: &str = "# icprobe.records v1";
const FIXED: [&str; 9] = ["stim_id", "model", "measure", "role", "anchor", "target", "layer", "value", "coverage"];
const NA: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    #[default]
    Tsv,
    JsonLines,
}

impl TableFormat {
    /// `.jsonl` selects JSON lines, anything else TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => TableFormat::JsonLines,
            _ => TableFormat::Tsv,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonHeader {
    format: String,
    version: u32,
}

fn check_cell(s: &str) -> Result<&str> {
    if s.is_empty() || s == NA || s.contains(['\t', '\n', '\r']) {
        return Err(ReportError::Invalid(format!("value `{s}` cannot be stored in a table cell")));
    }
    Ok(s)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

pub fn write_table_string(records: &[MeasurementRecord], format: TableFormat) -> Result<String> {
    match format {
        TableFormat::JsonLines => {
            let header = JsonHeader {
                format: "icprobe.records".into(),
                version: 1,
            };
            let mut out = serde_json::to_string(&header).expect("header serializes");
            out.push('\n');
            for r in records {
                if !r.value.is_finite() {
                    return Err(ReportError::Invalid(format!("{}: non-finite value", r.stim_id)));
                }
                out.push_str(&serde_json::to_string(r).map_err(|e| ReportError::Invalid(e.to_string()))?);
                out.push('\n');
            }
            Ok(out)
        }
        TableFormat::Tsv => {
            let conds: BTreeSet<&str> = records.iter().flat_map(|r| r.conditions.keys().map(String::as_str)).collect();
            if let Some(c) = conds.iter().find(|c| FIXED.contains(c)) {
                return Err(ReportError::Invalid(format!("condition `{c}` shadows a fixed column")));
            }
            let mut out = String::from(TSV_SCHEMA);
            out.push('\n');
            let header: Vec<&str> = FIXED.iter().copied().chain(conds.iter().copied()).collect();
            for c in &header {
                check_cell(c)?;
            }
            out.push_str(&header.join("\t"));
            out.push('\n');
            for r in records {
                if !r.value.is_finite() {
                    return Err(ReportError::Invalid(format!("{}: non-finite value", r.stim_id)));
                }
                let mut row = vec![
                    check_cell(&r.stim_id)?.to_string(),
                    check_cell(&r.model)?.to_string(),
                    r.measure.as_str().to_string(),
                    opt(r.role),
                    opt(r.anchor),
                    opt(r.target),
                    opt(r.layer),
                    fmt6(r.value),
                    r.coverage.map_or_else(|| NA.to_string(), fmt6),
                ];
                for c in &conds {
                    row.push(match r.conditions.get(*c) {
                        Some(v) => check_cell(v)?.to_string(),
                        None => NA.to_string(),
                    });
                }
                out.push_str(&row.join("\t"));
                out.push('\n');
            }
            Ok(out)
        }
    }
}

pub fn write_table(records: &[MeasurementRecord], path: &Path, format: TableFormat) -> Result<()> {
    write_file(path, write_table_string(records, format)?.as_bytes())
}

pub fn read_table(path: &Path) -> Result<Vec<MeasurementRecord>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    read_table_str(&text)
}

/// Parses either table format, detected from the first line.
pub fn read_table_str(text: &str) -> Result<Vec<MeasurementRecord>> {
    let first = text.lines().next().unwrap_or("");
    if first.starts_with('{') {
        read_jsonl(text)
    } else {
        read_tsv(text)
    }
}

fn parse_err(line: usize, reason: impl Into<String>) -> ReportError {
    ReportError::Parse {
        line,
        reason: reason.into(),
    }
}

fn read_jsonl(text: &str) -> Result<Vec<MeasurementRecord>> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let h: JsonHeader = serde_json::from_str(first).map_err(|e| parse_err(1, e.to_string()))?;
    if h.format != "icprobe.records" || h.version != 1 {
        return Err(parse_err(1, format!("unsupported format {} v{}", h.format, h.version)));
    }
    let mut out = Vec::new();
    for (i, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let r: MeasurementRecord = serde_json::from_str(l).map_err(|e| parse_err(i + 1, e.to_string()))?;
        if !r.value.is_finite() {
            return Err(parse_err(i + 1, "non-finite value"));
        }
        out.push(r);
    }
    Ok(out)
}

fn parse_opt<T: std::str::FromStr>(s: &str, line: usize, col: &str) -> Result<Option<T>> {
    if s == NA {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| parse_err(line, format!("bad {col} `{s}`")))
}

fn read_tsv(text: &str) -> Result<Vec<MeasurementRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == TSV_SCHEMA => {}
        _ => return Err(parse_err(1, format!("expected `{TSV_SCHEMA}`"))),
    }
    let (_, header) = lines.next().ok_or_else(|| parse_err(2, "missing column header"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < FIXED.len() || cols[..FIXED.len()] != FIXED {
        return Err(parse_err(2, format!("columns must start with {}", FIXED.join(", "))));
    }
    let conds = &cols[FIXED.len()..];
    let mut seen = BTreeSet::new();
    for c in conds {
        if c.is_empty() || *c == NA || FIXED.contains(c) || !seen.insert(*c) {
            return Err(parse_err(2, format!("bad condition column `{c}`")));
        }
    }
    let mut out = Vec::new();
    for (i, l) in lines {
        let line = i + 1;
        if l.is_empty() {
            continue;
        }
        let cells: Vec<&str> = l.split('\t').collect();
        if cells.len() != cols.len() {
            return Err(parse_err(line, format!("{} cells, expected {}", cells.len(), cols.len())));
        }
        if cells[0].is_empty() || cells[0] == NA || cells[1].is_empty() || cells[1] == NA {
            return Err(parse_err(line, "stim_id and model are required"));
        }
        let measure: MeasureKind = cells[2].parse().map_err(|e: String| parse_err(line, e))?;
        let value: f64 = cells[7].parse().map_err(|_| parse_err(line, format!("bad value `{}`", cells[7])))?;
        if !value.is_finite() {
            return Err(parse_err(line, "non-finite value"));
        }
        let mut conditions = BTreeMap::new();
        for (c, v) in conds.iter().zip(&cells[FIXED.len()..]) {
            if *v != NA {
                if v.is_empty() {
                    return Err(parse_err(line, format!("empty cell in `{c}`")));
                }
                conditions.insert(c.to_string(), v.to_string());
            }
        }
        out.push(MeasurementRecord {
            stim_id: cells[0].to_string(),
            model: cells[1].to_string(),
            measure,
            role: parse_opt::<Role>(cells[3], line, "role")?,
            anchor: parse_opt::<Role>(cells[4], line, "anchor")?,
            target: parse_opt::<Role>(cells[5], line, "target")?,
            layer: parse_opt::<usize>(cells[6], line, "layer")?,
            value,
            coverage: parse_opt::<f64>(cells[8], line, "coverage")?,
            conditions,
        });
    }
    Ok(out)
}

fn pvalue(p: f64) -> String {
    format!("{p:.6e}")
}

pub fn write_stat_results(results: &[StatResult], threshold: f64) -> String {
    let mut out = String::from("analysis\tterm\testimate\tstd_error\tt_value\tdf\tp_value\tsignificant\tlabel\n");
    for r in results {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            if r.analysis.is_empty() { NA } else { &r.analysis },
            r.term,
            fmt6(r.estimate),
            fmt6(r.std_error),
            fmt6(r.t_value),
            fmt6(r.df),
            pvalue(r.p_value),
            r.significant,
            r.label(threshold)
        ));
    }
    out
}

pub fn write_summary(group_by: &[String], rows: &[SummaryRow]) -> String {
    let mut out = group_by.join("\t");
    if !group_by.is_empty() {
        out.push('\t');
    }
    out.push_str("mean\tn\thalf_width\n");
    for r in rows {
        for k in &r.keys {
            out.push_str(k);
            out.push('\t');
        }
        out.push_str(&format!("{}\t{}\t{}\n", fmt6(r.mean), r.n, r.half_width.map_or_else(|| NA.to_string(), fmt6)));
    }
    out
}

/// Parses a table written by [`write_summary`].
pub fn read_summary(text: &str) -> Result<(Vec<String>, Vec<SummaryRow>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty summary"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    let k = cols.len().checked_sub(3).ok_or_else(|| parse_err(1, "too few columns"))?;
    if cols[k..] != ["mean", "n", "half_width"] {
        return Err(parse_err(1, "summary must end with mean, n, half_width"));
    }
    let mut rows = Vec::new();
    for (i, l) in lines {
        let cells: Vec<&str> = l.split('\t').collect();
        if cells.len() != cols.len() {
            return Err(parse_err(i + 1, "wrong number of cells"));
        }
        let bad = |c: &str| parse_err(i + 1, format!("bad number `{c}`"));
        rows.push(SummaryRow {
            keys: cells[..k].iter().map(|s| s.to_string()).collect(),
            mean: cells[k].parse().map_err(|_| bad(cells[k]))?,
            n: cells[k + 1].parse().map_err(|_| bad(cells[k + 1]))?,
            half_width: parse_opt(cells[k + 2], i + 1, "half_width")?,
        });
    }
    Ok((cols[..k].iter().map(|s| s.to_string()).collect(), rows))
}

pub fn write_preferences(prefs: &[PreferenceRecord], summary: &[PreferenceSummary]) -> (String, String) {
    let mut p = String::from("pair_id\tmodel\tverb_type\tpreferred\tmargin\n");
    for r in prefs {
        let preferred = match r.preferred {
            Some(crate::experiments::AttachmentLocation::Higher) => "higher",
            Some(crate::experiments::AttachmentLocation::Lower) => "lower",
            None => "tie",
        };
        p.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.pair_id, r.model, r.verb_type, preferred, fmt6(r.margin)));
    }
    let mut s = String::from("model\tverb_type\tn\thigher\tlower\tties\tpct_higher\n");
    for r in summary {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.model,
            r.verb_type,
            r.n,
            r.higher,
            r.lower,
            r.ties,
            fmt6(r.pct_higher)
        ));
    }
    (p, s)
}
