//! Figures. Each figure kind fixes a row filter and a grouping; records are
//! aggregated with [`condition_summary`], the aggregate is written as TSV and
//! the SVG is drawn from the re-parsed TSV, so the image carries nothing the
//! table does not.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::table::{read_summary, read_table, write_summary};
use super::{write_file, ReportError, Result};
use crate::measures::MeasurementRecord;
use crate::stats::{apply_filter, column_value, condition_summary, Filter, SummaryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FigureKind {
    /// Pronoun surprisal by antecedent and pronoun gender (bars).
    PronounSurprisal,
    /// Pronoun similarity to subject/object over layers, by bias type.
    PronounSimilarity,
    /// `who` similarity to the higher/lower noun over layers, by verb type.
    RcSimilarityWho,
    /// RC verb surprisal by agreement location and verb type (bars).
    RcSurprisal,
    /// RC verb similarity to the higher/lower noun over layers.
    RcSimilarityVerb,
}

struct Layout {
    filter: &'static [(&'static str, &'static str)],
    x: &'static str,
    series: &'static [&'static str],
    lines: bool,
    y_label: &'static str,
}

impl FigureKind {
    pub const ALL: [FigureKind; 5] = [
        FigureKind::PronounSurprisal,
        FigureKind::PronounSimilarity,
        FigureKind::RcSimilarityWho,
        FigureKind::RcSurprisal,
        FigureKind::RcSimilarityVerb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FigureKind::PronounSurprisal => "pronoun_surprisal",
            FigureKind::PronounSimilarity => "pronoun_similarity",
            FigureKind::RcSimilarityWho => "rc_similarity_who",
            FigureKind::RcSurprisal => "rc_surprisal",
            FigureKind::RcSimilarityVerb => "rc_similarity_verb",
        }
    }

    fn layout(self) -> Layout {
        const SURPRISAL: &str = "surprisal (bits)";
        const PEARSON: &str = "similarity (Pearson r)";
        match self {
            FigureKind::PronounSurprisal => Layout {
                filter: &[("measure", "surprisal"), ("role", "pronoun")],
                x: "pronoun_target",
                series: &["pronoun_gender"],
                lines: false,
                y_label: SURPRISAL,
            },
            FigureKind::PronounSimilarity => Layout {
                filter: &[("measure", "similarity"), ("anchor", "pronoun")],
                x: "layer",
                series: &["target", "bias_category"],
                lines: true,
                y_label: PEARSON,
            },
            FigureKind::RcSimilarityWho => Layout {
                filter: &[("measure", "similarity"), ("anchor", "relativizer")],
                x: "layer",
                series: &["target", "verb_type"],
                lines: true,
                y_label: PEARSON,
            },
            FigureKind::RcSurprisal => Layout {
                filter: &[("measure", "surprisal"), ("role", "rc_verb")],
                x: "agreement_location",
                series: &["verb_type"],
                lines: false,
                y_label: SURPRISAL,
            },
            FigureKind::RcSimilarityVerb => Layout {
                filter: &[("measure", "similarity"), ("anchor", "rc_verb")],
                x: "layer",
                series: &["target", "agreement_location"],
                lines: true,
                y_label: PEARSON,
            },
        }
    }

    /// Columns every selected row must carry (besides the facet column).
    pub fn required_columns(self) -> Vec<&'static str> {
        let l = self.layout();
        std::iter::once(l.x).chain(l.series.iter().copied()).collect()
    }
}

impl std::fmt::Display for FigureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FigureKind {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self> {
        FigureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ReportError::UnknownFigure(s.to_string()))
    }
}

impl Serialize for FigureKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for FigureKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_facet() -> String {
    "model".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureSpec {
    pub kind: FigureKind,
    /// Record table (TSV or JSON lines).
    pub input: PathBuf,
    /// SVG output.
    pub output: PathBuf,
    /// Aggregated table; defaults to `output` with a `.tsv` extension.
    #[serde(default)]
    pub table: Option<PathBuf>,
    /// Column that splits the figure into panels.
    #[serde(default = "default_facet")]
    pub facet: String,
    /// Keep only layers divisible by this stride (layer figures only).
    #[serde(default)]
    pub layer_stride: Option<usize>,
    /// Extra row filter applied before aggregation.
    #[serde(default)]
    pub filter: Filter,
}

impl FigureSpec {
    pub fn new(kind: FigureKind, input: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        FigureSpec {
            kind,
            input: input.into(),
            output: output.into(),
            table: None,
            facet: default_facet(),
            layer_stride: None,
            filter: Filter::new(),
        }
    }

    pub fn table_path(&self) -> PathBuf {
        self.table.clone().unwrap_or_else(|| self.output.with_extension("tsv"))
    }

    pub fn group_by(&self) -> Vec<String> {
        let l = self.kind.layout();
        std::iter::once(self.facet.as_str())
            .chain(std::iter::once(l.x))
            .chain(l.series.iter().copied())
            .map(str::to_string)
            .collect()
    }
}

/// Selects and validates the rows of a figure, then aggregates them.
pub fn figure_table(spec: &FigureSpec, records: &[MeasurementRecord]) -> Result<Vec<SummaryRow>> {
    let layout = spec.kind.layout();
    let mut filter = spec.filter.clone();
    for (col, v) in layout.filter {
        filter.insert(col.to_string(), vec![v.to_string()]);
    }
    let mut rows: Vec<MeasurementRecord> = apply_filter(records, &filter).into_iter().cloned().collect();
    if let Some(stride) = spec.layer_stride {
        if stride == 0 {
            return Err(ReportError::Invalid("layer_stride must be positive".into()));
        }
        if !layout.lines {
            return Err(ReportError::Invalid(format!("layer_stride does not apply to `{}`", spec.kind)));
        }
        rows.retain(|r| r.layer.is_some_and(|l| l % stride == 0));
    }
    if rows.is_empty() {
        return Err(ReportError::Invalid(format!("no rows in the input table match figure `{}`", spec.kind)));
    }
    let group_by = spec.group_by();
    for r in &rows {
        if let Some(c) = group_by.iter().find(|c| column_value(r, c).is_none()) {
            return Err(ReportError::MissingColumn {
                kind: spec.kind.to_string(),
                column: c.clone(),
            });
        }
    }
    condition_summary(&rows, &group_by).map_err(|e| ReportError::Invalid(e.to_string()))
}

/// Reads the input, writes the aggregated table and the SVG. Returns the
/// bytes of both, table first.
pub fn emit_figure(spec: &FigureSpec) -> Result<(String, String)> {
    let records = read_table(&spec.input)?;
    let rows = figure_table(spec, &records)?;
    let table = write_summary(&spec.group_by(), &rows);
    let svg = render_svg(spec.kind, &table)?;
    write_file(&spec.table_path(), table.as_bytes())?;
    write_file(&spec.output, svg.as_bytes())?;
    Ok((table, svg))
}

const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];
const PANEL_W: f64 = 300.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_T: f64 = 40.0;
const GAP: f64 = 40.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn sort_x(xs: &mut [String]) {
    xs.sort_by(|a, b| match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    });
}

/// Renders an aggregated figure table (as written by [`emit_figure`]).
/// Columns: facet, x, series..., mean, n, half_width.
pub fn render_svg(kind: FigureKind, table: &str) -> Result<String> {
    let (cols, rows) = read_summary(table)?;
    if cols.len() < 3 {
        return Err(ReportError::Invalid("figure table needs facet, x and series columns".into()));
    }
    let layout = kind.layout();
    let facets: Vec<&str> = rows.iter().map(|r| r.keys[0].as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut xs: Vec<String> = rows.iter().map(|r| r.keys[1].clone()).collect::<BTreeSet<_>>().into_iter().collect();
    sort_x(&mut xs);
    let series: Vec<String> = rows
        .iter()
        .map(|r| r.keys[2..].join(" / "))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let lo_hi = rows.iter().map(|r| {
        let hw = r.half_width.unwrap_or(0.0);
        (r.mean - hw, r.mean + hw)
    });
    let (mut lo, mut hi) = lo_hi.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (a, b)| (l.min(a), h.max(b)));
    if !layout.lines {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if hi - lo < 1e-9 {
        hi += 0.5;
        lo -= 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);

    let width = MARGIN_L + facets.len() as f64 * (PANEL_W + GAP) + 160.0;
    let height = MARGIN_T + PANEL_H + 60.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<title>{}</title>"#, kind.as_str());
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
        MARGIN_T + PANEL_H / 2.0,
        MARGIN_T + PANEL_H / 2.0,
        layout.y_label
    );

    let cells: BTreeMap<(&str, &str, String), &SummaryRow> = rows
        .iter()
        .map(|r| ((r.keys[0].as_str(), r.keys[1].as_str(), r.keys[2..].join(" / ")), r))
        .collect();
    let y_of = |v: f64| MARGIN_T + PANEL_H * (hi - v) / (hi - lo);

    for (fi, facet) in facets.iter().enumerate() {
        let x0 = MARGIN_L + fi as f64 * (PANEL_W + GAP);
        let _ = writeln!(
            svg,
            r#"<g class="panel"><rect x="{x0:.1}" y="{MARGIN_T:.1}" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + PANEL_W / 2.0,
            MARGIN_T - 12.0,
            esc(facet)
        );
        for t in 0..=4 {
            let v = lo + (hi - lo) * t as f64 / 4.0;
            let y = y_of(v);
            let _ = writeln!(
                svg,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
                x0 - 4.0,
                x0 - 6.0,
                y + 4.0
            );
        }
        if !layout.lines && lo < 0.0 && hi > 0.0 {
            let y = y_of(0.0);
            let _ = writeln!(svg, r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#999"/>"##, x0 + PANEL_W);
        }
        let slot = PANEL_W / xs.len() as f64;
        for (xi, x) in xs.iter().enumerate() {
            let cx = x0 + slot * (xi as f64 + 0.5);
            let _ = writeln!(
                svg,
                r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                MARGIN_T + PANEL_H + 14.0,
                esc(x)
            );
        }
        if layout.lines {
            for (si, s) in series.iter().enumerate() {
                let color = PALETTE[si % PALETTE.len()];
                let pts: Vec<(f64, f64, Option<f64>)> = xs
                    .iter()
                    .enumerate()
                    .filter_map(|(xi, x)| {
                        cells
                            .get(&(*facet, x.as_str(), s.clone()))
                            .map(|r| (x0 + slot * (xi as f64 + 0.5), r.mean, r.half_width))
                    })
                    .collect();
                let path: Vec<String> = pts.iter().map(|(x, m, _)| format!("{x:.1},{:.1}", y_of(*m))).collect();
                let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
                for (x, m, hw) in pts {
                    let _ = writeln!(svg, r#"<circle cx="{x:.1}" cy="{:.1}" r="2" fill="{color}"/>"#, y_of(m));
                    if let Some(hw) = hw {
                        let _ = writeln!(
                            svg,
                            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{color}"/>"#,
                            y_of(m - hw),
                            y_of(m + hw)
                        );
                    }
                }
            }
        } else {
            let bar_w = slot * 0.8 / series.len() as f64;
            for (xi, x) in xs.iter().enumerate() {
                for (si, s) in series.iter().enumerate() {
                    let Some(r) = cells.get(&(*facet, x.as_str(), s.clone())) else { continue };
                    let color = PALETTE[si % PALETTE.len()];
                    let bx = x0 + slot * xi as f64 + slot * 0.1 + bar_w * si as f64;
                    let (y1, y2) = (y_of(r.mean.max(0.0)), y_of(r.mean.min(0.0)));
                    let _ = writeln!(
                        svg,
                        r#"<rect x="{bx:.1}" y="{y1:.1}" width="{bar_w:.1}" height="{:.1}" fill="{color}"/>"#,
                        y2 - y1
                    );
                    if let Some(hw) = r.half_width {
                        let cx = bx + bar_w / 2.0;
                        let _ = writeln!(
                            svg,
                            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                            y_of(r.mean - hw),
                            y_of(r.mean + hw)
                        );
                    }
                }
            }
        }
        let _ = writeln!(svg, "</g>");
    }
    let lx = MARGIN_L + facets.len() as f64 * (PANEL_W + GAP);
    let _ = writeln!(
        svg,
        r#"<text x="{lx:.1}" y="{:.1}">{}</text>"#,
        MARGIN_T,
        esc(&cols[2..].join(" / "))
    );
    for (si, s) in series.iter().enumerate() {
        let y = MARGIN_T + 16.0 * (si as f64 + 1.0);
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
            y - 9.0,
            PALETTE[si % PALETTE.len()],
            lx + 14.0,
            esc(s)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_L + PANEL_W / 2.0,
        MARGIN_T + PANEL_H + 34.0,
        esc(&cols[1])
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Resolves relative paths of a figure spec against `base`.
pub fn resolve(spec: &FigureSpec, base: &Path) -> FigureSpec {
    let mut s = spec.clone();
    s.input = base.join(&spec.input);
    s.output = base.join(&spec.output);
    s.table = Some(base.join(spec.table_path()));
    s
}
