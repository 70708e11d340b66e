//! Fixed-effects linear models and post-hoc t-tests over record tables.
//!
//! By-item random intercepts are approximated by item fixed effects. They
//! are absorbed by demeaning the response and every design column within
//! items, which gives the same condition estimates and standard errors as
//! adding sum-coded item indicators, without building an indicator column
//! per item. Terms that do not vary within items are then aliased with the
//! item effects and reported as such.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::measures::MeasurementRecord;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no rows left to analyse{0}")]
    EmptyTable(String),
    #[error("column `{0}` is missing from the table")]
    MissingColumn(String),
    #[error("column `{column}` has non-numeric value `{value}`")]
    NotNumeric { column: String, value: String },
    #[error("design is rank deficient; aliased terms: {}", .0.join(", "))]
    Aliased(Vec<String>),
    #[error("{0}")]
    TooFew(String),
    #[error("degenerate test: {0}")]
    Degenerate(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

pub const DEFAULT_THRESHOLD: f64 = 0.005;
pub const MARGINAL_THRESHOLD: f64 = 0.05;

/// Strictly below the threshold.
pub fn significance(p: f64, threshold: f64) -> bool {
    p < threshold
}

/// `significant`, `marginal` (threshold <= p < 0.05) or `ns`.
pub fn significance_label(p: f64, threshold: f64) -> &'static str {
    if significance(p, threshold) {
        "significant"
    } else if p < MARGINAL_THRESHOLD {
        "marginal"
    } else {
        "ns"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub analysis: String,
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub df: f64,
    pub p_value: f64,
    pub significant: bool,
}

impl StatResult {
    pub fn label(&self, threshold: f64) -> &'static str {
        significance_label(self.p_value, threshold)
    }
}

/// Multiplies p-values by the number of results (capped at 1) and
/// re-evaluates significance.
pub fn bonferroni(results: &mut [StatResult], threshold: f64) {
    let m = results.len() as f64;
    for r in results {
        r.p_value = (r.p_value * m).min(1.0);
        r.significant = significance(r.p_value, threshold);
    }
}

/// Value of a named column: a built-in record field or a condition.
pub fn column_value(rec: &MeasurementRecord, column: &str) -> Option<String> {
    match column {
        "stim_id" => Some(rec.stim_id.clone()),
        "model" => Some(rec.model.clone()),
        "measure" => Some(rec.measure.as_str().to_string()),
        "role" => rec.role.map(|r| r.as_str().to_string()),
        "anchor" => rec.anchor.map(|r| r.as_str().to_string()),
        "target" => rec.target.map(|r| r.as_str().to_string()),
        "layer" => rec.layer.map(|l| l.to_string()),
        "value" => Some(rec.value.to_string()),
        "coverage" => rec.coverage.map(|c| c.to_string()),
        other => rec.conditions.get(other).cloned(),
    }
}

fn numeric(rec: &MeasurementRecord, column: &str) -> Result<f64> {
    match column {
        "value" => Ok(rec.value),
        _ => {
            let s = column_value(rec, column).ok_or_else(|| StatsError::MissingColumn(column.to_string()))?;
            s.parse().map_err(|_| StatsError::NotNumeric {
                column: column.to_string(),
                value: s,
            })
        }
    }
}

/// Row filter: every listed column must take one of the listed values.
pub type Filter = BTreeMap<String, Vec<String>>;

pub fn apply_filter<'a>(records: &'a [MeasurementRecord], filter: &Filter) -> Vec<&'a MeasurementRecord> {
    records
        .iter()
        .filter(|r| {
            filter
                .iter()
                .all(|(col, allowed)| column_value(r, col).is_some_and(|v| allowed.contains(&v)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coding {
    /// Levels sorted; level j < k-1 gets indicator column j, the last level
    /// gets -1 in every column.
    Sum,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factor {
    pub column: String,
    pub coding: Coding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnAliased {
    #[default]
    Error,
    /// Drop aliased columns with a log entry and fit the rest.
    Drop,
}

fn default_response() -> String {
    "value".into()
}

fn default_item_column() -> String {
    "item".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_response")]
    pub response: String,
    pub factors: Vec<Factor>,
    #[serde(default = "one")]
    pub interaction_order: usize,
    #[serde(default)]
    pub item_effects: bool,
    #[serde(default = "default_item_column")]
    pub item_column: String,
    #[serde(default)]
    pub on_aliased: OnAliased,
    #[serde(default)]
    pub filter: Filter,
}

fn one() -> usize {
    1
}

struct Column {
    name: String,
    values: Vec<f64>,
}

/// Design columns (without intercept) for one factor.
fn factor_columns(rows: &[&MeasurementRecord], f: &Factor) -> Result<Vec<Column>> {
    match f.coding {
        Coding::Continuous => Ok(vec![Column {
            name: f.column.clone(),
            values: rows.iter().map(|r| numeric(r, &f.column)).collect::<Result<_>>()?,
        }]),
        Coding::Sum => {
            let labels: Vec<String> = rows
                .iter()
                .map(|r| column_value(r, &f.column).ok_or_else(|| StatsError::MissingColumn(f.column.clone())))
                .collect::<Result<_>>()?;
            let mut levels: Vec<&String> = labels.iter().collect();
            levels.sort();
            levels.dedup();
            if levels.len() < 2 {
                return Err(StatsError::TooFew(format!("factor `{}` has a single level", f.column)));
            }
            let last = levels.len() - 1;
            Ok(levels[..last]
                .iter()
                .map(|level| Column {
                    name: format!("{}[{}]", f.column, level),
                    values: labels
                        .iter()
                        .map(|l| {
                            if l == *level {
                                1.0
                            } else if l == levels[last] {
                                -1.0
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                })
                .collect())
        }
    }
}

/// All products of one column from each factor in every subset of
/// `factors` with size <= `order`, main effects first.
fn design_terms(per_factor: &[Vec<Column>], order: usize) -> Vec<Column> {
    let k = per_factor.len();
    let mut subsets: Vec<Vec<usize>> = (1u32..(1 << k))
        .map(|mask| (0..k).filter(|i| mask & (1 << i) != 0).collect::<Vec<_>>())
        .filter(|s: &Vec<usize>| s.len() <= order)
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    let mut out = Vec::new();
    for s in subsets {
        let mut acc: Vec<Column> = vec![Column {
            name: String::new(),
            values: vec![1.0; per_factor[0][0].values.len()],
        }];
        for &f in &s {
            let mut next = Vec::new();
            for a in &acc {
                for c in &per_factor[f] {
                    next.push(Column {
                        name: if a.name.is_empty() { c.name.clone() } else { format!("{}:{}", a.name, c.name) },
                        values: a.values.iter().zip(&c.values).map(|(x, y)| x * y).collect(),
                    });
                }
            }
            acc = next;
        }
        out.extend(acc);
    }
    out
}

fn demean_within(values: &mut [f64], groups: &[usize], n_groups: usize) {
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (v, &g) in values.iter().zip(groups) {
        sums[g] += v;
        counts[g] += 1;
    }
    for (v, &g) in values.iter_mut().zip(groups) {
        *v -= sums[g] / counts[g] as f64;
    }
}

const ALIAS_TOL: f64 = 1e-9;

/// Ordinary least squares with sum-coded factors, interactions up to the
/// spec'd order and optional item fixed effects.
pub fn fit_linear(records: &[MeasurementRecord], spec: &ModelSpec, threshold: f64) -> Result<Vec<StatResult>> {
    if spec.factors.is_empty() {
        return Err(StatsError::Invalid("model needs at least one factor".into()));
    }
    if spec.interaction_order == 0 || spec.interaction_order > spec.factors.len() {
        return Err(StatsError::Invalid(format!(
            "interaction order {} outside 1..={}",
            spec.interaction_order,
            spec.factors.len()
        )));
    }
    let rows = apply_filter(records, &spec.filter);
    if rows.is_empty() {
        return Err(StatsError::EmptyTable(format!(" for model `{}`", spec.name)));
    }
    let n = rows.len();
    let mut y: Vec<f64> = rows.iter().map(|r| numeric(r, &spec.response)).collect::<Result<_>>()?;
    let per_factor: Vec<Vec<Column>> = spec.factors.iter().map(|f| factor_columns(&rows, f)).collect::<Result<_>>()?;
    let mut terms = design_terms(&per_factor, spec.interaction_order);

    let n_absorbed = if spec.item_effects {
        let mut ids = BTreeMap::new();
        let mut groups = Vec::with_capacity(n);
        for r in &rows {
            let key = column_value(r, &spec.item_column).ok_or_else(|| StatsError::MissingColumn(spec.item_column.clone()))?;
            let next = ids.len();
            groups.push(*ids.entry(key).or_insert(next));
        }
        let m = ids.len();
        demean_within(&mut y, &groups, m);
        for t in &mut terms {
            demean_within(&mut t.values, &groups, m);
        }
        m
    } else {
        terms.insert(
            0,
            Column {
                name: "(intercept)".into(),
                values: vec![1.0; n],
            },
        );
        0
    };

    // Sequential Gram-Schmidt to find columns in the span of earlier ones.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut keep = Vec::new();
    let mut aliased = Vec::new();
    for t in &terms {
        let norm0 = t.values.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut r = t.values.clone();
        for q in &basis {
            let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= ALIAS_TOL * norm0.max(1.0) {
            aliased.push(t.name.clone());
        } else {
            basis.push(r.into_iter().map(|x| x / norm).collect());
            keep.push(t);
        }
    }
    if !aliased.is_empty() {
        match spec.on_aliased {
            OnAliased::Error => return Err(StatsError::Aliased(aliased)),
            OnAliased::Drop => log::warn!("model `{}`: dropping aliased terms {}", spec.name, aliased.join(", ")),
        }
    }
    let p = keep.len();
    // Absorbed item means cost one degree of freedom per item.
    let df = n as f64 - p as f64 - n_absorbed as f64;
    if df < 1.0 {
        return Err(StatsError::TooFew(format!("{n} rows for {p} terms leave no residual degrees of freedom")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| keep[j].values[i]);
    let yv = DVector::from_vec(y);
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| StatsError::Aliased(vec!["(numerically singular design)".into()]))?;
    let resid = &yv - &x * &beta;
    let rss = resid.dot(&resid);
    let y_scale = yv.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let sigma2 = if rss <= (1e-12 * y_scale).powi(2) * n as f64 { 0.0 } else { rss / df };
    let r_inv = r
        .try_inverse()
        .ok_or_else(|| StatsError::Aliased(vec!["(numerically singular design)".into()]))?;
    let cov_diag: Vec<f64> = (0..p).map(|j| r_inv.row(j).iter().map(|v| v * v).sum::<f64>()).collect();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| StatsError::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(p);
    for (j, t) in keep.iter().enumerate() {
        let mut b = beta[j];
        if b.abs() < 1e-10 * y_scale {
            b = 0.0;
        }
        let se = (sigma2 * cov_diag[j]).sqrt();
        let (tv, pv) = t_and_p(b, se, &dist);
        out.push(StatResult {
            analysis: spec.name.clone(),
            term: t.name.clone(),
            estimate: b,
            std_error: se,
            t_value: tv,
            df,
            p_value: pv,
            significant: significance(pv, threshold),
        });
    }
    Ok(out)
}

fn t_and_p(estimate: f64, se: f64, dist: &StudentsT) -> (f64, f64) {
    if se == 0.0 {
        return if estimate == 0.0 {
            (0.0, 1.0)
        } else {
            (estimate.signum() * f64::INFINITY, 0.0)
        };
    }
    let t = estimate / se;
    (t, two_sided_p(t, dist))
}

fn two_sided_p(t: f64, dist: &StudentsT) -> f64 {
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn t_pvalue(t: f64, df: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| StatsError::Invalid(e.to_string()))?;
    Ok(two_sided_p(t, &dist))
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var)
}

/// Welch (unpaired) or paired t-test of `b - a`; `estimate` is the mean
/// difference.
///
/// With zero variance the test is degenerate when the mean difference is
/// also zero; a nonzero exact shift gives an infinite t and p = 0.
pub fn posthoc_ttest(a: &[f64], b: &[f64], paired: bool, threshold: f64) -> Result<StatResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFew("each group needs at least two values".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::Invalid("non-finite value in a t-test group".into()));
    }
    let (estimate, se, df) = if paired {
        if a.len() != b.len() {
            return Err(StatsError::Invalid(format!("paired groups differ in size ({} vs {})", a.len(), b.len())));
        }
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
        let (m, v) = mean_var(&d);
        (m, (v / d.len() as f64).sqrt(), d.len() as f64 - 1.0)
    } else {
        let (ma, va) = mean_var(a);
        let (mb, vb) = mean_var(b);
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let (sa, sb) = (va / na, vb / nb);
        let se2 = sa + sb;
        let df = if se2 == 0.0 {
            na + nb - 2.0
        } else {
            se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0))
        };
        (mb - ma, se2.sqrt(), df)
    };
    if se == 0.0 && estimate == 0.0 {
        return Err(StatsError::Degenerate("zero variance and zero mean difference".into()));
    }
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| StatsError::Invalid(e.to_string()))?;
    let (t, p) = t_and_p(estimate, se, &dist);
    Ok(StatResult {
        analysis: String::new(),
        term: if paired { "paired(b-a)" } else { "welch(b-a)" }.into(),
        estimate,
        std_error: se,
        t_value: t,
        df,
        p_value: p,
        significant: significance(p, threshold),
    })
}

/// A contrast between two levels of a column, optionally paired on key
/// columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TTestSpec {
    #[serde(default)]
    pub name: String,
    pub contrast: String,
    pub a: String,
    pub b: String,
    /// Rows are paired on equal values of these columns; empty means Welch.
    #[serde(default)]
    pub paired_by: Vec<String>,
    #[serde(default)]
    pub filter: Filter,
}

/// Extracts the two groups described by a t-test spec. Paired rows without
/// a partner are skipped (and logged).
pub fn ttest_groups(records: &[MeasurementRecord], spec: &TTestSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = apply_filter(records, &spec.filter);
    let mut a = Vec::new();
    let mut b = Vec::new();
    if spec.paired_by.is_empty() {
        for r in rows {
            match column_value(r, &spec.contrast) {
                Some(v) if v == spec.a => a.push(r.value),
                Some(v) if v == spec.b => b.push(r.value),
                Some(_) => {}
                None => return Err(StatsError::MissingColumn(spec.contrast.clone())),
            }
        }
        return Ok((a, b));
    }
    let mut cells: BTreeMap<Vec<String>, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in rows {
        let key: Vec<String> = spec
            .paired_by
            .iter()
            .map(|c| column_value(r, c).ok_or_else(|| StatsError::MissingColumn(c.clone())))
            .collect::<Result<_>>()?;
        let level = column_value(r, &spec.contrast).ok_or_else(|| StatsError::MissingColumn(spec.contrast.clone()))?;
        let cell = cells.entry(key.clone()).or_default();
        let slot = if level == spec.a {
            &mut cell.0
        } else if level == spec.b {
            &mut cell.1
        } else {
            continue;
        };
        if slot.replace(r.value).is_some() {
            return Err(StatsError::Invalid(format!(
                "t-test `{}`: more than one `{level}` row for pairing key {}",
                spec.name,
                key.join("/")
            )));
        }
    }
    let mut unpaired = 0;
    for (x, y) in cells.into_values() {
        match (x, y) {
            (Some(x), Some(y)) => {
                a.push(x);
                b.push(y);
            }
            _ => unpaired += 1,
        }
    }
    if unpaired > 0 {
        log::warn!("t-test `{}`: {unpaired} unpaired rows skipped", spec.name);
    }
    Ok((a, b))
}

pub fn run_ttest(records: &[MeasurementRecord], spec: &TTestSpec, threshold: f64) -> Result<StatResult> {
    let (a, b) = ttest_groups(records, spec)?;
    let mut r = posthoc_ttest(&a, &b, !spec.paired_by.is_empty(), threshold)?;
    r.analysis = spec.name.clone();
    r.term = format!("{}[{}]-{}[{}]", spec.contrast, spec.b, spec.contrast, spec.a);
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub keys: Vec<String>,
    pub mean: f64,
    pub n: usize,
    /// Normal-approximation 95% half-width; `None` for single-row cells.
    pub half_width: Option<f64>,
}

/// Per-cell mean, count and 95% half-width, cells in sorted key order.
pub fn condition_summary(records: &[MeasurementRecord], group_by: &[String]) -> Result<Vec<SummaryRow>> {
    let mut cells: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    for r in records {
        let key = group_by
            .iter()
            .map(|c| column_value(r, c).ok_or_else(|| StatsError::MissingColumn(c.clone())))
            .collect::<Result<Vec<_>>>()?;
        cells.entry(key).or_default().push(r.value);
    }
    Ok(cells
        .into_iter()
        .map(|(keys, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let half_width = (n > 1).then(|| {
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                1.96 * (var / n as f64).sqrt()
            });
            SummaryRow {
                keys,
                mean,
                n,
                half_width,
            }
        })
        .collect())
}
