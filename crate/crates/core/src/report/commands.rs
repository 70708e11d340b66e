//! The `gen`, `run`, `stats` and `plot` commands. The CLI is a thin wrapper
//! around these; tests call them directly.

use std::collections::BTreeSet;
use std::path::Path;

use super::config::{Config, GenSection, PlotSection, RunSection, StatsSection};
use super::figure::{emit_figure, resolve};
use super::manifest::{ModelEntry, RunManifest};
use super::table::{read_table, write_preferences, write_stat_results, write_summary, write_table_string, TableFormat};
use super::{write_file, ReportError};
use crate::backend::{build_backend, Backend, BuildContext};
use crate::experiments::{self, Model};
use crate::lexicon::LexiconBundle;
use crate::stats::{apply_filter, bonferroni, condition_summary, fit_linear, run_ttest};
use crate::stimgen::{self, GenderCondition, StimulusKind, StimulusSet};
use crate::Result;

pub fn load_lexicons(cfg: &Config, base: &Path) -> Result<LexiconBundle> {
    LexiconBundle::load(&cfg.lexicons.overrides(base))
}

pub fn generate(kind: StimulusKind, condition: GenderCondition, lex: &LexiconBundle) -> Result<StimulusSet> {
    Ok(match kind {
        StimulusKind::Referential => stimgen::gen_referential(&lex.norms, &lex.pairs, condition)?,
        StimulusKind::Completion => stimgen::gen_completion(&lex.completion)?,
        StimulusKind::RcReading => stimgen::gen_rc_reading(&lex.reading)?,
    })
}

/// Writes the generated stimulus set; returns its size.
pub fn cmd_gen(section: &GenSection, lex: &LexiconBundle, base: &Path) -> Result<usize> {
    let set = generate(section.kind, section.condition, lex)?;
    write_file(&base.join(&section.out), set.to_jsonl().as_bytes())?;
    Ok(set.len())
}

/// One configured model: label, seed and the built backend.
pub struct BuiltModel {
    pub id: String,
    pub seed: u64,
    pub backend: Box<dyn Backend>,
}

/// Builds every `[[run.backend]]` table, expanding replicates. Replicate `r`
/// of a table gets seed `seed + r`.
pub fn build_models(run: &RunSection, seed: u64, lex: &LexiconBundle, base: &Path) -> Result<Vec<BuiltModel>> {
    if run.backend.is_empty() {
        return Err(ReportError::Config("run needs at least one [[run.backend]] table".into()).into());
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for table in &run.backend {
        let mut t = table.clone();
        let id = t.remove("id").and_then(|v| v.as_str().map(str::to_string));
        let replicates = t.remove("replicates").and_then(|v| v.as_integer()).unwrap_or(1) as u64;
        let name = t.get("name").and_then(|v| v.as_str()).unwrap_or("").to_string();
        let id = id.unwrap_or(name);
        for r in 0..replicates {
            let label = if replicates > 1 { format!("{id}#{r}") } else { id.clone() };
            if !seen.insert(label.clone()) {
                return Err(ReportError::Config(format!("duplicate model id `{label}`")).into());
            }
            let s = seed.wrapping_add(r);
            let ctx = BuildContext {
                lexicons: lex,
                seed: s,
                base_dir: base.to_path_buf(),
            };
            log::info!("building backend `{label}` (seed {s})");
            out.push(BuiltModel {
                id: label,
                seed: s,
                backend: build_backend(&t, &ctx)?,
            });
        }
    }
    Ok(out)
}

fn rel(p: &Path) -> String {
    p.display().to_string()
}

fn json_of<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

/// Runs the configured experiment and writes the record table, drop log,
/// preference tables (E3) and manifest.
pub fn cmd_run(cfg: &Config, base: &Path) -> Result<RunManifest> {
    let run = cfg
        .run
        .as_ref()
        .ok_or_else(|| ReportError::Config("missing [run] section".into()))?;
    let lex = load_lexicons(cfg, base)?;
    let built = build_models(run, cfg.seed, &lex, base)?;
    let models: Vec<Model> = built
        .iter()
        .map(|b| Model {
            id: b.id.clone(),
            backend: b.backend.as_ref(),
        })
        .collect();
    let out = experiments::run(run.experiment, &lex, &models, &run.options())?;

    let mut m = RunManifest::new("run", cfg.seed);
    m.experiment = Some(run.experiment.as_str().to_string());
    m.models = built
        .iter()
        .map(|b| ModelEntry {
            id: b.id.clone(),
            descriptor: b.backend.descriptor().clone(),
        })
        .collect();
    m.lexicon_hashes = lex.hashes.clone();
    m.config = json_of(run);
    m.drop_summary = out.drop_summary();
    m.expected = out.expected;
    m.emitted = out.records.len();
    m.dropped = out.drops.len();

    let table = write_table_string(&out.records, TableFormat::from_path(&run.out))?;
    write_file(&base.join(&run.out), table.as_bytes())?;
    m.add_output(&rel(&run.out), table.as_bytes());

    let mut drops = String::from("stim_id\tmodel\treason\n");
    for d in &out.drops {
        drops.push_str(&format!("{}\t{}\t{}\n", d.stim_id, d.model, d.reason.replace(['\t', '\n'], " ")));
    }
    write_file(&base.join(run.drops_path()), drops.as_bytes())?;
    m.add_output(&rel(&run.drops_path()), drops.as_bytes());

    if run.experiment == experiments::Experiment::SynBehavior {
        let (prefs, summary) = write_preferences(&out.preferences, &out.preference_summary);
        let p = run.preferences_path();
        write_file(&base.join(&p), prefs.as_bytes())?;
        m.add_output(&rel(&p), prefs.as_bytes());
        let s = super::config::sibling(&p, "summary.tsv");
        write_file(&base.join(&s), summary.as_bytes())?;
        m.add_output(&rel(&s), summary.as_bytes());
    }
    m.write(&base.join(run.manifest_path()))?;
    Ok(m)
}

fn stats_section(cfg: &Config) -> Result<&StatsSection> {
    Ok(cfg
        .stats
        .as_ref()
        .ok_or_else(|| ReportError::Config("missing [stats] section".into()))?)
}

/// Fits the configured models and t-tests, writes results and summaries.
pub fn cmd_stats(cfg: &Config, base: &Path) -> Result<RunManifest> {
    let st = stats_section(cfg)?;
    let input = base.join(&st.input);
    let bytes = std::fs::read(&input).map_err(super::io_err(&input))?;
    let records = read_table(&input)?;
    let mut m = RunManifest::new("stats", cfg.seed);
    m.add_input(&rel(&st.input), &bytes);
    m.config = json_of(st);
    m.emitted = records.len();

    let mut results = Vec::new();
    for spec in &st.model {
        results.extend(fit_linear(&records, spec, st.threshold)?);
    }
    for spec in &st.ttest {
        results.push(run_ttest(&records, spec, st.threshold)?);
    }
    if st.bonferroni {
        bonferroni(&mut results, st.threshold);
    }
    let text = write_stat_results(&results, st.threshold);
    write_file(&base.join(&st.out), text.as_bytes())?;
    m.add_output(&rel(&st.out), text.as_bytes());

    for s in &st.summary {
        let rows: Vec<_> = apply_filter(&records, &s.filter).into_iter().cloned().collect();
        let summary = condition_summary(&rows, &s.group_by)?;
        let text = write_summary(&s.group_by, &summary);
        write_file(&base.join(&s.out), text.as_bytes())?;
        m.add_output(&rel(&s.out), text.as_bytes());
    }
    m.write(&base.join(st.manifest_path()))?;
    Ok(m)
}

/// Emits every configured figure with its aggregated table.
pub fn cmd_plot(cfg: &Config, base: &Path) -> Result<RunManifest> {
    let plot: &PlotSection = cfg
        .plot
        .as_ref()
        .ok_or_else(|| ReportError::Config("missing [plot] section".into()))?;
    if plot.figure.is_empty() {
        return Err(ReportError::Config("plot needs at least one [[plot.figure]] table".into()).into());
    }
    let mut m = RunManifest::new("plot", cfg.seed);
    m.config = json_of(plot);
    for spec in &plot.figure {
        let input = base.join(&spec.input);
        let bytes = std::fs::read(&input).map_err(super::io_err(&input))?;
        m.add_input(&rel(&spec.input), &bytes);
        let (table, svg) = emit_figure(&resolve(spec, base))?;
        m.add_output(&rel(&spec.table_path()), table.as_bytes());
        m.add_output(&rel(&spec.output), svg.as_bytes());
    }
    m.write(&base.join(plot.manifest_path()))?;
    Ok(m)
}
