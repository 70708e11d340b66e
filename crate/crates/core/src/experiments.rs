//! Experiment drivers.
//!
//! * E1: surprisal of `he`/`she` after referential frames with nouns of
//!   opposite gender;
//! * E2: per-layer similarity of the pronoun to the subject and object in
//!   same-gender frames;
//! * E3: cloze singular share after RC prompts, surprisal at the RC verb,
//!   and per-frame attachment preferences;
//! * E4: per-layer similarity of `who` and the RC verb to the higher and
//!   lower nouns.
//!
//! Each driver runs the same stimuli through every supplied model, in
//! parallel across stimuli, and returns records in canonical order along
//! with drop accounting: every expected measurement is either emitted or
//! dropped with a reason.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Backend;
use crate::lexicon::{Gender, LexiconBundle};
use crate::measures::{self, DropRecord, MeasureError, MeasurementRecord};
use crate::stimgen::{self, cond, GenderCondition, Role, Stimulus, StimulusSet};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown experiment `{0}` (expected e1, e2, e3 or e4)")]
    UnknownExperiment(String),
    #[error("no models to run")]
    NoModels,
    #[error("drop accounting failed: {emitted} emitted + {dropped} dropped != {expected} expected")]
    Accounting {
        emitted: usize,
        dropped: usize,
        expected: usize,
    },
    #[error(transparent)]
    Stimulus(#[from] stimgen::StimError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    RefBehavior,
    RefRepresentation,
    SynBehavior,
    SynRepresentation,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::RefBehavior,
        Experiment::RefRepresentation,
        Experiment::SynBehavior,
        Experiment::SynRepresentation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::RefBehavior => "e1",
            Experiment::RefRepresentation => "e2",
            Experiment::SynBehavior => "e3",
            Experiment::SynRepresentation => "e4",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Experiment {
    type Err = ExperimentError;

    /// Accepts `e1`..`e4` and the long names (`e1_ref_behavior`, ...),
    /// case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e1" | "e1_ref_behavior" => Ok(Experiment::RefBehavior),
            "e2" | "e2_ref_representation" => Ok(Experiment::RefRepresentation),
            "e3" | "e3_syn_behavior" => Ok(Experiment::SynBehavior),
            "e4" | "e4_syn_representation" => Ok(Experiment::SynRepresentation),
            _ => Err(ExperimentError::UnknownExperiment(s.to_string())),
        }
    }
}

impl Serialize for Experiment {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Experiment {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    /// Cloze candidates considered.
    pub k: usize,
    /// Gender conditions scored in E1. `match` records carry
    /// `pronoun_target` = `both`/`neither`.
    pub e1_conditions: Vec<GenderCondition>,
    /// E4 also measures `who` on the completion prompts.
    pub e4_completion: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            k: 100,
            e1_conditions: vec![GenderCondition::Mismatch],
            e4_completion: false,
        }
    }
}

/// One model taking part in a run.
pub struct Model<'a> {
    pub id: String,
    pub backend: &'a dyn Backend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentLocation {
    Higher,
    Lower,
}

/// Which attachment a model prefers for one was/were minimal pair. A tie
/// (equal surprisal) has no preferred location and counts half to each side
/// in summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub pair_id: String,
    pub model: String,
    pub verb_type: String,
    pub preferred: Option<AttachmentLocation>,
    /// Absolute surprisal difference in bits.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSummary {
    pub model: String,
    pub verb_type: String,
    pub n: usize,
    pub higher: usize,
    pub lower: usize,
    pub ties: usize,
    /// `100 * (higher + ties / 2) / n`.
    pub pct_higher: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<MeasurementRecord>,
    pub drops: Vec<DropRecord>,
    pub expected: usize,
    pub preferences: Vec<PreferenceRecord>,
    pub preference_summary: Vec<PreferenceSummary>,
}

impl ExperimentOutput {
    /// Drop counts by reason with stimulus-specific detail stripped.
    pub fn drop_summary(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for d in &self.drops {
            let key = d.reason.split(": ").last().unwrap_or(&d.reason).to_string();
            *out.entry(key).or_insert(0) += 1;
        }
        out
    }
}

/// Outcome of measuring one stimulus: records plus drops, and how many
/// measurements were expected.
struct Partial {
    records: Vec<MeasurementRecord>,
    drops: Vec<DropRecord>,
    expected: usize,
}

impl Partial {
    fn failed(stim: &Stimulus, model: &str, expected: usize, err: &MeasureError) -> Self {
        Partial {
            records: Vec::new(),
            drops: (0..expected)
                .map(|_| DropRecord {
                    stim_id: stim.stim_id.clone(),
                    model: model.to_string(),
                    reason: err.to_string(),
                })
                .collect(),
            expected,
        }
    }
}

fn collect(parts: Vec<Partial>) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    for p in parts {
        out.records.extend(p.records);
        out.drops.extend(p.drops);
        out.expected += p.expected;
    }
    out.records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    out.drops.sort_by(|a, b| (&a.model, &a.stim_id, &a.reason).cmp(&(&b.model, &b.stim_id, &b.reason)));
    if out.records.len() + out.drops.len() != out.expected {
        return Err(ExperimentError::Accounting {
            emitted: out.records.len(),
            dropped: out.drops.len(),
            expected: out.expected,
        });
    }
    for d in &out.drops {
        log::warn!("dropped {} ({}): {}", d.stim_id, d.model, d.reason);
    }
    Ok(out)
}

fn for_each_model<F>(models: &[Model], stimuli: &[Stimulus], f: F) -> Result<Vec<Partial>>
where
    F: Fn(&Model, &Stimulus) -> Partial + Sync,
{
    if models.is_empty() {
        return Err(ExperimentError::NoModels);
    }
    let mut parts = Vec::new();
    for m in models {
        parts.extend(stimuli.par_iter().map(|s| f(m, s)).collect::<Vec<_>>());
    }
    Ok(parts)
}

fn relabel(mut r: MeasurementRecord, model: &str) -> MeasurementRecord {
    r.model = model.to_string();
    r
}

fn surprisal_partial(m: &Model, stim: &Stimulus, role: Role) -> Partial {
    match measures::surprisal_at(stim, role, m.backend) {
        Ok(r) => Partial {
            records: vec![relabel(r, &m.id)],
            drops: Vec::new(),
            expected: 1,
        },
        Err(e) => Partial::failed(stim, &m.id, 1, &e),
    }
}

fn similarity_partial(m: &Model, stim: &Stimulus, pairs: &[(Role, Role)]) -> Partial {
    let n_layers = m.backend.descriptor().n_layers;
    let expected = pairs.len() * n_layers;
    let hidden = match m.backend.hidden(&stim.words) {
        Ok(h) => h,
        Err(source) => {
            let e = MeasureError::Backend {
                stim_id: stim.stim_id.clone(),
                source,
            };
            return Partial::failed(stim, &m.id, expected, &e);
        }
    };
    let mut part = Partial {
        records: Vec::new(),
        drops: Vec::new(),
        expected,
    };
    for &(anchor, target) in pairs {
        match measures::similarity_from_hidden(stim, &m.id, &hidden, anchor, target) {
            Ok((r, d)) => {
                part.records.extend(r);
                part.drops.extend(d);
            }
            Err(e) => part.drops.extend(Partial::failed(stim, &m.id, n_layers, &e).drops),
        }
    }
    part
}

fn with_pronouns(set: &StimulusSet, genders: impl Fn(&Stimulus) -> Vec<Gender>) -> Result<Vec<Stimulus>> {
    let mut out = Vec::with_capacity(set.len() * 2);
    for s in &set.stimuli {
        for g in genders(s) {
            out.push(stimgen::append_pronoun(s, g)?);
        }
    }
    Ok(out)
}

fn subject_gender(s: &Stimulus) -> Gender {
    match s.condition(cond::SUBJECT_GENDER) {
        Some("male") => Gender::Male,
        _ => Gender::Female,
    }
}

/// E1: surprisal at the pronoun, both pronoun genders per frame.
pub fn run_e1(lex: &LexiconBundle, models: &[Model], opts: &RunOptions) -> Result<ExperimentOutput> {
    let mut stimuli = Vec::new();
    for &c in &opts.e1_conditions {
        let set = stimgen::gen_referential(&lex.norms, &lex.pairs, c)?;
        stimuli.extend(with_pronouns(&set, |_| vec![Gender::Female, Gender::Male])?);
    }
    collect(for_each_model(models, &stimuli, |m, s| surprisal_partial(m, s, Role::Pronoun))?)
}

/// E2 stimuli: same-gender frames with the pronoun both nouns agree with.
pub fn e2_stimuli(lex: &LexiconBundle) -> Result<Vec<Stimulus>> {
    let set = stimgen::gen_referential(&lex.norms, &lex.pairs, GenderCondition::Match)?;
    with_pronouns(&set, |s| vec![subject_gender(s)])
}

/// E2: pronoun similarity to subject and object per layer.
pub fn run_e2(lex: &LexiconBundle, models: &[Model], _opts: &RunOptions) -> Result<ExperimentOutput> {
    let stimuli = e2_stimuli(lex)?;
    let pairs = [(Role::Pronoun, Role::SubjectNoun), (Role::Pronoun, Role::ObjectNoun)];
    collect(for_each_model(models, &stimuli, |m, s| similarity_partial(m, s, &pairs))?)
}

/// E3: cloze share on completion prompts, RC-verb surprisal on reading
/// stimuli, and attachment preferences on the disambiguating pairs.
pub fn run_e3(lex: &LexiconBundle, models: &[Model], opts: &RunOptions) -> Result<ExperimentOutput> {
    let completion = stimgen::gen_completion(&lex.completion)?;
    let reading = stimgen::gen_rc_reading(&lex.reading)?;
    let mut parts = for_each_model(models, &completion.stimuli, |m, s| {
        match measures::cloze_singular_share(s, m.backend, opts.k, &lex.verb_forms) {
            Ok(r) => Partial {
                records: vec![relabel(r, &m.id)],
                drops: Vec::new(),
                expected: 1,
            },
            Err(e) => Partial::failed(s, &m.id, 1, &e),
        }
    })?;
    parts.extend(for_each_model(models, &reading.stimuli, |m, s| surprisal_partial(m, s, Role::RcVerb))?);
    let mut out = collect(parts)?;
    out.preferences = preferences(&out.records);
    out.preference_summary = summarize_preferences(&out.preferences);
    Ok(out)
}

/// Pairs reading-surprisal records by (model, frame) and compares the
/// higher-agreeing with the lower-agreeing continuation.
pub fn preferences(records: &[MeasurementRecord]) -> Vec<PreferenceRecord> {
    let mut cells: BTreeMap<(String, String), (Option<&MeasurementRecord>, Option<&MeasurementRecord>)> = BTreeMap::new();
    for r in records {
        if r.role != Some(Role::RcVerb) {
            continue;
        }
        let Some(frame) = r.conditions.get(cond::FRAME) else { continue };
        let cell = cells.entry((r.model.clone(), frame.clone())).or_default();
        match r.conditions.get(cond::AGREEMENT_LOCATION).map(String::as_str) {
            Some("higher") => cell.0 = Some(r),
            Some("lower") => cell.1 = Some(r),
            _ => {}
        }
    }
    cells
        .into_iter()
        .filter_map(|((model, frame), cell)| {
            let (h, l) = (cell.0?, cell.1?);
            let preferred = match h.value.total_cmp(&l.value) {
                std::cmp::Ordering::Less => Some(AttachmentLocation::Higher),
                std::cmp::Ordering::Greater => Some(AttachmentLocation::Lower),
                std::cmp::Ordering::Equal => None,
            };
            Some(PreferenceRecord {
                pair_id: frame,
                model,
                verb_type: h.conditions.get(cond::VERB_TYPE).cloned().unwrap_or_default(),
                preferred,
                margin: (h.value - l.value).abs(),
            })
        })
        .collect()
}

pub fn summarize_preferences(prefs: &[PreferenceRecord]) -> Vec<PreferenceSummary> {
    let mut cells: BTreeMap<(String, String), (usize, usize, usize)> = BTreeMap::new();
    for p in prefs {
        let c = cells.entry((p.model.clone(), p.verb_type.clone())).or_default();
        match p.preferred {
            Some(AttachmentLocation::Higher) => c.0 += 1,
            Some(AttachmentLocation::Lower) => c.1 += 1,
            None => c.2 += 1,
        }
    }
    cells
        .into_iter()
        .map(|((model, verb_type), (higher, lower, ties))| {
            let n = higher + lower + ties;
            PreferenceSummary {
                model,
                verb_type,
                n,
                higher,
                lower,
                ties,
                pct_higher: 100.0 * (higher as f64 + ties as f64 / 2.0) / n as f64,
            }
        })
        .collect()
}

/// E4: similarity of `who` (and, on reading stimuli, the RC verb) to the
/// higher and lower nouns per layer.
pub fn run_e4(lex: &LexiconBundle, models: &[Model], opts: &RunOptions) -> Result<ExperimentOutput> {
    let reading = stimgen::gen_rc_reading(&lex.reading)?;
    let anchors_targets: Vec<(Role, Role)> = [Role::Relativizer, Role::RcVerb]
        .into_iter()
        .flat_map(|a| [(a, Role::HigherNoun), (a, Role::LowerNoun)])
        .collect();
    let mut parts = for_each_model(models, &reading.stimuli, |m, s| similarity_partial(m, s, &anchors_targets))?;
    if opts.e4_completion {
        let completion = stimgen::gen_completion(&lex.completion)?;
        let who = [(Role::Relativizer, Role::HigherNoun), (Role::Relativizer, Role::LowerNoun)];
        parts.extend(for_each_model(models, &completion.stimuli, |m, s| similarity_partial(m, s, &who))?);
    }
    collect(parts)
}

pub fn run(experiment: Experiment, lex: &LexiconBundle, models: &[Model], opts: &RunOptions) -> Result<ExperimentOutput> {
    match experiment {
        Experiment::RefBehavior => run_e1(lex, models, opts),
        Experiment::RefRepresentation => run_e2(lex, models, opts),
        Experiment::SynBehavior => run_e3(lex, models, opts),
        Experiment::SynRepresentation => run_e4(lex, models, opts),
    }
}
