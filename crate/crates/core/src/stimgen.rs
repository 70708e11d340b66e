//! Stimulus generation.
//!
//! Two frame shapes are supported:
//!
//! * referential: `the X VERBED the Y because` (pronoun appended later);
//! * relative clause: `SUBJ VERB the HIGHER of the LOWER who [was|were]`.
//!
//! Every generator returns its stimuli sorted by `stim_id`, so output is a
//! pure function of the input lexicons.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{
    sha256_hex, write_noun_pairs, write_rc_items, write_verb_norms, Gender, NounPair, Number, RcItem, VerbNorm,
};

pub const GENERATOR_VERSION: &str = concat!("icprobe-stimgen/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum StimError {
    #[error("{0} is empty")]
    EmptyInput(&'static str),
    #[error("same-gender stimuli need at least two noun pairs with distinct forms: {0}")]
    NoSameGenderPairing(String),
    #[error("stimulus {0} already has a pronoun")]
    PronounPresent(String),
    #[error("stimulus {stim_id}: {reason}")]
    Invalid { stim_id: String, reason: String },
    #[error("stimulus file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Condition column names attached to stimuli.
pub mod cond {
    pub const ITEM: &str = "item";
    pub const FRAME: &str = "frame";
    pub const GENDER_MATCH: &str = "gender_match";
    pub const SUBJECT_GENDER: &str = "subject_gender";
    pub const PRONOUN_GENDER: &str = "pronoun_gender";
    pub const PRONOUN_TARGET: &str = "pronoun_target";
    pub const BIAS_SCORE: &str = "bias_score";
    pub const BIAS_CATEGORY: &str = "bias_category";
    pub const VERB: &str = "verb";
    pub const VERB_TYPE: &str = "verb_type";
    pub const HIGHER_NUMBER: &str = "higher_number";
    pub const LOWER_NUMBER: &str = "lower_number";
    pub const RC_VERB_NUMBER: &str = "rc_verb_number";
    pub const AGREEMENT_LOCATION: &str = "agreement_location";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    Referential,
    Completion,
    RcReading,
}

impl StimulusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StimulusKind::Referential => "referential",
            StimulusKind::Completion => "completion",
            StimulusKind::RcReading => "rc_reading",
        }
    }
}

impl std::str::FromStr for StimulusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "referential" => Ok(StimulusKind::Referential),
            "completion" => Ok(StimulusKind::Completion),
            "rc_reading" | "reading" => Ok(StimulusKind::RcReading),
            other => Err(format!("unknown stimulus kind `{other}`")),
        }
    }
}

/// Named word positions within a stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    SubjectNoun,
    ObjectNoun,
    MainVerb,
    Pronoun,
    HigherNoun,
    LowerNoun,
    Relativizer,
    RcVerb,
}

impl Role {
    pub const ALL: [Role; 8] = [
        Role::SubjectNoun,
        Role::ObjectNoun,
        Role::MainVerb,
        Role::Pronoun,
        Role::HigherNoun,
        Role::LowerNoun,
        Role::Relativizer,
        Role::RcVerb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::SubjectNoun => "subject_noun",
            Role::ObjectNoun => "object_noun",
            Role::MainVerb => "main_verb",
            Role::Pronoun => "pronoun",
            Role::HigherNoun => "higher_noun",
            Role::LowerNoun => "lower_noun",
            Role::Relativizer => "relativizer",
            Role::RcVerb => "rc_verb",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role `{s}`"))
    }
}

/// Same- or different-gender referential frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderCondition {
    Mismatch,
    Match,
}

impl GenderCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            GenderCondition::Mismatch => "mismatch",
            GenderCondition::Match => "match",
        }
    }
}

impl std::str::FromStr for GenderCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mismatch" => Ok(GenderCondition::Mismatch),
            "match" => Ok(GenderCondition::Match),
            other => Err(format!("unknown gender condition `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stimulus {
    pub stim_id: String,
    pub kind: StimulusKind,
    pub words: Vec<String>,
    pub regions: BTreeMap<Role, usize>,
    pub conditions: BTreeMap<String, String>,
}

impl Stimulus {
    pub fn region(&self, role: Role) -> Option<usize> {
        self.regions.get(&role).copied()
    }

    pub fn condition(&self, key: &str) -> Option<&str> {
        self.conditions.get(key).map(String::as_str)
    }

    pub fn text(&self) -> String {
        self.words.join(" ")
    }

    fn validate(&self) -> Result<(), String> {
        if self.words.is_empty() {
            return Err("no words".into());
        }
        for (role, &idx) in &self.regions {
            if idx >= self.words.len() {
                return Err(format!("region {role} at {idx} is past the end"));
            }
        }
        if let Some(w) = self.words.iter().find(|w| w.is_empty() || w.chars().any(char::is_whitespace)) {
            return Err(format!("bad word `{w}`"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    /// `lexicon name -> sha256` of the canonical serialization of each input.
    pub lexicons: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimulusSet {
    pub kind: StimulusKind,
    pub stimuli: Vec<Stimulus>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetHeader {
    format: String,
    version: u32,
    kind: StimulusKind,
    count: usize,
    provenance: Provenance,
}

const SET_FORMAT: &str = "icprobe.stimuli";
const SET_VERSION: u32 = 1;

impl StimulusSet {
    fn new(kind: StimulusKind, mut stimuli: Vec<Stimulus>, lexicons: BTreeMap<String, String>) -> Self {
        stimuli.sort_by(|a, b| a.stim_id.cmp(&b.stim_id));
        StimulusSet {
            kind,
            stimuli,
            provenance: Provenance {
                generator: GENERATOR_VERSION.to_string(),
                lexicons,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.stimuli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimuli.is_empty()
    }

    /// Line-delimited JSON: a header object followed by one stimulus per line.
    pub fn to_jsonl(&self) -> String {
        let header = SetHeader {
            format: SET_FORMAT.to_string(),
            version: SET_VERSION,
            kind: self.kind,
            count: self.stimuli.len(),
            provenance: self.provenance.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for s in &self.stimuli {
            out.push_str(&serde_json::to_string(s).expect("stimulus serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, StimError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(StimError::Parse {
            line: 1,
            reason: "missing header".into(),
        })?;
        let header: SetHeader = serde_json::from_str(first).map_err(|e| StimError::Parse {
            line: 1,
            reason: format!("bad header: {e}"),
        })?;
        if header.format != SET_FORMAT || header.version != SET_VERSION {
            return Err(StimError::Parse {
                line: 1,
                reason: format!("unsupported format {} v{}", header.format, header.version),
            });
        }
        let mut ids = HashSet::new();
        let mut stimuli = Vec::new();
        for (i, l) in lines {
            let line = i + 1;
            let stim: Stimulus = serde_json::from_str(l).map_err(|e| StimError::Parse {
                line,
                reason: e.to_string(),
            })?;
            if stim.kind != header.kind {
                return Err(StimError::Parse {
                    line,
                    reason: format!("kind {} in a {} set", stim.kind.as_str(), header.kind.as_str()),
                });
            }
            stim.validate().map_err(|reason| StimError::Parse { line, reason })?;
            if !ids.insert(stim.stim_id.clone()) {
                return Err(StimError::Parse {
                    line,
                    reason: format!("duplicate stim_id {}", stim.stim_id),
                });
            }
            stimuli.push(stim);
        }
        if stimuli.len() != header.count {
            return Err(StimError::Parse {
                line: 1,
                reason: format!("header announces {} stimuli, found {}", header.count, stimuli.len()),
            });
        }
        Ok(StimulusSet {
            kind: header.kind,
            stimuli,
            provenance: header.provenance,
        })
    }
}

fn words(s: &[&str]) -> Vec<String> {
    s.iter().map(|w| w.to_string()).collect()
}

/// Compiles norms and noun pairs into `the X VERBED the Y because` frames,
/// one per (verb, pair, subject gender).
///
/// For [`GenderCondition::Match`] the object is drawn from the next pair in
/// the list (wrapping), in the subject's gender.
pub fn gen_referential(
    norms: &[VerbNorm],
    pairs: &[NounPair],
    condition: GenderCondition,
) -> Result<StimulusSet, StimError> {
    if norms.is_empty() {
        return Err(StimError::EmptyInput("verb norm list"));
    }
    if pairs.is_empty() {
        return Err(StimError::EmptyInput("noun pair list"));
    }
    if condition == GenderCondition::Match {
        if pairs.len() < 2 {
            return Err(StimError::NoSameGenderPairing("only one pair".into()));
        }
        for (i, p) in pairs.iter().enumerate() {
            let q = &pairs[(i + 1) % pairs.len()];
            for g in [Gender::Male, Gender::Female] {
                if p.form(g) == q.form(g) {
                    return Err(StimError::NoSameGenderPairing(format!("`{}` would face itself", p.form(g))));
                }
            }
        }
    }
    let tag = match condition {
        GenderCondition::Mismatch => "mm",
        GenderCondition::Match => "m",
    };

    let mut stimuli = Vec::with_capacity(norms.len() * pairs.len() * 2);
    for (v, norm) in norms.iter().enumerate() {
        for (p, pair) in pairs.iter().enumerate() {
            for subject_gender in [Gender::Female, Gender::Male] {
                let subject = pair.form(subject_gender);
                let object = match condition {
                    GenderCondition::Mismatch => pair.form(subject_gender.opposite()),
                    GenderCondition::Match => pairs[(p + 1) % pairs.len()].form(subject_gender),
                };
                let stim_id = format!("ref-{tag}-{v:04}-{p:02}-{}", &subject_gender.as_str()[..1]);
                let mut conditions = BTreeMap::new();
                conditions.insert(cond::ITEM.into(), stim_id.clone());
                conditions.insert(cond::FRAME.into(), stim_id.clone());
                conditions.insert(cond::GENDER_MATCH.into(), condition.as_str().into());
                conditions.insert(cond::SUBJECT_GENDER.into(), subject_gender.as_str().into());
                conditions.insert(cond::BIAS_SCORE.into(), norm.bias_score.to_string());
                conditions.insert(cond::BIAS_CATEGORY.into(), norm.bias_category().as_str().into());
                conditions.insert(cond::VERB.into(), norm.lemma.clone());
                stimuli.push(Stimulus {
                    stim_id,
                    kind: StimulusKind::Referential,
                    words: words(&["the", subject, &norm.past_form, "the", object, "because"]),
                    regions: BTreeMap::from([(Role::SubjectNoun, 1), (Role::MainVerb, 2), (Role::ObjectNoun, 4)]),
                    conditions,
                });
            }
        }
    }
    Ok(StimulusSet::new(StimulusKind::Referential, stimuli, referential_provenance(norms, pairs)))
}

fn referential_provenance(norms: &[VerbNorm], pairs: &[NounPair]) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("verb_norms".to_string(), sha256_hex(write_verb_norms(norms).as_bytes())),
        ("noun_pairs".to_string(), sha256_hex(write_noun_pairs(pairs).as_bytes())),
    ])
}

/// Appends `he` or `she` to a referential frame.
///
/// `pronoun_target` becomes `subject`/`object` in mismatch frames, and `both`
/// or `neither` in match frames depending on whether the pronoun agrees with
/// the shared gender.
pub fn append_pronoun(stim: &Stimulus, pronoun_gender: Gender) -> Result<Stimulus, StimError> {
    let invalid = |reason: &str| StimError::Invalid {
        stim_id: stim.stim_id.clone(),
        reason: reason.to_string(),
    };
    if stim.kind != StimulusKind::Referential {
        return Err(invalid("pronouns only attach to referential frames"));
    }
    if stim.regions.contains_key(&Role::Pronoun) {
        return Err(StimError::PronounPresent(stim.stim_id.clone()));
    }
    let subject_gender = match stim.condition(cond::SUBJECT_GENDER) {
        Some("male") => Gender::Male,
        Some("female") => Gender::Female,
        _ => return Err(invalid("missing subject_gender")),
    };
    let matched: GenderCondition = stim
        .condition(cond::GENDER_MATCH)
        .ok_or_else(|| invalid("missing gender_match"))?
        .parse()
        .map_err(|e: String| invalid(&e))?;
    let target = match (matched, pronoun_gender == subject_gender) {
        (GenderCondition::Mismatch, true) => "subject",
        (GenderCondition::Mismatch, false) => "object",
        (GenderCondition::Match, true) => "both",
        (GenderCondition::Match, false) => "neither",
    };

    let mut out = stim.clone();
    let pronoun = pronoun_gender.pronoun();
    out.stim_id = format!("{}-{pronoun}", stim.stim_id);
    out.regions.insert(Role::Pronoun, out.words.len());
    out.words.push(pronoun.to_string());
    out.conditions.insert(cond::PRONOUN_GENDER.into(), pronoun_gender.as_str().into());
    out.conditions.insert(cond::PRONOUN_TARGET.into(), target.into());
    Ok(out)
}

const NUMBER_CROSSING: [(Number, Number); 4] = [
    (Number::Sg, Number::Sg),
    (Number::Sg, Number::Pl),
    (Number::Pl, Number::Sg),
    (Number::Pl, Number::Pl),
];

/// Builds `SUBJ VERB the HIGHER of the LOWER who` plus its regions and
/// conditions, for one item, verb type and number configuration.
fn rc_frame(item: &RcItem, ic: bool, higher: Number, lower: Number) -> (Vec<String>, BTreeMap<Role, usize>, BTreeMap<String, String>) {
    let verb = if ic { &item.ic_verb } else { &item.nonic_verb };
    let mut w: Vec<String> = item.subject_np.clone();
    let subject = w.len() - 1;
    let main_verb = w.len();
    w.extend(verb.iter().cloned());
    w.push("the".into());
    let higher_idx = w.len();
    w.push(item.higher_noun.form(higher).to_string());
    w.push("of".into());
    w.push("the".into());
    let lower_idx = w.len();
    w.push(item.lower_noun.form(lower).to_string());
    let rel = w.len();
    w.push("who".into());
    let regions = BTreeMap::from([
        (Role::SubjectNoun, subject),
        (Role::MainVerb, main_verb),
        (Role::HigherNoun, higher_idx),
        (Role::LowerNoun, lower_idx),
        (Role::Relativizer, rel),
    ]);
    let conditions = BTreeMap::from([
        (cond::ITEM.to_string(), format!("{:03}", item.item_id)),
        (cond::VERB_TYPE.to_string(), if ic { "ic" } else { "nonic" }.to_string()),
        (cond::HIGHER_NUMBER.to_string(), higher.as_str().to_string()),
        (cond::LOWER_NUMBER.to_string(), lower.as_str().to_string()),
    ]);
    (w, regions, conditions)
}

fn rc_provenance(name: &str, items: &[RcItem]) -> BTreeMap<String, String> {
    BTreeMap::from([(name.to_string(), sha256_hex(write_rc_items(items).as_bytes()))])
}

/// Cloze prompts: each item crossed with verb type and the four number
/// configurations.
pub fn gen_completion(items: &[RcItem]) -> Result<StimulusSet, StimError> {
    if items.is_empty() {
        return Err(StimError::EmptyInput("RC item list"));
    }
    let mut stimuli = Vec::with_capacity(items.len() * 8);
    for item in items {
        for ic in [true, false] {
            for (hn, ln) in NUMBER_CROSSING {
                let (words, regions, mut conditions) = rc_frame(item, ic, hn, ln);
                let stim_id = format!(
                    "cmp-{:03}-{}-{}{}",
                    item.item_id,
                    if ic { "ic" } else { "nonic" },
                    hn.as_str(),
                    ln.as_str()
                );
                conditions.insert(cond::FRAME.into(), stim_id.clone());
                stimuli.push(Stimulus {
                    stim_id,
                    kind: StimulusKind::Completion,
                    words,
                    regions,
                    conditions,
                });
            }
        }
    }
    Ok(StimulusSet::new(StimulusKind::Completion, stimuli, rc_provenance("rc_completion", items)))
}

fn agreement_location(verb: Number, higher: Number, lower: Number) -> &'static str {
    if verb == higher && verb != lower {
        "higher"
    } else if verb == lower && verb != higher {
        "lower"
    } else {
        "ambiguous"
    }
}

/// Reading stimuli: the completion frame followed by `was` or `were`.
/// Minimal pairs share the `frame` condition.
pub fn gen_rc_reading(items: &[RcItem]) -> Result<StimulusSet, StimError> {
    if items.is_empty() {
        return Err(StimError::EmptyInput("RC item list"));
    }
    let mut stimuli = Vec::with_capacity(items.len() * 16);
    for item in items {
        for ic in [true, false] {
            for (hn, ln) in NUMBER_CROSSING {
                let frame = format!(
                    "rdg-{:03}-{}-{}{}",
                    item.item_id,
                    if ic { "ic" } else { "nonic" },
                    hn.as_str(),
                    ln.as_str()
                );
                for (verb, number) in [("was", Number::Sg), ("were", Number::Pl)] {
                    let (mut words, mut regions, mut conditions) = rc_frame(item, ic, hn, ln);
                    regions.insert(Role::RcVerb, words.len());
                    words.push(verb.to_string());
                    conditions.insert(cond::FRAME.into(), frame.clone());
                    conditions.insert(cond::RC_VERB_NUMBER.into(), number.as_str().into());
                    conditions.insert(cond::AGREEMENT_LOCATION.into(), agreement_location(number, hn, ln).into());
                    stimuli.push(Stimulus {
                        stim_id: format!("{frame}-{verb}"),
                        kind: StimulusKind::RcReading,
                        words,
                        regions,
                        conditions,
                    });
                }
            }
        }
    }
    Ok(StimulusSet::new(StimulusKind::RcReading, stimuli, rc_provenance("rc_reading", items)))
}
