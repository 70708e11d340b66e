//! Lexical resources: implicit-causality verb norms, stereotypically gendered
//! noun pairs, relative-clause item templates and the reference vocabulary.
//!
//! All loaders take the full text of a resource and return validated,
//! immutable values. File formats:
//!
//! * verb norms: TSV with header `lemma<TAB>past<TAB>bias`, optionally
//!   followed by a fourth `status` column (`verified` | `unverified`);
//! * noun pairs: TSV with header `male<TAB>female`;
//! * RC items: JSON lines, one object per item with the fields
//!   `item_id`, `subject_np`, `ic_verb`, `nonic_verb`, `higher`, `lower`
//!   (multiword fields are space separated, nouns are `{"sg":..,"pl":..}`);
//! * vocabulary: one word per line.
//!
//! In the TSV and vocabulary formats, blank lines and lines starting with `#`
//! are ignored.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("line {line}: expected header `{expected}`, found `{found}`")]
    BadHeader {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("missing header `{expected}`")]
    MissingHeader { expected: String },
    #[error("line {line}, column `{column}`: {reason}")]
    Malformed {
        line: usize,
        column: String,
        reason: String,
    },
    #[error("line {line}: duplicate lemma `{lemma}`")]
    DuplicateLemma { line: usize, lemma: String },
    #[error("line {line}: duplicate noun `{noun}`")]
    DuplicatePair { line: usize, noun: String },
    #[error("line {line}: duplicate item id {item_id}")]
    DuplicateItem { line: usize, item_id: u32 },
    #[error("line {line}: duplicate vocabulary word `{word}`")]
    DuplicateWord { line: usize, word: String },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, LexiconError>;

/// Direction of a verb's coreference bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasCategory {
    SubjectBiased,
    ObjectBiased,
    /// Score of exactly zero; left out of categorical analyses.
    Excluded,
}

impl BiasCategory {
    pub fn from_score(score: f64) -> Self {
        if score > 0.0 {
            BiasCategory::SubjectBiased
        } else if score < 0.0 {
            BiasCategory::ObjectBiased
        } else {
            BiasCategory::Excluded
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BiasCategory::SubjectBiased => "subject_biased",
            BiasCategory::ObjectBiased => "object_biased",
            BiasCategory::Excluded => "excluded",
        }
    }
}

impl fmt::Display for BiasCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One implicit-causality verb with its continuation bias score.
#[derive(Debug, Clone, PartialEq)]
pub struct VerbNorm {
    pub lemma: String,
    /// Surface form used in stimulus frames ("accused").
    pub past_form: String,
    /// In `[-100, 100]`; positive means continuations favour the subject.
    pub bias_score: f64,
    /// False for placeholder rows whose score is not taken from published norms.
    pub verified: bool,
}

impl VerbNorm {
    pub fn new(lemma: &str, past_form: &str, bias_score: f64) -> std::result::Result<Self, String> {
        check_word(lemma).map_err(|r| format!("lemma: {r}"))?;
        check_word(past_form).map_err(|r| format!("past: {r}"))?;
        if !(-100.0..=100.0).contains(&bias_score) {
            return Err(format!("bias score {bias_score} outside [-100, 100]"));
        }
        Ok(VerbNorm {
            lemma: lemma.to_string(),
            past_form: past_form.to_string(),
            bias_score,
            verified: true,
        })
    }

    pub fn bias_category(&self) -> BiasCategory {
        BiasCategory::from_score(self.bias_score)
    }
}

/// A male/female noun pair ("king", "queen").
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NounPair {
    pub male_form: String,
    pub female_form: String,
}

impl NounPair {
    pub fn new(male: &str, female: &str) -> std::result::Result<Self, String> {
        check_word(male).map_err(|r| format!("male: {r}"))?;
        check_word(female).map_err(|r| format!("female: {r}"))?;
        if male == female {
            return Err(format!("male and female forms are both `{male}`"));
        }
        Ok(NounPair {
            male_form: male.to_string(),
            female_form: female.to_string(),
        })
    }

    pub fn form(&self, gender: Gender) -> &str {
        match gender {
            Gender::Male => &self.male_form,
            Gender::Female => &self.female_form,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    pub fn opposite(self) -> Gender {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }

    pub fn pronoun(self) -> &'static str {
        match self {
            Gender::Male => "he",
            Gender::Female => "she",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NounForms {
    pub sg: String,
    pub pl: String,
}

impl NounForms {
    pub fn form(&self, number: Number) -> &str {
        match number {
            Number::Sg => &self.sg,
            Number::Pl => &self.pl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Number {
    Sg,
    Pl,
}

impl Number {
    pub fn as_str(self) -> &'static str {
        match self {
            Number::Sg => "sg",
            Number::Pl => "pl",
        }
    }
}

/// A relative-clause attachment item: `SUBJ VERB the HIGHER of the LOWER who`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RcItem {
    pub item_id: u32,
    pub subject_np: Vec<String>,
    /// Object-biased implicit-causality verb.
    pub ic_verb: Vec<String>,
    /// Control verb without an implicit-causality bias; may be multiword.
    pub nonic_verb: Vec<String>,
    pub higher_noun: NounForms,
    pub lower_noun: NounForms,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RcItemRecord {
    item_id: u32,
    subject_np: String,
    ic_verb: String,
    nonic_verb: String,
    higher: NounForms,
    lower: NounForms,
}

/// Word inventory with stable indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary keeping the first occurrence of each word.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::default();
        for w in words {
            vocab.insert(w.into());
        }
        vocab
    }

    /// Appends `word` if absent and returns its index.
    pub fn insert(&mut self, word: String) -> usize {
        if let Some(&id) = self.index.get(&word) {
            return id;
        }
        let id = self.words.len();
        self.index.insert(word.clone(), id);
        self.words.push(word);
        id
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

fn check_word(w: &str) -> std::result::Result<(), String> {
    if w.is_empty() {
        return Err("empty".into());
    }
    if w.chars().any(char::is_whitespace) {
        return Err(format!("`{w}` is not a single word"));
    }
    if w.chars().any(char::is_uppercase) {
        return Err(format!("`{w}` is not lowercase"));
    }
    Ok(())
}

fn split_words(field: &str) -> Vec<String> {
    field.split_whitespace().map(str::to_string).collect()
}

/// Yields `(line_number, line)` for content lines, skipping comments and blanks.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn malformed(line: usize, column: &str, reason: impl Into<String>) -> LexiconError {
    LexiconError::Malformed {
        line,
        column: column.to_string(),
        reason: reason.into(),
    }
}

const NORMS_HEADER: [&str; 3] = ["lemma", "past", "bias"];

pub fn load_verb_norms(text: &str) -> Result<Vec<VerbNorm>> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| LexiconError::MissingHeader {
        expected: NORMS_HEADER.join("\t"),
    })?;
    let cols: Vec<&str> = header.split('\t').collect();
    let with_status = match cols.as_slice() {
        [a, b, c] if [*a, *b, *c] == NORMS_HEADER => false,
        [a, b, c, "status"] if [*a, *b, *c] == NORMS_HEADER => true,
        _ => {
            return Err(LexiconError::BadHeader {
                line: hline,
                expected: NORMS_HEADER.join("\t"),
                found: header.to_string(),
            })
        }
    };
    let width = if with_status { 4 } else { 3 };

    let mut seen = HashSet::new();
    let mut norms = Vec::new();
    for (line, row) in lines {
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != width {
            return Err(malformed(
                line,
                NORMS_HEADER[fields.len().min(2)],
                format!("expected {width} tab-separated fields, found {}", fields.len()),
            ));
        }
        check_word(fields[0]).map_err(|r| malformed(line, "lemma", r))?;
        check_word(fields[1]).map_err(|r| malformed(line, "past", r))?;
        let score: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| malformed(line, "bias", format!("`{}` is not a number", fields[2])))?;
        if !score.is_finite() || !(-100.0..=100.0).contains(&score) {
            return Err(malformed(line, "bias", format!("{score} outside [-100, 100]")));
        }
        let verified = if with_status {
            match fields[3] {
                "verified" => true,
                "unverified" => false,
                other => return Err(malformed(line, "status", format!("unknown status `{other}`"))),
            }
        } else {
            true
        };
        if !seen.insert(fields[0]) {
            return Err(LexiconError::DuplicateLemma {
                line,
                lemma: fields[0].to_string(),
            });
        }
        norms.push(VerbNorm {
            lemma: fields[0].to_string(),
            past_form: fields[1].to_string(),
            bias_score: score,
            verified,
        });
    }
    Ok(norms)
}

/// Serializes norms back to the tabular format. The `status` column is only
/// written when some row is unverified.
pub fn write_verb_norms(norms: &[VerbNorm]) -> String {
    let with_status = norms.iter().any(|n| !n.verified);
    let mut out = NORMS_HEADER.join("\t");
    if with_status {
        out.push_str("\tstatus");
    }
    out.push('\n');
    for n in norms {
        out.push_str(&format!("{}\t{}\t{}", n.lemma, n.past_form, n.bias_score));
        if with_status {
            out.push_str(if n.verified { "\tverified" } else { "\tunverified" });
        }
        out.push('\n');
    }
    out
}

/// Splits norms into those whose past form the vocabulary covers and the rest,
/// preserving input order in both halves.
pub fn filter_by_vocabulary(norms: &[VerbNorm], vocab: &Vocabulary) -> (Vec<VerbNorm>, Vec<VerbNorm>) {
    norms
        .iter()
        .cloned()
        .partition(|n| vocab.contains(&n.past_form))
}

pub fn load_noun_pairs(text: &str) -> Result<Vec<NounPair>> {
    let mut lines = content_lines(text);
    let expected = "male\tfemale";
    match lines.next() {
        Some((_, h)) if h == expected => {}
        Some((line, h)) => {
            return Err(LexiconError::BadHeader {
                line,
                expected: expected.into(),
                found: h.into(),
            })
        }
        None => {
            return Err(LexiconError::MissingHeader {
                expected: expected.into(),
            })
        }
    }
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for (line, row) in lines {
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != 2 {
            return Err(malformed(
                line,
                if fields.is_empty() { "male" } else { "female" },
                format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        check_word(fields[0]).map_err(|r| malformed(line, "male", r))?;
        check_word(fields[1]).map_err(|r| malformed(line, "female", r))?;
        let pair = NounPair::new(fields[0], fields[1]).map_err(|r| LexiconError::Invalid { line, reason: r })?;
        for noun in [&pair.male_form, &pair.female_form] {
            if !seen.insert(noun.clone()) {
                return Err(LexiconError::DuplicatePair {
                    line,
                    noun: noun.clone(),
                });
            }
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_noun_pairs(pairs: &[NounPair]) -> String {
    let mut out = String::from("male\tfemale\n");
    for p in pairs {
        out.push_str(&format!("{}\t{}\n", p.male_form, p.female_form));
    }
    out
}

fn validate_rc_item(line: usize, rec: RcItemRecord) -> Result<RcItem> {
    let invalid = |reason: String| LexiconError::Invalid { line, reason };
    let multi = |field: &str, value: &str| -> Result<Vec<String>> {
        let words = split_words(value);
        if words.is_empty() {
            return Err(malformed(line, field, "empty"));
        }
        if words.join(" ") != value {
            return Err(malformed(line, field, "words must be separated by single spaces"));
        }
        for w in &words {
            check_word(w).map_err(|r| malformed(line, field, r))?;
        }
        Ok(words)
    };
    let subject_np = multi("subject_np", &rec.subject_np)?;
    let ic_verb = multi("ic_verb", &rec.ic_verb)?;
    let nonic_verb = multi("nonic_verb", &rec.nonic_verb)?;
    if ic_verb == nonic_verb {
        return Err(invalid(format!("ic_verb and nonic_verb are both `{}`", rec.ic_verb)));
    }
    for (name, forms) in [("higher", &rec.higher), ("lower", &rec.lower)] {
        check_word(&forms.sg).map_err(|r| malformed(line, &format!("{name}.sg"), r))?;
        check_word(&forms.pl).map_err(|r| malformed(line, &format!("{name}.pl"), r))?;
        if forms.sg == forms.pl {
            return Err(invalid(format!("{name} noun has identical singular and plural `{}`", forms.sg)));
        }
    }
    Ok(RcItem {
        item_id: rec.item_id,
        subject_np,
        ic_verb,
        nonic_verb,
        higher_noun: rec.higher,
        lower_noun: rec.lower,
    })
}

pub fn load_rc_items(text: &str) -> Result<Vec<RcItem>> {
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for (i, row) in text.lines().enumerate() {
        let line = i + 1;
        if row.trim().is_empty() {
            continue;
        }
        let rec: RcItemRecord = serde_json::from_str(row).map_err(|e| {
            let column = missing_field(&e.to_string()).unwrap_or_else(|| "record".to_string());
            malformed(line, &column, e.to_string())
        })?;
        if !seen.insert(rec.item_id) {
            return Err(LexiconError::DuplicateItem {
                line,
                item_id: rec.item_id,
            });
        }
        items.push(validate_rc_item(line, rec)?);
    }
    Ok(items)
}

fn missing_field(msg: &str) -> Option<String> {
    let rest = msg.split("missing field `").nth(1)?;
    Some(rest.split('`').next()?.to_string())
}

pub fn write_rc_items(items: &[RcItem]) -> String {
    let mut out = String::new();
    for item in items {
        let rec = RcItemRecord {
            item_id: item.item_id,
            subject_np: item.subject_np.join(" "),
            ic_verb: item.ic_verb.join(" "),
            nonic_verb: item.nonic_verb.join(" "),
            higher: item.higher_noun.clone(),
            lower: item.lower_noun.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record serializes"));
        out.push('\n');
    }
    out
}

pub fn load_vocabulary(text: &str) -> Result<Vocabulary> {
    let mut vocab = Vocabulary::default();
    for (line, row) in content_lines(text) {
        let word = row.trim();
        check_word(word).map_err(|r| malformed(line, "word", r))?;
        if vocab.contains(word) {
            return Err(LexiconError::DuplicateWord {
                line,
                word: word.to_string(),
            });
        }
        vocab.insert(word.to_string());
    }
    Ok(vocab)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_source(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Lexicon files shipped with the crate.
pub mod bundled {
    pub const VERB_NORMS: &str = include_str!("../data/verb_norms.tsv");
    pub const NOUN_PAIRS: &str = include_str!("../data/noun_pairs.tsv");
    pub const RC_COMPLETION: &str = include_str!("../data/rc_completion.jsonl");
    pub const RC_READING: &str = include_str!("../data/rc_reading.jsonl");
    pub const VOCABULARY: &str = include_str!("../data/vocab.txt");
    pub const VERB_FORMS: &str = include_str!("../data/verb_forms.txt");
    pub const TOY_CORPUS: &str = include_str!("../data/toy_corpus.txt");
}

/// Which lexicon a file provides; used as the key in manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Resource {
    VerbNorms,
    NounPairs,
    RcCompletion,
    RcReading,
    Vocabulary,
    VerbForms,
}

impl Resource {
    pub const ALL: [Resource; 6] = [
        Resource::VerbNorms,
        Resource::NounPairs,
        Resource::RcCompletion,
        Resource::RcReading,
        Resource::Vocabulary,
        Resource::VerbForms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Resource::VerbNorms => "verb_norms",
            Resource::NounPairs => "noun_pairs",
            Resource::RcCompletion => "rc_completion",
            Resource::RcReading => "rc_reading",
            Resource::Vocabulary => "vocabulary",
            Resource::VerbForms => "verb_forms",
        }
    }

    pub fn bundled_text(self) -> &'static str {
        match self {
            Resource::VerbNorms => bundled::VERB_NORMS,
            Resource::NounPairs => bundled::NOUN_PAIRS,
            Resource::RcCompletion => bundled::RC_COMPLETION,
            Resource::RcReading => bundled::RC_READING,
            Resource::Vocabulary => bundled::VOCABULARY,
            Resource::VerbForms => bundled::VERB_FORMS,
        }
    }
}

/// Every lexicon an experiment may need, loaded and validated, together with
/// a content hash per source file.
#[derive(Debug, Clone)]
pub struct LexiconBundle {
    /// All norms as loaded, before vocabulary filtering.
    pub all_norms: Vec<VerbNorm>,
    /// Norms whose past form is in `vocabulary`.
    pub norms: Vec<VerbNorm>,
    pub pairs: Vec<NounPair>,
    pub completion: Vec<RcItem>,
    pub reading: Vec<RcItem>,
    pub vocabulary: Vocabulary,
    pub verb_forms: crate::measures::VerbFormLexicon,
    /// `resource name -> sha256 of the file bytes`.
    pub hashes: std::collections::BTreeMap<String, String>,
}

impl LexiconBundle {
    pub fn bundled() -> Self {
        Self::from_sources(|r| Ok(r.bundled_text().to_string())).expect("bundled lexicons are valid")
    }

    /// Loads each resource from the given path, falling back to the bundled
    /// file when no override is supplied.
    pub fn load(overrides: &HashMap<Resource, std::path::PathBuf>) -> crate::Result<Self> {
        Self::from_sources(|r| match overrides.get(&r) {
            Some(p) => read_source(p),
            None => Ok(r.bundled_text().to_string()),
        })
    }

    fn from_sources(mut source: impl FnMut(Resource) -> Result<String>) -> crate::Result<Self> {
        let mut texts = HashMap::new();
        let mut hashes = std::collections::BTreeMap::new();
        for r in Resource::ALL {
            let text = source(r)?;
            hashes.insert(r.name().to_string(), sha256_hex(text.as_bytes()));
            texts.insert(r, text);
        }
        let all_norms = load_verb_norms(&texts[&Resource::VerbNorms])?;
        let vocabulary = load_vocabulary(&texts[&Resource::Vocabulary])?;
        let (norms, _) = filter_by_vocabulary(&all_norms, &vocabulary);
        Ok(LexiconBundle {
            all_norms,
            norms,
            pairs: load_noun_pairs(&texts[&Resource::NounPairs])?,
            completion: load_rc_items(&texts[&Resource::RcCompletion])?,
            reading: load_rc_items(&texts[&Resource::RcReading])?,
            vocabulary,
            verb_forms: crate::measures::VerbFormLexicon::parse(&texts[&Resource::VerbForms])?,
            hashes,
        })
    }
}
