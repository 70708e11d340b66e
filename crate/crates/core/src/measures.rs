//! Measurement primitives: surprisal at a region, layer-wise similarity
//! between two regions' hidden states, and the cloze singular share.
//!
//! Undefined measurements (constant vectors, no verb among the cloze
//! candidates) are never imputed: they are returned as [`DropRecord`]s
//! naming the stimulus and the reason.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, HiddenStates, NextDistribution};
use crate::lexicon::LexiconError;
use crate::stimgen::{Role, Stimulus, StimulusKind};

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("stimulus {stim_id} has no {role} region")]
    MissingRole { stim_id: String, role: Role },
    #[error("stimulus {stim_id}: {source}")]
    Backend {
        stim_id: String,
        #[source]
        source: BackendError,
    },
    #[error("undefined correlation: {0}")]
    Correlation(String),
    #[error("undefined cloze share: {0}")]
    NoVerb(String),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, MeasureError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Surprisal,
    Similarity,
    ClozeShare,
}

impl MeasureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasureKind::Surprisal => "surprisal",
            MeasureKind::Similarity => "similarity",
            MeasureKind::ClozeShare => "cloze_share",
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MeasureKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "surprisal" => Ok(MeasureKind::Surprisal),
            "similarity" => Ok(MeasureKind::Similarity),
            "cloze_share" => Ok(MeasureKind::ClozeShare),
            other => Err(format!("unknown measure `{other}`")),
        }
    }
}

/// One observation. `role` is set for surprisal, `anchor`/`target`/`layer`
/// for similarity; `coverage` is the verb probability mass behind a cloze
/// share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub stim_id: String,
    pub model: String,
    pub measure: MeasureKind,
    pub role: Option<Role>,
    pub anchor: Option<Role>,
    pub target: Option<Role>,
    pub layer: Option<usize>,
    pub value: f64,
    pub coverage: Option<f64>,
    pub conditions: BTreeMap<String, String>,
}

impl MeasurementRecord {
    fn new(stim: &Stimulus, model: &str, measure: MeasureKind, value: f64) -> Self {
        MeasurementRecord {
            stim_id: stim.stim_id.clone(),
            model: model.to_string(),
            measure,
            role: None,
            anchor: None,
            target: None,
            layer: None,
            value,
            coverage: None,
            conditions: stim.conditions.clone(),
        }
    }

    /// Canonical ordering key used for every emitted table.
    pub fn sort_key(&self) -> (&str, &str, MeasureKind, Option<Role>, Option<Role>, Option<Role>, Option<usize>) {
        (&self.model, &self.stim_id, self.measure, self.role, self.anchor, self.target, self.layer)
    }
}

/// A measurement that could not be taken.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub stim_id: String,
    pub model: String,
    pub reason: String,
}

fn region(stim: &Stimulus, role: Role) -> Result<usize> {
    stim.region(role).ok_or_else(|| MeasureError::MissingRole {
        stim_id: stim.stim_id.clone(),
        role,
    })
}

fn backend_err(stim: &Stimulus) -> impl FnOnce(BackendError) -> MeasureError + '_ {
    move |source| MeasureError::Backend {
        stim_id: stim.stim_id.clone(),
        source,
    }
}

/// Surprisal (bits) of the word at `role`, scored over the prefix ending at
/// that word.
pub fn surprisal_at(stim: &Stimulus, role: Role, backend: &dyn Backend) -> Result<MeasurementRecord> {
    let idx = region(stim, role)?;
    let s = backend.surprisals(&stim.words[..=idx]).map_err(backend_err(stim))?;
    let mut r = MeasurementRecord::new(stim, &backend.descriptor().name, MeasureKind::Surprisal, s[idx]);
    r.role = Some(role);
    Ok(r)
}

/// Pearson's product-moment correlation.
pub fn pearson_r(v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != w.len() {
        return Err(MeasureError::Correlation(format!("lengths {} and {} differ", v.len(), w.len())));
    }
    if v.len() < 2 {
        return Err(MeasureError::Correlation("fewer than two observations".into()));
    }
    let n = v.len() as f64;
    let mv = v.iter().sum::<f64>() / n;
    let mw = w.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in v.iter().zip(w) {
        let (dx, dy) = (x - mv, y - mw);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MeasureError::Correlation("constant vector".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if !r.is_finite() {
        return Err(MeasureError::Correlation("non-finite input".into()));
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// Per-layer similarity between the anchor and target words, computed from
/// already-extracted hidden states of the whole stimulus.
pub fn similarity_from_hidden(
    stim: &Stimulus,
    model: &str,
    hidden: &HiddenStates,
    anchor: Role,
    target: Role,
) -> Result<(Vec<MeasurementRecord>, Vec<DropRecord>)> {
    let a = region(stim, anchor)?;
    let t = region(stim, target)?;
    let mut records = Vec::with_capacity(hidden.len());
    let mut drops = Vec::new();
    for (layer, states) in hidden.iter().enumerate() {
        let (Some(va), Some(vt)) = (states.get(a), states.get(t)) else {
            return Err(MeasureError::Usage(format!(
                "stimulus {}: hidden states cover {} words",
                stim.stim_id,
                states.len()
            )));
        };
        match pearson_r(va, vt) {
            Ok(r) => {
                let mut rec = MeasurementRecord::new(stim, model, MeasureKind::Similarity, r);
                rec.anchor = Some(anchor);
                rec.target = Some(target);
                rec.layer = Some(layer);
                records.push(rec);
            }
            Err(e) => drops.push(DropRecord {
                stim_id: stim.stim_id.clone(),
                model: model.to_string(),
                reason: format!("{anchor}~{target} layer {layer}: {e}"),
            }),
        }
    }
    Ok((records, drops))
}

/// One similarity record per layer between the anchor and target words.
pub fn layer_similarity(
    stim: &Stimulus,
    anchor: Role,
    target: Role,
    backend: &dyn Backend,
) -> Result<(Vec<MeasurementRecord>, Vec<DropRecord>)> {
    let last = region(stim, anchor)?.max(region(stim, target)?);
    let hidden = backend.hidden(&stim.words[..=last]).map_err(backend_err(stim))?;
    similarity_from_hidden(stim, &backend.descriptor().name, &hidden, anchor, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormClass {
    Singular,
    Plural,
    Ambiguous,
}

/// Assigns verb number to candidate words, in isolation.
pub trait VerbTagger: Send + Sync {
    /// `None` for words that are not verbs.
    fn classify(&self, word: &str) -> Option<FormClass>;
}

/// Closed-class lexicon of singular, plural and number-ambiguous verb forms.
///
/// Text format: a `[singular]`, `[plural]` and `[ambiguous]` section header,
/// each followed by whitespace-separated forms; `#` lines are comments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerbFormLexicon {
    forms: HashMap<String, FormClass>,
}

impl VerbFormLexicon {
    pub fn parse(text: &str) -> std::result::Result<Self, LexiconError> {
        let mut forms = HashMap::new();
        let mut section: Option<FormClass> = None;
        let mut seen_sections = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let row = raw.trim();
            if row.is_empty() || row.starts_with('#') {
                continue;
            }
            if let Some(name) = row.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                let class = match name {
                    "singular" => FormClass::Singular,
                    "plural" => FormClass::Plural,
                    "ambiguous" => FormClass::Ambiguous,
                    other => {
                        return Err(LexiconError::Invalid {
                            line,
                            reason: format!("unknown section `{other}`"),
                        })
                    }
                };
                if seen_sections.contains(&class) {
                    return Err(LexiconError::Invalid {
                        line,
                        reason: format!("section `{name}` repeated"),
                    });
                }
                seen_sections.push(class);
                section = Some(class);
                continue;
            }
            let class = section.ok_or_else(|| LexiconError::Invalid {
                line,
                reason: "forms before the first section header".into(),
            })?;
            for w in row.split_whitespace() {
                if w.chars().any(|c| c.is_uppercase()) {
                    return Err(LexiconError::Malformed {
                        line,
                        column: "form".into(),
                        reason: format!("`{w}` is not lowercase"),
                    });
                }
                if let Some(prev) = forms.insert(w.to_string(), class) {
                    return Err(LexiconError::Invalid {
                        line,
                        reason: format!("`{w}` listed as both {prev:?} and {class:?}"),
                    });
                }
            }
        }
        Ok(VerbFormLexicon { forms })
    }

    pub fn from_sets<'a>(
        singular: impl IntoIterator<Item = &'a str>,
        plural: impl IntoIterator<Item = &'a str>,
        ambiguous: impl IntoIterator<Item = &'a str>,
    ) -> std::result::Result<Self, String> {
        let mut forms = HashMap::new();
        for (set, class) in [
            (singular.into_iter().collect::<Vec<_>>(), FormClass::Singular),
            (plural.into_iter().collect(), FormClass::Plural),
            (ambiguous.into_iter().collect(), FormClass::Ambiguous),
        ] {
            for w in set {
                if forms.insert(w.to_string(), class).is_some() {
                    return Err(format!("`{w}` appears in more than one set"));
                }
            }
        }
        Ok(VerbFormLexicon { forms })
    }

    pub fn forms(&self, class: FormClass) -> Vec<&str> {
        let mut v: Vec<&str> = self.forms.iter().filter(|(_, c)| **c == class).map(|(w, _)| w.as_str()).collect();
        v.sort_unstable();
        v
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }
}

impl VerbTagger for VerbFormLexicon {
    fn classify(&self, word: &str) -> Option<FormClass> {
        self.forms.get(word).copied()
    }
}

/// Singular and plural verb mass among the `k` most probable candidates.
/// Candidates that are not whole words are skipped.
pub fn verb_mass(dist: &NextDistribution, k: usize, tagger: &dyn VerbTagger) -> (f64, f64) {
    let (mut sg, mut pl) = (0.0, 0.0);
    for c in dist.top_k(k) {
        match c.word.and_then(|w| tagger.classify(w)) {
            Some(FormClass::Singular) => sg += c.prob,
            Some(FormClass::Plural) => pl += c.prob,
            _ => {}
        }
    }
    (sg, pl)
}

/// `(share, coverage)` where share is the singular fraction of verb mass in
/// the top `k` and coverage the verb mass itself.
pub fn singular_share(dist: &NextDistribution, k: usize, tagger: &dyn VerbTagger) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(MeasureError::Usage("k must be at least 1".into()));
    }
    let (sg, pl) = verb_mass(dist, k, tagger);
    let total = sg + pl;
    if total <= 0.0 {
        return Err(MeasureError::NoVerb(format!("no number-marked verb among the top {k}")));
    }
    Ok((sg / total, total))
}

pub fn plural_share(dist: &NextDistribution, k: usize, tagger: &dyn VerbTagger) -> Result<f64> {
    let (sg, pl) = verb_mass(dist, k, tagger);
    if sg + pl <= 0.0 {
        return Err(MeasureError::NoVerb(format!("no number-marked verb among the top {k}")));
    }
    Ok(pl / (sg + pl))
}

/// Cloze singular share after a completion prompt.
pub fn cloze_singular_share(
    stim: &Stimulus,
    backend: &dyn Backend,
    k: usize,
    tagger: &dyn VerbTagger,
) -> Result<MeasurementRecord> {
    if stim.kind != StimulusKind::Completion {
        return Err(MeasureError::Usage(format!("stimulus {} is not a completion prompt", stim.stim_id)));
    }
    let dist = backend.next_distribution(&stim.words).map_err(backend_err(stim))?;
    let (share, coverage) = singular_share(&dist, k, tagger).map_err(|e| match e {
        MeasureError::NoVerb(m) => MeasureError::NoVerb(format!("{}: {m}", stim.stim_id)),
        other => other,
    })?;
    let mut r = MeasurementRecord::new(stim, &backend.descriptor().name, MeasureKind::ClozeShare, share);
    r.coverage = Some(coverage);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{TokenLabels, UniformModel, LmBackend, WordTokenizer};
    use crate::lexicon::Vocabulary;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn dist(pairs: &[(&str, f64)]) -> NextDistribution {
        NextDistribution {
            probs: pairs.iter().map(|p| p.1).collect(),
            labels: Arc::new(TokenLabels {
                tokens: pairs.iter().map(|p| p.0.to_string()).collect(),
                words: pairs.iter().map(|p| Some(p.0.to_string())).collect(),
            }),
            approximate: false,
        }
    }

    fn lex() -> VerbFormLexicon {
        VerbFormLexicon::from_sets(["was", "is"], ["were", "are"], ["ate"]).unwrap()
    }

    #[test]
    fn share_arithmetic() {
        let d = dist(&[("was", 0.3), ("were", 0.1), ("dog", 0.6)]);
        let (share, coverage) = singular_share(&d, 100, &lex()).unwrap();
        assert!((share - 0.75).abs() < 1e-15);
        assert!((coverage - 0.4).abs() < 1e-15);
        let d = dist(&[("were", 0.3), ("are", 0.1), ("ate", 0.6)]);
        assert_eq!(singular_share(&d, 100, &lex()).unwrap().0, 0.0);
        let d = dist(&[("dog", 0.5), ("ate", 0.5)]);
        assert!(matches!(singular_share(&d, 100, &lex()), Err(MeasureError::NoVerb(_))));
    }

    #[test]
    fn top_k_cutoff_applies() {
        let d = dist(&[("dog", 0.5), ("were", 0.3), ("was", 0.2)]);
        assert_eq!(singular_share(&d, 2, &lex()).unwrap().0, 0.0);
        assert!((singular_share(&d, 3, &lex()).unwrap().0 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn pearson_hand_example() {
        // Means 2.75 and 3.25; deviations (-1.75,-.75,.25,2.25), (-1.25,-2.25,.75,2.75).
        let sxy = 1.75 * 1.25 + 0.75 * 2.25 + 0.25 * 0.75 + 2.25 * 2.75;
        let sxx: f64 = 1.75f64.powi(2) + 0.75f64.powi(2) + 0.25f64.powi(2) + 2.25f64.powi(2);
        let syy: f64 = 1.25f64.powi(2) + 2.25f64.powi(2) + 0.75f64.powi(2) + 2.75f64.powi(2);
        let expected = sxy / (sxx * syy).sqrt();
        let r = pearson_r(&[1.0, 2.0, 3.0, 5.0], &[2.0, 1.0, 4.0, 6.0]).unwrap();
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 0.90224).abs() < 1e-4);
    }

    #[test]
    fn pearson_undefined_cases() {
        assert!(pearson_r(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(pearson_r(&[1.0], &[1.0]).is_err());
        assert!(pearson_r(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn verb_form_sections_must_be_disjoint() {
        assert!(VerbFormLexicon::parse("[singular]\nwas\n[plural]\nwas\n").is_err());
        assert!(VerbFormLexicon::parse("was\n").is_err());
        assert!(VerbFormLexicon::parse("[nouns]\ndog\n").is_err());
        let l = VerbFormLexicon::parse(crate::lexicon::bundled::VERB_FORMS).unwrap();
        assert_eq!(l.classify("was"), Some(FormClass::Singular));
        assert_eq!(l.classify("were"), Some(FormClass::Plural));
        assert_eq!(l.classify("ate"), Some(FormClass::Ambiguous));
        assert_eq!(l.classify("dog"), None);
    }

    #[test]
    fn uniform_surprisal_at_pronoun() {
        let vocab = Vocabulary::from_words((0..48).map(|i| format!("w{i}")).chain(["because".into(), "she".into()]));
        let b = LmBackend::new(
            "uniform",
            Arc::new(WordTokenizer::new(vocab)),
            Box::new(UniformModel::new(50, 2, 4, 0)),
            None,
        )
        .unwrap();
        let stim = Stimulus {
            stim_id: "s".into(),
            kind: StimulusKind::Referential,
            words: ["w1", "because", "she"].iter().map(|s| s.to_string()).collect(),
            regions: BTreeMap::from([(Role::Pronoun, 2)]),
            conditions: BTreeMap::new(),
        };
        let r = surprisal_at(&stim, Role::Pronoun, &b).unwrap();
        assert!((r.value - 50f64.log2()).abs() < 1e-12);
        assert!((r.value - 5.6439).abs() < 1e-4);
        assert!(matches!(surprisal_at(&stim, Role::RcVerb, &b), Err(MeasureError::MissingRole { .. })));
    }

    proptest! {
        #[test]
        fn pearson_symmetry_and_affine(v in prop::collection::vec(-10.0f64..10.0, 3..20), seed in 0u64..1000, a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let w: Vec<f64> = v.iter().enumerate().map(|(i, x)| x * 0.5 + ((i as u64 * 7919 + seed) % 13) as f64).collect();
            if let (Ok(r1), Ok(r2)) = (pearson_r(&v, &w), pearson_r(&w, &v)) {
                prop_assert_eq!(r1, r2);
                prop_assert!(r1.abs() <= 1.0);
                let av: Vec<f64> = v.iter().map(|x| a * x + b).collect();
                prop_assert!((pearson_r(&av, &w).unwrap() - r1).abs() < 1e-9);
                let nv: Vec<f64> = v.iter().map(|x| -a * x + b).collect();
                prop_assert!((pearson_r(&nv, &w).unwrap() + r1).abs() < 1e-9);
            }
        }

        #[test]
        fn shares_are_complementary(p in prop::collection::vec(0.01f64..1.0, 5)) {
            let total: f64 = p.iter().sum();
            let words = ["was", "were", "is", "are", "dog"];
            let pairs: Vec<(&str, f64)> = words.iter().zip(&p).map(|(w, x)| (*w, x / total)).collect();
            let d = dist(&pairs);
            let (sg, _) = singular_share(&d, 5, &lex()).unwrap();
            let pl = plural_share(&d, 5, &lex()).unwrap();
            prop_assert!((sg + pl - 1.0).abs() < 1e-12);
        }

        #[test]
        fn raising_a_singular_verb_never_lowers_share(p in prop::collection::vec(0.01f64..1.0, 5), bump in 0.0f64..2.0) {
            let words = ["was", "were", "is", "are", "dog"];
            let norm = |q: &[f64]| -> Vec<(&str, f64)> {
                let t: f64 = q.iter().sum();
                words.iter().zip(q).map(|(w, x)| (*w, x / t)).collect()
            };
            let before = singular_share(&dist(&norm(&p)), 5, &lex()).unwrap().0;
            let mut q = p.clone();
            q[0] += bump;
            let after = singular_share(&dist(&norm(&q)), 5, &lex()).unwrap().0;
            prop_assert!(after >= before - 1e-12);
        }
    }
}
