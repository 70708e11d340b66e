//! Synthetic backends with known effects.
//!
//! A planted model is a list of context rules. Probability rules fix the
//! probability of a few listed words at positions whose preceding words
//! match a pattern; the remaining mass is spread uniformly over the rest of
//! the vocabulary. Hidden rules make a word's state a copy (or blend) of an
//! earlier word's state. Patterns address words by offset from the target
//! position: `-1` is the previous word, `0` the target word itself (hidden
//! rules only).
//!
//! Optional `jitter` perturbs listed probabilities per context in log space
//! (keeping their total), and `noise` adds Gaussian noise to hidden states.
//! Both are keyed on the seed and the exact prefix, so the model stays
//! deterministic.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{seeded_normal, BackendError, HiddenStates, LmBackend, Result, TokenModel, WordTokenizer};
use crate::lexicon::{BiasCategory, Gender, LexiconBundle, Vocabulary};
use crate::util::fnv1a;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextPattern {
    /// `(offset, words)`: the word at `target + offset` must be one of `words`.
    pub at: Vec<(i64, BTreeSet<String>)>,
}

impl ContextPattern {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with<I, S>(mut self, offset: i64, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.at.push((offset, words.into_iter().map(Into::into).collect()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbRule {
    pub when: ContextPattern,
    pub probs: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenRule {
    pub when: ContextPattern,
    /// Negative offset of the word whose state is copied.
    pub copy_offset: i64,
    /// 1.0 copies exactly; 0.0 keeps the word's own prototype.
    pub weight: f64,
    /// Layers the rule applies to; all layers when `None`.
    pub layers: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub prob_rules: Vec<ProbRule>,
    pub hidden_rules: Vec<HiddenRule>,
    pub jitter: f64,
    pub noise: f64,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

struct Pattern {
    at: Vec<(i64, HashSet<usize>)>,
}

impl Pattern {
    fn compile(p: &ContextPattern, vocab: &Vocabulary, max_offset: i64) -> Result<Self> {
        let mut at = Vec::with_capacity(p.at.len());
        for (off, words) in &p.at {
            if *off > max_offset {
                return Err(BackendError::InvalidRules(format!(
                    "offset {off} looks ahead of the target (max {max_offset})"
                )));
            }
            at.push((*off, words.iter().filter_map(|w| vocab.id(w)).collect()));
        }
        Ok(Pattern { at })
    }

    fn matches(&self, tokens: &[usize], target: usize) -> bool {
        self.at.iter().all(|(off, set)| {
            let pos = target as i64 + off;
            pos >= 0 && (pos as usize) < tokens.len() && set.contains(&tokens[pos as usize])
        })
    }
}

struct CompiledProb {
    when: Pattern,
    listed: Vec<(usize, f64)>,
    rest: f64,
}

struct CompiledHidden {
    when: Pattern,
    copy_offset: i64,
    weight: f64,
    layers: Option<Vec<usize>>,
}

pub struct PlantedModel {
    n: usize,
    prob_rules: Vec<CompiledProb>,
    hidden_rules: Vec<CompiledHidden>,
    jitter: f64,
    noise: f64,
    n_layers: usize,
    dim: usize,
    seed: u64,
}

const MASS_TOL: f64 = 1e-9;

impl PlantedModel {
    pub fn new(vocab: &Vocabulary, spec: &PlantSpec) -> Result<Self> {
        let n = vocab.len();
        if n == 0 {
            return Err(BackendError::InvalidRules("empty vocabulary".into()));
        }
        if spec.n_layers == 0 || spec.hidden_dim == 0 {
            return Err(BackendError::InvalidRules("n_layers and hidden_dim must be positive".into()));
        }
        if !(spec.jitter >= 0.0 && spec.noise >= 0.0) {
            return Err(BackendError::InvalidRules("jitter and noise must be nonnegative".into()));
        }
        let mut prob_rules = Vec::new();
        for (i, rule) in spec.prob_rules.iter().enumerate() {
            let mut listed = Vec::new();
            let mut seen = HashSet::new();
            for (w, p) in &rule.probs {
                let id = vocab
                    .id(w)
                    .ok_or_else(|| BackendError::InvalidRules(format!("rule {i}: `{w}` is not in the vocabulary")))?;
                if !seen.insert(id) {
                    return Err(BackendError::InvalidRules(format!("rule {i}: `{w}` listed twice")));
                }
                if !(0.0..=1.0).contains(p) {
                    return Err(BackendError::InvalidRules(format!("rule {i}: p({w}) = {p} is not a probability")));
                }
                listed.push((id, *p));
            }
            let mass: f64 = listed.iter().map(|x| x.1).sum();
            if mass > 1.0 + MASS_TOL {
                return Err(BackendError::InvalidRules(format!("rule {i}: listed mass {mass} exceeds 1")));
            }
            let unlisted = n - listed.len();
            if unlisted == 0 && (1.0 - mass).abs() > MASS_TOL {
                return Err(BackendError::InvalidRules(format!(
                    "rule {i}: lists every word but sums to {mass}"
                )));
            }
            let rest = if unlisted == 0 { 0.0 } else { (1.0 - mass).max(0.0) / unlisted as f64 };
            prob_rules.push(CompiledProb {
                when: Pattern::compile(&rule.when, vocab, -1)?,
                listed,
                rest,
            });
        }
        let mut hidden_rules = Vec::new();
        for (i, rule) in spec.hidden_rules.iter().enumerate() {
            if rule.copy_offset >= 0 {
                return Err(BackendError::InvalidRules(format!("hidden rule {i}: copy offset must be negative")));
            }
            if !(0.0..=1.0).contains(&rule.weight) {
                return Err(BackendError::InvalidRules(format!("hidden rule {i}: weight outside [0, 1]")));
            }
            hidden_rules.push(CompiledHidden {
                when: Pattern::compile(&rule.when, vocab, 0)?,
                copy_offset: rule.copy_offset,
                weight: rule.weight,
                layers: rule.layers.clone(),
            });
        }
        Ok(PlantedModel {
            n,
            prob_rules,
            hidden_rules,
            jitter: spec.jitter,
            noise: spec.noise,
            n_layers: spec.n_layers,
            dim: spec.hidden_dim,
            seed: spec.seed,
        })
    }

    fn rule_for(&self, context: &[usize]) -> Option<&CompiledProb> {
        self.prob_rules.iter().find(|r| r.when.matches(context, context.len()))
    }

    /// Listed probabilities after jitter; their total is unchanged.
    fn listed_probs(&self, rule: &CompiledProb, context: &[usize]) -> Vec<(usize, f64)> {
        if self.jitter == 0.0 || rule.listed.len() < 2 {
            return rule.listed.clone();
        }
        let z = seeded_normal(prefix_key(self.seed, b"jitter", context), rule.listed.len());
        let raw: Vec<f64> = rule.listed.iter().zip(&z).map(|(&(_, p), z)| p * (self.jitter * z).exp()).collect();
        let before: f64 = rule.listed.iter().map(|x| x.1).sum();
        let after: f64 = raw.iter().sum();
        let scale = if after > 0.0 { before / after } else { 0.0 };
        rule.listed.iter().zip(raw).map(|(&(id, _), p)| (id, p * scale)).collect()
    }

    fn prototype(&self, layer: usize, token: usize) -> Vec<f64> {
        seeded_normal(
            fnv1a(self.seed, [b"proto".as_slice(), &layer.to_le_bytes(), &token.to_le_bytes()]),
            self.dim,
        )
    }
}

fn prefix_key(seed: u64, tag: &[u8], tokens: &[usize]) -> u64 {
    let bytes: Vec<u8> = tokens.iter().flat_map(|t| (*t as u32).to_le_bytes()).collect();
    fnv1a(seed, [tag, bytes.as_slice()])
}

impl TokenModel for PlantedModel {
    fn vocab_size(&self) -> usize {
        self.n
    }

    fn n_layers(&self) -> usize {
        self.n_layers
    }

    fn hidden_dim(&self) -> usize {
        self.dim
    }

    fn next_log2_probs(&self, context: &[usize]) -> Vec<f64> {
        match self.rule_for(context) {
            None => vec![-(self.n as f64).log2(); self.n],
            Some(rule) => {
                let mut p = vec![rule.rest; self.n];
                for (id, q) in self.listed_probs(rule, context) {
                    p[id] = q;
                }
                p.into_iter().map(f64::log2).collect()
            }
        }
    }

    fn log2_prob(&self, context: &[usize], next: usize) -> f64 {
        match self.rule_for(context) {
            None => -(self.n as f64).log2(),
            Some(rule) => self
                .listed_probs(rule, context)
                .into_iter()
                .find(|&(id, _)| id == next)
                .map_or(rule.rest, |x| x.1)
                .log2(),
        }
    }

    fn hidden_states(&self, tokens: &[usize]) -> HiddenStates {
        let mut layers = Vec::with_capacity(self.n_layers);
        for l in 0..self.n_layers {
            let mut base: Vec<Vec<f64>> = Vec::with_capacity(tokens.len());
            for t in 0..tokens.len() {
                let own = self.prototype(l, tokens[t]);
                let rule = self.hidden_rules.iter().find(|r| {
                    r.layers.as_ref().is_none_or(|ls| ls.contains(&l))
                        && r.when.matches(tokens, t)
                        && t as i64 + r.copy_offset >= 0
                });
                let v = match rule {
                    None => own,
                    Some(r) => {
                        let src = &base[(t as i64 + r.copy_offset) as usize];
                        src.iter().zip(&own).map(|(s, o)| r.weight * s + (1.0 - r.weight) * o).collect()
                    }
                };
                base.push(v);
            }
            let out = base
                .into_iter()
                .enumerate()
                .map(|(t, v)| {
                    if self.noise == 0.0 {
                        return v;
                    }
                    let mut key_tokens = vec![l];
                    key_tokens.extend_from_slice(&tokens[..=t]);
                    let z = seeded_normal(prefix_key(self.seed, b"noise", &key_tokens), self.dim);
                    v.iter().zip(z).map(|(x, z)| x + self.noise * z).collect()
                })
                .collect();
            layers.push(out);
        }
        layers
    }
}

/// Builds a word-level backend from explicit rules.
pub fn make_planted_backend(name: &str, vocab: Vocabulary, spec: &PlantSpec) -> Result<LmBackend> {
    let model = PlantedModel::new(&vocab, spec)?;
    LmBackend::new(name, Arc::new(WordTokenizer::new(vocab)), Box::new(model), Some(spec.seed))
}

/// Pronoun preference planted on referential frames
/// `the X VERBED the Y because ___`: the pronoun agreeing with the antecedent
/// favoured by the verb's bias gets `p_preferred`, the other pronoun
/// `p_dispreferred`. With `hidden_weight > 0` the pronoun's state is blended
/// towards the favoured antecedent's state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferentialPlant {
    pub p_preferred: f64,
    pub p_dispreferred: f64,
    #[serde(default)]
    pub hidden_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentMode {
    /// The RC verb agreeing with the lower noun is favoured.
    Local,
    /// After an IC verb the higher noun's number is favoured; otherwise local.
    IcHigher,
    /// `was` and `were` both get `p_major`.
    Neutral,
}

/// Planted RC-verb preference on `... the HIGHER of the LOWER who ___`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachmentPlant {
    pub mode: AttachmentMode,
    pub p_major: f64,
    pub p_minor: f64,
    /// Blend of the RC verb's state towards the noun it agrees with.
    #[serde(default)]
    pub agreement_weight: f64,
    /// Blend of `who` towards the higher noun after IC verbs and the lower
    /// noun otherwise.
    #[serde(default)]
    pub who_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(default)]
    pub referential: Option<ReferentialPlant>,
    #[serde(default)]
    pub attachment: Option<AttachmentPlant>,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    #[serde(default = "default_dim")]
    pub hidden_dim: usize,
}

fn default_layers() -> usize {
    4
}

fn default_dim() -> usize {
    16
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            referential: None,
            attachment: None,
            jitter: 0.0,
            noise: 0.0,
            n_layers: default_layers(),
            hidden_dim: default_dim(),
        }
    }
}

impl PlantSpec {
    /// Expands a preset configuration into explicit rules for the given lexicons.
    pub fn from_config(cfg: &PlantConfig, lex: &LexiconBundle, seed: u64) -> Result<Self> {
        let mut spec = PlantSpec {
            prob_rules: Vec::new(),
            hidden_rules: Vec::new(),
            jitter: cfg.jitter,
            noise: cfg.noise,
            n_layers: cfg.n_layers,
            hidden_dim: cfg.hidden_dim,
            seed,
        };
        if let Some(r) = &cfg.referential {
            referential_rules(&mut spec, r, lex);
        }
        if let Some(a) = &cfg.attachment {
            attachment_rules(&mut spec, a, lex)?;
        }
        Ok(spec)
    }
}

fn referential_rules(spec: &mut PlantSpec, plant: &ReferentialPlant, lex: &LexiconBundle) {
    let verbs = |cat: BiasCategory| -> BTreeSet<String> {
        lex.norms
            .iter()
            .filter(|n| n.bias_category() == cat)
            .map(|n| n.past_form.clone())
            .collect()
    };
    let nouns = |g: Gender| -> BTreeSet<String> { lex.pairs.iter().map(|p| p.form(g).to_string()).collect() };

    // Target is the pronoun slot: subject at -5, verb at -4, object at -2.
    for cat in [BiasCategory::SubjectBiased, BiasCategory::ObjectBiased] {
        for subject in [Gender::Female, Gender::Male] {
            let favoured = if cat == BiasCategory::SubjectBiased { subject } else { subject.opposite() };
            spec.prob_rules.push(ProbRule {
                when: ContextPattern::new()
                    .with(-1, ["because"])
                    .with(-4, verbs(cat))
                    .with(-5, nouns(subject))
                    .with(-2, nouns(subject.opposite())),
                probs: vec![
                    (favoured.pronoun().to_string(), plant.p_preferred),
                    (favoured.opposite().pronoun().to_string(), plant.p_dispreferred),
                ],
            });
        }
        if plant.hidden_weight > 0.0 {
            spec.hidden_rules.push(HiddenRule {
                when: ContextPattern::new().with(0, ["he", "she"]).with(-1, ["because"]).with(-4, verbs(cat)),
                copy_offset: if cat == BiasCategory::SubjectBiased { -5 } else { -2 },
                weight: plant.hidden_weight,
                layers: None,
            });
        }
    }
}

fn attachment_rules(spec: &mut PlantSpec, plant: &AttachmentPlant, lex: &LexiconBundle) -> Result<()> {
    let items = lex.completion.iter().chain(&lex.reading);
    let mut sg = BTreeSet::new();
    let mut pl = BTreeSet::new();
    let mut ic_last = BTreeSet::new();
    let mut nonic_last = BTreeSet::new();
    for item in items {
        for forms in [&item.higher_noun, &item.lower_noun] {
            sg.insert(forms.sg.clone());
            pl.insert(forms.pl.clone());
        }
        ic_last.insert(item.ic_verb.last().expect("validated nonempty").clone());
        nonic_last.insert(item.nonic_verb.last().expect("validated nonempty").clone());
    }
    if let Some(w) = sg.intersection(&pl).next() {
        return Err(BackendError::InvalidRules(format!("`{w}` is both a singular and a plural noun")));
    }
    if let Some(w) = ic_last.intersection(&nonic_last).next() {
        return Err(BackendError::InvalidRules(format!("`{w}` ends both an IC and a non-IC verb")));
    }

    // Target is the RC-verb slot: who at -1, lower noun at -2, higher noun
    // at -5, last word of the main verb at -7.
    let was_were = |number_sg: bool, major: f64, minor: f64| {
        if number_sg {
            vec![("was".to_string(), major), ("were".to_string(), minor)]
        } else {
            vec![("were".to_string(), major), ("was".to_string(), minor)]
        }
    };
    match plant.mode {
        AttachmentMode::Neutral => spec.prob_rules.push(ProbRule {
            when: ContextPattern::new().with(-1, ["who"]),
            probs: vec![("was".into(), plant.p_major), ("were".into(), plant.p_major)],
        }),
        AttachmentMode::Local | AttachmentMode::IcHigher => {
            if plant.mode == AttachmentMode::IcHigher {
                for (set, is_sg) in [(&sg, true), (&pl, false)] {
                    spec.prob_rules.push(ProbRule {
                        when: ContextPattern::new().with(-1, ["who"]).with(-7, ic_last.clone()).with(-5, set.clone()),
                        probs: was_were(is_sg, plant.p_major, plant.p_minor),
                    });
                }
            }
            for (set, is_sg) in [(&sg, true), (&pl, false)] {
                spec.prob_rules.push(ProbRule {
                    when: ContextPattern::new().with(-1, ["who"]).with(-2, set.clone()),
                    probs: was_were(is_sg, plant.p_major, plant.p_minor),
                });
            }
        }
    }

    if plant.agreement_weight > 0.0 {
        // On the RC verb: lower noun at -2, higher noun at -5.
        for (verb, set) in [("was", &sg), ("were", &pl)] {
            for offset in [-2, -5] {
                spec.hidden_rules.push(HiddenRule {
                    when: ContextPattern::new().with(0, [verb]).with(offset, set.clone()),
                    copy_offset: offset,
                    weight: plant.agreement_weight,
                    layers: None,
                });
            }
        }
    }
    if plant.who_weight > 0.0 {
        // On `who`: lower noun at -1, higher noun at -4, main verb at -6.
        for (verbs, offset) in [(&ic_last, -4), (&nonic_last, -1)] {
            spec.hidden_rules.push(HiddenRule {
                when: ContextPattern::new().with(0, ["who"]).with(-6, verbs.clone()),
                copy_offset: offset,
                weight: plant.who_weight,
                layers: None,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{to_words, Backend};

    fn vocab() -> Vocabulary {
        Vocabulary::from_words(["the", "mother", "girl", "amused", "because", "she", "he", "dog"])
    }

    fn spec(probs: Vec<(&str, f64)>) -> PlantSpec {
        PlantSpec {
            prob_rules: vec![ProbRule {
                when: ContextPattern::new().with(-1, ["because"]),
                probs: probs.into_iter().map(|(w, p)| (w.to_string(), p)).collect(),
            }],
            hidden_rules: vec![],
            jitter: 0.0,
            noise: 0.0,
            n_layers: 3,
            hidden_dim: 8,
            seed: 5,
        }
    }

    #[test]
    fn rule_sets_exact_probabilities() {
        let b = make_planted_backend("p", vocab(), &spec(vec![("she", 0.6), ("he", 0.3)])).unwrap();
        let d = b.next_distribution(&to_words("the mother amused the girl because")).unwrap();
        assert!((d.total() - 1.0).abs() < 1e-12);
        assert_eq!(d.prob_of_word("she"), Some(0.6));
        let s = b.surprisals(&to_words("the mother amused the girl because she")).unwrap();
        let h = b.surprisals(&to_words("the mother amused the girl because he")).unwrap();
        assert!((h[6] - s[6] - 1.0).abs() < 1e-12);
        assert!((s[0] - 3.0).abs() < 1e-12, "unmatched positions are uniform over 8 words");
    }

    #[test]
    fn rules_must_normalize() {
        let err = make_planted_backend("p", vocab(), &spec(vec![("she", 0.7), ("he", 0.5)])).err().unwrap();
        assert!(matches!(err, BackendError::InvalidRules(_)));
        let err = make_planted_backend("p", vocab(), &spec(vec![("she", -0.1)])).err().unwrap();
        assert!(matches!(err, BackendError::InvalidRules(_)));
        let err = make_planted_backend("p", vocab(), &spec(vec![("zebra", 0.1)])).err().unwrap();
        assert!(matches!(err, BackendError::InvalidRules(_)));
        let all: Vec<(&str, f64)> = ["the", "mother", "girl", "amused", "because", "she", "he", "dog"]
            .into_iter()
            .map(|w| (w, 0.1))
            .collect();
        assert!(make_planted_backend("p", vocab(), &spec(all)).is_err());
    }

    #[test]
    fn jitter_keeps_listed_mass() {
        let mut s = spec(vec![("she", 0.45), ("he", 0.45)]);
        s.jitter = 0.3;
        let b = make_planted_backend("p", vocab(), &s).unwrap();
        let d = b.next_distribution(&to_words("the girl amused the mother because")).unwrap();
        let she = d.prob_of_word("she").unwrap();
        let he = d.prob_of_word("he").unwrap();
        assert!((she + he - 0.9).abs() < 1e-12);
        assert!((she - he).abs() > 1e-6);
        let again = b.next_distribution(&to_words("the girl amused the mother because")).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn hidden_copy_gives_perfect_similarity() {
        let mut s = spec(vec![]);
        s.prob_rules.clear();
        s.hidden_rules.push(HiddenRule {
            when: ContextPattern::new().with(0, ["she"]),
            copy_offset: -5,
            weight: 1.0,
            layers: Some(vec![2]),
        });
        let b = make_planted_backend("p", vocab(), &s).unwrap();
        let h = b.hidden(&to_words("the mother amused the girl because she")).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h[2][6], h[2][1]);
        assert_ne!(h[1][6], h[1][1]);
    }

    #[test]
    fn hidden_states_are_causal() {
        let mut s = spec(vec![("she", 0.5)]);
        s.noise = 0.5;
        let b = make_planted_backend("p", vocab(), &s).unwrap();
        let full = b.hidden(&to_words("the mother amused the girl because she")).unwrap();
        let prefix = b.hidden(&to_words("the mother amused")).unwrap();
        for l in 0..3 {
            assert_eq!(&full[l][..3], &prefix[l][..]);
        }
    }

    #[test]
    fn lookahead_patterns_rejected() {
        let mut s = spec(vec![]);
        s.prob_rules[0].when = ContextPattern::new().with(0, ["she"]);
        assert!(make_planted_backend("p", vocab(), &s).is_err());
    }
}
