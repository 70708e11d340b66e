//! Backend replaying scores exported from an external model.
//!
//! Large pretrained models are run outside this crate (for example with
//! `scripts/export_hf_dump.py`) and their outputs stored as a dump file:
//! line-delimited JSON with one header object followed by one record per
//! scored word sequence.
//!
//! ```text
//! {"format":"icprobe.dump","version":1,"name":"gpt2","n_layers":12,"hidden_dim":768,
//!  "word_level":false,"tokens":["!", ...],"words":["!", null, ...]}
//! {"words":["the","man","admired"],"surprisal":[..],"hidden":[[[..]]],"next":[..]}
//! ```
//!
//! `surprisal` has one value per word, `hidden` is `[layer][word][dim]`, and
//! `next` is the distribution over `tokens` after the last word. `hidden` and
//! `next` are optional. Because the scores are causal, a record also answers
//! queries for any prefix of its word sequence (except `next`, which needs an
//! exact match).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use super::{
    Backend, BackendDescriptor, BackendError, HiddenStates, NextDistribution, Result, TokenAlignment, TokenLabels,
};

/// Directory against which relative dump paths are resolved.
pub const MODEL_CACHE_ENV: &str = "ICPROBE_MODEL_CACHE";

const DUMP_FORMAT: &str = "icprobe.dump";

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpHeader {
    format: String,
    version: u32,
    name: String,
    n_layers: usize,
    hidden_dim: usize,
    word_level: bool,
    tokens: Vec<String>,
    words: Vec<Option<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpRecord {
    words: Vec<String>,
    surprisal: Vec<f64>,
    #[serde(default)]
    hidden: Option<HiddenStates>,
    #[serde(default)]
    next: Option<Vec<f64>>,
}

pub struct DumpBackend {
    descriptor: BackendDescriptor,
    labels: Arc<TokenLabels>,
    word_level: bool,
    records: Vec<DumpRecord>,
    /// Every prefix of every record -> first record containing it.
    by_prefix: HashMap<Vec<String>, usize>,
}

impl DumpBackend {
    pub fn open(path: &Path) -> Result<Self> {
        let resolved = resolve(path);
        let text = std::fs::read_to_string(&resolved).map_err(|source| BackendError::Io {
            path: resolved.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, m: String| BackendError::Dump(format!("line {line}: {m}"));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let h: DumpHeader = serde_json::from_str(first).map_err(|e| bad(1, e.to_string()))?;
        if h.format != DUMP_FORMAT || h.version != 1 {
            return Err(bad(1, format!("unsupported format {} v{}", h.format, h.version)));
        }
        if h.n_layers == 0 || h.hidden_dim == 0 {
            return Err(bad(1, "n_layers and hidden_dim must be positive".into()));
        }
        if h.tokens.len() != h.words.len() || h.tokens.is_empty() {
            return Err(bad(1, "tokens and words must be nonempty and of equal length".into()));
        }
        let mut records = Vec::new();
        let mut by_prefix = HashMap::new();
        for (i, l) in lines {
            let line = i + 1;
            let r: DumpRecord = serde_json::from_str(l).map_err(|e| bad(line, e.to_string()))?;
            if r.words.is_empty() || r.surprisal.len() != r.words.len() {
                return Err(bad(line, "need one surprisal per word".into()));
            }
            if r.surprisal.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(bad(line, "surprisals must be finite and nonnegative".into()));
            }
            if let Some(hs) = &r.hidden {
                let ok = hs.len() == h.n_layers
                    && hs.iter().all(|l| l.len() == r.words.len() && l.iter().all(|v| v.len() == h.hidden_dim));
                if !ok {
                    return Err(bad(line, "hidden states must be n_layers x words x hidden_dim".into()));
                }
            }
            if let Some(p) = &r.next {
                let total: f64 = p.iter().sum();
                if p.len() != h.tokens.len() || p.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > 1e-6 {
                    return Err(bad(line, "next must be a distribution over the header tokens".into()));
                }
            }
            for k in 1..=r.words.len() {
                by_prefix.entry(r.words[..k].to_vec()).or_insert(records.len());
            }
            records.push(r);
        }
        let descriptor = BackendDescriptor {
            name: h.name.clone(),
            vocab_size: h.tokens.len(),
            vocab_hash: crate::lexicon::sha256_hex(h.tokens.join("\n").as_bytes()),
            n_layers: h.n_layers,
            hidden_dim: h.hidden_dim,
            deterministic: true,
            seed: None,
        };
        Ok(DumpBackend {
            descriptor,
            labels: Arc::new(TokenLabels {
                tokens: h.tokens,
                words: h.words,
            }),
            word_level: h.word_level,
            records,
            by_prefix,
        })
    }

    fn lookup(&self, words: &[String]) -> Result<&DumpRecord> {
        if words.is_empty() {
            return Err(BackendError::EmptySequence);
        }
        self.by_prefix
            .get(words)
            .map(|&i| &self.records[i])
            .ok_or_else(|| BackendError::OutOfVocabulary {
                word: words.join(" "),
                backend: self.descriptor.name.clone(),
            })
    }
}

fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os(MODEL_CACHE_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

impl Backend for DumpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    /// Dumps carry word-level results only; spans are reported as one
    /// position per word.
    fn align(&self, words: &[String]) -> Result<TokenAlignment> {
        self.lookup(words)?;
        Ok(TokenAlignment {
            word_spans: (0..words.len()).map(|i| (i, i + 1)).collect(),
        })
    }

    fn surprisals(&self, words: &[String]) -> Result<Vec<f64>> {
        Ok(self.lookup(words)?.surprisal[..words.len()].to_vec())
    }

    fn hidden(&self, words: &[String]) -> Result<HiddenStates> {
        let r = self.lookup(words)?;
        let hs = r
            .hidden
            .as_ref()
            .ok_or_else(|| BackendError::Dump(format!("no hidden states for `{}`", words.join(" "))))?;
        Ok(hs.iter().map(|l| l[..words.len()].to_vec()).collect())
    }

    fn next_distribution(&self, words: &[String]) -> Result<NextDistribution> {
        let r = self.lookup(words)?;
        match &r.next {
            Some(p) if r.words.len() == words.len() => Ok(NextDistribution {
                probs: p.clone(),
                labels: Arc::clone(&self.labels),
                approximate: !self.word_level,
            }),
            _ => Err(BackendError::Dump(format!("no next distribution after `{}`", words.join(" ")))),
        }
    }

    fn joint_log2_prob(&self, words: &[String]) -> Result<f64> {
        Ok(-self.lookup(words)?.surprisal[..words.len()].iter().sum::<f64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::to_words;

    const DUMP: &str = r#"{"format":"icprobe.dump","version":1,"name":"toy","n_layers":1,"hidden_dim":2,"word_level":true,"tokens":["was","were","dog"],"words":["was","were","dog"]}
{"words":["the","dog","who"],"surprisal":[1.0,2.0,3.0],"hidden":[[[1,0],[0,1],[1,1]]],"next":[0.3,0.1,0.6]}
"#;

    #[test]
    fn prefix_lookup() {
        let b = DumpBackend::parse(DUMP).unwrap();
        assert_eq!(b.surprisals(&to_words("the dog")).unwrap(), [1.0, 2.0]);
        assert_eq!(b.hidden(&to_words("the dog")).unwrap()[0].len(), 2);
        assert!(b.next_distribution(&to_words("the dog")).is_err());
        let d = b.next_distribution(&to_words("the dog who")).unwrap();
        assert_eq!(d.prob_of_word("was"), Some(0.3));
        assert!(matches!(b.surprisals(&to_words("a cat")), Err(BackendError::OutOfVocabulary { .. })));
    }

    #[test]
    fn rejects_bad_dumps() {
        assert!(DumpBackend::parse("").is_err());
        let bad_next = DUMP.replace("[0.3,0.1,0.6]", "[0.3,0.1,0.5]");
        assert!(DumpBackend::parse(&bad_next).is_err());
        let bad_hidden = DUMP.replace("[[[1,0],[0,1],[1,1]]]", "[[[1,0],[0,1]]]");
        assert!(DumpBackend::parse(&bad_hidden).is_err());
    }
}
