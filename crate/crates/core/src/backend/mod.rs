//! Language-model backends.
//!
//! A [`Backend`] scores word sequences: per-word surprisal in bits, the
//! next-token distribution after a prefix, and layer-indexed hidden states
//! with one vector per word. Most built-in backends are an [`LmBackend`]: a
//! [`Tokenizer`] paired with a [`TokenModel`] over the same token inventory.
//! A word split into several tokens gets the sum of its tokens' surprisals
//! and the hidden state of its final token.
//!
//! Layer 0 is the first layer above the input embedding; there is no
//! separate embedding layer in the hidden-state stack.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod analytic;
mod external;
mod planted;
mod registry;
mod rnn;
mod tokenizer;

pub use analytic::{BigramModel, UniformModel};
pub use external::{DumpBackend, MODEL_CACHE_ENV};
pub use planted::{make_planted_backend, AttachmentMode, AttachmentPlant, ContextPattern, HiddenRule, PlantConfig, PlantSpec, PlantedModel, ProbRule, ReferentialPlant};
pub use registry::{build_backend, parse_corpus, registered_names, BuildContext};
pub use rnn::{RnnConfig, TinyRnn, TrainingReport};
pub use tokenizer::{PieceTokenizer, Tokenizer, WordTokenizer, EOS};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("word `{word}` is not in the vocabulary of backend `{backend}`")]
    OutOfVocabulary { word: String, backend: String },
    #[error("cannot score an empty word sequence")]
    EmptySequence,
    #[error("invalid plant rules: {0}")]
    InvalidRules(String),
    #[error("unknown backend `{name}`; registered backends: {}", known.join(", "))]
    UnknownBackend { name: String, known: Vec<String> },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("training: {0}")]
    Training(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("external dump: {0}")]
    Dump(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, BackendError>;

/// Identity and shape of a backend, recorded in run manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub vocab_size: usize,
    /// sha256 over the newline-joined token inventory.
    pub vocab_hash: String,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub deterministic: bool,
    pub seed: Option<u64>,
}

impl BackendDescriptor {
    pub fn new(name: &str, tokenizer: &dyn Tokenizer, n_layers: usize, hidden_dim: usize, seed: Option<u64>) -> Self {
        let inventory: Vec<&str> = (0..tokenizer.vocab_size()).map(|i| tokenizer.token(i)).collect();
        BackendDescriptor {
            name: name.to_string(),
            vocab_size: inventory.len(),
            vocab_hash: crate::lexicon::sha256_hex(inventory.join("\n").as_bytes()),
            n_layers,
            hidden_dim,
            deterministic: true,
            seed,
        }
    }
}

/// Token span `[start, end)` of each word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAlignment {
    pub word_spans: Vec<(usize, usize)>,
}

impl TokenAlignment {
    pub fn n_tokens(&self) -> usize {
        self.word_spans.last().map_or(0, |s| s.1)
    }

    /// Spans are nonempty, contiguous, ordered and start at zero.
    pub fn is_partition(&self) -> bool {
        let mut next = 0;
        for &(s, e) in &self.word_spans {
            if s != next || e <= s {
                return false;
            }
            next = e;
        }
        true
    }
}

/// Labels for every entry of a next-token distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLabels {
    pub tokens: Vec<String>,
    /// The complete word a token stands for on its own, if any.
    pub words: Vec<Option<String>>,
}

impl TokenLabels {
    pub fn from_tokenizer(tok: &dyn Tokenizer) -> Self {
        let n = tok.vocab_size();
        TokenLabels {
            tokens: (0..n).map(|i| tok.token(i).to_string()).collect(),
            words: (0..n).map(|i| tok.token_word(i).map(str::to_string)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<'a> {
    pub index: usize,
    pub token: &'a str,
    pub word: Option<&'a str>,
    pub prob: f64,
}

/// Probability distribution over a backend's token inventory for the
/// position after a prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct NextDistribution {
    pub probs: Vec<f64>,
    pub labels: Arc<TokenLabels>,
    /// Set when tokens are not whole words, so word probabilities are only
    /// available for single-token words.
    pub approximate: bool,
}

impl NextDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn candidate(&self, index: usize) -> Candidate<'_> {
        Candidate {
            index,
            token: &self.labels.tokens[index],
            word: self.labels.words[index].as_deref(),
            prob: self.probs[index],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Candidate<'_>> {
        (0..self.probs.len()).map(|i| self.candidate(i))
    }

    pub fn prob_of_word(&self, word: &str) -> Option<f64> {
        self.iter().find(|c| c.word == Some(word)).map(|c| c.prob)
    }

    /// The `k` most probable entries, ordered by probability then index.
    pub fn top_k(&self, k: usize) -> Vec<Candidate<'_>> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx.into_iter().map(|i| self.candidate(i)).collect()
    }
}

/// Layer-major hidden states: `[layer][word][dim]`.
pub type HiddenStates = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct BackendOutput {
    /// Bits, one per word.
    pub per_word_surprisal: Vec<f64>,
    pub next_distribution: NextDistribution,
    pub hidden: HiddenStates,
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn align(&self, words: &[String]) -> Result<TokenAlignment>;

    /// `-log2 p(word_i | words_<i)` for every word.
    fn surprisals(&self, words: &[String]) -> Result<Vec<f64>>;

    fn hidden(&self, words: &[String]) -> Result<HiddenStates>;

    fn next_distribution(&self, words: &[String]) -> Result<NextDistribution>;

    /// `log2 P(words)` computed without going through [`Backend::surprisals`].
    fn joint_log2_prob(&self, words: &[String]) -> Result<f64>;

    fn score(&self, words: &[String]) -> Result<BackendOutput> {
        Ok(BackendOutput {
            per_word_surprisal: self.surprisals(words)?,
            next_distribution: self.next_distribution(words)?,
            hidden: self.hidden(words)?,
        })
    }
}

/// Per-token language model over a fixed inventory. Contexts exclude the
/// implicit sentence-start symbol, so an empty context asks for the first
/// token of a sentence.
pub trait TokenModel: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn n_layers(&self) -> usize;
    fn hidden_dim(&self) -> usize;

    /// Normalized log2 probabilities of every token after `context`.
    fn next_log2_probs(&self, context: &[usize]) -> Vec<f64>;

    fn log2_prob(&self, context: &[usize], next: usize) -> f64 {
        self.next_log2_probs(context)[next]
    }

    /// `log2 p(tokens[i] | tokens[..i])` for each position.
    fn sequence_log2_probs(&self, tokens: &[usize]) -> Vec<f64> {
        (0..tokens.len()).map(|i| self.log2_prob(&tokens[..i], tokens[i])).collect()
    }

    /// `[layer][position][dim]`; position `i` is the state after reading
    /// `tokens[i]`, and depends on `tokens[..=i]` only.
    fn hidden_states(&self, tokens: &[usize]) -> HiddenStates;
}

/// A tokenizer and a token model sharing one inventory.
pub struct LmBackend {
    descriptor: BackendDescriptor,
    tokenizer: Arc<dyn Tokenizer>,
    model: Box<dyn TokenModel>,
    labels: Arc<TokenLabels>,
}

impl LmBackend {
    pub fn new(name: &str, tokenizer: Arc<dyn Tokenizer>, model: Box<dyn TokenModel>, seed: Option<u64>) -> Result<Self> {
        if tokenizer.vocab_size() != model.vocab_size() {
            return Err(BackendError::Config(format!(
                "tokenizer has {} tokens but the model predicts {}",
                tokenizer.vocab_size(),
                model.vocab_size()
            )));
        }
        if model.n_layers() == 0 || model.hidden_dim() == 0 {
            return Err(BackendError::Config("n_layers and hidden_dim must be positive".into()));
        }
        let descriptor = BackendDescriptor::new(name, tokenizer.as_ref(), model.n_layers(), model.hidden_dim(), seed);
        let labels = Arc::new(TokenLabels::from_tokenizer(tokenizer.as_ref()));
        Ok(LmBackend {
            descriptor,
            tokenizer,
            model,
            labels,
        })
    }

    pub fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }

    pub fn model(&self) -> &dyn TokenModel {
        self.model.as_ref()
    }

    fn encode(&self, words: &[String]) -> Result<(Vec<usize>, TokenAlignment)> {
        let mut tokens = Vec::new();
        let mut spans = Vec::with_capacity(words.len());
        for w in words {
            let ids = self
                .tokenizer
                .encode_word(w)
                .filter(|ids| !ids.is_empty())
                .ok_or_else(|| BackendError::OutOfVocabulary {
                    word: w.clone(),
                    backend: self.descriptor.name.clone(),
                })?;
            let start = tokens.len();
            tokens.extend(ids);
            spans.push((start, tokens.len()));
        }
        Ok((tokens, TokenAlignment { word_spans: spans }))
    }
}

impl Backend for LmBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn align(&self, words: &[String]) -> Result<TokenAlignment> {
        Ok(self.encode(words)?.1)
    }

    fn surprisals(&self, words: &[String]) -> Result<Vec<f64>> {
        if words.is_empty() {
            return Err(BackendError::EmptySequence);
        }
        let (tokens, align) = self.encode(words)?;
        let lp = self.model.sequence_log2_probs(&tokens);
        Ok(align
            .word_spans
            .iter()
            .map(|&(s, e)| lp[s..e].iter().map(|x| -x).sum::<f64>().max(0.0))
            .collect())
    }

    fn hidden(&self, words: &[String]) -> Result<HiddenStates> {
        if words.is_empty() {
            return Err(BackendError::EmptySequence);
        }
        let (tokens, align) = self.encode(words)?;
        let states = self.model.hidden_states(&tokens);
        Ok(states
            .into_iter()
            .map(|layer| align.word_spans.iter().map(|&(_, e)| layer[e - 1].clone()).collect())
            .collect())
    }

    fn next_distribution(&self, words: &[String]) -> Result<NextDistribution> {
        let (tokens, _) = self.encode(words)?;
        let probs = self.model.next_log2_probs(&tokens).into_iter().map(f64::exp2).collect();
        Ok(NextDistribution {
            probs,
            labels: Arc::clone(&self.labels),
            approximate: !self.tokenizer.is_word_level(),
        })
    }

    fn joint_log2_prob(&self, words: &[String]) -> Result<f64> {
        if words.is_empty() {
            return Err(BackendError::EmptySequence);
        }
        let (tokens, _) = self.encode(words)?;
        // Multiply linear probabilities taken from full distributions,
        // rescaling to keep the running product in range.
        let mut product = 1.0f64;
        let mut exponent = 0i64;
        for i in 0..tokens.len() {
            let p = self.model.next_log2_probs(&tokens[..i])[tokens[i]].exp2();
            product *= p;
            if product == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            while product < 1e-100 {
                product *= 2f64.powi(300);
                exponent -= 300;
            }
        }
        Ok(product.log2() + exponent as f64)
    }
}

/// Deterministic standard-normal vector keyed by `key`.
pub(crate) fn seeded_normal(key: u64, dim: usize) -> Vec<f64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(key);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[cfg(test)]
pub(crate) fn to_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}
