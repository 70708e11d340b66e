//! Name-keyed construction of backends from configuration tables.
//!
//! Every backend table has a `name` key; the remaining keys are specific to
//! the backend and unknown keys are rejected.
//!
//! | name             | keys                                                              |
//! |------------------|-------------------------------------------------------------------|
//! | `uniform`        | `n_layers`, `hidden_dim`                                          |
//! | `bigram`         | `corpus`, `alpha`, `n_layers`, `hidden_dim`                       |
//! | `subword-bigram` | `corpus`, `alpha`, `chunk`, `n_layers`, `hidden_dim`              |
//! | `planted`        | `jitter`, `noise`, `n_layers`, `hidden_dim`, `[referential]`, `[attachment]` |
//! | `tiny-rnn`       | `checkpoint` or (`corpus`, `epochs`, `hidden_dim`, `n_layers`, `learning_rate`, `clip`, `max_vocab`) |
//! | `external`       | `dump`                                                            |
//!
//! `corpus` defaults to the bundled toy corpus. Word-level backends use the
//! lexicon vocabulary (plus corpus words) as their inventory, so every
//! bundled stimulus is scorable.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::{
    make_planted_backend, Backend, BackendError, BigramModel, DumpBackend, LmBackend, PieceTokenizer, PlantConfig,
    PlantSpec, Result, RnnConfig, TinyRnn, Tokenizer, UniformModel, WordTokenizer, EOS,
};
use crate::lexicon::{bundled, LexiconBundle, Vocabulary};

const NAMES: [&str; 6] = ["uniform", "bigram", "subword-bigram", "planted", "tiny-rnn", "external"];

pub fn registered_names() -> &'static [&'static str] {
    &NAMES
}

pub struct BuildContext<'a> {
    pub lexicons: &'a LexiconBundle,
    pub seed: u64,
    /// Relative paths in backend tables resolve against this directory.
    pub base_dir: PathBuf,
}

/// Sentences of a plain-text corpus, one per line; `#` lines are comments.
pub fn parse_corpus(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}

fn options<T: DeserializeOwned>(name: &str, table: &toml::Table) -> Result<T> {
    let mut t = table.clone();
    t.remove("name");
    toml::Value::Table(t)
        .try_into()
        .map_err(|e| BackendError::Config(format!("backend `{name}`: {e}")))
}

fn corpus(path: &Option<PathBuf>, ctx: &BuildContext) -> Result<Vec<Vec<String>>> {
    let text = match path {
        None => bundled::TOY_CORPUS.to_string(),
        Some(p) => {
            let p = ctx.base_dir.join(p);
            std::fs::read_to_string(&p).map_err(|source| BackendError::Io {
                path: p.display().to_string(),
                source,
            })?
        }
    };
    let c = parse_corpus(&text);
    if c.is_empty() {
        return Err(BackendError::Training("corpus has no sentences".into()));
    }
    Ok(c)
}

fn default_layers() -> usize {
    2
}

fn default_dim() -> usize {
    16
}

fn default_alpha() -> f64 {
    0.1
}

fn default_chunk() -> usize {
    4
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UniformOptions {
    #[serde(default = "default_layers")]
    n_layers: usize,
    #[serde(default = "default_dim")]
    hidden_dim: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BigramOptions {
    corpus: Option<PathBuf>,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_chunk")]
    chunk: usize,
    #[serde(default = "default_layers")]
    n_layers: usize,
    #[serde(default = "default_dim")]
    hidden_dim: usize,
}

#[derive(Deserialize)]
struct RnnOptions {
    checkpoint: Option<PathBuf>,
    corpus: Option<PathBuf>,
    #[serde(flatten)]
    config: toml::Table,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExternalOptions {
    dump: PathBuf,
}

/// Word inventory: end-of-sentence token, lexicon vocabulary, corpus words.
fn word_inventory(lex: &LexiconBundle, corpus: &[Vec<String>]) -> Vocabulary {
    let mut v = Vocabulary::from_words([EOS]);
    for w in lex.vocabulary.words().iter().chain(corpus.iter().flatten()) {
        v.insert(w.clone());
    }
    v
}

fn encode_corpus(tok: &dyn Tokenizer, corpus: &[Vec<String>]) -> Result<Vec<Vec<usize>>> {
    corpus
        .iter()
        .map(|s| {
            let mut ids = Vec::new();
            for w in s {
                ids.extend(tok.encode_word(w).ok_or_else(|| BackendError::Training(format!("cannot encode `{w}`")))?);
            }
            Ok(ids)
        })
        .collect()
}

/// Builds the backend described by `table`.
pub fn build_backend(table: &toml::Table, ctx: &BuildContext) -> Result<Box<dyn Backend>> {
    let name = table
        .get("name")
        .and_then(toml::Value::as_str)
        .ok_or_else(|| BackendError::Config("backend table needs a string `name`".into()))?;
    let lex = ctx.lexicons;
    let backend: Box<dyn Backend> = match name {
        "uniform" => {
            let o: UniformOptions = options(name, table)?;
            let vocab = lex.vocabulary.clone();
            let model = UniformModel::new(vocab.len(), o.n_layers, o.hidden_dim, ctx.seed);
            Box::new(LmBackend::new(name, Arc::new(WordTokenizer::new(vocab)), Box::new(model), Some(ctx.seed))?)
        }
        "bigram" | "subword-bigram" => {
            let o: BigramOptions = options(name, table)?;
            let sentences = corpus(&o.corpus, ctx)?;
            let words = word_inventory(lex, &sentences);
            let tok: Arc<dyn Tokenizer> = if name == "bigram" {
                Arc::new(WordTokenizer::new(words))
            } else {
                Arc::new(PieceTokenizer::chunked(words.words().iter().map(String::as_str), o.chunk))
            };
            let eos = eos_id(tok.as_ref());
            let ids = encode_corpus(tok.as_ref(), &sentences)?;
            let model = BigramModel::train(tok.vocab_size(), &ids, eos, o.alpha, o.n_layers, o.hidden_dim, ctx.seed);
            Box::new(LmBackend::new(name, tok, Box::new(model), Some(ctx.seed))?)
        }
        "planted" => {
            let cfg: PlantConfig = options(name, table)?;
            let spec = PlantSpec::from_config(&cfg, lex, ctx.seed)?;
            Box::new(make_planted_backend(name, lex.vocabulary.clone(), &spec)?)
        }
        "tiny-rnn" => {
            let o: RnnOptions = options(name, table)?;
            if let Some(ck) = o.checkpoint {
                if o.corpus.is_some() || !o.config.is_empty() {
                    return Err(BackendError::Config("tiny-rnn: `checkpoint` excludes training options".into()));
                }
                let path = ctx.base_dir.join(ck);
                let bytes = std::fs::read(&path).map_err(|source| BackendError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                Box::new(TinyRnn::from_checkpoint(&bytes)?.into_backend(name)?)
            } else {
                let mut config: RnnConfig = toml::Value::Table(o.config)
                    .try_into()
                    .map_err(|e| BackendError::Config(format!("backend `tiny-rnn`: {e}")))?;
                config.seed = ctx.seed;
                let sentences = corpus(&o.corpus, ctx)?;
                let (model, report) = TinyRnn::train(&sentences, lex.vocabulary.words(), &config)?;
                log::info!(
                    "tiny-rnn seed {}: perplexity {:.2} -> {:.2}",
                    ctx.seed,
                    report.initial_perplexity(),
                    report.final_perplexity()
                );
                Box::new(model.into_backend(name)?)
            }
        }
        "external" => {
            let o: ExternalOptions = options(name, table)?;
            let path = if o.dump.is_relative() && std::env::var_os(super::MODEL_CACHE_ENV).is_none() {
                ctx.base_dir.join(o.dump)
            } else {
                o.dump
            };
            Box::new(DumpBackend::open(Path::new(&path))?)
        }
        other => {
            return Err(BackendError::UnknownBackend {
                name: other.to_string(),
                known: NAMES.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    Ok(backend)
}

fn eos_id(tok: &dyn Tokenizer) -> usize {
    (0..tok.vocab_size()).find(|&i| tok.token(i) == EOS).expect("inventory contains the end token")
}
