//! A small word-level Elman network trained with full backpropagation
//! through time and Adam.
//!
//! Token 0 is always [`EOS`]; an extra embedding row serves as the
//! sentence-start input. Parameters live in one flat vector so that the
//! optimizer and the checkpoint format stay trivial.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{seeded_normal, BackendError, HiddenStates, LmBackend, Result, TokenModel, WordTokenizer, EOS};
use crate::lexicon::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RnnConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip per sentence.
    pub clip: f64,
    pub max_vocab: usize,
    pub seed: u64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        RnnConfig {
            n_layers: 2,
            hidden_dim: 24,
            epochs: 15,
            learning_rate: 0.01,
            clip: 5.0,
            max_vocab: 5000,
            seed: 0,
        }
    }
}

/// Mean per-token cross-entropy (bits) over the training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub initial_bits: f64,
    pub epoch_bits: Vec<f64>,
}

impl TrainingReport {
    pub fn initial_perplexity(&self) -> f64 {
        self.initial_bits.exp2()
    }

    pub fn final_perplexity(&self) -> f64 {
        self.epoch_bits.last().copied().unwrap_or(self.initial_bits).exp2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    v: usize,
    d: usize,
    layers: usize,
}

impl Layout {
    fn emb(&self) -> usize {
        0
    }
    fn layer_size(&self) -> usize {
        2 * self.d * self.d + self.d
    }
    fn wx(&self, l: usize) -> usize {
        (self.v + 1) * self.d + l * self.layer_size()
    }
    fn wh(&self, l: usize) -> usize {
        self.wx(l) + self.d * self.d
    }
    fn b(&self, l: usize) -> usize {
        self.wh(l) + self.d * self.d
    }
    fn u(&self) -> usize {
        self.wx(self.layers)
    }
    fn c(&self) -> usize {
        self.u() + self.v * self.d
    }
    fn n_params(&self) -> usize {
        self.c() + self.v
    }
}

/// Forward activations for one input sequence: `h[layer][t][dim]`.
struct Trace {
    inputs: Vec<usize>,
    h: Vec<Vec<Vec<f64>>>,
}

pub struct TinyRnn {
    vocab: Vocabulary,
    config: RnnConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl std::fmt::Debug for TinyRnn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TinyRnn")
            .field("vocab_size", &self.layout.v)
            .field("config", &self.config)
            .finish()
    }
}

fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        out[r] += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl TinyRnn {
    /// Vocabulary: [`EOS`] followed by every corpus word and every extra word,
    /// in first-seen order.
    pub fn train(corpus: &[Vec<String>], extra_words: &[String], config: &RnnConfig) -> Result<(Self, TrainingReport)> {
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(BackendError::Training("empty corpus".into()));
        }
        if config.n_layers == 0 || config.hidden_dim == 0 || config.epochs == 0 {
            return Err(BackendError::Config("n_layers, hidden_dim and epochs must be positive".into()));
        }
        if !(config.learning_rate > 0.0 && config.clip > 0.0) {
            return Err(BackendError::Config("learning_rate and clip must be positive".into()));
        }
        let mut vocab = Vocabulary::from_words([EOS]);
        for w in corpus.iter().flatten().chain(extra_words) {
            if w == EOS {
                return Err(BackendError::Training(format!("corpus contains the reserved token {EOS}")));
            }
            vocab.insert(w.clone());
            if vocab.len() > config.max_vocab {
                return Err(BackendError::Training(format!(
                    "vocabulary exceeds max_vocab = {} (at `{w}`)",
                    config.max_vocab
                )));
            }
        }
        let mut model = TinyRnn::init(vocab, config.clone());
        let sentences: Vec<Vec<usize>> = corpus
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.iter().map(|w| model.vocab.id(w).expect("inserted above")).collect())
            .collect();
        let report = model.fit(&sentences);
        Ok((model, report))
    }

    fn init(vocab: Vocabulary, config: RnnConfig) -> Self {
        let layout = Layout {
            v: vocab.len(),
            d: config.hidden_dim,
            layers: config.n_layers,
        };
        let scale = 1.0 / (layout.d as f64).sqrt();
        let params = seeded_normal(config.seed ^ 0x9e37_79b9_7f4a_7c15, layout.n_params())
            .into_iter()
            .map(|z| z * scale)
            .collect();
        TinyRnn {
            vocab,
            config,
            layout,
            params,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &RnnConfig {
        &self.config
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn forward(&self, tokens: &[usize]) -> Trace {
        let Layout { v, d, layers } = self.layout;
        let p = &self.params;
        let mut inputs = Vec::with_capacity(tokens.len() + 1);
        inputs.push(v);
        inputs.extend_from_slice(tokens);
        let mut h: Vec<Vec<Vec<f64>>> = Vec::with_capacity(layers);
        for l in 0..layers {
            let mut states: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
            for t in 0..inputs.len() {
                let mut a = p[self.layout.b(l)..self.layout.b(l) + d].to_vec();
                let x: &[f64] = if l == 0 {
                    let row = inputs[t];
                    &p[self.layout.emb() + row * d..self.layout.emb() + (row + 1) * d]
                } else {
                    &h[l - 1][t]
                };
                matvec_add(&p[self.layout.wx(l)..], d, d, x, &mut a);
                if t > 0 {
                    matvec_add(&p[self.layout.wh(l)..], d, d, &states[t - 1], &mut a);
                }
                states.push(a.into_iter().map(f64::tanh).collect());
            }
            h.push(states);
        }
        Trace { inputs, h }
    }

    fn logits(&self, top: &[f64]) -> Vec<f64> {
        let Layout { v, d, .. } = self.layout;
        let mut z = self.params[self.layout.c()..self.layout.c() + v].to_vec();
        matvec_add(&self.params[self.layout.u()..], v, d, top, &mut z);
        z
    }

    /// Loss in nats for `sentence + EOS` and, optionally, its gradient.
    fn loss_and_grad(&self, sentence: &[usize], grad: Option<&mut [f64]>) -> f64 {
        let Layout { v, d, layers } = self.layout;
        let trace = self.forward(sentence);
        let targets: Vec<usize> = sentence.iter().copied().chain(std::iter::once(0)).collect();
        let top = &trace.h[layers - 1];
        let mut loss = 0.0;
        let mut dlogits = Vec::with_capacity(targets.len());
        for (t, &y) in targets.iter().enumerate() {
            let lp = log_softmax(&self.logits(&top[t]));
            loss -= lp[y];
            let mut g: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
            g[y] -= 1.0;
            dlogits.push(g);
        }
        let Some(grad) = grad else { return loss };
        let p = &self.params;
        let (u, c) = (self.layout.u(), self.layout.c());
        let n = targets.len();
        // dh[t] for the current layer, starting from the output projection.
        let mut dh: Vec<Vec<f64>> = vec![vec![0.0; d]; n];
        for t in 0..n {
            for k in 0..v {
                let g = dlogits[t][k];
                if g == 0.0 {
                    continue;
                }
                grad[c + k] += g;
                let row = u + k * d;
                for j in 0..d {
                    grad[row + j] += g * top[t][j];
                    dh[t][j] += g * p[row + j];
                }
            }
        }
        for l in (0..layers).rev() {
            let (wx, wh, b) = (self.layout.wx(l), self.layout.wh(l), self.layout.b(l));
            let mut dx: Vec<Vec<f64>> = vec![vec![0.0; d]; n];
            let mut carry = vec![0.0; d];
            for t in (0..n).rev() {
                let h_t = &trace.h[l][t];
                let da: Vec<f64> = (0..d).map(|j| (dh[t][j] + carry[j]) * (1.0 - h_t[j] * h_t[j])).collect();
                let x: Vec<f64> = if l == 0 {
                    let row = trace.inputs[t];
                    p[row * d..(row + 1) * d].to_vec()
                } else {
                    trace.h[l - 1][t].clone()
                };
                carry = vec![0.0; d];
                for i in 0..d {
                    grad[b + i] += da[i];
                    for j in 0..d {
                        grad[wx + i * d + j] += da[i] * x[j];
                        dx[t][j] += p[wx + i * d + j] * da[i];
                    }
                    if t > 0 {
                        let prev = &trace.h[l][t - 1];
                        for j in 0..d {
                            grad[wh + i * d + j] += da[i] * prev[j];
                            carry[j] += p[wh + i * d + j] * da[i];
                        }
                    }
                }
            }
            if l == 0 {
                for t in 0..n {
                    let row = trace.inputs[t] * d;
                    for j in 0..d {
                        grad[row + j] += dx[t][j];
                    }
                }
            }
            dh = dx;
        }
        loss
    }

    fn corpus_bits(&self, sentences: &[Vec<usize>]) -> f64 {
        let (mut nats, mut n) = (0.0, 0usize);
        for s in sentences {
            nats += self.loss_and_grad(s, None);
            n += s.len() + 1;
        }
        nats / n as f64 / std::f64::consts::LN_2
    }

    fn fit(&mut self, sentences: &[Vec<usize>]) -> TrainingReport {
        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let np = self.params.len();
        let mut m = vec![0.0; np];
        let mut s = vec![0.0; np];
        let mut step = 0i32;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut order: Vec<usize> = (0..sentences.len()).collect();
        let initial_bits = self.corpus_bits(sentences);
        let mut epoch_bits = Vec::with_capacity(self.config.epochs);
        let mut grad = vec![0.0; np];
        for _ in 0..self.config.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                grad.iter_mut().for_each(|g| *g = 0.0);
                self.loss_and_grad(&sentences[i], Some(&mut grad));
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                let shrink = if norm > self.config.clip { self.config.clip / norm } else { 1.0 };
                step += 1;
                let (c1, c2) = (1.0 - b1.powi(step), 1.0 - b2.powi(step));
                for k in 0..np {
                    let g = grad[k] * shrink;
                    m[k] = b1 * m[k] + (1.0 - b1) * g;
                    s[k] = b2 * s[k] + (1.0 - b2) * g * g;
                    self.params[k] -= self.config.learning_rate * (m[k] / c1) / ((s[k] / c2).sqrt() + eps);
                }
            }
            let bits = self.corpus_bits(sentences);
            log::debug!("tiny-rnn epoch {}: {bits:.4} bits/token", epoch_bits.len() + 1);
            epoch_bits.push(bits);
        }
        TrainingReport {
            initial_bits,
            epoch_bits,
        }
    }

    pub fn into_backend(self, name: &str) -> Result<LmBackend> {
        let seed = self.config.seed;
        let tok = Arc::new(WordTokenizer::new(self.vocab.clone()));
        LmBackend::new(name, tok, Box::new(self), Some(seed))
    }

    /// Magic line, one JSON header line, then the parameters as
    /// little-endian f64.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            vocab: self.vocab.words().to_vec(),
            n_params: self.params.len(),
        };
        let mut out = CHECKPOINT_MAGIC.as_bytes().to_vec();
        out.extend(serde_json::to_string(&header).expect("header serializes").as_bytes());
        out.push(b'\n');
        for x in &self.params {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| BackendError::Checkpoint(m.to_string());
        let rest = bytes.strip_prefix(CHECKPOINT_MAGIC.as_bytes()).ok_or_else(|| bad("bad magic line"))?;
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&rest[..nl]).map_err(|e| BackendError::Checkpoint(format!("header: {e}")))?;
        let body = &rest[nl + 1..];
        let c = &header.config;
        if c.n_layers == 0 || c.hidden_dim == 0 || c.n_layers > 64 || c.hidden_dim > 4096 {
            return Err(bad("implausible shape"));
        }
        if header.vocab.first().map(String::as_str) != Some(EOS) {
            return Err(bad("vocabulary must start with the end-of-sentence token"));
        }
        let vocab = Vocabulary::from_words(header.vocab.iter().cloned());
        if vocab.len() != header.vocab.len() {
            return Err(bad("duplicate vocabulary entries"));
        }
        let layout = Layout {
            v: vocab.len(),
            d: c.hidden_dim,
            layers: c.n_layers,
        };
        if header.n_params != layout.n_params() || body.len() != 8 * layout.n_params() {
            return Err(bad("parameter count does not match the shape"));
        }
        let params: Vec<f64> = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        if params.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        Ok(TinyRnn {
            vocab,
            config: header.config,
            layout,
            params,
        })
    }
}

const CHECKPOINT_MAGIC: &str = "ICPROBE-RNN 1\n";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    config: RnnConfig,
    vocab: Vec<String>,
    n_params: usize,
}

impl TokenModel for TinyRnn {
    fn vocab_size(&self) -> usize {
        self.layout.v
    }

    fn n_layers(&self) -> usize {
        self.layout.layers
    }

    fn hidden_dim(&self) -> usize {
        self.layout.d
    }

    fn next_log2_probs(&self, context: &[usize]) -> Vec<f64> {
        let trace = self.forward(context);
        let top = trace.h[self.layout.layers - 1].last().expect("start input");
        log_softmax(&self.logits(top))
            .into_iter()
            .map(|x| x / std::f64::consts::LN_2)
            .collect()
    }

    fn sequence_log2_probs(&self, tokens: &[usize]) -> Vec<f64> {
        let trace = self.forward(tokens);
        let top = &trace.h[self.layout.layers - 1];
        tokens
            .iter()
            .enumerate()
            .map(|(t, &y)| log_softmax(&self.logits(&top[t]))[y] / std::f64::consts::LN_2)
            .collect()
    }

    fn hidden_states(&self, tokens: &[usize]) -> HiddenStates {
        self.forward(tokens).h.into_iter().map(|layer| layer[1..].to_vec()).collect()
    }
}
