//! Closed-form reference models.
//!
//! Both models share a simple recurrent-style state: each layer keeps an
//! exponential moving average of seeded per-token embeddings, with layer `l`
//! fed by layer `l - 1`. The states carry no linguistic information; they
//! exist so that every backend exposes the same hidden-state surface.

use super::{seeded_normal, HiddenStates, TokenModel};
use crate::util::fnv1a;

fn ema_states(tokens: &[usize], n_layers: usize, dim: usize, seed: u64) -> HiddenStates {
    let mut layers = Vec::with_capacity(n_layers);
    let mut input: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| seeded_normal(fnv1a(seed, [b"emb".as_slice(), &t.to_le_bytes()]), dim))
        .collect();
    for l in 0..n_layers {
        let mix = seeded_normal(fnv1a(seed, [b"layer".as_slice(), &l.to_le_bytes()]), dim);
        let mut state = vec![0.0; dim];
        let mut out = Vec::with_capacity(tokens.len());
        for x in &input {
            for d in 0..dim {
                state[d] = 0.5 * state[d] + 0.5 * (x[d] + 0.1 * mix[d]).tanh();
            }
            out.push(state.clone());
        }
        input = out.clone();
        layers.push(out);
    }
    layers
}

/// Every token equally likely in every context.
#[derive(Debug, Clone)]
pub struct UniformModel {
    n: usize,
    n_layers: usize,
    dim: usize,
    seed: u64,
}

impl UniformModel {
    pub fn new(vocab_size: usize, n_layers: usize, hidden_dim: usize, seed: u64) -> Self {
        UniformModel {
            n: vocab_size,
            n_layers,
            dim: hidden_dim,
            seed,
        }
    }
}

impl TokenModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.n
    }

    fn n_layers(&self) -> usize {
        self.n_layers
    }

    fn hidden_dim(&self) -> usize {
        self.dim
    }

    fn next_log2_probs(&self, _context: &[usize]) -> Vec<f64> {
        vec![-(self.n as f64).log2(); self.n]
    }

    fn log2_prob(&self, _context: &[usize], _next: usize) -> f64 {
        -(self.n as f64).log2()
    }

    fn hidden_states(&self, tokens: &[usize]) -> HiddenStates {
        ema_states(tokens, self.n_layers, self.dim, self.seed)
    }
}

/// Maximum-likelihood bigram model with optional additive smoothing.
///
/// Counts are collected from sentences framed by an implicit start symbol and
/// an explicit end token (which must be part of the inventory). With
/// `alpha == 0` an unseen context falls back to the uniform distribution and
/// an unseen continuation has probability zero.
#[derive(Debug, Clone)]
pub struct BigramModel {
    n: usize,
    /// Row `n` holds sentence-start counts.
    counts: Vec<Vec<f64>>,
    totals: Vec<f64>,
    alpha: f64,
    n_layers: usize,
    dim: usize,
    seed: u64,
}

impl BigramModel {
    /// `sentences` are token-id sequences; `eos` is appended to each.
    pub fn train(
        vocab_size: usize,
        sentences: &[Vec<usize>],
        eos: usize,
        alpha: f64,
        n_layers: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Self {
        let mut counts = vec![vec![0.0; vocab_size]; vocab_size + 1];
        for s in sentences {
            let mut prev = vocab_size;
            for &t in s.iter().chain(std::iter::once(&eos)) {
                counts[prev][t] += 1.0;
                prev = t;
            }
        }
        let totals = counts.iter().map(|r| r.iter().sum()).collect();
        BigramModel {
            n: vocab_size,
            counts,
            totals,
            alpha: alpha.max(0.0),
            n_layers,
            dim: hidden_dim,
            seed,
        }
    }

    pub fn count(&self, prev: Option<usize>, next: usize) -> f64 {
        self.counts[prev.unwrap_or(self.n)][next]
    }

    fn prob(&self, row: usize, next: usize) -> f64 {
        let total = self.totals[row];
        if total == 0.0 && self.alpha == 0.0 {
            return 1.0 / self.n as f64;
        }
        (self.counts[row][next] + self.alpha) / (total + self.alpha * self.n as f64)
    }

    fn row(&self, context: &[usize]) -> usize {
        context.last().copied().unwrap_or(self.n)
    }
}

impl TokenModel for BigramModel {
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
        let row = self.row(context);
        (0..self.n).map(|t| self.prob(row, t).log2()).collect()
    }

    fn log2_prob(&self, context: &[usize], next: usize) -> f64 {
        self.prob(self.row(context), next).log2()
    }

    fn hidden_states(&self, tokens: &[usize]) -> HiddenStates {
        ema_states(tokens, self.n_layers, self.dim, self.seed)
    }
}
