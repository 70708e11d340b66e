use std::collections::HashMap;

use crate::lexicon::Vocabulary;

/// End-of-sentence token; predicted by corpus-trained models, never a word.
pub const EOS: &str = "</s>";

pub trait Tokenizer: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn token(&self, id: usize) -> &str;

    /// Token ids for one word, or `None` if it cannot be represented.
    fn encode_word(&self, word: &str) -> Option<Vec<usize>>;

    /// The word a token spells when it stands alone; `None` for continuation
    /// pieces and special tokens.
    fn token_word(&self, id: usize) -> Option<&str>;

    fn is_word_level(&self) -> bool;

    /// Joins the pieces of one word, dropping boundary markers.
    fn join_word(&self, ids: &[usize]) -> String;
}

/// One token per vocabulary word.
#[derive(Debug, Clone)]
pub struct WordTokenizer {
    vocab: Vocabulary,
}

impl WordTokenizer {
    pub fn new(vocab: Vocabulary) -> Self {
        WordTokenizer { vocab }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }
}

impl Tokenizer for WordTokenizer {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn token(&self, id: usize) -> &str {
        self.vocab.word(id)
    }

    fn encode_word(&self, word: &str) -> Option<Vec<usize>> {
        if word == EOS {
            return None;
        }
        self.vocab.id(word).map(|i| vec![i])
    }

    fn token_word(&self, id: usize) -> Option<&str> {
        let w = self.vocab.word(id);
        (w != EOS).then_some(w)
    }

    fn is_word_level(&self) -> bool {
        true
    }

    fn join_word(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect()
    }
}

/// WordPiece-style tokenizer: greedy longest match, continuation pieces
/// carry a `##` prefix.
#[derive(Debug, Clone)]
pub struct PieceTokenizer {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
    max_len: usize,
}

pub const CONTINUATION: &str = "##";

impl PieceTokenizer {
    pub fn new<I, S>(pieces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tok = PieceTokenizer {
            pieces: Vec::new(),
            index: HashMap::new(),
            max_len: 0,
        };
        for p in pieces {
            let p = p.into();
            if p.is_empty() || tok.index.contains_key(&p) {
                continue;
            }
            tok.max_len = tok.max_len.max(p.trim_start_matches(CONTINUATION).chars().count());
            tok.index.insert(p.clone(), tok.pieces.len());
            tok.pieces.push(p);
        }
        tok
    }

    /// Inventory that splits each word into chunks of at most `chunk` chars.
    /// Words no longer than `chunk` stay whole.
    pub fn chunked<'a>(words: impl IntoIterator<Item = &'a str>, chunk: usize) -> Self {
        let chunk = chunk.max(1);
        let mut pieces = Vec::new();
        for w in words {
            if w == EOS {
                pieces.push(w.to_string());
                continue;
            }
            let chars: Vec<char> = w.chars().collect();
            for (i, c) in chars.chunks(chunk).enumerate() {
                let s: String = c.iter().collect();
                pieces.push(if i == 0 { s } else { format!("{CONTINUATION}{s}") });
            }
        }
        PieceTokenizer::new(pieces)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }
}

impl Tokenizer for PieceTokenizer {
    fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    fn token(&self, id: usize) -> &str {
        &self.pieces[id]
    }

    fn encode_word(&self, word: &str) -> Option<Vec<usize>> {
        if word.is_empty() || word == EOS {
            return None;
        }
        let chars: Vec<char> = word.chars().collect();
        let mut ids = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            let longest = (chars.len() - start).min(self.max_len);
            for len in (1..=longest).rev() {
                let body: String = chars[start..start + len].iter().collect();
                let key = if start == 0 { body } else { format!("{CONTINUATION}{body}") };
                if let Some(&id) = self.index.get(&key) {
                    found = Some((id, len));
                    break;
                }
            }
            let (id, len) = found?;
            ids.push(id);
            start += len;
        }
        Some(ids)
    }

    fn token_word(&self, id: usize) -> Option<&str> {
        let p = self.pieces[id].as_str();
        (!p.starts_with(CONTINUATION) && p != EOS).then_some(p)
    }

    fn is_word_level(&self) -> bool {
        false
    }

    fn join_word(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i).trim_start_matches(CONTINUATION)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_longest_match() {
        let tok = PieceTokenizer::new(["aristo", "ar", "##cr", "##c", "##ats", "##at", "##s", "the"]);
        let ids = tok.encode_word("aristocrats").unwrap();
        let pieces: Vec<&str> = ids.iter().map(|&i| tok.token(i)).collect();
        assert_eq!(pieces, ["aristo", "##cr", "##ats"]);
        assert_eq!(tok.join_word(&ids), "aristocrats");
        assert_eq!(tok.encode_word("the").unwrap().len(), 1);
        assert!(tok.encode_word("zebra").is_none());
        assert_eq!(tok.token_word(tok.encode_word("the").unwrap()[0]), Some("the"));
        assert_eq!(tok.token_word(ids[1]), None);
    }

    #[test]
    fn chunked_inventory_covers_words() {
        let words = ["aristocrats", "the", "who"];
        let tok = PieceTokenizer::chunked(words, 4);
        for w in words {
            let ids = tok.encode_word(w).unwrap();
            assert_eq!(tok.join_word(&ids), w);
        }
        assert_eq!(tok.encode_word("aristocrats").unwrap().len(), 3);
    }

    #[test]
    fn word_tokenizer_excludes_eos() {
        let tok = WordTokenizer::new(Vocabulary::from_words([EOS, "the"]));
        assert!(tok.encode_word(EOS).is_none());
        assert_eq!(tok.token_word(0), None);
        assert_eq!(tok.token_word(1), Some("the"));
    }
}
