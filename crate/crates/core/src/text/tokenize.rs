use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::text::pos::Lexicon;

pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
/// Number of hash buckets for words missing from the lexicon.
pub const OOV_BUCKETS: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// Lowercased surface form.
    pub surface: String,
    /// Byte offsets into the raw text.
    pub start: usize,
    pub end: usize,
    pub vocab_id: usize,
}

/// Text split into word tokens. Encoders add a BOS row before and an EOS row
/// after the tokens, so token `i` lives in encoder row `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub raw: String,
    pub tokens: Vec<Token>,
    pub has_bos: bool,
    pub has_eos: bool,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The blank text: no tokens, only the BOS/EOS markers.
    pub fn blank() -> Self {
        Self {
            raw: String::new(),
            tokens: Vec::new(),
            has_bos: true,
            has_eos: true,
        }
    }

    /// Rows the text encoder emits.
    pub fn encoder_rows(&self) -> usize {
        self.tokens.len() + usize::from(self.has_bos) + usize::from(self.has_eos)
    }

    /// Vocabulary ids including the BOS/EOS markers.
    pub fn encoder_ids(&self) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.encoder_rows());
        if self.has_bos {
            ids.push(BOS_ID);
        }
        ids.extend(self.tokens.iter().map(|t| t.vocab_id));
        if self.has_eos {
            ids.push(EOS_ID);
        }
        ids
    }

    /// The contiguous token run `range` as a standalone text, keeping the
    /// same vocab ids so its content rows align one-to-one with the originals.
    pub fn sub_text(&self, range: std::ops::Range<usize>) -> TokenizedText {
        let toks = &self.tokens[range];
        let (lo, hi) = match (toks.first(), toks.last()) {
            (Some(a), Some(b)) => (a.start, b.end),
            _ => (0, 0),
        };
        TokenizedText {
            raw: self.raw[lo..hi].to_string(),
            tokens: toks
                .iter()
                .map(|t| Token {
                    start: t.start - lo,
                    end: t.end - lo,
                    ..t.clone()
                })
                .collect(),
            has_bos: true,
            has_eos: true,
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Stable bucket for an out-of-lexicon word.
pub fn oov_bucket(word: &str) -> usize {
    let digest = Sha256::digest(word.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(b) % OOV_BUCKETS as u64) as usize
}

/// Lowercased word tokenization. Words are maximal alphanumeric runs, with
/// an apostrophe kept when it sits between two word characters
/// (`dog's` stays one token). Everything else separates tokens.
pub fn tokenize(raw: &str, lexicon: &Lexicon) -> TokenizedText {
    let chars: Vec<(usize, char)> = raw.char_indices().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !is_word_char(chars[i].1) {
            i += 1;
            continue;
        }
        let start = chars[i].0;
        let mut j = i;
        while j < chars.len() {
            let c = chars[j].1;
            let keep = is_word_char(c) || (c == '\'' && j + 1 < chars.len() && is_word_char(chars[j + 1].1) && j > i);
            if !keep {
                break;
            }
            j += 1;
        }
        let end = chars.get(j).map_or(raw.len(), |c| c.0);
        let surface = raw[start..end].to_lowercase();
        let vocab_id = lexicon.vocab_id(&surface);
        tokens.push(Token {
            surface,
            start,
            end,
            vocab_id,
        });
        i = j;
    }
    TokenizedText {
        raw: raw.to_string(),
        tokens,
        has_bos: true,
        has_eos: true,
    }
}
