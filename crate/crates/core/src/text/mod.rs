//! Modifier-text front end: tokenization, lexicon POS tagging, and
//! rule-based noun-phrase chunking.

mod chunk;
mod pos;
mod tokenize;

pub use chunk::{chunk_nps, extract_nps, NpNode, NpSpan, NpTree};
pub use pos::{pos_tag, Lexicon, PosTag};
pub use tokenize::{oov_bucket, tokenize, Token, TokenizedText, BOS_ID, EOS_ID, OOV_BUCKETS};

/// Default cap on noun phrases extracted per text.
pub const DEFAULT_MAX_NPS: usize = 10;

/// Tokenize, tag, chunk, and extract in one call.
pub fn noun_phrases(raw: &str, lexicon: &Lexicon, max: usize, leaf_only: bool) -> (TokenizedText, Vec<NpSpan>) {
    let t = tokenize(raw, lexicon);
    let tags = pos_tag(&t, lexicon);
    let tree = chunk_nps(&t, &tags);
    let nps = extract_nps(&tree, &t, max, leaf_only);
    (t, nps)
}
