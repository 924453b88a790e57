use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize::{oov_bucket, TokenizedText, OOV_BUCKETS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PosTag {
    Det,
    Adj,
    Noun,
    Verb,
    Prep,
    Conj,
    Num,
    Other,
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "DET" => PosTag::Det,
            "ADJ" => PosTag::Adj,
            "NOUN" => PosTag::Noun,
            "VERB" => PosTag::Verb,
            "PREP" => PosTag::Prep,
            "CONJ" => PosTag::Conj,
            "NUM" => PosTag::Num,
            "OTHER" => PosTag::Other,
            other => return Err(Error::Config(format!("unknown POS tag {other:?}"))),
        })
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PosTag::Det => "DET",
            PosTag::Adj => "ADJ",
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Prep => "PREP",
            PosTag::Conj => "CONJ",
            PosTag::Num => "NUM",
            PosTag::Other => "OTHER",
        };
        f.write_str(s)
    }
}

const BUILTIN: &str = include_str!("lexicon.tsv");

/// Word table mapping each entry to a POS tag and a stable vocabulary id.
#[derive(Clone, Debug)]
pub struct Lexicon {
    entries: HashMap<String, (usize, PosTag)>,
}

impl Lexicon {
    /// Parses `word<TAB>TAG` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut words: Vec<(String, PosTag)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (w, tag) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("lexicon line {}: expected word<TAB>TAG", n + 1)))?;
            words.push((w.to_lowercase(), tag.trim().parse()?));
        }
        words.sort_by(|a, b| a.0.cmp(&b.0));
        words.dedup_by(|a, b| a.0 == b.0);
        let entries = words.into_iter().enumerate().map(|(i, (w, t))| (w, (i, t))).collect();
        Ok(Self { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn builtin() -> &'static Lexicon {
        static LEX: OnceLock<Lexicon> = OnceLock::new();
        LEX.get_or_init(|| Lexicon::parse(BUILTIN).expect("embedded lexicon parses"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// BOS, EOS, one id per lexicon word, then the OOV buckets.
    pub fn vocab_size(&self) -> usize {
        2 + self.entries.len() + OOV_BUCKETS
    }

    pub fn vocab_id(&self, word: &str) -> usize {
        match self.entries.get(word) {
            Some(&(i, _)) => 2 + i,
            None => 2 + self.entries.len() + oov_bucket(word),
        }
    }

    pub fn lookup(&self, word: &str) -> Option<PosTag> {
        self.entries.get(word).map(|&(_, t)| t)
    }

    /// Lexicon entry first, then suffix rules, then NOUN.
    pub fn tag_word(&self, word: &str) -> PosTag {
        if let Some(t) = self.lookup(word) {
            return t;
        }
        if word.chars().all(|c| c.is_ascii_digit()) {
            return PosTag::Num;
        }
        if word.ends_with("'s") || word.ends_with("s'") {
            return PosTag::Det;
        }
        if word.contains('\'') {
            return PosTag::Other;
        }
        if word.len() > 4 && (word.ends_with("ing") || word.ends_with("ed")) {
            return PosTag::Verb;
        }
        if word.len() > 3 && (word.ends_with("ful") || word.ends_with("ous") || word.ends_with('y')) {
            return PosTag::Adj;
        }
        PosTag::Noun
    }
}

pub fn pos_tag(text: &TokenizedText, lexicon: &Lexicon) -> Vec<PosTag> {
    text.tokens.iter().map(|t| lexicon.tag_word(&t.surface)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize::tokenize;

    fn tags(s: &str) -> Vec<PosTag> {
        let lex = Lexicon::builtin();
        pos_tag(&tokenize(s, lex), lex)
    }

    #[test]
    fn lexicon_entries() {
        assert_eq!(
            tags("the on red remove"),
            vec![PosTag::Det, PosTag::Prep, PosTag::Adj, PosTag::Verb]
        );
    }

    #[test]
    fn unknown_word_defaults_to_noun() {
        assert!(Lexicon::builtin().lookup("lorikeet").is_none());
        assert_eq!(tags("lorikeet"), vec![PosTag::Noun]);
    }

    #[test]
    fn suffix_rules() {
        assert_eq!(tags("glimmering"), vec![PosTag::Verb]);
        assert_eq!(tags("splotched"), vec![PosTag::Verb]);
        assert_eq!(tags("glittery"), vec![PosTag::Adj]);
        assert_eq!(tags("zestful"), vec![PosTag::Adj]);
        assert_eq!(tags("gizmos"), vec![PosTag::Noun]);
        assert_eq!(tags("sofa's"), vec![PosTag::Det]);
        assert_eq!(tags("42"), vec![PosTag::Num]);
    }

    #[test]
    fn lexicon_noun_wins_over_suffix() {
        // "greenery" ends in -y but is listed as a noun.
        assert_eq!(tags("greenery"), vec![PosTag::Noun]);
        assert_eq!(tags("building"), vec![PosTag::Noun]);
    }

    #[test]
    fn pronouns_are_not_nouns() {
        assert!(tags("it they them").iter().all(|&t| t == PosTag::Other));
    }

    #[test]
    fn builtin_lexicon_size() {
        let n = Lexicon::builtin().len();
        assert!((1500..3000).contains(&n), "{n}");
    }

    #[test]
    fn parse_rejects_bad_tag() {
        assert!(Lexicon::parse("cat\tFELINE\n").is_err());
        assert!(Lexicon::parse("cat NOUN\n").is_err());
    }
}
