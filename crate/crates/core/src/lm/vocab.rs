use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IntegrityError, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    /// ASCII-whitespace separated words, `<eos>` at every line end.
    Word,
    /// Unicode scalar values.
    Char,
    /// Characters after lowercasing and mapping everything outside `a–z` to
    /// a space; at most 27 symbols.
    Text8,
}

impl FromStr for TokenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "word" => Ok(TokenMode::Word),
            "char" => Ok(TokenMode::Char),
            "text8" => Ok(TokenMode::Text8),
            other => Err(Error::config(format!("unknown token mode `{other}`"))),
        }
    }
}

impl fmt::Display for TokenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenMode::Word => "word",
            TokenMode::Char => "char",
            TokenMode::Text8 => "text8",
        })
    }
}

pub fn text8_filter(text: &str) -> String {
    text.chars()
        .map(|c| {
            let c = c.to_ascii_lowercase();
            if c.is_ascii_lowercase() {
                c
            } else {
                ' '
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    mode: TokenMode,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    unk: Option<usize>,
    eos: Option<usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode && self.tokens == other.tokens && self.unk == other.unk && self.eos == other.eos
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    mode: TokenMode,
    tokens: Vec<String>,
    unk: Option<usize>,
    eos: Option<usize>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_parts(r.mode, r.tokens, r.unk, r.eos)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            mode: v.mode,
            tokens: v.tokens,
            unk: v.unk,
            eos: v.eos,
        }
    }
}

/// Frequency-ranked distinct tokens; ties broken by token order so the
/// vocabulary does not depend on hash iteration order.
fn ranked<'a>(tokens: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for t in tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut v: Vec<(&str, u64)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter().map(|(t, _)| t.to_string()).collect()
}

fn char_strings(text: &str) -> impl Iterator<Item = String> + '_ {
    text.chars().map(|c| c.to_string())
}

impl Vocabulary {
    fn from_parts(mode: TokenMode, tokens: Vec<String>, unk: Option<usize>, eos: Option<usize>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            mode,
            tokens,
            index,
            unk,
            eos,
        }
    }

    /// Builds a vocabulary from a training corpus. In word mode `max_size`
    /// bounds the total size including `<unk>` and `<eos>`; rarer words map
    /// to `<unk>`.
    pub fn build(corpus: &str, mode: TokenMode, max_size: Option<usize>) -> Result<Self> {
        if corpus.trim().is_empty() {
            return Err(Error::Ingestion("corpus is empty".into()));
        }
        match mode {
            TokenMode::Word => {
                let mut tokens = ranked(corpus.split_ascii_whitespace());
                if let Some(max) = max_size {
                    if max < 3 {
                        return Err(Error::config(format!(
                            "word vocabulary size {max} leaves no room for tokens"
                        )));
                    }
                    let specials = [UNK, EOS].iter().filter(|s| !tokens.iter().any(|t| t == *s)).count();
                    tokens.truncate(max - specials);
                }
                for special in [UNK, EOS] {
                    if !tokens.iter().any(|t| t == special) {
                        tokens.push(special.to_string());
                    }
                }
                let unk = tokens.iter().position(|t| t == UNK);
                let eos = tokens.iter().position(|t| t == EOS);
                Ok(Vocabulary::from_parts(mode, tokens, unk, eos))
            }
            TokenMode::Char => {
                let chars: Vec<String> = char_strings(corpus).collect();
                let mut tokens = ranked(chars.iter().map(String::as_str));
                if let Some(max) = max_size {
                    tokens.truncate(max.saturating_sub(1).max(1));
                }
                tokens.push(UNK.to_string());
                let unk = Some(tokens.len() - 1);
                Ok(Vocabulary::from_parts(mode, tokens, unk, None))
            }
            TokenMode::Text8 => {
                let filtered = text8_filter(corpus);
                let chars: Vec<String> = char_strings(&filtered).collect();
                let tokens = ranked(chars.iter().map(String::as_str));
                Ok(Vocabulary::from_parts(mode, tokens, None, None))
            }
        }
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unk(&self) -> Option<usize> {
        self.unk
    }

    pub fn eos(&self) -> Option<usize> {
        self.eos
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Splits text into surface tokens paired with ids.
    pub fn tokenize(&self, text: &str) -> Result<Vec<(String, usize)>> {
        let lookup = |t: &str| -> Result<usize> {
            self.id(t).or(self.unk).ok_or_else(|| {
                Error::Integrity(IntegrityError::Vocabulary(format!(
                    "token {t:?} is not in the vocabulary and it has no <unk>"
                )))
            })
        };
        let mut out = Vec::new();
        match self.mode {
            TokenMode::Word => {
                let eos = self.eos.expect("word vocabularies carry <eos>");
                for line in text.lines() {
                    let mut any = false;
                    for w in line.split_ascii_whitespace() {
                        out.push((w.to_string(), lookup(w)?));
                        any = true;
                    }
                    if any {
                        out.push((EOS.to_string(), eos));
                    }
                }
            }
            TokenMode::Char => {
                for c in char_strings(text) {
                    let id = lookup(&c)?;
                    out.push((c, id));
                }
            }
            TokenMode::Text8 => {
                for c in char_strings(&text8_filter(text)) {
                    let id = lookup(&c)?;
                    out.push((c, id));
                }
            }
        }
        Ok(out)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        Ok(self.tokenize(text)?.into_iter().map(|(_, id)| id).collect())
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        match self.mode {
            TokenMode::Word => {
                let mut out = String::new();
                let mut line_start = true;
                for &id in ids {
                    if Some(id) == self.eos {
                        out.push('\n');
                        line_start = true;
                        continue;
                    }
                    if !line_start {
                        out.push(' ');
                    }
                    out.push_str(self.token(id).unwrap_or(UNK));
                    line_start = false;
                }
                out
            }
            TokenMode::Char | TokenMode::Text8 => ids.iter().map(|&id| self.token(id).unwrap_or(UNK)).collect(),
        }
    }

    /// SHA-256 over the mode and the ordered token list.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.mode.to_string().as_bytes());
        for t in &self.tokens {
            h.update([0u8]);
            h.update(t.as_bytes());
        }
        h.update([0xff]);
        for special in [self.unk, self.eos] {
            h.update(special.map_or(u64::MAX, |v| v as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
