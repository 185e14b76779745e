use crate::error::Error;
use crate::Result;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const Q1: usize = 3;
pub const Q2: usize = 4;
const SPECIALS: usize = 5;

/// Fixed conditioning prompt `[BOS, Q1, Q2]`.
pub const PROMPT: [usize; 3] = [BOS, Q1, Q2];

/// Special tokens followed by the keyword vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    keywords: Vec<String>,
}

impl Vocab {
    pub fn new(keywords: Vec<String>) -> Result<Self> {
        if keywords.is_empty() {
            return Err(Error::Config("empty keyword vocabulary".into()));
        }
        for (i, w) in keywords.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) || keywords[..i].contains(w) {
                return Err(Error::Config(format!("bad or duplicate keyword `{w}`")));
            }
        }
        Ok(Self { keywords })
    }

    pub fn size(&self) -> usize {
        SPECIALS + self.keywords.len()
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn token(&self, word: &str) -> Option<usize> {
        self.keywords.iter().position(|w| w == word).map(|i| SPECIALS + i)
    }

    pub fn word(&self, token: usize) -> Option<&str> {
        token.checked_sub(SPECIALS).and_then(|i| self.keywords.get(i)).map(String::as_str)
    }

    /// Keyword tokens in vocabulary order, which is the canonical target order.
    pub fn encode(&self, words: &[String]) -> Result<Vec<usize>> {
        let mut ids = words
            .iter()
            .map(|w| self.token(w).ok_or_else(|| Error::Config(format!("keyword `{w}` not in vocabulary"))))
            .collect::<Result<Vec<_>>>()?;
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }

    /// Keywords among `tokens`; special tokens are skipped.
    pub fn decode(&self, tokens: &[usize]) -> Vec<String> {
        tokens.iter().filter_map(|&t| self.word(t)).map(String::from).collect()
    }

    /// Teacher-forcing pair for `[BOS, Q1, Q2, k.., EOS]`, padded to `len`
    /// inputs. Targets for the prompt positions and padding are `None`.
    pub fn training_pair(&self, words: &[String], len: usize) -> Result<(Vec<usize>, Vec<Option<usize>>)> {
        let mut seq = PROMPT.to_vec();
        seq.extend(self.encode(words)?);
        seq.push(EOS);
        if seq.len() - 1 > len {
            return Err(Error::Config(format!("{} keywords do not fit in {len} positions", words.len())));
        }
        let mut inputs = seq[..seq.len() - 1].to_vec();
        let mut targets: Vec<Option<usize>> = seq[1..].iter().map(|&t| Some(t)).collect();
        for t in targets.iter_mut().take(PROMPT.len() - 1) {
            *t = None;
        }
        inputs.resize(len, PAD);
        targets.resize(len, None);
        Ok((inputs, targets))
    }
}
