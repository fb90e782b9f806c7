//! Word-level vocabulary, normalization and the special/segment token
//! inventory.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const VIDEO_SEG: usize = 4;
pub const CAP_SEG: usize = 5;
pub const USER1_SEG: usize = 6;
pub const USER2_SEG: usize = 7;

/// Special tokens in id order. The last four double as segment markers.
pub const SPECIAL_TOKENS: [&str; 8] = ["<pad>", "<bos>", "<eos>", "<unk>", "[video]", "[cap]", "[user1]", "[user2]"];

pub fn is_special(id: usize) -> bool {
    id < SPECIAL_TOKENS.len()
}

/// Lowercases, splits on whitespace and detaches trailing `, . ? !` as
/// separate tokens.
pub fn normalize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        let stem = word.trim_end_matches([',', '.', '?', '!']);
        if !stem.is_empty() {
            out.push(stem.to_string());
        }
        out.extend(word[stem.len()..].chars().map(String::from));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Builds a vocabulary from `corpus`, keeping words seen at least
    /// `min_freq` times. Words are ordered by descending frequency, then
    /// lexicographically, after the eight specials.
    pub fn build<I, S>(corpus: I, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut sentences = 0usize;
        for sentence in corpus {
            sentences += 1;
            for tok in normalize(sentence.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if sentences == 0 {
            return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq && !SPECIAL_TOKENS.contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        self.encode_tokens(&normalize(text))
    }

    /// Maps already-normalized tokens to ids; unknown words become `UNK`.
    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(UNK)).collect()
    }

    /// Space-joins the tokens for `ids`, dropping specials.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id).ok_or(Error::Index {
                index: id,
                size: self.len(),
            })?;
            if !is_special(id) {
                words.push(tok);
            }
        }
        Ok(words.join(" "))
    }

    /// One token per line; line number is the id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        let tokens: Vec<String> = text.lines().map(String::from).collect();
        if tokens.len() < SPECIAL_TOKENS.len() || tokens.iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b) {
            return Err(Error::Format(format!(
                "{} does not start with the special token block",
                path.as_ref().display()
            )));
        }
        Self::from_tokens(tokens)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn normalization_detaches_trailing_punctuation() {
        assert_eq!(normalize("Is he COOKING?"), ["is", "he", "cooking", "?"]);
        assert_eq!(normalize("  yes,  really!? "), ["yes", ",", "really", "!", "?"]);
        assert!(normalize("").is_empty());
    }

    #[test]
    fn frequency_ordering_and_min_freq() {
        let v = Vocab::build(["a cat", "a dog"], 1).unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!(v.token(8), Some("a"));
        assert_eq!(&v.tokens()[9..], ["cat", "dog"]);

        let v = Vocab::build(["a cat", "a dog"], 2).unwrap();
        assert_eq!(v.len(), 9);
        assert_eq!(v.encode("a cat dog"), vec![8, UNK, UNK]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Vocab::build(Vec::<String>::new(), 1).is_err());
    }

    #[test]
    fn specials_occupy_first_ids() {
        let v = Vocab::build(["hello"], 1).unwrap();
        for (id, tok) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(v.id(tok), Some(id));
        }
        assert_eq!(v.id("[user2]"), Some(USER2_SEG));
    }

    #[test]
    fn encode_and_decode() {
        let v = Vocab::build(["the man is cooking .", "is the man happy ?"], 1).unwrap();
        assert!(v.encode("").is_empty());
        assert_eq!(v.decode(&[EOS]).unwrap(), "");
        assert_eq!(v.decode(&v.encode("The man is COOKING.")).unwrap(), "the man is cooking .");

        let ids = v.encode("the dog is cooking");
        assert_eq!(ids.iter().filter(|i| **i == UNK).count(), 1);
        assert_eq!(ids[1], UNK);
        assert!(matches!(v.decode(&[v.len()]), Err(Error::Index { .. })));
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocab::build(["one two two three three three"], 1).unwrap();
        v.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let back = Vocab::load(&path).unwrap();
        assert_eq!(back, v);
        back.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);

        std::fs::write(&path, "x\ny\n").unwrap();
        assert!(Vocab::load(&path).is_err());
    }

    proptest! {
        #[test]
        fn id_round_trip(seed in 0u64..100) {
            use rand::{Rng, SeedableRng};
            let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
            let v = Vocab::build([words.join(" ")], 1).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(0..20);
            let ids: Vec<usize> = (0..n).map(|_| rng.random_range(SPECIAL_TOKENS.len()..v.len())).collect();
            let text = v.decode(&ids).unwrap();
            prop_assert_eq!(v.encode(&text), ids);
        }
    }
}
