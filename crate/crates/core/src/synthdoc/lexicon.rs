//! Bijective word lexicon between the synthetic source and target languages.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::Error;

/// Appended to words that have no lexicon entry.
pub const FALLBACK_SUFFIX: &str = "_q";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    source: Vec<String>,
    target: Vec<String>,
    forward: BTreeMap<String, String>,
    backward: BTreeMap<String, String>,
}

fn random_word(rng: &mut ChaCha8Rng, alphabet: &[u8]) -> String {
    let len = rng.random_range(2..=4);
    (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())] as char).collect()
}

const LOWER: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
const UPPER: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";

impl Lexicon {
    /// `size` distinct lowercase source words (2-4 letters) paired with
    /// distinct uppercase target words, both drawn from `seed`.
    pub fn generate(size: usize, seed: u64) -> Result<Self, Error> {
        if size < 2 {
            return Err(Error::InvalidConfig(alloc::format!("vocabulary of {size} words is too small (need >= 2)")));
        }
        if size > 10_000 {
            return Err(Error::InvalidConfig(alloc::format!("vocabulary of {size} words exceeds 10000")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng, alphabet: &[u8]| {
            let mut seen = BTreeSet::new();
            let mut words = Vec::with_capacity(size);
            while words.len() < size {
                let w = random_word(rng, alphabet);
                if seen.insert(w.clone()) {
                    words.push(w);
                }
            }
            words
        };
        let source = draw(&mut rng, LOWER);
        let target = draw(&mut rng, UPPER);
        Ok(Self::from_pairs(source, target))
    }

    /// Panics when the word lists differ in length or contain duplicates.
    pub fn from_pairs(source: Vec<String>, target: Vec<String>) -> Self {
        assert_eq!(source.len(), target.len());
        let forward: BTreeMap<_, _> = source.iter().cloned().zip(target.iter().cloned()).collect();
        let backward: BTreeMap<_, _> = target.iter().cloned().zip(source.iter().cloned()).collect();
        assert_eq!(forward.len(), source.len(), "duplicate source word");
        assert_eq!(backward.len(), target.len(), "duplicate target word");
        Self { source, target, forward, backward }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn source_words(&self) -> &[String] {
        &self.source
    }

    pub fn target_words(&self) -> &[String] {
        &self.target
    }

    /// Lexicon entry, or the word with [`FALLBACK_SUFFIX`] appended.
    pub fn translate_word(&self, word: &str) -> String {
        match self.forward.get(word) {
            Some(t) => t.clone(),
            None => {
                let mut s = String::from(word);
                s.push_str(FALLBACK_SUFFIX);
                s
            }
        }
    }

    pub fn invert_word(&self, word: &str) -> String {
        if let Some(s) = self.backward.get(word) {
            return s.clone();
        }
        match word.strip_suffix(FALLBACK_SUFFIX) {
            Some(stem) => String::from(stem),
            None => String::from(word),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn generation_is_deterministic_and_bijective() {
        let a = Lexicon::generate(200, 11).unwrap();
        assert_eq!(a, Lexicon::generate(200, 11).unwrap());
        for w in a.source_words() {
            assert_eq!(&a.invert_word(&a.translate_word(w)), w);
        }
        assert!(Lexicon::generate(1, 0).is_err());
    }

    #[test]
    fn fallback_round_trips() {
        let lex = Lexicon::from_pairs(vec!["alpha".into(), "beta".into()], vec!["ALQ".into(), "BEQ".into()]);
        assert_eq!(lex.translate_word("alpha"), "ALQ");
        for w in ["gamma", "ALQ", "x_q", "beta_q"] {
            assert_eq!(lex.invert_word(&lex.translate_word(w)), w);
        }
    }
}
