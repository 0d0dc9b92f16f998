use std::collections::{BTreeSet, HashMap};

use super::SeqModelError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
const SPECIAL_NAMES: [&str; 3] = ["<pad>", "<bos>", "<eos>"];

/// Character-level vocabulary. Ids 0–2 are PAD, BOS and EOS; characters
/// follow in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        let chars: Vec<char> = set.into_iter().collect();
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + SPECIAL_NAMES.len()))
            .collect();
        Self { chars, index }
    }

    /// Every character that occurs in `corpus`.
    pub fn from_corpus<S: AsRef<str>>(corpus: &[S]) -> Self {
        Self::from_chars(corpus.iter().flat_map(|s| s.as_ref().chars().collect::<Vec<_>>()))
    }

    pub fn len(&self) -> usize {
        self.chars.len() + SPECIAL_NAMES.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The non-special characters in id order.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn token_name(&self, id: usize) -> Option<String> {
        match id {
            PAD | BOS | EOS => Some(SPECIAL_NAMES[id].to_string()),
            _ => self.chars.get(id - SPECIAL_NAMES.len()).map(|c| c.to_string()),
        }
    }

    pub fn tokenize(&self, s: &str) -> Result<Vec<usize>, SeqModelError> {
        s.chars()
            .enumerate()
            .map(|(pos, c)| self.id(c).ok_or(SeqModelError::UnknownToken { token: c, pos }))
            .collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<String, SeqModelError> {
        ids.iter()
            .map(|&id| {
                id.checked_sub(SPECIAL_NAMES.len())
                    .and_then(|k| self.chars.get(k).copied())
                    .ok_or(SeqModelError::InvalidTokenId(id))
            })
            .collect()
    }

    /// Like [`Vocab::detokenize`], but special tokens become their `<name>`
    /// so the result is always a string (and never a valid SMILES if one
    /// occurs).
    pub fn detokenize_lossy(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&id| self.token_name(id).unwrap_or_else(|| "<?>".to_string()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_dense_with_specials_first() {
        let v = Vocab::from_corpus(&["CCO", "c1ccccc1"]);
        assert_eq!(v.len(), 3 + 4);
        assert_eq!(v.id('1'), Some(3));
        assert_eq!(v.id('C'), Some(4));
        assert_eq!(v.token_name(EOS).unwrap(), "<eos>");
    }

    #[test]
    fn tokenize_round_trip_and_errors() {
        let v = Vocab::from_corpus(&["CCO"]);
        let ids = v.tokenize("CCO").unwrap();
        assert_eq!(ids, vec![v.id('C').unwrap(), v.id('C').unwrap(), v.id('O').unwrap()]);
        assert_eq!(v.detokenize(&ids).unwrap(), "CCO");
        assert_eq!(v.tokenize("").unwrap(), Vec::<usize>::new());
        assert_eq!(
            v.tokenize("C$").unwrap_err(),
            SeqModelError::UnknownToken { token: '$', pos: 1 }
        );
        assert_eq!(v.detokenize(&[EOS]).unwrap_err(), SeqModelError::InvalidTokenId(EOS));
        assert_eq!(v.detokenize_lossy(&[ids[0], PAD]), "C<pad>");
    }
}
