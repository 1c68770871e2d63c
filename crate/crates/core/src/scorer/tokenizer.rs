use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const UNK: TokenId = 1;
const BOS_TEXT: &str = "<bos>";
const UNK_TEXT: &str = "<unk>";

/// Word-and-punctuation tokenizer over a vocabulary fixed at build time.
///
/// Words are lowercased runs of alphanumeric characters; every other
/// non-whitespace character is a token of its own. Ids 0 and 1 are reserved
/// for BOS and UNK, the remaining ids follow sorted token order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Tokenizer {
    pub fn build<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut words = BTreeSet::new();
        for text in texts {
            for piece in split_pieces(text) {
                words.insert(piece);
            }
        }
        let tokens = [BOS_TEXT.to_string(), UNK_TEXT.to_string()].into_iter().chain(words).collect();
        Self::from_tokens(tokens).expect("generated vocabulary is well formed")
    }

    /// Restores a tokenizer from its full token list, specials included.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != BOS_TEXT || tokens[1] != UNK_TEXT {
            return Err(Error::Format("vocabulary must start with <bos>, <unk>".into()));
        }
        let ids: HashMap<String, TokenId> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        if ids.len() != tokens.len() {
            return Err(Error::Format("duplicate vocabulary entry".into()));
        }
        Ok(Tokenizer { tokens, ids })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn is_special(id: TokenId) -> bool {
        id == BOS || id == UNK
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        split_pieces(text).map(|p| self.ids.get(&p).copied().unwrap_or(UNK)).collect()
    }

    /// Joins tokens with single spaces; `encode(decode(ids)) == ids` for non-special ids.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&id| self.token(id)).collect::<Vec<_>>().join(" ")
    }
}

fn split_pieces(text: &str) -> impl Iterator<Item = String> + '_ {
    let mut chars = text.char_indices().peekable();
    std::iter::from_fn(move || loop {
        let (_, ch) = chars.next()?;
        if ch.is_whitespace() {
            continue;
        }
        if !ch.is_alphanumeric() {
            return Some(ch.to_string());
        }
        let mut word: String = ch.to_lowercase().collect();
        while let Some(&(_, next)) = chars.peek() {
            if !next.is_alphanumeric() {
                break;
            }
            word.extend(next.to_lowercase());
            chars.next();
        }
        return Some(word);
    })
}

#[derive(Serialize, Deserialize)]
pub(crate) struct TokenizerRecord {
    pub tokens: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_and_punctuation() {
        let pieces: Vec<String> = split_pieces("Hello, world!  It's 42.").collect();
        assert_eq!(pieces, ["hello", ",", "world", "!", "it", "'", "s", "42", "."]);
    }

    #[test]
    fn reserves_special_ids() {
        let tok = Tokenizer::build(["b a", "c"]);
        assert_eq!(tok.tokens(), ["<bos>", "<unk>", "a", "b", "c"]);
        assert_eq!(tok.encode("a zz c"), vec![2, UNK, 4]);
    }

    #[test]
    fn decode_then_encode_is_identity() {
        let tok = Tokenizer::build(["the cat, the dog."]);
        let ids = tok.encode("The dog . the cat ,");
        assert_eq!(tok.encode(&tok.decode(&ids)), ids);
    }

    #[test]
    fn rejects_bad_vocabularies() {
        assert!(Tokenizer::from_tokens(vec!["a".into()]).is_err());
        assert!(Tokenizer::from_tokens(vec!["<bos>".into(), "<unk>".into(), "a".into(), "a".into()]).is_err());
    }
}
