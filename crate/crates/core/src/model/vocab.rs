//! Fixed, enumerable vocabulary.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest count or coordinate expressible as a single digit token.
pub const MAX_NUMBER: usize = 16;
/// Number of grid cell kinds: six symbols plus empty.
pub const CELL_KINDS: usize = 7;

const WORDS: [&str; 9] = ["find", "at", "count", "del", "delrow", "delcol", "look", "step", "so"];
const SYMBOLS: [&str; CELL_KINDS] = ["A", "B", "C", "D", "E", "F", "."];
const SPECIALS: [&str; 8] = [
    "<bos>",
    "<eos>",
    "<latent>",
    "</latent>",
    "<observation>",
    "</observation>",
    "\\boxed{",
    "}",
];

const WORD_BASE: u16 = SPECIALS.len() as u16;
const SYMBOL_BASE: u16 = WORD_BASE + WORDS.len() as u16;
const DIGIT_BASE: u16 = SYMBOL_BASE + CELL_KINDS as u16;

pub const VOCAB_SIZE: usize = DIGIT_BASE as usize + MAX_NUMBER + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub u16);

pub const BOS: TokenId = TokenId(0);
pub const EOS: TokenId = TokenId(1);
pub const LATENT_START: TokenId = TokenId(2);
pub const LATENT_END: TokenId = TokenId(3);
pub const OBS_START: TokenId = TokenId(4);
pub const OBS_END: TokenId = TokenId(5);
pub const BOXED_OPEN: TokenId = TokenId(6);
pub const BOXED_CLOSE: TokenId = TokenId(7);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        let i = self.0;
        if i < WORD_BASE {
            SPECIALS[i as usize]
        } else if i < SYMBOL_BASE {
            WORDS[(i - WORD_BASE) as usize]
        } else if i < DIGIT_BASE {
            SYMBOLS[(i - SYMBOL_BASE) as usize]
        } else {
            DIGITS[(i - DIGIT_BASE) as usize]
        }
    }

    pub fn from_name(name: &str) -> Option<TokenId> {
        (0..VOCAB_SIZE as u16).map(TokenId).find(|t| t.name() == name)
    }

    pub fn from_index(i: usize) -> Option<TokenId> {
        (i < VOCAB_SIZE).then_some(TokenId(i as u16))
    }

    /// Cell kind encoded by this token, if it is a grid symbol.
    pub fn as_cell(self) -> Option<usize> {
        (SYMBOL_BASE..DIGIT_BASE)
            .contains(&self.0)
            .then(|| (self.0 - SYMBOL_BASE) as usize)
    }

    pub fn as_number(self) -> Option<usize> {
        (self.0 >= DIGIT_BASE && (self.0 as usize) < VOCAB_SIZE).then(|| (self.0 - DIGIT_BASE) as usize)
    }
}

const DIGITS: [&str; MAX_NUMBER + 1] = [
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "10", "11", "12", "13", "14", "15", "16",
];

/// Panics on an unknown word; the word list is closed.
pub fn word(w: &str) -> TokenId {
    let i = WORDS
        .iter()
        .position(|x| *x == w)
        .unwrap_or_else(|| panic!("not a vocabulary word: {w}"));
    TokenId(WORD_BASE + i as u16)
}

pub fn cell(kind: usize) -> TokenId {
    assert!(kind < CELL_KINDS, "cell kind {kind}");
    TokenId(SYMBOL_BASE + kind as u16)
}

pub fn number(n: usize) -> TokenId {
    assert!(n <= MAX_NUMBER, "number {n} exceeds vocabulary");
    TokenId(DIGIT_BASE + n as u16)
}

pub fn render(tokens: &[TokenId]) -> String {
    tokens.iter().map(|t| t.name()).collect::<Vec<_>>().join(" ")
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for TokenId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TokenId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        TokenId::from_name(&name).ok_or_else(|| serde::de::Error::custom(format!("unknown token {name:?}")))
    }
}
