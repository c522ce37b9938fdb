use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Icd10Error;

/// A syntactically valid ICD-10 code: one uppercase letter followed by two or
/// three digits (`X42`, `F110`).
///
/// Stored inline so codes are `Copy` and cheap to hash.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Code {
    buf: [u8; 4],
    len: u8,
}

impl Code {
    /// Parses and canonicalizes a code. A lowercase leading letter is folded
    /// to uppercase; everything else must match the pattern exactly.
    pub fn parse(text: &str) -> Result<Self, Icd10Error> {
        let bytes = text.as_bytes();
        if !(3..=4).contains(&bytes.len()) || !text.is_ascii() {
            if let Some(bad) = text.chars().find(|c| !c.is_ascii_alphanumeric()) {
                return Err(Icd10Error::InvalidCode {
                    text: text.to_string(),
                    reason: format!("unexpected character {bad:?}"),
                });
            }
            return Err(Icd10Error::InvalidCode {
                text: text.to_string(),
                reason: format!("expected 3 or 4 symbols, found {}", text.chars().count()),
            });
        }
        let first = bytes[0];
        if !first.is_ascii_alphabetic() {
            return Err(Icd10Error::InvalidCode {
                text: text.to_string(),
                reason: format!("must start with a letter, found {:?}", first as char),
            });
        }
        if let Some(&bad) = bytes[1..].iter().find(|b| !b.is_ascii_digit()) {
            return Err(Icd10Error::InvalidCode {
                text: text.to_string(),
                reason: format!("expected a digit, found {:?}", bad as char),
            });
        }
        let mut buf = [0u8; 4];
        buf[..bytes.len()].copy_from_slice(bytes);
        buf[0] = first.to_ascii_uppercase();
        Ok(Code {
            buf,
            len: bytes.len() as u8,
        })
    }

    pub fn as_str(&self) -> &str {
        // Only ASCII bytes are ever stored.
        std::str::from_utf8(&self.buf[..self.len as usize]).expect("ascii code")
    }

    pub fn letter(&self) -> char {
        self.buf[0] as char
    }

    /// The three-symbol category (`F110` -> `F11`).
    pub fn category(&self) -> Code {
        let mut buf = self.buf;
        buf[3] = 0;
        Code { buf, len: 3 }
    }

    /// Numeric value of the two category digits (`F11` -> 11).
    pub(crate) fn category_number(&self) -> u32 {
        (self.buf[1] - b'0') as u32 * 10 + (self.buf[2] - b'0') as u32
    }

    pub fn starts_with(&self, prefix: &str) -> bool {
        self.as_str().starts_with(prefix)
    }
}

impl Ord for Code {
    fn cmp(&self, other: &Self) -> Ordering {
        self.as_str().cmp(other.as_str())
    }
}

impl PartialOrd for Code {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Code({})", self.as_str())
    }
}

impl FromStr for Code {
    type Err = Icd10Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Code::parse(s)
    }
}

impl Serialize for Code {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Code {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Code::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Shorthand used throughout tests and fixtures; panics on malformed input.
pub fn code(text: &str) -> Code {
    Code::parse(text).unwrap_or_else(|e| panic!("{e}"))
}
