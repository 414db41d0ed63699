use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// How preceding sentences are summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextEncoding {
    None,
    Bow,
    SeqBow,
    SeqBowAttention,
}

/// Where the context vector enters the sentence LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fusion {
    None,
    Early,
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Rlm,
    BowEf,
    SeqBowEf,
    SeqBowAttEf,
    BowLf,
    SeqBowLf,
    SeqBowAttLf,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Rlm,
        Variant::BowEf,
        Variant::SeqBowEf,
        Variant::SeqBowAttEf,
        Variant::BowLf,
        Variant::SeqBowLf,
        Variant::SeqBowAttLf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Rlm => "RLM",
            Variant::BowEf => "RLM-BoW-EF",
            Variant::SeqBowEf => "RLM-SeqBoW-EF",
            Variant::SeqBowAttEf => "RLM-SeqBoW-ATT-EF",
            Variant::BowLf => "RLM-BoW-LF",
            Variant::SeqBowLf => "RLM-SeqBoW-LF",
            Variant::SeqBowAttLf => "RLM-SeqBoW-ATT-LF",
        }
    }

    pub fn encoding(self) -> ContextEncoding {
        match self {
            Variant::Rlm => ContextEncoding::None,
            Variant::BowEf | Variant::BowLf => ContextEncoding::Bow,
            Variant::SeqBowEf | Variant::SeqBowLf => ContextEncoding::SeqBow,
            Variant::SeqBowAttEf | Variant::SeqBowAttLf => ContextEncoding::SeqBowAttention,
        }
    }

    pub fn fusion(self) -> Fusion {
        match self {
            Variant::Rlm => Fusion::None,
            Variant::BowEf | Variant::SeqBowEf | Variant::SeqBowAttEf => Fusion::Early,
            Variant::BowLf | Variant::SeqBowLf | Variant::SeqBowAttLf => Fusion::Late,
        }
    }

    pub fn uses_context(self) -> bool {
        self != Variant::Rlm
    }

    /// `RLM-BoW-LF-4` style label.
    pub fn label(self, n: usize) -> String {
        if self.uses_context() {
            format!("{}-{n}", self.as_str())
        } else {
            self.as_str().to_string()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}
