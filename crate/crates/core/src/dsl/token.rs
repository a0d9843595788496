//! Token alphabet: features, operators, time deltas, constants and sequence markers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::operator::Operator;

/// Window lengths (in trading days) the generator may emit.
pub const TIME_DELTAS: [u32; 9] = [5, 10, 20, 30, 40, 50, 60, 120, 252];

/// Scalar constants the generator may emit.
pub const CONSTANTS: [f64; 13] = [
    -30.0, -10.0, -5.0, -2.0, -1.0, -0.5, -0.01, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0,
];

/// Raw per-stock daily features, in panel storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Open,
    Close,
    High,
    Low,
    Volume,
    Vwap,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Open,
        Feature::Close,
        Feature::High,
        Feature::Low,
        Feature::Volume,
        Feature::Vwap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Open => "open",
            Feature::Close => "close",
            Feature::High => "high",
            Feature::Low => "low",
            Feature::Volume => "volume",
            Feature::Vwap => "vwap",
        }
    }

    /// Position of the feature in a panel's feature axis.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Case-insensitive lookup.
    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One symbol of a reverse-polish alpha program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Token {
    Beg,
    Sep,
    Feature(Feature),
    Operator(Operator),
    /// Window length in trading days.
    TimeDelta(u32),
    Constant(f64),
}

impl Token {
    /// True when the token belongs to the generator grid (parsed seeds may carry
    /// off-grid deltas and constants).
    pub fn is_on_grid(&self) -> bool {
        match *self {
            Token::TimeDelta(d) => TIME_DELTAS.contains(&d),
            Token::Constant(c) => CONSTANTS.iter().any(|&g| g == c),
            _ => true,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Beg => f.write_str("BEG"),
            Token::Sep => f.write_str("SEP"),
            Token::Feature(feat) => f.write_str(feat.name()),
            Token::Operator(op) => f.write_str(op.name()),
            Token::TimeDelta(d) => write!(f, "{d}d"),
            Token::Constant(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown token name {0:?}")]
pub struct UnknownToken(pub String);

impl FromStr for Token {
    type Err = UnknownToken;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "BEG" => return Ok(Token::Beg),
            "SEP" => return Ok(Token::Sep),
            _ => {}
        }
        if let Some(feat) = Feature::from_name(s) {
            return Ok(Token::Feature(feat));
        }
        if let Some(op) = Operator::from_name(s) {
            return Ok(Token::Operator(op));
        }
        if let Some(days) = s.strip_suffix('d') {
            if let Ok(d) = days.parse::<u32>() {
                if d > 0 {
                    return Ok(Token::TimeDelta(d));
                }
            }
        }
        match s.parse::<f64>() {
            Ok(c) if c.is_finite() => Ok(Token::Constant(c)),
            _ => Err(UnknownToken(s.to_string())),
        }
    }
}

impl Serialize for Token {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Fixed, ordered action alphabet for the generator: every on-grid token plus `SEP`.
///
/// Index order is stable across runs; files always store token names instead.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Token>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut tokens = Vec::with_capacity(62);
        tokens.extend(Feature::ALL.into_iter().map(Token::Feature));
        tokens.extend(Operator::ALL.into_iter().map(Token::Operator));
        tokens.extend(TIME_DELTAS.into_iter().map(Token::TimeDelta));
        tokens.extend(CONSTANTS.into_iter().map(Token::Constant));
        tokens.push(Token::Sep);
        Vocabulary { tokens }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, index: usize) -> Token {
        self.tokens[index]
    }

    pub fn index_of(&self, token: &Token) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn sep_index(&self) -> usize {
        self.tokens.len() - 1
    }
}
