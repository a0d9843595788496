//! Alpha formula language: token alphabet, operator signatures, typed
//! expression trees, the text grammar and prefix validity for generation.

mod expr;
mod operator;
mod parse;
mod prefix;
mod token;

pub use expr::{AlphaExpr, ExprError, Node, DEFAULT_MAX_TOKENS};
pub use operator::{ArgSort, OpKind, Operator, OperatorSignature, Sort};
pub use parse::{parse, ParseError};
pub use prefix::{min_completion, PrefixState};
pub use token::{Feature, Token, UnknownToken, Vocabulary, CONSTANTS, TIME_DELTAS};

/// The five seed formulas used for Alpha-101 initialization.
pub const ALPHA101_SEEDS: [(&str, &str); 5] = [
    ("Alpha006", "(-1 * Corr(open, volume, 10))"),
    (
        "Alpha099",
        "(Less(CSRank(Corr(Sum(((high + low) / 2), 19.8975), Sum(Mean(volume, 60), 19.8975), 8.8136)), CSRank(Corr(low, volume, 6.28259))) * -1)",
    ),
    (
        "Alpha061",
        "Less(CSRank((vwap - Min(vwap, 16.1219))), CSRank(Corr(vwap, Mean(volume, 180), 17.9282)))",
    ),
    (
        "Alpha014",
        "((-1 * CSRank(Delta(Div(Sub(close, Ref(close, 1)), close), 3))) * Corr(open, volume, 10))",
    ),
    (
        "Alpha035",
        "((Rank(volume, 32) * (1 - Rank(((close + high) - low), 16))) * (1 - Rank(Div(Sub(close, Ref(close, 1)), close), 32)))",
    ),
];

/// Parses a seed file: one formula per line, `#` starts a comment, blank lines ignored.
/// Errors carry the 1-based line number.
pub fn parse_formula_lines(text: &str) -> Result<Vec<AlphaExpr>, (usize, ParseError)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        out.push(parse(body).map_err(|e| (i + 1, e))?);
    }
    Ok(out)
}
