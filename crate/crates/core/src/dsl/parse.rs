//! Formula text parser.
//!
//! Grammar (see `docs/grammar.md`):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Infix arithmetic maps onto `Add`/`Sub`/`Mul`/`Div`. Unary minus folds into
//! numeric literals and otherwise becomes `Mul(-1, x)`. Literals in window
//! positions are rounded to the nearest whole day.

use super::expr::{AlphaExpr, Node};
use super::operator::{ArgSort, Operator, Sort};
use super::token::Feature;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message} at offset {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        offset,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Lex {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    End,
}

fn lex(text: &str) -> Result<Vec<(Lex, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        match c {
            c if c.is_ascii_whitespace() => {
                i += 1;
                continue;
            }
            '(' => out.push((Lex::LParen, start)),
            ')' => out.push((Lex::RParen, start)),
            ',' => out.push((Lex::Comma, start)),
            '+' => out.push((Lex::Plus, start)),
            '-' => out.push((Lex::Minus, start)),
            '*' => out.push((Lex::Star, start)),
            '/' => out.push((Lex::Slash, start)),
            c if c.is_ascii_digit() || c == '.' => {
                while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.')
                {
                    i += 1;
                }
                // optional exponent
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let s = &text[start..i];
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => out.push((Lex::Num(v), start)),
                    _ => return err(start, format!("malformed number {s:?}")),
                }
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((Lex::Ident(text[start..i].to_string()), start));
                continue;
            }
            other => return err(start, format!("unexpected character {other:?}")),
        }
        i += 1;
    }
    out.push((Lex::End, text.len()));
    Ok(out)
}

/// Untyped syntax tree with source offsets.
#[derive(Debug)]
enum Syntax {
    Num(f64, usize),
    Ident(String, usize),
    Call(String, Vec<Syntax>, usize),
    Infix(Operator, Box<Syntax>, Box<Syntax>, usize),
    Neg(Box<Syntax>, usize),
}

impl Syntax {
    fn offset(&self) -> usize {
        match self {
            Syntax::Num(_, o)
            | Syntax::Ident(_, o)
            | Syntax::Call(_, _, o)
            | Syntax::Infix(_, _, _, o)
            | Syntax::Neg(_, o) => *o,
        }
    }
}

struct Parser {
    toks: Vec<(Lex, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Lex {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Lex, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Syntax, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Lex::Plus => Operator::Add,
                Lex::Minus => Operator::Sub,
                _ => return Ok(lhs),
            };
            let (_, at) = self.bump();
            let rhs = self.term()?;
            lhs = Syntax::Infix(op, Box::new(lhs), Box::new(rhs), at);
        }
    }

    fn term(&mut self) -> Result<Syntax, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Lex::Star => Operator::Mul,
                Lex::Slash => Operator::Div,
                _ => return Ok(lhs),
            };
            let (_, at) = self.bump();
            let rhs = self.unary()?;
            lhs = Syntax::Infix(op, Box::new(lhs), Box::new(rhs), at);
        }
    }

    fn unary(&mut self) -> Result<Syntax, ParseError> {
        if *self.peek() == Lex::Minus {
            let (_, at) = self.bump();
            let inner = self.unary()?;
            return Ok(match inner {
                Syntax::Num(v, _) => Syntax::Num(-v, at),
                other => Syntax::Neg(Box::new(other), at),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Syntax, ParseError> {
        let (tok, at) = self.bump();
        match tok {
            Lex::Num(v) => Ok(Syntax::Num(v, at)),
            Lex::Ident(name) => {
                if *self.peek() != Lex::LParen {
                    return Ok(Syntax::Ident(name, at));
                }
                self.bump();
                let mut args = vec![self.expr()?];
                loop {
                    match self.peek() {
                        Lex::Comma => {
                            self.bump();
                            args.push(self.expr()?);
                        }
                        Lex::RParen => {
                            self.bump();
                            return Ok(Syntax::Call(name, args, at));
                        }
                        _ => return err(self.offset(), "expected ',' or ')'"),
                    }
                }
            }
            Lex::LParen => {
                let inner = self.expr()?;
                if *self.peek() != Lex::RParen {
                    return err(self.offset(), "unbalanced parentheses: expected ')'");
                }
                self.bump();
                Ok(inner)
            }
            Lex::RParen => err(at, "unbalanced parentheses: unexpected ')'"),
            Lex::End => err(at, "unexpected end of formula"),
            other => err(at, format!("unexpected {other:?}")),
        }
    }
}

/// Converts syntax to a typed node. `want` is the slot sort when known.
fn typecheck(syn: &Syntax, want: Option<ArgSort>) -> Result<(Node, Sort), ParseError> {
    if want == Some(ArgSort::TimeDelta) {
        return match syn {
            Syntax::Num(v, at) => {
                let days = v.round();
                if days < 1.0 || days > u32::MAX as f64 {
                    return err(*at, format!("window {v} does not round to a positive day count"));
                }
                Ok((Node::TimeDelta(days as u32), Sort::TimeDelta))
            }
            other => err(other.offset(), "expected a window length"),
        };
    }
    match syn {
        Syntax::Num(v, _) => Ok((Node::Constant(*v), Sort::Scalar)),
        Syntax::Ident(name, at) => match Feature::from_name(name) {
            Some(f) => Ok((Node::Feature(f), Sort::Series)),
            None if Operator::from_name(name).is_some() => {
                err(*at, format!("operator {name} used without arguments"))
            }
            None => err(*at, format!("unknown identifier {name:?}")),
        },
        Syntax::Neg(inner, at) => {
            let (node, sort) = typecheck(inner, Some(ArgSort::Series))?;
            if sort != Sort::Series {
                return err(*at, "sort mismatch: unary minus needs a series or a literal");
            }
            Ok((Node::Call(Operator::Mul, vec![Node::Constant(-1.0), node]), Sort::Series))
        }
        Syntax::Infix(op, a, b, at) => build_call(*op, &[a.as_ref(), b.as_ref()], *at),
        Syntax::Call(name, args, at) => {
            let Some(op) = Operator::from_name(name) else {
                return if Feature::from_name(name).is_some() {
                    err(*at, format!("feature {name} cannot be called"))
                } else {
                    err(*at, format!("unknown identifier {name:?}"))
                };
            };
            let refs: Vec<&Syntax> = args.iter().collect();
            build_call(op, &refs, *at)
        }
    }
}

fn build_call(op: Operator, args: &[&Syntax], at: usize) -> Result<(Node, Sort), ParseError> {
    let sig = op.signature();
    if args.len() != sig.arity() {
        return err(
            at,
            format!(
                "arity mismatch: {op} expects {} arguments, got {}",
                sig.arity(),
                args.len()
            ),
        );
    }
    let mut nodes = Vec::with_capacity(args.len());
    let mut sorts = Vec::with_capacity(args.len());
    for (syn, slot) in args.iter().zip(sig.args) {
        let (node, sort) = typecheck(syn, Some(*slot))?;
        if !slot.accepts(sort) {
            return err(
                syn.offset(),
                format!("sort mismatch: {op} argument expects {slot:?}, found {sort:?}"),
            );
        }
        nodes.push(node);
        sorts.push(sort);
    }
    if !sig.accepts(&sorts) {
        return err(at, format!("sort mismatch: {op} needs at least one series operand"));
    }
    Ok((Node::Call(op, nodes), sig.result()))
}

/// Parses formula text into a sort-checked alpha.
pub fn parse(text: &str) -> Result<AlphaExpr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let syn = p.expr()?;
    match p.peek() {
        Lex::End => {}
        Lex::RParen => return err(p.offset(), "unbalanced parentheses: unexpected ')'"),
        _ => return err(p.offset(), "unexpected trailing input"),
    }
    let (node, sort) = typecheck(&syn, None)?;
    if sort != Sort::Series {
        return err(0, format!("sort mismatch: formula evaluates to {sort:?}, not a series"));
    }
    Ok(AlphaExpr::new(node).expect("typechecked tree"))
}
