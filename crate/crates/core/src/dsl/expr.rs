//! Typed expression trees and their reverse-polish token encoding.

use std::fmt;

use super::operator::{Operator, Sort};
use super::token::{Feature, Token};

/// Default cap on generated program length, excluding `BEG`/`SEP`.
pub const DEFAULT_MAX_TOKENS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Feature(Feature),
    Constant(f64),
    TimeDelta(u32),
    Call(Operator, Vec<Node>),
}

impl Node {
    pub fn call(op: Operator, args: Vec<Node>) -> Node {
        Node::Call(op, args)
    }

    /// Sort-checks the subtree and returns its sort.
    pub fn sort(&self) -> Result<Sort, String> {
        match self {
            Node::Feature(_) => Ok(Sort::Series),
            Node::Constant(c) if c.is_finite() => Ok(Sort::Scalar),
            Node::Constant(c) => Err(format!("non-finite constant {c}")),
            Node::TimeDelta(0) => Err("time delta must be at least one day".into()),
            Node::TimeDelta(_) => Ok(Sort::TimeDelta),
            Node::Call(op, args) => {
                let sig = op.signature();
                if args.len() != sig.arity() {
                    return Err(format!(
                        "{op} expects {} arguments, got {}",
                        sig.arity(),
                        args.len()
                    ));
                }
                let sorts = args.iter().map(Node::sort).collect::<Result<Vec<_>, _>>()?;
                if !sig.accepts(&sorts) {
                    return Err(format!("{op} cannot take arguments of sorts {sorts:?}"));
                }
                Ok(sig.result())
            }
        }
    }

    fn push_tokens(&self, out: &mut Vec<Token>) {
        match self {
            Node::Feature(f) => out.push(Token::Feature(*f)),
            Node::Constant(c) => out.push(Token::Constant(*c)),
            Node::TimeDelta(d) => out.push(Token::TimeDelta(*d)),
            Node::Call(op, args) => {
                for a in args {
                    a.push_tokens(out);
                }
                out.push(Token::Operator(*op));
            }
        }
    }

    /// Number of program tokens in the subtree.
    pub fn token_count(&self) -> usize {
        match self {
            Node::Call(_, args) => 1 + args.iter().map(Node::token_count).sum::<usize>(),
            _ => 1,
        }
    }

    /// Every feature the subtree reads.
    pub fn features(&self, out: &mut Vec<Feature>) {
        match self {
            Node::Feature(f) => {
                if !out.contains(f) {
                    out.push(*f)
                }
            }
            Node::Call(_, args) => args.iter().for_each(|a| a.features(out)),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("expression does not sort-check: {0}")]
    Sort(String),
    #[error("root of an alpha must be a series, found {0:?}")]
    RootSort(Sort),
    #[error("token sequence must start with BEG")]
    MissingBeg,
    #[error("token sequence must end with SEP")]
    MissingSep,
    #[error("token {index} ({token}): stack underflow")]
    StackUnderflow { index: usize, token: String },
    #[error("token {index} ({token}): argument sorts do not match")]
    SortMismatch { index: usize, token: String },
    #[error("token {index} ({token}): not allowed inside a program")]
    Misplaced { index: usize, token: String },
    #[error("token {index} (SEP): {remaining} operands left on the stack")]
    LeftoverOperands { index: usize, remaining: usize },
    #[error("token {index} (SEP): program does not reduce to a series")]
    WrongTerminalSort { index: usize },
}

/// A sort-checked alpha formula whose root is a Series.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaExpr {
    root: Node,
}

impl AlphaExpr {
    pub fn new(root: Node) -> Result<Self, ExprError> {
        match root.sort().map_err(ExprError::Sort)? {
            Sort::Series => Ok(AlphaExpr { root }),
            other => Err(ExprError::RootSort(other)),
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Program length excluding `BEG`/`SEP`.
    pub fn len(&self) -> usize {
        self.root.token_count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn features(&self) -> Vec<Feature> {
        let mut out = Vec::new();
        self.root.features(&mut out);
        out
    }

    /// Post-order encoding framed by `BEG` and `SEP`.
    pub fn to_tokens(&self) -> Vec<Token> {
        let mut out = vec![Token::Beg];
        self.root.push_tokens(&mut out);
        out.push(Token::Sep);
        out
    }

    pub fn from_tokens(tokens: &[Token]) -> Result<Self, ExprError> {
        if tokens.first() != Some(&Token::Beg) {
            return Err(ExprError::MissingBeg);
        }
        if tokens.len() < 2 || tokens.last() != Some(&Token::Sep) {
            return Err(ExprError::MissingSep);
        }
        let last = tokens.len() - 1;
        let mut stack: Vec<(Node, Sort)> = Vec::new();
        for (index, tok) in tokens.iter().enumerate().take(last).skip(1) {
            let misplaced = || ExprError::Misplaced {
                index,
                token: tok.to_string(),
            };
            match *tok {
                Token::Beg | Token::Sep => return Err(misplaced()),
                Token::Feature(f) => stack.push((Node::Feature(f), Sort::Series)),
                Token::Constant(c) if c.is_finite() => {
                    stack.push((Node::Constant(c), Sort::Scalar))
                }
                Token::Constant(_) | Token::TimeDelta(0) => return Err(misplaced()),
                Token::TimeDelta(d) => stack.push((Node::TimeDelta(d), Sort::TimeDelta)),
                Token::Operator(op) => {
                    let sig = op.signature();
                    if stack.len() < sig.arity() {
                        return Err(ExprError::StackUnderflow {
                            index,
                            token: tok.to_string(),
                        });
                    }
                    let args = stack.split_off(stack.len() - sig.arity());
                    let sorts: Vec<Sort> = args.iter().map(|(_, s)| *s).collect();
                    if !sig.accepts(&sorts) {
                        return Err(ExprError::SortMismatch {
                            index,
                            token: tok.to_string(),
                        });
                    }
                    let node = Node::Call(op, args.into_iter().map(|(n, _)| n).collect());
                    stack.push((node, sig.result()));
                }
            }
        }
        match stack.len() {
            0 => Err(ExprError::WrongTerminalSort { index: last }),
            1 => {
                let (node, sort) = stack.pop().expect("one element");
                if sort != Sort::Series {
                    return Err(ExprError::WrongTerminalSort { index: last });
                }
                Ok(AlphaExpr { root: node })
            }
            n => Err(ExprError::LeftoverOperands {
                index: last,
                remaining: n,
            }),
        }
    }

    /// Canonical formula text; `parse(print(e)) == e`.
    pub fn print(&self) -> String {
        self.to_string()
    }
}

fn write_node(node: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        Node::Feature(feat) => f.write_str(feat.name()),
        Node::Constant(c) => write!(f, "{c}"),
        Node::TimeDelta(d) => write!(f, "{d}"),
        Node::Call(op, args) => {
            if let (Some(sym), [a, b]) = (op.infix_symbol(), args.as_slice()) {
                f.write_str("(")?;
                write_node(a, f)?;
                write!(f, " {sym} ")?;
                write_node(b, f)?;
                return f.write_str(")");
            }
            write!(f, "{op}(")?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write_node(a, f)?;
            }
            f.write_str(")")
        }
    }
}

impl fmt::Display for AlphaExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Feature::*;

    fn alpha006() -> AlphaExpr {
        AlphaExpr::new(Node::call(
            Operator::Mul,
            vec![
                Node::Constant(-1.0),
                Node::call(
                    Operator::Corr,
                    vec![Node::Feature(Open), Node::Feature(Volume), Node::TimeDelta(10)],
                ),
            ],
        ))
        .unwrap()
    }

    #[test]
    fn rpn_of_alpha006() {
        let toks = alpha006().to_tokens();
        assert_eq!(
            toks,
            vec![
                Token::Beg,
                Token::Constant(-1.0),
                Token::Feature(Open),
                Token::Feature(Volume),
                Token::TimeDelta(10),
                Token::Operator(Operator::Corr),
                Token::Operator(Operator::Mul),
                Token::Sep
            ]
        );
        assert_eq!(AlphaExpr::from_tokens(&toks).unwrap(), alpha006());
    }

    #[test]
    fn smallest_program() {
        let e = AlphaExpr::from_tokens(&[Token::Beg, Token::Feature(Close), Token::Sep]).unwrap();
        assert_eq!(e.root(), &Node::Feature(Close));
        assert_eq!(e.print(), "close");
    }

    #[test]
    fn underflow_names_the_token() {
        let err = AlphaExpr::from_tokens(&[Token::Beg, Token::Operator(Operator::Mul), Token::Sep])
            .unwrap_err();
        assert_eq!(
            err,
            ExprError::StackUnderflow {
                index: 1,
                token: "Mul".into()
            }
        );
    }

    #[test]
    fn bad_terminal_states() {
        let leftover = [
            Token::Beg,
            Token::Feature(Close),
            Token::Feature(Open),
            Token::Sep,
        ];
        assert!(matches!(
            AlphaExpr::from_tokens(&leftover),
            Err(ExprError::LeftoverOperands { index: 3, remaining: 2 })
        ));
        let scalar = [Token::Beg, Token::Constant(1.0), Token::Sep];
        assert!(matches!(
            AlphaExpr::from_tokens(&scalar),
            Err(ExprError::WrongTerminalSort { index: 2 })
        ));
        assert_eq!(
            AlphaExpr::from_tokens(&[Token::Feature(Close), Token::Sep]),
            Err(ExprError::MissingBeg)
        );
        let mismatch = [
            Token::Beg,
            Token::Feature(Close),
            Token::Feature(Open),
            Token::Operator(Operator::Mean),
            Token::Sep,
        ];
        assert!(matches!(
            AlphaExpr::from_tokens(&mismatch),
            Err(ExprError::SortMismatch { index: 3, .. })
        ));
    }

    #[test]
    fn printer_uses_infix_for_arithmetic() {
        assert_eq!(alpha006().print(), "(-1 * Corr(open, volume, 10))");
    }
}
