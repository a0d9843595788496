//! Incremental validity for partially generated programs.
//!
//! A prefix is tracked as its stack of pending operand sorts. Every operator
//! yields a Series, so reachability only depends on that stack and on how many
//! tokens are left. [`min_completion`] gives the exact number of tokens still
//! needed to reduce a stack to a single Series.

use super::operator::Sort;
use super::token::{Token, Vocabulary};

/// Stack of operand sorts for a program prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct PrefixState {
    stack: Vec<Sort>,
    emitted: usize,
    finished: bool,
}

impl PrefixState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stack(&self) -> &[Sort] {
        &self.stack
    }

    /// Program tokens consumed so far (BEG/SEP excluded).
    pub fn emitted(&self) -> usize {
        self.emitted
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Applies a token; `None` if it breaks the stack discipline.
    pub fn apply(&self, token: &Token) -> Option<PrefixState> {
        if self.finished {
            return None;
        }
        let mut next = self.clone();
        match *token {
            Token::Beg => return None,
            Token::Sep => {
                if self.stack != [Sort::Series] {
                    return None;
                }
                next.finished = true;
                return Some(next);
            }
            Token::Feature(_) => next.stack.push(Sort::Series),
            Token::Constant(_) => next.stack.push(Sort::Scalar),
            Token::TimeDelta(_) => next.stack.push(Sort::TimeDelta),
            Token::Operator(op) => {
                let sig = op.signature();
                let n = sig.arity();
                if next.stack.len() < n || !sig.accepts(&next.stack[next.stack.len() - n..]) {
                    return None;
                }
                next.stack.truncate(next.stack.len() - n);
                next.stack.push(sig.result());
            }
        }
        next.emitted += 1;
        Some(next)
    }

    /// Tokens (other than SEP) still needed to finish, or `None` if no completion exists.
    pub fn min_completion(&self) -> Option<usize> {
        min_completion(&self.stack)
    }

    /// Mask over `vocab`: `true` where appending the token keeps the prefix completable
    /// within `budget` further program tokens. SEP is legal iff the stack is one Series.
    pub fn legal_mask(&self, vocab: &Vocabulary, budget: usize) -> Vec<bool> {
        vocab
            .tokens()
            .iter()
            .map(|t| self.is_legal(t, budget))
            .collect()
    }

    pub fn is_legal(&self, token: &Token, budget: usize) -> bool {
        if *token == Token::Sep {
            return !self.finished && self.stack == [Sort::Series];
        }
        if budget == 0 {
            return false;
        }
        match self.apply(token) {
            Some(next) => next.min_completion().is_some_and(|c| c < budget),
            None => false,
        }
    }

    /// Legal continuations from the default vocabulary.
    pub fn legal_next_tokens(&self, budget: usize) -> Vec<Token> {
        let vocab = Vocabulary::default();
        vocab
            .tokens()
            .iter()
            .filter(|t| self.is_legal(t, budget))
            .copied()
            .collect()
    }
}

/// Ops-only cost of reducing `r` extra operands, using 4→1 (Cond) and 2→1 (binary) steps.
fn reduction_cost(r: usize) -> usize {
    r / 3 + r % 3
}

/// Exact minimum number of tokens that reduce `stack` to a single Series.
///
/// A TimeDelta can only be consumed as the final argument of a rolling
/// operator, so it must be on top with Series directly beneath. Otherwise the
/// stack holds Series/Scalar operands; the first reduction needs a Series in
/// its window and every later one inherits the Series it produced.
pub fn min_completion(stack: &[Sort]) -> Option<usize> {
    let Some((&top, rest)) = stack.split_last() else {
        return Some(1);
    };
    if rest.contains(&Sort::TimeDelta) {
        return None;
    }
    if top == Sort::TimeDelta {
        let mut best: Option<usize> = None;
        // (Series, TimeDelta) -> Series
        if rest.last() == Some(&Sort::Series) {
            best = min_completion(rest).map(|c| c + 1);
        }
        // (Series, Series, TimeDelta) -> Series
        if rest.len() >= 2 && rest[rest.len() - 2..] == [Sort::Series, Sort::Series] {
            let mut reduced = rest[..rest.len() - 1].to_vec();
            *reduced.last_mut().expect("non-empty") = Sort::Series;
            if let Some(c) = min_completion(&reduced) {
                best = Some(best.map_or(c + 1, |b| b.min(c + 1)));
            }
        }
        return best;
    }
    let s = stack.len();
    let r = s - 1;
    let window = match r {
        0 => 1,
        1 | 2 => 2,
        _ => 4,
    };
    let first_op_ok = stack[s - window.min(s)..].contains(&Sort::Series);
    if first_op_ok {
        Some(reduction_cost(r))
    } else {
        // push a feature, then reduce s + 1 operands with a Series on top
        Some(1 + reduction_cost(s))
    }
}
