//! Episodes and masked autoregressive sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{masked_log_softmax, Policy};
use crate::dsl::{AlphaExpr, ExprError, PrefixState, Token, Vocabulary};

/// A finite action space with a legality mask per state.
pub trait ActionSpace {
    type State: Clone;

    fn n_actions(&self) -> usize;
    fn initial(&self) -> Self::State;
    fn mask(&self, state: &Self::State) -> Vec<bool>;
    /// Applies a legal action; `None` ends the episode.
    fn advance(&self, state: &Self::State, action: usize) -> Option<Self::State>;
}

/// Formula generation in reverse Polish order, capped at `max_len` program tokens.
#[derive(Debug, Clone)]
pub struct FormulaSpace {
    pub vocab: Vocabulary,
    pub max_len: usize,
}

impl FormulaSpace {
    pub fn new(max_len: usize) -> Self {
        FormulaSpace {
            vocab: Vocabulary::default(),
            max_len,
        }
    }

    /// Action indices for an expression, `None` if a token is off the
    /// vocabulary or the program is longer than `max_len`.
    pub fn actions_for(&self, expr: &AlphaExpr) -> Option<Vec<usize>> {
        if expr.len() > self.max_len {
            return None;
        }
        let mut out = Vec::with_capacity(expr.len() + 1);
        for t in expr.to_tokens() {
            match t {
                Token::Beg => {}
                other => out.push(self.vocab.index_of(&other)?),
            }
        }
        Some(out)
    }
}

impl ActionSpace for FormulaSpace {
    type State = PrefixState;

    fn n_actions(&self) -> usize {
        self.vocab.len()
    }

    fn initial(&self) -> PrefixState {
        PrefixState::new()
    }

    fn mask(&self, state: &PrefixState) -> Vec<bool> {
        state.legal_mask(&self.vocab, self.max_len.saturating_sub(state.emitted()))
    }

    fn advance(&self, state: &PrefixState, action: usize) -> Option<PrefixState> {
        let next = state.apply(&self.vocab.token(action)).expect("masked action is applicable");
        (!next.is_finished()).then_some(next)
    }
}

/// One generated (or teacher-forced) action sequence with behaviour statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub actions: Vec<usize>,
    pub masks: Vec<Vec<bool>>,
    /// Log-probability of each action under the behaviour policy.
    pub log_probs: Vec<f64>,
    /// Value estimate at each step under the behaviour policy.
    pub values: Vec<f64>,
    /// Terminal reward; intermediate rewards are zero.
    pub reward: f64,
    /// Came from a seed formula rather than from sampling.
    pub seeded: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Policy inputs: the start token followed by every action but the last.
    pub fn inputs(&self, begin: usize) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.actions.len());
        v.push(begin);
        v.extend_from_slice(&self.actions[..self.actions.len().saturating_sub(1)]);
        v
    }

    /// Full token sequence `BEG .. SEP`.
    pub fn tokens(&self, vocab: &Vocabulary) -> Vec<Token> {
        std::iter::once(Token::Beg)
            .chain(self.actions.iter().map(|a| vocab.token(*a)))
            .collect()
    }

    pub fn expr(&self, vocab: &Vocabulary) -> Result<AlphaExpr, ExprError> {
        AlphaExpr::from_tokens(&self.tokens(vocab))
    }

    /// Recomputes behaviour log-probs and values under `policy`.
    pub fn rescore(&mut self, policy: &Policy) {
        let trace = policy.forward(&self.inputs(policy.begin_input()));
        for (t, &a) in self.actions.iter().enumerate() {
            self.log_probs[t] = masked_log_softmax(&trace.logits[t], &self.masks[t])[a];
            self.values[t] = trace.values[t];
        }
    }
}

fn sample_index(log_probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (i, lp) in log_probs.iter().enumerate() {
        if *lp == f64::NEG_INFINITY {
            continue;
        }
        acc += lp.exp();
        last = Some(i);
        if u < acc {
            return i;
        }
    }
    last.expect("mask leaves at least one action")
}

fn argmax_index(log_probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, lp) in log_probs.iter().enumerate() {
        if *lp > log_probs[best] {
            best = i;
        }
    }
    best
}

fn run<S: ActionSpace>(policy: &Policy, space: &S, mut choose: impl FnMut(&[f64]) -> usize) -> Episode {
    assert_eq!(policy.n_actions(), space.n_actions());
    let mut state = space.initial();
    let mut hidden = policy.initial_hidden();
    let mut input = policy.begin_input();
    let mut ep = Episode {
        actions: Vec::new(),
        masks: Vec::new(),
        log_probs: Vec::new(),
        values: Vec::new(),
        reward: 0.0,
        seeded: false,
    };
    loop {
        let out = policy.step(&hidden, input);
        let mask = space.mask(&state);
        let lp = masked_log_softmax(&out.logits, &mask);
        let action = choose(&lp);
        debug_assert!(mask[action]);
        ep.actions.push(action);
        ep.log_probs.push(lp[action]);
        ep.values.push(out.value);
        ep.masks.push(mask);
        match space.advance(&state, action) {
            Some(next) => state = next,
            None => return ep,
        }
        hidden = out.hidden;
        input = action;
    }
}

/// Samples one episode from the masked policy.
pub fn rollout<S: ActionSpace>(policy: &Policy, space: &S, rng: &mut impl Rng) -> Episode {
    run(policy, space, |lp| sample_index(lp, rng))
}

/// Picks the most likely legal action at every step.
pub fn greedy_decode<S: ActionSpace>(policy: &Policy, space: &S) -> Episode {
    run(policy, space, argmax_index)
}

/// Teacher-forces a fixed action sequence, recording masks and behaviour
/// statistics. `None` if an action is illegal or the sequence ends early or late.
pub fn forced_episode<S: ActionSpace>(policy: &Policy, space: &S, actions: &[usize]) -> Option<Episode> {
    let mut state = space.initial();
    let mut masks = Vec::with_capacity(actions.len());
    for (t, &a) in actions.iter().enumerate() {
        let mask = space.mask(&state);
        if a >= mask.len() || !mask[a] {
            return None;
        }
        masks.push(mask);
        match space.advance(&state, a) {
            Some(next) if t + 1 < actions.len() => state = next,
            None if t + 1 == actions.len() => {}
            _ => return None,
        }
    }
    let mut ep = Episode {
        actions: actions.to_vec(),
        masks,
        log_probs: vec![0.0; actions.len()],
        values: vec![0.0; actions.len()],
        reward: 0.0,
        seeded: true,
    };
    ep.rescore(policy);
    Some(ep)
}
