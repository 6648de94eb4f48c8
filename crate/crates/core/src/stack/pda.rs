//! PDA signatures and per-timestep transition weights in restricted form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sizes of a PDA's state set and stack alphabet. The start state and the
/// bottom symbol are both index 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PdaSignature {
    pub num_states: usize,
    pub stack_symbols: usize,
}

impl PdaSignature {
    pub const START: usize = 0;
    pub const BOTTOM: usize = 0;

    pub fn new(num_states: usize, stack_symbols: usize) -> Result<Self> {
        if num_states == 0 || stack_symbols == 0 {
            return Err(Error::Dimension(format!(
                "PDA needs at least one state and one stack symbol, got |Q|={num_states}, |Γ|={stack_symbols}"
            )));
        }
        Ok(PdaSignature {
            num_states,
            stack_symbols,
        })
    }

    /// Number of (state, top symbol) pairs.
    pub fn pairs(&self) -> usize {
        self.num_states * self.stack_symbols
    }

    pub fn pair(&self, state: usize, symbol: usize) -> usize {
        state * self.stack_symbols + symbol
    }

    pub fn unpair(&self, p: usize) -> (usize, usize) {
        (p / self.stack_symbols, p % self.stack_symbols)
    }

    pub fn push_len(&self) -> usize {
        self.pairs() * self.pairs()
    }

    pub fn pop_len(&self) -> usize {
        self.pairs() * self.num_states
    }

    /// Weights per timestep: `|Q|² |Γ| (2|Γ| + 1)`.
    pub fn delta_len(&self) -> usize {
        2 * self.push_len() + self.pop_len()
    }

    /// Maximum number of transitions available from one configuration.
    pub fn branching(&self) -> usize {
        self.num_states * (2 * self.stack_symbols + 1)
    }
}

/// One restricted-form transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transition {
    /// `q, x → r, xy`
    Push { q: usize, x: usize, r: usize, y: usize },
    /// `q, x → r, y`
    Replace { q: usize, x: usize, r: usize, y: usize },
    /// `q, x → r, ε`
    Pop { q: usize, x: usize, r: usize },
}

impl Transition {
    pub fn source(&self) -> (usize, usize) {
        match *self {
            Transition::Push { q, x, .. }
            | Transition::Replace { q, x, .. }
            | Transition::Pop { q, x, .. } => (q, x),
        }
    }

    pub fn target_state(&self) -> usize {
        match *self {
            Transition::Push { r, .. } | Transition::Replace { r, .. } | Transition::Pop { r, .. } => r,
        }
    }
}

/// Weights of every transition at one timestep.
///
/// `push` and `replace` are `[(q, x), (r, y)]` matrices of size
/// `|Q||Γ| × |Q||Γ|`; `pop` is `[(q, x), r]` of size `|Q||Γ| × |Q|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionWeights<E> {
    pub push: Vec<E>,
    pub replace: Vec<E>,
    pub pop: Vec<E>,
}

impl<E: Clone> TransitionWeights<E> {
    pub fn filled(sig: &PdaSignature, value: E) -> Self {
        TransitionWeights {
            push: vec![value.clone(); sig.push_len()],
            replace: vec![value.clone(); sig.push_len()],
            pop: vec![value; sig.pop_len()],
        }
    }

    /// Split a flat vector laid out as `push ++ replace ++ pop`.
    pub fn from_flat(sig: &PdaSignature, flat: &[E]) -> Result<Self> {
        if flat.len() != sig.delta_len() {
            return Err(Error::Dimension(format!(
                "transition weights need {} values, got {}",
                sig.delta_len(),
                flat.len()
            )));
        }
        let p = sig.push_len();
        Ok(TransitionWeights {
            push: flat[..p].to_vec(),
            replace: flat[p..2 * p].to_vec(),
            pop: flat[2 * p..].to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<E> {
        let mut v = self.push.clone();
        v.extend_from_slice(&self.replace);
        v.extend_from_slice(&self.pop);
        v
    }

    pub fn map<F, T>(&self, f: F) -> TransitionWeights<T>
    where
        F: Fn(&E) -> T,
    {
        TransitionWeights {
            push: self.push.iter().map(&f).collect(),
            replace: self.replace.iter().map(&f).collect(),
            pop: self.pop.iter().map(&f).collect(),
        }
    }

    pub fn get(&self, sig: &PdaSignature, tr: Transition) -> &E {
        let d = sig.pairs();
        match tr {
            Transition::Push { q, x, r, y } => &self.push[sig.pair(q, x) * d + sig.pair(r, y)],
            Transition::Replace { q, x, r, y } => {
                &self.replace[sig.pair(q, x) * d + sig.pair(r, y)]
            }
            Transition::Pop { q, x, r } => &self.pop[sig.pair(q, x) * sig.num_states + r],
        }
    }

    pub fn set(&mut self, sig: &PdaSignature, tr: Transition, value: E) {
        let d = sig.pairs();
        match tr {
            Transition::Push { q, x, r, y } => self.push[sig.pair(q, x) * d + sig.pair(r, y)] = value,
            Transition::Replace { q, x, r, y } => {
                self.replace[sig.pair(q, x) * d + sig.pair(r, y)] = value
            }
            Transition::Pop { q, x, r } => self.pop[sig.pair(q, x) * sig.num_states + r] = value,
        }
    }

    pub fn check(&self, sig: &PdaSignature) -> Result<()> {
        if self.push.len() != sig.push_len()
            || self.replace.len() != sig.push_len()
            || self.pop.len() != sig.pop_len()
        {
            return Err(Error::Dimension(format!(
                "transition tensor sizes ({}, {}, {}) do not match |Q|={}, |Γ|={}",
                self.push.len(),
                self.replace.len(),
                self.pop.len(),
                sig.num_states,
                sig.stack_symbols
            )));
        }
        Ok(())
    }
}

/// Every transition of a signature, in a fixed order.
pub fn all_transitions(sig: &PdaSignature) -> Vec<Transition> {
    let (nq, ng) = (sig.num_states, sig.stack_symbols);
    let mut out = Vec::with_capacity(sig.delta_len());
    for q in 0..nq {
        for x in 0..ng {
            for r in 0..nq {
                for y in 0..ng {
                    out.push(Transition::Push { q, x, r, y });
                }
            }
        }
    }
    for q in 0..nq {
        for x in 0..ng {
            for r in 0..nq {
                for y in 0..ng {
                    out.push(Transition::Replace { q, x, r, y });
                }
            }
        }
    }
    for q in 0..nq {
        for x in 0..ng {
            for r in 0..nq {
                out.push(Transition::Pop { q, x, r });
            }
        }
    }
    out
}

/// `Δ = exp(logits)` from an affine output laid out as `push ++ replace ++ pop`.
pub fn delta_from_logits(sig: &PdaSignature, logits: &[f64]) -> Result<TransitionWeights<f64>> {
    TransitionWeights::from_flat(sig, logits).map(|w| w.map(|v| v.exp()))
}
