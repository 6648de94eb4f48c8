//! Brute-force enumeration of weighted PDA runs.
//!
//! Exponential in the run length; only meant for checking the dynamic
//! programs on tiny instances. The initial stack is `[⊥]` (carrying `v0` when
//! vectors are tracked). Any element above the initial `⊥` may be popped;
//! the initial `⊥` itself may be replaced but never popped.

use crate::error::{Error, Result};
use crate::stack::pda::{all_transitions, PdaSignature, Transition, TransitionWeights};

pub const MAX_RUN_LENGTH: usize = 8;
pub const MAX_STATES: usize = 3;
pub const MAX_STACK_SYMBOLS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct StackElement {
    pub symbol: usize,
    pub vector: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteRun {
    pub transitions: Vec<Transition>,
    /// Bottom first.
    pub stack: Vec<StackElement>,
    pub state: usize,
    /// Product of the per-step weights, multiplied left to right.
    pub weight: f64,
}

impl DiscreteRun {
    pub fn top(&self) -> &StackElement {
        self.stack.last().expect("stack never empties")
    }
}

/// Vectors carried by stack elements: `v0` for the initial `⊥` and `v_t`
/// for an element pushed at timestep `t`.
#[derive(Clone, Debug)]
pub struct VectorPayload<'a> {
    pub v0: &'a [f64],
    pub pushed: &'a [Vec<f64>],
}

/// All runs of length `t` with nonzero weight under `Δ[1] .. Δ[t]`.
pub fn enumerate_runs(
    sig: &PdaSignature,
    deltas: &[TransitionWeights<f64>],
    t: usize,
    vectors: Option<VectorPayload<'_>>,
) -> Result<Vec<DiscreteRun>> {
    if t > MAX_RUN_LENGTH || sig.num_states > MAX_STATES || sig.stack_symbols > MAX_STACK_SYMBOLS {
        return Err(Error::SizeGuard(format!(
            "t={t}, |Q|={}, |Γ|={} exceeds t<={MAX_RUN_LENGTH}, |Q|<={MAX_STATES}, |Γ|<={MAX_STACK_SYMBOLS}",
            sig.num_states, sig.stack_symbols
        )));
    }
    if deltas.len() < t {
        return Err(Error::Dimension(format!(
            "need {t} transition tensors, got {}",
            deltas.len()
        )));
    }
    if let Some(v) = &vectors {
        if v.pushed.len() < t {
            return Err(Error::Dimension(format!(
                "need {t} pushed vectors, got {}",
                v.pushed.len()
            )));
        }
    }
    for d in &deltas[..t] {
        d.check(sig)?;
    }
    let transitions = all_transitions(sig);
    let start = DiscreteRun {
        transitions: Vec::new(),
        stack: vec![StackElement {
            symbol: PdaSignature::BOTTOM,
            vector: vectors.as_ref().map(|v| v.v0.to_vec()),
        }],
        state: PdaSignature::START,
        weight: 1.0,
    };
    let mut frontier = vec![start];
    for step in 1..=t {
        let delta = &deltas[step - 1];
        let mut next = Vec::new();
        for run in &frontier {
            let top = run.top();
            for &tr in &transitions {
                let (q, x) = tr.source();
                if q != run.state || x != top.symbol {
                    continue;
                }
                let w = *delta.get(sig, tr);
                if w == 0.0 {
                    continue;
                }
                let mut stack = run.stack.clone();
                match tr {
                    Transition::Push { y, .. } => stack.push(StackElement {
                        symbol: y,
                        vector: vectors.as_ref().map(|v| v.pushed[step - 1].clone()),
                    }),
                    Transition::Replace { y, .. } => {
                        stack.last_mut().expect("nonempty").symbol = y;
                    }
                    Transition::Pop { .. } => {
                        if stack.len() < 2 {
                            continue;
                        }
                        stack.pop();
                    }
                }
                let mut transitions = run.transitions.clone();
                transitions.push(tr);
                next.push(DiscreteRun {
                    transitions,
                    stack,
                    state: tr.target_state(),
                    weight: run.weight * w,
                });
            }
        }
        frontier = next;
    }
    Ok(frontier)
}

/// Marginal over `(state, top symbol)` by direct summation.
pub fn oracle_reading(runs: &[DiscreteRun], sig: &PdaSignature) -> Result<Vec<f64>> {
    let mut num = vec![0.0; sig.pairs()];
    for run in runs {
        num[sig.pair(run.state, run.top().symbol)] += run.weight;
    }
    normalize(num, runs)
}

/// Weighted average top vector per `(state, top symbol)`, normalized by the
/// weight of all runs; laid out `(r, y, j)`.
pub fn oracle_vector_reading(runs: &[DiscreteRun], sig: &PdaSignature, m: usize) -> Result<Vec<f64>> {
    let mut num = vec![0.0; sig.pairs() * m];
    for run in runs {
        let p = sig.pair(run.state, run.top().symbol);
        let v = run
            .top()
            .vector
            .as_ref()
            .ok_or_else(|| Error::Dimension("runs carry no vectors".into()))?;
        if v.len() != m {
            return Err(Error::Dimension(format!("vector dimension {} != {m}", v.len())));
        }
        for (j, vj) in v.iter().enumerate() {
            num[p * m + j] += run.weight * vj;
        }
    }
    normalize(num, runs)
}

fn normalize(num: Vec<f64>, runs: &[DiscreteRun]) -> Result<Vec<f64>> {
    let total: f64 = runs.iter().map(|r| r.weight).sum();
    if total == 0.0 {
        return Err(Error::NoSurvivingRuns(runs.first().map_or(0, |r| r.transitions.len())));
    }
    Ok(num.into_iter().map(|v| v / total).collect())
}
