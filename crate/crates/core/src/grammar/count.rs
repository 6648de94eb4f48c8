//! Exact run counting for restricted PDAs.
//!
//! Same inner/forward recurrence as [`crate::stack::RnsDp`] under 0/1
//! weights, but with sparse blocks and big-integer counts, so compiled
//! grammars with hundreds of (state, symbol) pairs stay cheap. The counter
//! is incremental: symbols can be pushed and popped, which lets callers
//! walk a trie of strings sharing prefixes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_bigint::BigUint;
use num_traits::{One, Zero};

use super::pda::{union_pda, RestrictedPda};
use crate::error::{Error, Result};
use crate::stack::Transition;

/// Sparse `[(q, x), (r, y)]` block.
type Block = Vec<(u32, u32, BigUint)>;

/// Moves scanning one input symbol, indexed by source pair.
struct Moves {
    push: Block,
    replace: HashMap<u32, Vec<u32>>,
    pop: HashMap<u32, Vec<u32>>,
}

pub struct RunCounter<'a> {
    pda: &'a RestrictedPda,
    ng: usize,
    moves: Vec<Moves>,
    /// `gamma[t][i + 1] = γ[i → t]`
    gamma: Vec<Vec<Block>>,
    /// `alpha[t + 1] = α[t]`
    alpha: Vec<HashMap<u32, BigUint>>,
}

impl<'a> RunCounter<'a> {
    pub fn new(pda: &'a RestrictedPda) -> Self {
        let sig = pda.signature();
        let ng = sig.stack_symbols;
        let mut moves: Vec<Moves> = (0..pda.input.len())
            .map(|_| Moves {
                push: Vec::new(),
                replace: HashMap::new(),
                pop: HashMap::new(),
            })
            .collect();
        for t in &pda.transitions {
            let m = &mut moves[t.symbol];
            match t.action {
                Transition::Push { q, x, r, y } => {
                    m.push.push((sig.pair(q, x) as u32, sig.pair(r, y) as u32, BigUint::one()))
                }
                Transition::Replace { q, x, r, y } => m
                    .replace
                    .entry(sig.pair(q, x) as u32)
                    .or_default()
                    .push(sig.pair(r, y) as u32),
                Transition::Pop { q, x, r } => m.pop.entry(sig.pair(q, x) as u32).or_default().push(r as u32),
            }
        }
        let bottom = sig.pair(0, 0) as u32;
        let one = || BigUint::one();
        RunCounter {
            pda,
            ng,
            moves,
            gamma: vec![vec![vec![(bottom, bottom, one())]]],
            alpha: vec![HashMap::from([(bottom, one())]), HashMap::from([(bottom, one())])],
        }
    }

    /// Number of symbols read so far.
    pub fn len(&self) -> usize {
        self.gamma.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Read one more input symbol.
    pub fn push(&mut self, symbol: usize) -> Result<()> {
        if symbol >= self.pda.input.len() {
            return Err(Error::UnknownSymbol(format!("#{symbol}")));
        }
        let t = self.gamma.len();
        let ng = self.ng as u32;
        let mv = &self.moves[symbol];
        let prev = &self.gamma[t - 1];
        // γ'[k → t][(u, y)] = Σ_{s,z} γ[k → t-1][(u, y), (s, z)] pop[(s, z) → r]
        let gp: Vec<HashMap<u32, Vec<(u32, BigUint)>>> = (0..t.saturating_sub(1))
            .map(|k| {
                let mut acc: HashMap<(u32, u32), BigUint> = HashMap::new();
                for (uy, sz, c) in &prev[k + 1] {
                    for &r in mv.pop.get(sz).into_iter().flatten() {
                        *acc.entry((*uy, r)).or_default() += c;
                    }
                }
                let mut out: HashMap<u32, Vec<(u32, BigUint)>> = HashMap::new();
                for ((uy, r), c) in acc {
                    out.entry(uy).or_default().push((r, c));
                }
                out
            })
            .collect();
        let mut blocks = Vec::with_capacity(t + 1);
        for slot in 0..t {
            let mut acc: HashMap<(u32, u32), BigUint> = HashMap::new();
            for (qx, sz, c) in &prev[slot] {
                for &ry in mv.replace.get(sz).into_iter().flatten() {
                    *acc.entry((*qx, ry)).or_default() += c;
                }
            }
            for (k, gpk) in gp.iter().enumerate().skip(slot) {
                for (qx, uy, c) in &self.gamma[k][slot] {
                    if let Some(pops) = gpk.get(uy) {
                        let y = uy % ng;
                        for (r, c2) in pops {
                            *acc.entry((*qx, r * ng + y)).or_default() += c * c2;
                        }
                    }
                }
            }
            let mut block: Block = acc.into_iter().map(|((a, b), c)| (a, b, c)).collect();
            block.sort_unstable_by_key(|e| (e.0, e.1));
            blocks.push(block);
        }
        blocks.push(mv.push.clone());
        let mut alpha: HashMap<u32, BigUint> = HashMap::new();
        for (slot, block) in blocks.iter().enumerate() {
            let a = &self.alpha[slot];
            for (qx, ry, c) in block {
                if let Some(av) = a.get(qx) {
                    *alpha.entry(*ry).or_default() += av * c;
                }
            }
        }
        self.gamma.push(blocks);
        self.alpha.push(alpha);
        Ok(())
    }

    /// Undo the last `push`.
    pub fn pop(&mut self) {
        if self.gamma.len() > 1 {
            self.gamma.pop();
            self.alpha.pop();
        }
    }

    /// Runs over the current prefix ending in `(q, x)`, for every pair with
    /// a nonzero count.
    pub fn by_pair(&self) -> BTreeMap<(usize, usize), BigUint> {
        let ng = self.ng as u32;
        self.alpha
            .last()
            .expect("nonempty")
            .iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|(p, c)| (((p / ng) as usize, (p % ng) as usize), c.clone()))
            .collect()
    }

    /// `ct(w)`: runs ending with `⊥` on top.
    pub fn total(&self) -> BigUint {
        self.count_where(|_| true)
    }

    /// `ct(w, X)`: runs ending in a state of `X` with `⊥` on top.
    pub fn count_in(&self, states: &BTreeSet<usize>) -> BigUint {
        self.count_where(|q| states.contains(&q))
    }

    fn count_where(&self, keep: impl Fn(usize) -> bool) -> BigUint {
        let ng = self.ng as u32;
        self.alpha
            .last()
            .expect("nonempty")
            .iter()
            .filter(|(p, _)| *p % ng == 0 && keep((*p / ng) as usize))
            .map(|(_, c)| c)
            .sum()
    }
}

/// Counts of runs by `(state, top)` after every prefix of a string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunCountTable {
    /// `rows[t]` describes the prefix of length `t`.
    pub rows: Vec<BTreeMap<(usize, usize), BigUint>>,
}

impl RunCountTable {
    /// `ct(w)` for the whole string.
    pub fn total(&self) -> BigUint {
        self.in_states(|_| true)
    }

    /// `ct(w, X)` for the whole string.
    pub fn count_in(&self, states: &BTreeSet<usize>) -> BigUint {
        self.in_states(|q| states.contains(&q))
    }

    fn in_states(&self, keep: impl Fn(usize) -> bool) -> BigUint {
        let last = self.rows.last().expect("row for the empty prefix");
        last.iter().filter(|((q, x), _)| *x == 0 && keep(*q)).map(|(_, c)| c).sum()
    }
}

pub fn run_count_table(p: &RestrictedPda, w: &[usize]) -> Result<RunCountTable> {
    let mut counter = RunCounter::new(p);
    let mut rows = vec![counter.by_pair()];
    for &a in w {
        counter.push(a)?;
        rows.push(counter.by_pair());
    }
    Ok(RunCountTable { rows })
}

/// `ct(w, X)`.
pub fn count_accepting_runs(p: &RestrictedPda, w: &[usize], states: &BTreeSet<usize>) -> Result<BigUint> {
    let mut counter = RunCounter::new(p);
    for &a in w {
        counter.push(a)?;
    }
    Ok(counter.count_in(states))
}

/// Accept iff some run reads `w` and ends in an accept state with `⊥` on
/// top.
pub fn recognize(p: &RestrictedPda, w: &[usize]) -> Result<bool> {
    Ok(!count_accepting_runs(p, w, &p.accept)?.is_zero())
}

/// Recognizer for `L_1 ∩ … ∩ L_k` running the union PDA and checking that
/// every language keeps some accepting run.
pub struct IntersectionRecognizer {
    pub union: RestrictedPda,
    /// Accept states of each component inside `union`.
    pub accepts: Vec<BTreeSet<usize>>,
}

impl IntersectionRecognizer {
    pub fn new(ps: &[RestrictedPda]) -> Result<Self> {
        let (union, accepts) = union_pda(ps)?;
        Ok(IntersectionRecognizer { union, accepts })
    }

    pub fn counter(&self) -> RunCounter<'_> {
        RunCounter::new(&self.union)
    }

    /// `ct(w, F_i)` for each component, from a counter over `union`.
    pub fn masses(&self, counter: &RunCounter<'_>) -> Vec<BigUint> {
        self.accepts.iter().map(|f| counter.count_in(f)).collect()
    }

    pub fn decide(&self, counter: &RunCounter<'_>) -> bool {
        self.masses(counter).iter().all(|m| !m.is_zero())
    }

    pub fn recognize(&self, w: &[usize]) -> Result<bool> {
        let mut c = self.counter();
        for &a in w {
            c.push(a)?;
        }
        Ok(self.decide(&c))
    }
}

/// `w` is in every `L(p_i)`; the PDAs must share an input alphabet.
pub fn recognize_intersection(ps: &[RestrictedPda], w: &[usize]) -> Result<bool> {
    IntersectionRecognizer::new(ps)?.recognize(w)
}

/// Visit every string over `0..k` of length at most `max_len` in
/// depth-first order, with `counter` positioned after that string. Each
/// trie node costs one counter step.
pub fn walk_strings<F>(counter: &mut RunCounter<'_>, k: usize, max_len: usize, f: &mut F) -> Result<()>
where
    F: FnMut(&[usize], &RunCounter<'_>),
{
    let mut w = Vec::with_capacity(max_len);
    walk(counter, k, max_len, &mut w, f)
}

fn walk<F>(counter: &mut RunCounter<'_>, k: usize, max_len: usize, w: &mut Vec<usize>, f: &mut F) -> Result<()>
where
    F: FnMut(&[usize], &RunCounter<'_>),
{
    f(w, counter);
    if w.len() == max_len {
        return Ok(());
    }
    for a in 0..k {
        counter.push(a)?;
        w.push(a);
        walk(counter, k, max_len, w, f)?;
        w.pop();
        counter.pop();
    }
    Ok(())
}
