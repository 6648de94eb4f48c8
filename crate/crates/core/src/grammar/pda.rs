//! Real-time PDAs in restricted form, compiled from 2-GNF grammars.
//!
//! Compilation follows three steps:
//!
//! 1. A PDA with states `q0`, `loop` and one continuation state per distinct
//!    "second half" of a two-terminal rule. It keeps the unexpanded
//!    constituents on the stack. Its pushes may add several symbols at once.
//! 2. The initial `⊥ → ⊥S` move is folded into the first scanning
//!    transition, so every transition scans a symbol.
//! 3. Multi-symbol pushes are turned into single pushes of composite stack
//!    symbols (strings of original symbols). Only composites that a run can
//!    actually put on the stack are materialized.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use super::cfg::{quote, Symbol};
use super::normal::TwoGnfGrammar;
use crate::error::{Error, Result};
use crate::stack::{PdaSignature, Transition, TransitionWeights};

/// A transition that scans one input symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScanTransition {
    pub symbol: usize,
    pub action: Transition,
}

/// `(Q, Σ, Γ, δ, q0, F, ⊥)` with `q0 = 0` and `⊥ = 0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RestrictedPda {
    pub states: Vec<String>,
    pub input: Vec<String>,
    pub stack: Vec<String>,
    pub transitions: Vec<ScanTransition>,
    pub accept: BTreeSet<usize>,
}

impl RestrictedPda {
    pub fn new(
        states: Vec<String>,
        input: Vec<String>,
        stack: Vec<String>,
        transitions: Vec<ScanTransition>,
        accept: BTreeSet<usize>,
    ) -> Result<Self> {
        let p = RestrictedPda {
            states,
            input,
            stack,
            transitions,
            accept,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.states.is_empty() || self.stack.is_empty() {
            return Err(Error::Grammar("PDA needs a start state and a bottom symbol".into()));
        }
        let (nq, ng, ns) = (self.states.len(), self.stack.len(), self.input.len());
        for t in &self.transitions {
            let ok = t.symbol < ns
                && match t.action {
                    Transition::Push { q, x, r, y } | Transition::Replace { q, x, r, y } => {
                        q < nq && r < nq && x < ng && y < ng
                    }
                    Transition::Pop { q, x, r } => q < nq && r < nq && x < ng,
                };
            if !ok {
                return Err(Error::Grammar(format!("transition {t:?} is out of range")));
            }
        }
        if self.accept.iter().any(|&f| f >= nq) {
            return Err(Error::Grammar("accept state out of range".into()));
        }
        for names in [&self.states, &self.stack, &self.input] {
            let set: BTreeSet<&String> = names.iter().collect();
            if set.len() != names.len() {
                return Err(Error::Grammar("duplicate name in PDA".into()));
            }
        }
        Ok(())
    }

    pub fn signature(&self) -> PdaSignature {
        PdaSignature {
            num_states: self.states.len(),
            stack_symbols: self.stack.len(),
        }
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.input.iter().position(|s| s == name)
    }

    /// Map symbol names to input indices.
    pub fn encode<S: AsRef<str>>(&self, w: &[S]) -> Result<Vec<usize>> {
        w.iter()
            .map(|s| {
                self.input_index(s.as_ref())
                    .ok_or_else(|| Error::UnknownSymbol(s.as_ref().to_string()))
            })
            .collect()
    }

    /// Maximum number of moves from one configuration, `|Q| (2|Γ| + 1)`.
    pub fn branching(&self) -> usize {
        self.signature().branching()
    }

    /// Dense per-symbol transition weights: `one` for transitions of the
    /// PDA scanning `symbol`, `zero` for all others.
    pub fn weights<E: Clone>(&self, symbol: usize, one: E, zero: E) -> TransitionWeights<E> {
        let sig = self.signature();
        let d = sig.pairs();
        let mut w = TransitionWeights::filled(&sig, zero);
        for t in self.transitions.iter().filter(|t| t.symbol == symbol) {
            match t.action {
                Transition::Push { q, x, r, y } => w.push[sig.pair(q, x) * d + sig.pair(r, y)] = one.clone(),
                Transition::Replace { q, x, r, y } => w.replace[sig.pair(q, x) * d + sig.pair(r, y)] = one.clone(),
                Transition::Pop { q, x, r } => w.pop[sig.pair(q, x) * sig.num_states + r] = one.clone(),
            }
        }
        w
    }

    /// Add a non-accepting `trap` state reachable from `q0` on `⊥` with
    /// every input symbol, and looping on `⊥`, so that every string has at
    /// least one run ending with `⊥` on top.
    pub fn with_trap(&self) -> RestrictedPda {
        let mut p = self.clone();
        let mut name = "trap".to_string();
        while p.states.contains(&name) {
            name.push('\'');
        }
        p.states.push(name);
        let trap = p.states.len() - 1;
        for a in 0..p.input.len() {
            for q in [0, trap] {
                p.transitions.push(ScanTransition {
                    symbol: a,
                    action: Transition::Replace { q, x: 0, r: trap, y: 0 },
                });
            }
        }
        p
    }

    /// Whether any transition enters `q0`.
    pub fn start_has_incoming(&self) -> bool {
        self.transitions.iter().any(|t| t.action.target_state() == 0)
    }

    /// Parse the text form written by `Display`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut states: Option<Vec<String>> = None;
        let mut input: Option<Vec<String>> = None;
        let mut stack: Option<Vec<String>> = None;
        let mut accept_names: Vec<String> = Vec::new();
        let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
        let mut in_transitions = false;
        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let perr = |msg: String| Error::Parse { line: line_no, msg };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let words = split_words(line).map_err(perr)?;
            if in_transitions && !words[0].ends_with(':') {
                rows.push((line_no, words));
                continue;
            }
            let rest = words[1..].to_vec();
            match words[0].as_str() {
                "states:" => states = Some(rest),
                "input:" => input = Some(rest),
                "stack:" => stack = Some(rest),
                "accept:" => accept_names = rest,
                "transitions:" => in_transitions = true,
                other => return Err(perr(format!("unknown section {other:?}"))),
            }
        }
        let missing = |s: &str| Error::Grammar(format!("PDA text is missing `{s}:`"));
        let states = states.ok_or_else(|| missing("states"))?;
        let input = input.ok_or_else(|| missing("input"))?;
        let stack = stack.ok_or_else(|| missing("stack"))?;
        let find = |names: &[String], s: &str, line: usize| {
            names.iter().position(|n| n == s).ok_or_else(|| Error::Parse {
                line,
                msg: format!("unknown name {s:?}"),
            })
        };
        let mut accept = BTreeSet::new();
        for a in &accept_names {
            accept.insert(find(&states, a, 0)?);
        }
        let mut transitions = Vec::new();
        for (line, w) in rows {
            let st = |s: &str| find(&states, s, line);
            let gm = |s: &str| find(&stack, s, line);
            let ws: Vec<&str> = w.iter().map(String::as_str).collect();
            let (symbol, action) = match ws.as_slice() {
                ["push", q, a, x, "->", r, x2, y] if x == x2 => (
                    find(&input, a, line)?,
                    Transition::Push {
                        q: st(q)?,
                        x: gm(x)?,
                        r: st(r)?,
                        y: gm(y)?,
                    },
                ),
                ["replace", q, a, x, "->", r, y] => (
                    find(&input, a, line)?,
                    Transition::Replace {
                        q: st(q)?,
                        x: gm(x)?,
                        r: st(r)?,
                        y: gm(y)?,
                    },
                ),
                ["pop", q, a, x, "->", r] => (
                    find(&input, a, line)?,
                    Transition::Pop {
                        q: st(q)?,
                        x: gm(x)?,
                        r: st(r)?,
                    },
                ),
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: "expected `push q a x -> r x y`, `replace q a x -> r y` or `pop q a x -> r`".into(),
                    })
                }
            };
            transitions.push(ScanTransition { symbol, action });
        }
        RestrictedPda::new(states, input, stack, transitions, accept)
    }
}

/// Whitespace-separated words; quoted words keep their inner text.
fn split_words(line: &str) -> std::result::Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '"' || c == '\'' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some(d) if d == c => break,
                    Some(d) => s.push(d),
                    None => return Err("unterminated quote".into()),
                }
            }
            out.push(s);
        } else {
            let mut s = String::new();
            while let Some(&d) = chars.peek() {
                if d.is_whitespace() {
                    break;
                }
                s.push(d);
                chars.next();
            }
            out.push(s);
        }
    }
    Ok(out)
}

impl fmt::Display for RestrictedPda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# restricted PDA: start state and bottom symbol are listed first")?;
        writeln!(f, "states: {}", self.states.join(" "))?;
        let input: Vec<String> = self.input.iter().map(|s| quote(s)).collect();
        writeln!(f, "input: {}", input.join(" "))?;
        writeln!(f, "stack: {}", self.stack.join(" "))?;
        let acc: Vec<&str> = self.accept.iter().map(|&q| self.states[q].as_str()).collect();
        writeln!(f, "accept: {}", acc.join(" "))?;
        writeln!(f, "transitions:")?;
        for t in &self.transitions {
            let a = quote(&self.input[t.symbol]);
            let (s, g) = (&self.states, &self.stack);
            match t.action {
                Transition::Push { q, x, r, y } => {
                    writeln!(f, "push {} {a} {} -> {} {} {}", s[q], g[x], s[r], g[x], g[y])?
                }
                Transition::Replace { q, x, r, y } => writeln!(f, "replace {} {a} {} -> {} {}", s[q], g[x], s[r], g[y])?,
                Transition::Pop { q, x, r } => writeln!(f, "pop {} {a} {} -> {}", s[q], g[x], s[r])?,
            }
        }
        Ok(())
    }
}

/// Transition of the intermediate PDA: the top symbol `x` is replaced by
/// the string `sigma` (bottom to top).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Raw {
    q: usize,
    a: usize,
    x: usize,
    r: usize,
    sigma: Vec<usize>,
}

/// Compile a 2-GNF grammar into a restricted-form real-time PDA (without
/// the trap state; see [`RestrictedPda::with_trap`]).
pub fn two_gnf_to_restricted_pda(g: &TwoGnfGrammar) -> RestrictedPda {
    let g = g.grammar();
    // original stack alphabet: ⊥ = 0, nonterminal A = A + 1
    let sym = |a: usize| a + 1;
    let (q0, lp) = (0usize, 1usize);
    let mut states = vec!["q0".to_string(), "loop".to_string()];
    let mut cont: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
    let mut raws: BTreeSet<Raw> = BTreeSet::new();
    let mut accept = BTreeSet::from([lp]);
    let mut cont_state = |states: &mut Vec<String>, key: (usize, Vec<usize>)| {
        let n = cont.len();
        *cont.entry(key).or_insert_with(|| {
            states.push(format!("c{n}"));
            states.len() - 1
        })
    };
    for r in &g.rules {
        let nt = |s: &Symbol| match *s {
            Symbol::N(b) => sym(b),
            Symbol::T(_) => unreachable!("2-GNF tail holds only nonterminals"),
        };
        let a = sym(r.lhs);
        match r.rhs.as_slice() {
            [] => {
                accept.insert(q0);
            }
            [Symbol::T(t)] => {
                raws.insert(Raw {
                    q: lp,
                    a: *t,
                    x: a,
                    r: lp,
                    sigma: vec![],
                });
            }
            [Symbol::T(t1), Symbol::T(t2)] => {
                // scan t1 keeping A, then scan t2 popping A
                let c = cont_state(&mut states, (*t2, vec![]));
                raws.insert(Raw {
                    q: lp,
                    a: *t1,
                    x: a,
                    r: c,
                    sigma: vec![a],
                });
                raws.insert(Raw {
                    q: c,
                    a: *t2,
                    x: a,
                    r: lp,
                    sigma: vec![],
                });
            }
            [Symbol::T(t1), Symbol::T(t2), tail @ ..] => {
                // replace A by B_p, then push B_{p-1} … B_1 on top of it
                let bs: Vec<usize> = tail.iter().rev().map(nt).collect();
                let c = cont_state(&mut states, (*t2, bs.clone()));
                raws.insert(Raw {
                    q: lp,
                    a: *t1,
                    x: a,
                    r: c,
                    sigma: vec![bs[0]],
                });
                raws.insert(Raw {
                    q: c,
                    a: *t2,
                    x: bs[0],
                    r: lp,
                    sigma: bs,
                });
            }
            _ => unreachable!("checked by TwoGnfGrammar"),
        }
    }
    // fold the initial ⊥ → ⊥S move into the first scanning transition
    let s = sym(g.start);
    let starts: Vec<Raw> = raws.iter().filter(|t| t.q == lp && t.x == s).cloned().collect();
    for t in starts {
        let mut sigma = vec![0];
        sigma.extend(t.sigma);
        raws.insert(Raw {
            q: q0,
            a: t.a,
            x: 0,
            r: t.r,
            sigma,
        });
    }

    // composite stack symbols, closed under the moves that can create them
    let mut index: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut order: Vec<Vec<usize>> = Vec::new();
    let mut queue: VecDeque<Vec<usize>> = VecDeque::new();
    let mut intern = |c: Vec<usize>, order: &mut Vec<Vec<usize>>, queue: &mut VecDeque<Vec<usize>>| -> usize {
        if let Some(&i) = index.get(&c) {
            return i;
        }
        index.insert(c.clone(), order.len());
        order.push(c.clone());
        queue.push_back(c);
        order.len() - 1
    };
    intern(vec![0], &mut order, &mut queue);
    let mut transitions: BTreeSet<ScanTransition> = BTreeSet::new();
    while let Some(c) = queue.pop_front() {
        let ci = index_of(&order, &c);
        let x = *c.last().expect("composites are nonempty");
        let below = &c[..c.len() - 1];
        for t in raws.iter().filter(|t| t.x == x) {
            let action = match t.sigma.as_slice() {
                [] if below.is_empty() => Transition::Pop { q: t.q, x: ci, r: t.r },
                [] => Transition::Replace {
                    q: t.q,
                    x: ci,
                    r: t.r,
                    y: intern(below.to_vec(), &mut order, &mut queue),
                },
                [y] => {
                    let mut nc = below.to_vec();
                    nc.push(*y);
                    Transition::Replace {
                        q: t.q,
                        x: ci,
                        r: t.r,
                        y: intern(nc, &mut order, &mut queue),
                    }
                }
                [first, beta @ ..] => {
                    debug_assert_eq!(*first, x);
                    Transition::Push {
                        q: t.q,
                        x: ci,
                        r: t.r,
                        y: intern(beta.to_vec(), &mut order, &mut queue),
                    }
                }
            };
            transitions.insert(ScanTransition { symbol: t.a, action });
        }
    }
    let stack_name = |c: &Vec<usize>| {
        let one = |s: usize| {
            if s == 0 {
                "<bot>".to_string()
            } else {
                g.nonterminals[s - 1].clone()
            }
        };
        if c.len() == 1 {
            one(c[0])
        } else {
            format!("[{}]", c.iter().map(|&s| one(s)).collect::<Vec<_>>().join("."))
        }
    };
    RestrictedPda {
        states,
        input: g.terminals.clone(),
        stack: order.iter().map(stack_name).collect(),
        transitions: transitions.into_iter().collect(),
        accept,
    }
}

fn index_of(order: &[Vec<usize>], c: &[usize]) -> usize {
    order.iter().position(|o| o == c).expect("interned")
}

/// Union of trap-augmented PDAs over a shared input alphabet, with one
/// merged start state. Returns the machine and, for each input machine,
/// its accept states inside the union (the merged start counts for
/// machine `i` when machine `i` accepts in its start state).
pub fn union_pda(ps: &[RestrictedPda]) -> Result<(RestrictedPda, Vec<BTreeSet<usize>>)> {
    let first = ps.first().ok_or_else(|| Error::Grammar("union of zero PDAs".into()))?;
    let alphabet: BTreeSet<&String> = first.input.iter().collect();
    for p in ps {
        if p.input.iter().collect::<BTreeSet<_>>() != alphabet {
            return Err(Error::AlphabetMismatch(format!(
                "{:?} vs {:?}",
                first.input, p.input
            )));
        }
        if p.start_has_incoming() {
            return Err(Error::Grammar("start state has incoming transitions".into()));
        }
    }
    let input = first.input.clone();
    let mut states = vec!["s".to_string()];
    let mut stack = vec!["<bot>".to_string()];
    let mut transitions = Vec::new();
    let mut accepts = Vec::new();
    for (i, p) in ps.iter().enumerate() {
        let qmap: Vec<usize> = (0..p.states.len())
            .map(|q| {
                if q == 0 {
                    0
                } else {
                    states.push(format!("{}:{}", i + 1, p.states[q]));
                    states.len() - 1
                }
            })
            .collect();
        let gmap: Vec<usize> = (0..p.stack.len())
            .map(|x| {
                if x == 0 {
                    0
                } else {
                    stack.push(format!("{}:{}", i + 1, p.stack[x]));
                    stack.len() - 1
                }
            })
            .collect();
        let amap: Vec<usize> = p
            .input
            .iter()
            .map(|s| input.iter().position(|t| t == s).expect("same alphabet"))
            .collect();
        for t in &p.transitions {
            let action = match t.action {
                Transition::Push { q, x, r, y } => Transition::Push {
                    q: qmap[q],
                    x: gmap[x],
                    r: qmap[r],
                    y: gmap[y],
                },
                Transition::Replace { q, x, r, y } => Transition::Replace {
                    q: qmap[q],
                    x: gmap[x],
                    r: qmap[r],
                    y: gmap[y],
                },
                Transition::Pop { q, x, r } => Transition::Pop {
                    q: qmap[q],
                    x: gmap[x],
                    r: qmap[r],
                },
            };
            transitions.push(ScanTransition {
                symbol: amap[t.symbol],
                action,
            });
        }
        accepts.push(p.accept.iter().map(|&f| qmap[f]).collect::<BTreeSet<usize>>());
    }
    let accept = if accepts.iter().all(|a| a.contains(&0)) {
        accepts.iter().flatten().copied().collect()
    } else {
        accepts.iter().flatten().copied().filter(|&q| q != 0).collect()
    };
    let union = RestrictedPda::new(states, input, stack, transitions, accept)?;
    Ok((union, accepts))
}
