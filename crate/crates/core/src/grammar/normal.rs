//! CFG → Chomsky form → Greibach form → 2-GNF.
//!
//! 2-GNF rules are `S → ε`, `A → a` or `A → a b B_1 … B_p` (`p ≥ 0`), and
//! the start symbol never appears on a right-hand side. Greibach form is
//! reached with the usual ordered left-recursion elimination; every rule
//! `A → a A_1 … A_m` is then expanded through the rules of `A_1`.

use std::collections::{BTreeMap, BTreeSet};

use super::cfg::{is_ident, ContextFreeGrammar, Rule, Symbol};
use crate::error::{Error, Result};

/// A grammar known to be in 2-GNF.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TwoGnfGrammar {
    grammar: ContextFreeGrammar,
}

impl TwoGnfGrammar {
    /// Check the shape constraints and wrap.
    pub fn new(grammar: ContextFreeGrammar) -> Result<Self> {
        let s = grammar.start;
        for r in &grammar.rules {
            if r.rhs.contains(&Symbol::N(s)) {
                return Err(Error::Grammar("start symbol appears on a right-hand side".into()));
            }
            let ok = match r.rhs.as_slice() {
                [] => r.lhs == s,
                [Symbol::T(_)] => true,
                [Symbol::T(_), Symbol::T(_), rest @ ..] => rest.iter().all(|x| matches!(x, Symbol::N(_))),
                _ => false,
            };
            if !ok {
                return Err(Error::Grammar(format!(
                    "rule for {} is not in 2-GNF",
                    grammar.nonterminals[r.lhs]
                )));
            }
        }
        Ok(TwoGnfGrammar { grammar })
    }

    pub fn grammar(&self) -> &ContextFreeGrammar {
        &self.grammar
    }

    pub fn into_grammar(self) -> ContextFreeGrammar {
        self.grammar
    }

    /// Whether `S → ε` is a rule.
    pub fn accepts_empty(&self) -> bool {
        self.grammar.rules.iter().any(|r| r.rhs.is_empty())
    }
}

/// Working copy with rules grouped by left-hand side.
struct Work {
    names: Vec<String>,
    terminals: Vec<String>,
    rules: BTreeMap<usize, BTreeSet<Vec<Symbol>>>,
    start: usize,
    fresh_counter: usize,
}

impl Work {
    fn from(g: &ContextFreeGrammar) -> Self {
        let mut rules: BTreeMap<usize, BTreeSet<Vec<Symbol>>> = BTreeMap::new();
        for r in &g.rules {
            rules.entry(r.lhs).or_default().insert(r.rhs.clone());
        }
        Work {
            names: g.nonterminals.clone(),
            terminals: g.terminals.clone(),
            rules,
            start: g.start,
            fresh_counter: 0,
        }
    }

    fn fresh(&mut self, prefix: &str) -> usize {
        loop {
            self.fresh_counter += 1;
            let name = format!("{prefix}{}", self.fresh_counter);
            if !self.names.contains(&name) {
                debug_assert!(is_ident(&name));
                self.names.push(name);
                return self.names.len() - 1;
            }
        }
    }

    fn all_rules(&self) -> Vec<(usize, Vec<Symbol>)> {
        self.rules
            .iter()
            .flat_map(|(a, set)| set.iter().map(move |r| (*a, r.clone())))
            .collect()
    }

    fn add(&mut self, lhs: usize, rhs: Vec<Symbol>) {
        self.rules.entry(lhs).or_default().insert(rhs);
    }

    fn on_rhs(&self, a: usize) -> bool {
        self.rules.values().flatten().any(|r| r.contains(&Symbol::N(a)))
    }

    fn nullable(&self) -> Vec<bool> {
        let mut nullable = vec![false; self.names.len()];
        loop {
            let mut changed = false;
            for (a, set) in &self.rules {
                if !nullable[*a]
                    && set
                        .iter()
                        .any(|r| r.iter().all(|s| matches!(*s, Symbol::N(b) if nullable[b])))
                {
                    nullable[*a] = true;
                    changed = true;
                }
            }
            if !changed {
                return nullable;
            }
        }
    }

    /// Drop non-generating and unreachable nonterminals.
    fn prune(&mut self) {
        let mut gen = vec![false; self.names.len()];
        loop {
            let mut changed = false;
            for (a, set) in &self.rules {
                if !gen[*a]
                    && set
                        .iter()
                        .any(|r| r.iter().all(|s| matches!(*s, Symbol::T(_)) || matches!(*s, Symbol::N(b) if gen[b])))
                {
                    gen[*a] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for set in self.rules.values_mut() {
            set.retain(|r| r.iter().all(|s| !matches!(*s, Symbol::N(b) if !gen[b])));
        }
        let mut reach = vec![false; self.names.len()];
        reach[self.start] = true;
        let mut stack = vec![self.start];
        while let Some(a) = stack.pop() {
            for r in self.rules.get(&a).into_iter().flatten() {
                for s in r {
                    if let Symbol::N(b) = *s {
                        if !reach[b] {
                            reach[b] = true;
                            stack.push(b);
                        }
                    }
                }
            }
        }
        self.rules.retain(|a, set| reach[*a] && !set.is_empty());
    }

    /// Chomsky normal form, except that a start symbol absent from every
    /// right-hand side may keep `S → ε`.
    fn to_cnf(&mut self) {
        if self.on_rhs(self.start) {
            let s0 = self.fresh("S");
            let old = self.start;
            self.add(s0, vec![Symbol::N(old)]);
            self.start = s0;
        }
        // lift terminals out of long rules
        let mut lifted: BTreeMap<usize, usize> = BTreeMap::new();
        for (a, r) in self.all_rules() {
            if r.len() < 2 || r.iter().all(|s| matches!(s, Symbol::N(_))) {
                continue;
            }
            let mut new = r.clone();
            for s in new.iter_mut() {
                if let Symbol::T(t) = *s {
                    let n = match lifted.get(&t) {
                        Some(&n) => n,
                        None => {
                            let n = self.fresh("T");
                            self.add(n, vec![Symbol::T(t)]);
                            lifted.insert(t, n);
                            n
                        }
                    };
                    *s = Symbol::N(n);
                }
            }
            self.rules.get_mut(&a).expect("exists").remove(&r);
            self.add(a, new);
        }
        // binarize
        for (a, r) in self.all_rules() {
            if r.len() <= 2 {
                continue;
            }
            self.rules.get_mut(&a).expect("exists").remove(&r);
            let mut lhs = a;
            for i in 0..r.len() - 2 {
                let next = self.fresh("X");
                self.add(lhs, vec![r[i], Symbol::N(next)]);
                lhs = next;
            }
            self.add(lhs, r[r.len() - 2..].to_vec());
        }
        // remove ε-rules
        let nullable = self.nullable();
        for (a, r) in self.all_rules() {
            let positions: Vec<usize> = (0..r.len())
                .filter(|&i| matches!(r[i], Symbol::N(b) if nullable[b]))
                .collect();
            for mask in 1..(1usize << positions.len()) {
                let drop: BTreeSet<usize> = positions
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mask >> k & 1 == 1)
                    .map(|(_, &i)| i)
                    .collect();
                let shorter: Vec<Symbol> = (0..r.len()).filter(|i| !drop.contains(i)).map(|i| r[i]).collect();
                self.add(a, shorter);
            }
        }
        for (a, set) in self.rules.iter_mut() {
            if *a != self.start {
                set.remove(&Vec::new());
            }
        }
        // remove unit rules
        let is_unit = |r: &Vec<Symbol>| matches!(r.as_slice(), [Symbol::N(_)]);
        let lhs_all: Vec<usize> = self.rules.keys().copied().collect();
        let mut replaced: BTreeMap<usize, BTreeSet<Vec<Symbol>>> = BTreeMap::new();
        for &a in &lhs_all {
            let mut closure = BTreeSet::from([a]);
            let mut stack = vec![a];
            while let Some(b) = stack.pop() {
                for r in self.rules.get(&b).into_iter().flatten() {
                    if let [Symbol::N(c)] = r.as_slice() {
                        if closure.insert(*c) {
                            stack.push(*c);
                        }
                    }
                }
            }
            let mut set = BTreeSet::new();
            for b in closure {
                for r in self.rules.get(&b).into_iter().flatten() {
                    if !is_unit(r) && (!r.is_empty() || a == self.start) {
                        set.insert(r.clone());
                    }
                }
            }
            replaced.insert(a, set);
        }
        self.rules = replaced;
        self.prune();
    }

    /// Greibach normal form (every rule starts with a terminal followed only
    /// by nonterminals), keeping a possible `S → ε`.
    fn to_gnf(&mut self) -> Result<()> {
        self.to_cnf();
        let order: Vec<usize> = self.rules.keys().copied().collect();
        let rank: BTreeMap<usize, usize> = order.iter().enumerate().map(|(i, &a)| (a, i)).collect();
        let mut tails: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, &ai) in order.iter().enumerate() {
            // make every A_i rule start with a terminal or A_j, j >= i
            loop {
                let set = self.rules.get(&ai).cloned().unwrap_or_default();
                let mut next = BTreeSet::new();
                let mut changed = false;
                for r in set {
                    match r.first() {
                        Some(Symbol::N(aj)) if rank.get(aj).is_some_and(|&j| j < i) => {
                            for d in self.rules.get(aj).into_iter().flatten() {
                                let mut new = d.clone();
                                new.extend_from_slice(&r[1..]);
                                next.insert(new);
                            }
                            changed = true;
                        }
                        _ => {
                            next.insert(r);
                        }
                    }
                }
                self.rules.insert(ai, next);
                if !changed {
                    break;
                }
            }
            let set = self.rules.get(&ai).cloned().unwrap_or_default();
            let (rec, base): (Vec<_>, Vec<_>) = set.into_iter().partition(|r| r.first() == Some(&Symbol::N(ai)));
            if rec.is_empty() {
                continue;
            }
            let z = self.fresh("Z");
            tails.insert(z, ai);
            let mut new_a = BTreeSet::new();
            for b in base {
                let mut with_z = b.clone();
                with_z.push(Symbol::N(z));
                new_a.insert(b);
                new_a.insert(with_z);
            }
            let mut new_z = BTreeSet::new();
            for r in rec {
                let alpha = r[1..].to_vec();
                if alpha.is_empty() {
                    // A → A contributes nothing
                    continue;
                }
                let mut with_z = alpha.clone();
                with_z.push(Symbol::N(z));
                new_z.insert(alpha);
                new_z.insert(with_z);
            }
            self.rules.insert(ai, new_a);
            self.rules.insert(z, new_z);
        }
        // substitute until every rule starts with a terminal
        let starts_ok = |r: &Vec<Symbol>| matches!(r.first(), Some(Symbol::T(_)) | None);
        loop {
            let done: BTreeSet<usize> = self
                .rules
                .iter()
                .filter(|(_, set)| set.iter().all(starts_ok))
                .map(|(a, _)| *a)
                .collect();
            if done.len() == self.rules.len() {
                break;
            }
            let mut progressed = false;
            let keys: Vec<usize> = self.rules.keys().copied().collect();
            for a in keys {
                let set = self.rules[&a].clone();
                if set.iter().all(starts_ok) {
                    continue;
                }
                let mut next = BTreeSet::new();
                for r in set {
                    match r.first() {
                        Some(Symbol::N(b)) if done.contains(b) => {
                            for d in &self.rules[b] {
                                let mut new = d.clone();
                                new.extend_from_slice(&r[1..]);
                                next.insert(new);
                            }
                            progressed = true;
                        }
                        Some(Symbol::N(b)) if !self.rules.contains_key(b) => {
                            progressed = true;
                        }
                        _ => {
                            next.insert(r);
                        }
                    }
                }
                self.rules.insert(a, next);
            }
            if !progressed {
                return Err(Error::Grammar("left recursion survived Greibach conversion".into()));
            }
        }
        self.prune();
        Ok(())
    }

    fn finish(self) -> Result<ContextFreeGrammar> {
        // renumber: start first, then in order of appearance
        let mut order = vec![self.start];
        for (a, set) in &self.rules {
            if !order.contains(a) {
                order.push(*a);
            }
            for r in set {
                for s in r {
                    if let Symbol::N(b) = *s {
                        if !order.contains(&b) {
                            order.push(b);
                        }
                    }
                }
            }
        }
        let new_index: BTreeMap<usize, usize> = order.iter().enumerate().map(|(i, &a)| (a, i)).collect();
        let map = |s: &Symbol| match *s {
            Symbol::N(b) => Symbol::N(new_index[&b]),
            t => t,
        };
        let mut rules = Vec::new();
        for &a in &order {
            for r in self.rules.get(&a).into_iter().flatten() {
                rules.push(Rule {
                    lhs: new_index[&a],
                    rhs: r.iter().map(map).collect(),
                });
            }
        }
        let names = order.iter().map(|&a| self.names[a].clone()).collect();
        ContextFreeGrammar::new(names, self.terminals, rules, 0)
    }
}

/// Greibach normal form of `g` (plus `S → ε` when `ε ∈ L(g)`, with `S` then
/// absent from right-hand sides).
pub fn cfg_to_gnf(g: &ContextFreeGrammar) -> Result<ContextFreeGrammar> {
    let mut w = Work::from(g);
    w.to_gnf()?;
    w.finish()
}

pub fn cfg_to_2gnf(g: &ContextFreeGrammar) -> Result<TwoGnfGrammar> {
    let mut w = Work::from(g);
    w.to_gnf()?;
    let mut out: BTreeMap<usize, BTreeSet<Vec<Symbol>>> = BTreeMap::new();
    for (a, set) in &w.rules {
        let entry = out.entry(*a).or_default();
        for r in set {
            match r.get(1) {
                Some(Symbol::N(b)) => {
                    for d in w.rules.get(b).into_iter().flatten() {
                        let mut new = vec![r[0]];
                        new.extend_from_slice(d);
                        new.extend_from_slice(&r[2..]);
                        entry.insert(new);
                    }
                }
                _ => {
                    entry.insert(r.clone());
                }
            }
        }
    }
    w.rules = out;
    w.prune();
    if !w.rules.contains_key(&w.start) {
        // empty language: keep the start symbol with no rules
        w.rules.clear();
    }
    TwoGnfGrammar::new(w.finish()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::cyk::cyk_membership;

    /// Every string of length <= n that a grammar without ε-rules except
    /// `S → ε` generates, by leftmost expansion.
    fn generate_gnf(g: &ContextFreeGrammar, n: usize) -> BTreeSet<Vec<usize>> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<(Vec<usize>, Vec<Symbol>)> = vec![(vec![], vec![Symbol::N(g.start)])];
        while let Some((prefix, rest)) = stack.pop() {
            // every remaining nonterminal yields at least one terminal,
            // except the start symbol which only appears alone
            let min = rest.iter().filter(|s| !matches!(s, Symbol::N(b) if *b == g.start)).count();
            if prefix.len() + min > n {
                continue;
            }
            match rest.split_first() {
                None => {
                    out.insert(prefix);
                }
                Some((Symbol::T(a), tail)) => {
                    let mut p = prefix.clone();
                    p.push(*a);
                    stack.push((p, tail.to_vec()));
                }
                Some((Symbol::N(b), tail)) => {
                    for r in g.rules_for(*b) {
                        let mut next = r.rhs.clone();
                        next.extend_from_slice(tail);
                        stack.push((prefix.clone(), next));
                    }
                }
            }
        }
        out
    }

    fn all_strings(k: usize, n: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..n {
            let mut next = Vec::new();
            for w in &frontier {
                for a in 0..k {
                    let mut v: Vec<usize> = w.clone();
                    v.push(a);
                    next.push(v);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    fn cyk_language(g: &ContextFreeGrammar, n: usize) -> BTreeSet<Vec<usize>> {
        all_strings(g.terminals.len(), n)
            .into_iter()
            .filter(|w| cyk_membership(g, w))
            .collect()
    }

    /// Longest length with at most a few thousand strings per length.
    pub(crate) fn max_len(k: usize) -> usize {
        (1..=8).take_while(|&n| k.pow(n as u32) <= 5000).last().unwrap_or(1)
    }

    pub(crate) const FIXTURES: [&str; 5] = [
        "S -> S S | \"(\" S \")\" | \"(\" \")\"",
        "S -> \"a\" S \"b\" | ε",
        "S -> \"a\" S \"a\" | \"b\" S \"b\" | \"#\"",
        "E -> E \"+\" T | T\nT -> T \"*\" F | F\nF -> \"(\" E \")\" | \"x\"",
        "S -> A B | B\nA -> A \"a\" | ε\nB -> \"b\" B | \"b\" | C\nC -> C",
    ];

    #[test]
    fn epsilon_only_grammar_is_unchanged() {
        let g = ContextFreeGrammar::parse("S -> ε").unwrap();
        let two = cfg_to_2gnf(&g).unwrap();
        assert_eq!(two.grammar(), &g);
        assert!(two.accepts_empty());
    }

    #[test]
    fn ab_becomes_single_two_terminal_rule() {
        let g = ContextFreeGrammar::parse("S -> \"a\" \"b\"").unwrap();
        let two = cfg_to_2gnf(&g).unwrap();
        assert_eq!(two.grammar().rules.len(), 1);
        assert_eq!(generate_gnf(two.grammar(), 4), BTreeSet::from([vec![0, 1]]));
    }

    #[test]
    fn every_stage_preserves_the_language() {
        for text in FIXTURES {
            let g = ContextFreeGrammar::parse(text).unwrap();
            let n = max_len(g.terminals.len());
            let expect = cyk_language(&g, n);
            let gnf = cfg_to_gnf(&g).unwrap();
            for r in &gnf.rules {
                assert!(
                    r.rhs.is_empty() && r.lhs == gnf.start
                        || matches!(r.rhs.first(), Some(Symbol::T(_)))
                            && r.rhs[1..].iter().all(|s| matches!(s, Symbol::N(_))),
                    "{text}: {gnf}"
                );
            }
            assert_eq!(generate_gnf(&gnf, n), expect, "GNF of {text}");
            let two = cfg_to_2gnf(&g).unwrap();
            assert_eq!(generate_gnf(two.grammar(), n), expect, "2-GNF of {text}");
            // CYK agrees on the converted grammars too
            assert_eq!(cyk_language(two.grammar(), n), expect);
        }
    }

    #[test]
    fn empty_language_survives() {
        let g = ContextFreeGrammar::parse("S -> S \"a\"").unwrap();
        let two = cfg_to_2gnf(&g).unwrap();
        assert!(two.grammar().rules.is_empty());
        assert!(generate_gnf(two.grammar(), 5).is_empty());
    }

    #[test]
    fn shape_check_rejects_plain_gnf() {
        let g = ContextFreeGrammar::parse("S -> \"a\" B\nB -> \"b\"").unwrap();
        assert!(TwoGnfGrammar::new(g).is_err());
        let g = ContextFreeGrammar::parse("S -> \"a\" \"b\" S | ε").unwrap();
        assert!(TwoGnfGrammar::new(g).is_err());
    }
}
