//! Membership by chart parsing over all spans.
//!
//! Works on arbitrary grammars (ε-rules, unit rules, long rules) by
//! splitting each right-hand side position by position instead of
//! converting to Chomsky form, so it shares no code with the normal-form
//! pipeline and can serve as an independent check on it.

use super::cfg::{ContextFreeGrammar, Symbol};

/// Whether `g` derives the terminal-index string `w`.
pub fn cyk_membership(g: &ContextFreeGrammar, w: &[usize]) -> bool {
    let n = w.len();
    let nn = g.nonterminals.len();
    // chart[i][j][A]: A ⇒* w[i..j]
    let mut chart = vec![vec![vec![false; nn]; n + 1]; n + 1];
    for len in 0..=n {
        for i in 0..=n - len {
            let j = i + len;
            loop {
                let mut changed = false;
                for r in &g.rules {
                    if chart[i][j][r.lhs] {
                        continue;
                    }
                    // positions reachable after matching a prefix of the rhs
                    let mut cur = vec![false; n + 1];
                    cur[i] = true;
                    for s in &r.rhs {
                        let mut next = vec![false; n + 1];
                        for m in i..=j {
                            if !cur[m] {
                                continue;
                            }
                            match *s {
                                Symbol::T(a) => {
                                    if m < j && w[m] == a {
                                        next[m + 1] = true;
                                    }
                                }
                                Symbol::N(b) => {
                                    for m2 in m..=j {
                                        if chart[m][m2][b] {
                                            next[m2] = true;
                                        }
                                    }
                                }
                            }
                        }
                        cur = next;
                    }
                    if cur[j] {
                        chart[i][j][r.lhs] = true;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
        }
    }
    chart[0][n][g.start]
}

/// Membership for a string of terminal names.
pub fn cyk_accepts<S: AsRef<str>>(g: &ContextFreeGrammar, w: &[S]) -> bool {
    g.encode(w).is_some_and(|w| cyk_membership(g, &w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn chars(s: &str) -> Vec<String> {
        s.chars().map(|c| c.to_string()).collect()
    }

    #[test]
    fn balanced_parens() {
        let g = ContextFreeGrammar::parse("S -> S S | \"(\" S \")\" | \"(\" \")\"").unwrap();
        assert!(cyk_accepts(&g, &chars("(())")));
        assert!(cyk_accepts(&g, &chars("()(())")));
        assert!(!cyk_accepts(&g, &chars("(()")));
        assert!(!cyk_accepts(&g, &chars(")(")));
        assert!(!cyk_accepts(&g, &chars("")));
        assert!(!cyk_accepts(&g, &chars("(x)")));
    }

    #[test]
    fn nullable_start() {
        let g = ContextFreeGrammar::parse("S -> A A\nA -> ε | \"a\"").unwrap();
        assert!(cyk_accepts(&g, &chars("")));
        assert!(cyk_accepts(&g, &chars("aa")));
        assert!(!cyk_accepts(&g, &chars("aaa")));
    }

    /// Strings derivable within a bounded sentential-form length.
    fn derive_all(g: &ContextFreeGrammar, n: usize) -> BTreeSet<Vec<usize>> {
        let bound = 2 * n + 3;
        let mut seen = BTreeSet::new();
        let mut out = BTreeSet::new();
        let mut stack = vec![vec![Symbol::N(g.start)]];
        while let Some(form) = stack.pop() {
            if !seen.insert(form.clone()) {
                continue;
            }
            let terms = form.iter().filter(|s| matches!(s, Symbol::T(_))).count();
            if terms > n || form.len() > bound {
                continue;
            }
            match form.iter().position(|s| matches!(s, Symbol::N(_))) {
                None => {
                    out.insert(form.iter().map(|s| match s {
                        Symbol::T(a) => *a,
                        Symbol::N(_) => unreachable!(),
                    }).collect());
                }
                Some(p) => {
                    let Symbol::N(b) = form[p] else { unreachable!() };
                    for r in g.rules_for(b) {
                        let mut next = form[..p].to_vec();
                        next.extend_from_slice(&r.rhs);
                        next.extend_from_slice(&form[p + 1..]);
                        stack.push(next);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn agrees_with_derivation_enumeration() {
        let grammars = [
            "S -> S S | \"(\" S \")\" | \"(\" \")\"",
            "S -> \"a\" S \"b\" | ε",
            "S -> A B\nA -> \"a\" A | ε\nB -> \"b\" | A B",
            "E -> E \"+\" E | \"x\" | ε",
        ];
        for text in grammars {
            let g = ContextFreeGrammar::parse(text).unwrap();
            let derived = derive_all(&g, 7);
            let k = g.terminals.len();
            let mut frontier = vec![vec![]];
            for _len in 0..=7 {
                let mut next = Vec::new();
                for w in &frontier {
                    assert_eq!(cyk_membership(&g, w), derived.contains(w), "{text}: {w:?}");
                    for a in 0..k {
                        let mut v: Vec<usize> = w.clone();
                        v.push(a);
                        next.push(v);
                    }
                }
                frontier = next;
            }
        }
    }
}
