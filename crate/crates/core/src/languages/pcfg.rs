//! Probabilistic CFGs: inside probabilities and length-conditioned sampling.
//!
//! Empty and unit rules are allowed; cycles through them are resolved by
//! fixpoint iteration within each span.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grammar::{ContextFreeGrammar, Symbol};

const FIXPOINT_TOL: f64 = 1e-15;
const FIXPOINT_MAX_ITERS: usize = 10_000;

#[derive(Clone, Debug)]
pub struct Pcfg {
    pub grammar: ContextFreeGrammar,
    /// `probs[i]` belongs to `grammar.rules[i]`.
    pub probs: Vec<f64>,
}

impl Pcfg {
    pub fn new(grammar: ContextFreeGrammar, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != grammar.rules.len() {
            return Err(Error::ImproperPcfg(format!(
                "{} probabilities for {} rules",
                probs.len(),
                grammar.rules.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::ImproperPcfg(format!("rule probability {p}")));
        }
        let mut sums = vec![0.0; grammar.nonterminals.len()];
        for (r, p) in grammar.rules.iter().zip(&probs) {
            sums[r.lhs] += p;
        }
        for (a, s) in sums.iter().enumerate() {
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::ImproperPcfg(format!(
                    "rules for {} sum to {s}",
                    grammar.nonterminals[a]
                )));
            }
        }
        Ok(Pcfg { grammar, probs })
    }

    /// `S → (_i S )_i S` with probability `p / k` each, `S → ε` with `1 − p`.
    /// Terminals are ordered `(_1, )_1, (_2, …`.
    pub fn dyck(k: usize, p: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::ImproperPcfg("no bracket types".into()));
        }
        let terminals: Vec<String> = if k == 1 {
            vec!["(".into(), ")".into()]
        } else {
            (1..=k).flat_map(|i| [format!("({i}"), format!("){i}")]).collect()
        };
        let mut rules = Vec::new();
        let mut probs = Vec::new();
        for i in 0..k {
            rules.push(crate::grammar::Rule {
                lhs: 0,
                rhs: vec![Symbol::T(2 * i), Symbol::N(0), Symbol::T(2 * i + 1), Symbol::N(0)],
            });
            probs.push(p / k as f64);
        }
        rules.push(crate::grammar::Rule { lhs: 0, rhs: vec![] });
        probs.push(1.0 - p);
        let g = ContextFreeGrammar::new(vec!["S".into()], terminals, rules, 0)?;
        Pcfg::new(g, probs)
    }

    fn nonterminals(&self) -> usize {
        self.grammar.nonterminals.len()
    }

    /// Log of the total probability of all derivations of `w` from the start
    /// symbol.
    pub fn inside(&self, w: &[usize]) -> f64 {
        let n = w.len();
        let nn = self.nonterminals();
        // chart[i][j - i][A]
        let mut chart: Vec<Vec<Vec<f64>>> = (0..=n).map(|i| vec![vec![0.0; nn]; n - i + 1]).collect();
        for l in 0..=n {
            for i in 0..=n - l {
                let j = i + l;
                let mut cell = chart[i][l].clone();
                fixpoint(&mut |cur: &[f64]| {
                    let mut next = vec![0.0; nn];
                    for (r, p) in self.grammar.rules.iter().zip(&self.probs) {
                        if *p == 0.0 {
                            continue;
                        }
                        let v = seq_inside(&r.rhs, w, i, j, &chart, cur);
                        next[r.lhs] += p * v;
                    }
                    next
                }, &mut cell);
                chart[i][l] = cell;
            }
        }
        chart[0][n][self.grammar.start].ln()
    }

    /// Probability of deriving each length up to `max_len`, plus the tables
    /// needed to sample conditioned on length.
    pub fn length_chart(&self, max_len: usize) -> LengthChart {
        let nn = self.nonterminals();
        let mut patterns: Vec<Vec<Option<usize>>> = Vec::new();
        let mut rule_pattern = Vec::with_capacity(self.grammar.rules.len());
        let mut index: HashMap<Vec<Option<usize>>, usize> = HashMap::new();
        for r in &self.grammar.rules {
            let pat: Vec<Option<usize>> = r
                .rhs
                .iter()
                .map(|s| match *s {
                    Symbol::T(_) => None,
                    Symbol::N(b) => Some(b),
                })
                .collect();
            let id = *index.entry(pat.clone()).or_insert_with(|| {
                patterns.push(pat);
                patterns.len() - 1
            });
            rule_pattern.push(id);
        }
        let mut inside = vec![vec![0.0; nn]; max_len + 1];
        // suffix[pattern][k][l]: weight of pattern[k..] yielding l symbols
        let mut suffix: Vec<Vec<Vec<f64>>> = patterns
            .iter()
            .map(|p| vec![vec![0.0; max_len + 1]; p.len() + 1])
            .collect();
        for l in 0..=max_len {
            let mut cur = inside[l].clone();
            fixpoint(&mut |est: &[f64]| {
                for (p, suf) in patterns.iter().zip(suffix.iter_mut()) {
                    suf[p.len()][l] = if l == 0 { 1.0 } else { 0.0 };
                    for k in (0..p.len()).rev() {
                        let v = match p[k] {
                            None => {
                                if l >= 1 {
                                    suf[k + 1][l - 1]
                                } else {
                                    0.0
                                }
                            }
                            Some(b) => (0..=l)
                                .map(|x| {
                                    let ins = if x == l { est[b] } else { inside[x][b] };
                                    ins * suf[k + 1][l - x]
                                })
                                .sum(),
                        };
                        suf[k][l] = v;
                    }
                }
                let mut next = vec![0.0; nn];
                for ((r, p), &pid) in self.grammar.rules.iter().zip(&self.probs).zip(&rule_pattern) {
                    next[r.lhs] += p * suffix[pid][0][l];
                }
                next
            }, &mut cur);
            inside[l] = cur;
        }
        LengthChart {
            inside,
            patterns,
            rule_pattern,
            suffix,
        }
    }

    /// Draw a string of exactly `len` symbols from the start symbol,
    /// conditioned on its length. `None` if that length has probability 0.
    pub fn sample_of_length<R: Rng + ?Sized>(&self, chart: &LengthChart, len: usize, rng: &mut R) -> Option<Vec<usize>> {
        if len >= chart.inside.len() || chart.inside[len][self.grammar.start] <= 0.0 {
            return None;
        }
        let mut out = Vec::with_capacity(len);
        self.expand(chart, self.grammar.start, len, rng, &mut out);
        Some(out)
    }

    fn expand<R: Rng + ?Sized>(&self, chart: &LengthChart, a: usize, len: usize, rng: &mut R, out: &mut Vec<usize>) {
        let rules: Vec<(usize, f64)> = self
            .grammar
            .rules
            .iter()
            .enumerate()
            .filter(|(_, r)| r.lhs == a)
            .map(|(i, _)| (i, self.probs[i] * chart.suffix[chart.rule_pattern[i]][0][len]))
            .collect();
        let ri = rules[pick(rng, rules.iter().map(|e| e.1))].0;
        let rhs = &self.grammar.rules[ri].rhs;
        let suf = &chart.suffix[chart.rule_pattern[ri]];
        let mut left = len;
        for (k, s) in rhs.iter().enumerate() {
            match *s {
                Symbol::T(t) => {
                    out.push(t);
                    left -= 1;
                }
                Symbol::N(b) => {
                    let x = pick(rng, (0..=left).map(|x| chart.inside[x][b] * suf[k + 1][left - x]));
                    self.expand(chart, b, x, rng, out);
                    left -= x;
                }
            }
        }
        debug_assert_eq!(left, 0);
    }
}

/// Per-length derivation probabilities of a PCFG.
#[derive(Clone, Debug)]
pub struct LengthChart {
    /// `inside[l][A]`: probability that `A` derives some string of length `l`.
    pub inside: Vec<Vec<f64>>,
    patterns: Vec<Vec<Option<usize>>>,
    rule_pattern: Vec<usize>,
    suffix: Vec<Vec<Vec<f64>>>,
}

impl LengthChart {
    pub fn max_len(&self) -> usize {
        self.inside.len() - 1
    }

    pub fn patterns(&self) -> usize {
        self.patterns.len()
    }
}

fn fixpoint(step: &mut dyn FnMut(&[f64]) -> Vec<f64>, cur: &mut Vec<f64>) {
    for _ in 0..FIXPOINT_MAX_ITERS {
        let next = step(cur);
        let done = next
            .iter()
            .zip(cur.iter())
            .all(|(a, b)| (a - b).abs() <= FIXPOINT_TOL * a.abs().max(1e-300));
        *cur = next;
        if done {
            return;
        }
    }
}

/// Inside weight of `rhs` over `w[i..j]`; `same` holds the current estimate
/// for the span `(i, j)` itself.
fn seq_inside(rhs: &[Symbol], w: &[usize], i: usize, j: usize, chart: &[Vec<Vec<f64>>], same: &[f64]) -> f64 {
    let mut frontier: Vec<(usize, f64)> = vec![(i, 1.0)];
    for s in rhs {
        let mut next: Vec<(usize, f64)> = Vec::new();
        for &(p, wt) in &frontier {
            match *s {
                Symbol::T(a) => {
                    if p < j && w[p] == a {
                        next.push((p + 1, wt));
                    }
                }
                Symbol::N(b) => {
                    for q in p..=j {
                        let c = if p == i && q == j { same[b] } else { chart[p][q - p][b] };
                        if c > 0.0 {
                            next.push((q, wt * c));
                        }
                    }
                }
            }
        }
        if next.is_empty() {
            return 0.0;
        }
        next.sort_unstable_by_key(|e| e.0);
        next.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        frontier = next;
    }
    frontier.iter().filter(|e| e.0 == j).map(|e| e.1).sum()
}

fn pick<R: Rng + ?Sized>(rng: &mut R, weights: impl Iterator<Item = f64> + Clone) -> usize {
    let total: f64 = weights.clone().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pcfg(text: &str, probs: Vec<f64>) -> Result<Pcfg> {
        Pcfg::new(ContextFreeGrammar::parse(text).unwrap(), probs)
    }

    #[test]
    fn single_rule() {
        let g = pcfg("S -> \"a\"", vec![1.0]).unwrap();
        assert_eq!(g.inside(&[0]), 0.0);
        assert_eq!(g.inside(&[0, 0]), f64::NEG_INFINITY);
    }

    #[test]
    fn right_chain() {
        let g = pcfg("S -> \"a\" S | \"a\"", vec![0.5, 0.5]).unwrap();
        assert!((g.inside(&[0, 0]) - 0.25f64.ln()).abs() < 1e-15);
        assert!((g.inside(&[0, 0, 0]) - 0.125f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn improper_is_rejected() {
        assert!(pcfg("S -> \"a\" S | \"a\"", vec![0.5, 0.6]).is_err());
        assert!(pcfg("S -> \"a\"", vec![]).is_err());
        assert!(pcfg("S -> \"a\" | \"b\"", vec![1.5, -0.5]).is_err());
        assert!(Pcfg::dyck(2, 0.5).is_ok());
    }

    #[test]
    fn epsilon_and_unit_cycles_converge() {
        // S -> S S (0.3) | "a" (0.5) | ε (0.2): ambiguous with infinitely
        // many derivations of every string
        let g = pcfg("S -> S S | \"a\" | ε", vec![0.3, 0.5, 0.2]).unwrap();
        // probability of deriving ε solves e = 0.3 e² + 0.2
        let e = (1.0 - (1.0f64 - 4.0 * 0.3 * 0.2).sqrt()) / (2.0 * 0.3);
        assert!((g.inside(&[]).exp() - e).abs() < 1e-12);
        // "a": x = 0.5 + 0.3 * 2 e x
        let x = 0.5 / (1.0 - 0.6 * e);
        assert!((g.inside(&[0]).exp() - x).abs() < 1e-12);
        let chart = g.length_chart(1);
        assert!((chart.inside[0][0] - e).abs() < 1e-12);
        assert!((chart.inside[1][0] - x).abs() < 1e-12);
    }

    fn catalan(m: u64) -> f64 {
        (0..m).fold(1.0, |c, i| c * 2.0 * (2 * i + 1) as f64 / (i + 2) as f64)
    }

    #[test]
    fn dyck_length_probabilities_match_closed_form() {
        let p = 0.5;
        for k in [1, 3] {
            let g = Pcfg::dyck(k, p).unwrap();
            let chart = g.length_chart(20);
            for l in 0..=20usize {
                let want = if l % 2 == 1 {
                    0.0
                } else {
                    let m = (l / 2) as u64;
                    catalan(m) * p.powi(m as i32) * (1.0 - p).powi(m as i32 + 1)
                };
                assert!((chart.inside[l][0] - want).abs() < 1e-14, "k={k} l={l}");
            }
        }
    }

    #[test]
    fn dyck_normalization_by_enumeration() {
        // sum over all strings up to length L increases toward 1
        let k = 2;
        let g = Pcfg::dyck(k, 0.5).unwrap();
        let mut sums = Vec::new();
        let mut total = 0.0;
        for l in 0..=8u32 {
            for idx in 0..(2 * k).pow(l) {
                let w: Vec<usize> = (0..l).map(|i| idx / (2 * k).pow(i) % (2 * k)).collect();
                total += g.inside(&w).exp();
            }
            sums.push(total);
        }
        assert!(sums.windows(2).all(|s| s[1] >= s[0]));
        assert!(*sums.last().unwrap() <= 1.0 + 1e-12);
        assert!(sums[8] > sums[0] + 0.1);
        // and each length matches the length chart
        let chart = g.length_chart(8);
        let mut prev = 0.0;
        for (l, s) in sums.iter().enumerate() {
            assert!((s - prev - chart.inside[l][0]).abs() < 1e-14);
            prev = *s;
        }
    }

    #[test]
    fn conditioned_sampling_matches_inside() {
        let g = Pcfg::dyck(2, 0.5).unwrap();
        let chart = g.length_chart(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40_000;
        let mut freq: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..n {
            *freq.entry(g.sample_of_length(&chart, 4, &mut rng).unwrap()).or_default() += 1;
        }
        // 2 shapes × 4 bracket choices, all equally likely given the length
        assert_eq!(freq.len(), 8);
        let norm = chart.inside[4][0];
        for (w, c) in freq {
            let p = g.inside(&w).exp() / norm;
            assert!((p - 0.125).abs() < 1e-12);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 4.0 * se, "{w:?}");
        }
        assert!(g.sample_of_length(&chart, 3, &mut rng).is_none());
    }
}
