//! Context-free grammars and their text format.
//!
//! ```text
//! # balanced parentheses
//! S -> S S | "(" S ")" | "(" ")"
//! ```
//!
//! Terminals are quoted (`"x"` or `'x'`), nonterminals are bare identifiers
//! (letters, digits, `_` and `'`). An empty alternative, or `ε`, derives the
//! empty string. The left-hand side of the first rule is the start symbol.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    T(usize),
    N(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rule {
    pub lhs: usize,
    pub rhs: Vec<Symbol>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextFreeGrammar {
    pub nonterminals: Vec<String>,
    pub terminals: Vec<String>,
    pub rules: Vec<Rule>,
    pub start: usize,
}

pub(crate) fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '\'') && s != "ε"
}

impl ContextFreeGrammar {
    pub fn new(nonterminals: Vec<String>, terminals: Vec<String>, rules: Vec<Rule>, start: usize) -> Result<Self> {
        let g = ContextFreeGrammar {
            nonterminals,
            terminals,
            rules,
            start,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.start >= self.nonterminals.len() {
            return Err(Error::Grammar("start symbol out of range".into()));
        }
        for (i, n) in self.nonterminals.iter().enumerate() {
            if !is_ident(n) {
                return Err(Error::Grammar(format!("bad nonterminal name {n:?}")));
            }
            if self.nonterminals[..i].contains(n) {
                return Err(Error::Grammar(format!("duplicate nonterminal {n}")));
            }
        }
        for (i, t) in self.terminals.iter().enumerate() {
            if t.is_empty() || t.contains('\n') || (t.contains('"') && t.contains('\'')) {
                return Err(Error::Grammar(format!("bad terminal {t:?}")));
            }
            if self.terminals[..i].contains(t) {
                return Err(Error::Grammar(format!("duplicate terminal {t:?}")));
            }
        }
        for r in &self.rules {
            let ok = r.lhs < self.nonterminals.len()
                && r.rhs.iter().all(|s| match *s {
                    Symbol::T(a) => a < self.terminals.len(),
                    Symbol::N(b) => b < self.nonterminals.len(),
                });
            if !ok {
                return Err(Error::Grammar("rule uses an undeclared symbol".into()));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut nonterminals: Vec<String> = Vec::new();
        let mut terminals: Vec<String> = Vec::new();
        let mut rules = Vec::new();
        let mut used: Vec<(String, usize)> = Vec::new();
        let index = |v: &mut Vec<String>, s: &str| match v.iter().position(|x| x == s) {
            Some(i) => i,
            None => {
                v.push(s.to_string());
                v.len() - 1
            }
        };
        for (ln, line) in text.lines().enumerate() {
            let line_no = ln + 1;
            let tokens = tokenize(line, line_no)?;
            if tokens.is_empty() {
                continue;
            }
            let perr = |msg: &str| Error::Parse {
                line: line_no,
                msg: msg.to_string(),
            };
            let lhs = match &tokens[..] {
                [Token::Ident(l), Token::Arrow, ..] => l.clone(),
                _ => return Err(perr("expected `LHS -> ...`")),
            };
            let lhs = index(&mut nonterminals, &lhs);
            let mut rhs = Vec::new();
            for tok in tokens[2..].iter().chain(std::iter::once(&Token::Bar)) {
                match tok {
                    Token::Bar => {
                        rules.push(Rule {
                            lhs,
                            rhs: std::mem::take(&mut rhs),
                        });
                    }
                    Token::Epsilon => {}
                    Token::Terminal(t) => rhs.push(Symbol::T(index(&mut terminals, t))),
                    Token::Ident(n) => {
                        rhs.push(Symbol::N(index(&mut nonterminals, n)));
                        used.push((n.clone(), line_no));
                    }
                    Token::Arrow => return Err(perr("unexpected `->`")),
                }
            }
        }
        if rules.is_empty() {
            return Err(Error::Grammar("grammar has no rules".into()));
        }
        for (n, line) in used {
            let i = nonterminals.iter().position(|x| *x == n).expect("indexed");
            if !rules.iter().any(|r| r.lhs == i) {
                return Err(Error::Parse {
                    line,
                    msg: format!("nonterminal {n} has no rules"),
                });
            }
        }
        ContextFreeGrammar::new(nonterminals, terminals, rules, 0)
    }

    pub fn terminal_index(&self, name: &str) -> Option<usize> {
        self.terminals.iter().position(|t| t == name)
    }

    /// Map a string of terminal names to indices; `None` if any symbol is
    /// outside the alphabet.
    pub fn encode<S: AsRef<str>>(&self, w: &[S]) -> Option<Vec<usize>> {
        w.iter().map(|s| self.terminal_index(s.as_ref())).collect()
    }

    pub fn rules_for(&self, a: usize) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(move |r| r.lhs == a)
    }

    pub fn nullable(&self) -> Vec<bool> {
        let mut nullable = vec![false; self.nonterminals.len()];
        loop {
            let mut changed = false;
            for r in &self.rules {
                if !nullable[r.lhs]
                    && r.rhs.iter().all(|s| matches!(*s, Symbol::N(b) if nullable[b]))
                {
                    nullable[r.lhs] = true;
                    changed = true;
                }
            }
            if !changed {
                return nullable;
            }
        }
    }

    /// Rules as a deduplicated, sorted set.
    pub fn rule_set(&self) -> BTreeSet<Rule> {
        self.rules.iter().cloned().collect()
    }

    fn fmt_symbol(&self, s: Symbol) -> String {
        match s {
            Symbol::N(b) => self.nonterminals[b].clone(),
            Symbol::T(a) => quote(&self.terminals[a]),
        }
    }
}

pub(crate) fn quote(t: &str) -> String {
    if t.contains('"') {
        format!("'{t}'")
    } else {
        format!("\"{t}\"")
    }
}

impl fmt::Display for ContextFreeGrammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // start symbol's rules first so re-parsing keeps it as the start
        let mut order: Vec<usize> = vec![self.start];
        for r in &self.rules {
            if !order.contains(&r.lhs) {
                order.push(r.lhs);
            }
        }
        for a in order {
            let alts: Vec<String> = self
                .rules_for(a)
                .map(|r| {
                    if r.rhs.is_empty() {
                        "ε".to_string()
                    } else {
                        r.rhs.iter().map(|s| self.fmt_symbol(*s)).collect::<Vec<_>>().join(" ")
                    }
                })
                .collect();
            if alts.is_empty() {
                continue;
            }
            writeln!(f, "{} -> {}", self.nonterminals[a], alts.join(" | "))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    Terminal(String),
    Arrow,
    Bar,
    Epsilon,
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<Token>> {
    let err = |msg: String| Error::Parse { line: line_no, msg };
    let mut out = Vec::new();
    let mut chars = line.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        match c {
            '#' => break,
            c if c.is_whitespace() => {
                chars.next();
            }
            '|' => {
                chars.next();
                out.push(Token::Bar);
            }
            '-' => {
                chars.next();
                match chars.next() {
                    Some((_, '>')) => out.push(Token::Arrow),
                    _ => return Err(err("expected `->`".into())),
                }
            }
            '→' => {
                chars.next();
                out.push(Token::Arrow);
            }
            '"' | '\'' => {
                chars.next();
                let start = i + c.len_utf8();
                let mut end = None;
                for (j, d) in chars.by_ref() {
                    if d == c {
                        end = Some(j);
                        break;
                    }
                }
                let end = end.ok_or_else(|| err("unterminated terminal".into()))?;
                let t = &line[start..end];
                if t.is_empty() {
                    return Err(err("empty terminal; use an empty alternative or ε".into()));
                }
                out.push(Token::Terminal(t.to_string()));
            }
            _ => {
                let start = i;
                let mut end = line.len();
                while let Some(&(j, d)) = chars.peek() {
                    if d.is_whitespace() || matches!(d, '|' | '#' | '"' | '→') || d == '-' {
                        end = j;
                        break;
                    }
                    chars.next();
                }
                let word = &line[start..end];
                if word == "ε" {
                    out.push(Token::Epsilon);
                } else if is_ident(word) {
                    out.push(Token::Ident(word.to_string()));
                } else {
                    return Err(err(format!("bad symbol {word:?}; terminals must be quoted")));
                }
            }
        }
    }
    Ok(out)
}
