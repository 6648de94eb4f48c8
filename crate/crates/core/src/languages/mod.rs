//! Benchmark languages: exact counts, samplers and log-probability oracles.
//!
//! Strings are sequences of symbol indices into [`LanguageSpec::symbols`].
//! EOS is not part of the alphabet; models reserve their own index for it.

mod dataset;
mod pcfg;
mod sample;

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::ContextFreeGrammar;

pub use dataset::{read_split, write_split, Dataset, DatasetSizes, Example};
pub use pcfg::Pcfg;
pub use sample::{log_true_prob, sample_string, TrueDistribution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LanguageKind {
    #[serde(rename = "anbncn")]
    AnBnCn,
    #[serde(rename = "w#wRw")]
    MarkedCopyReverseCopy,
    #[serde(rename = "w#^nw")]
    PaddedCopy,
    #[serde(rename = "w#w")]
    MarkedCopy,
    #[serde(rename = "ww'")]
    HomomorphicCopy,
    #[serde(rename = "wwRw")]
    CopyReverseCopy,
    #[serde(rename = "ww")]
    Copy,
    #[serde(rename = "marked-reverse")]
    MarkedReverse,
    #[serde(rename = "dyck")]
    Dyck,
    #[serde(rename = "unmarked-reverse")]
    UnmarkedReverse,
}

impl LanguageKind {
    pub const ALL: [LanguageKind; 10] = [
        LanguageKind::AnBnCn,
        LanguageKind::MarkedCopyReverseCopy,
        LanguageKind::PaddedCopy,
        LanguageKind::MarkedCopy,
        LanguageKind::HomomorphicCopy,
        LanguageKind::CopyReverseCopy,
        LanguageKind::Copy,
        LanguageKind::MarkedReverse,
        LanguageKind::Dyck,
        LanguageKind::UnmarkedReverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LanguageKind::AnBnCn => "anbncn",
            LanguageKind::MarkedCopyReverseCopy => "w#wRw",
            LanguageKind::PaddedCopy => "w#^nw",
            LanguageKind::MarkedCopy => "w#w",
            LanguageKind::HomomorphicCopy => "ww'",
            LanguageKind::CopyReverseCopy => "wwRw",
            LanguageKind::Copy => "ww",
            LanguageKind::MarkedReverse => "marked-reverse",
            LanguageKind::Dyck => "dyck",
            LanguageKind::UnmarkedReverse => "unmarked-reverse",
        }
    }

    /// Whether the alphabet size `k` is a parameter.
    pub fn takes_k(self) -> bool {
        matches!(
            self,
            LanguageKind::MarkedReverse | LanguageKind::Dyck | LanguageKind::UnmarkedReverse
        )
    }
}

impl fmt::Display for LanguageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LanguageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('′', "'").replace(' ', "");
        // shell-friendly spellings
        let alias = match s.as_str() {
            "w#wR" | "w-hash-wr" => Some(LanguageKind::MarkedReverse),
            "wwR" | "w-wr" => Some(LanguageKind::UnmarkedReverse),
            "w-hash-w" => Some(LanguageKind::MarkedCopy),
            "w-hash-wr-hash-w" => Some(LanguageKind::MarkedCopyReverseCopy),
            "w-hash-n-w" | "w#^nw" => Some(LanguageKind::PaddedCopy),
            "ww-prime" => Some(LanguageKind::HomomorphicCopy),
            "w-wr-w" => Some(LanguageKind::CopyReverseCopy),
            _ => None,
        };
        alias
            .or_else(|| LanguageKind::ALL.into_iter().find(|k| k.name() == s))
            .ok_or_else(|| Error::Config {
                field: "kind".into(),
                msg: format!("unknown language {s:?}"),
            })
    }
}

/// How strings are drawn once a length is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Uniform over the strings of that length.
    #[default]
    Uniform,
    /// From a PCFG conditioned on the length. Dyck only.
    Pcfg,
}

fn default_k() -> usize {
    2
}
fn default_min() -> usize {
    40
}
fn default_max() -> usize {
    80
}
fn default_p() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub kind: LanguageKind,
    /// Alphabet size for the parameterized languages; ignored otherwise.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_min")]
    pub min_len: usize,
    #[serde(default = "default_max")]
    pub max_len: usize,
    #[serde(default)]
    pub mode: SamplingMode,
    /// Probability of the bracket rule in the Dyck PCFG.
    #[serde(default = "default_p")]
    pub pcfg_p: f64,
}

impl LanguageSpec {
    pub fn new(kind: LanguageKind) -> Self {
        LanguageSpec {
            kind,
            k: default_k(),
            min_len: default_min(),
            max_len: default_max(),
            mode: SamplingMode::Uniform,
            pcfg_p: default_p(),
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_window(mut self, min_len: usize, max_len: usize) -> Self {
        self.min_len = min_len;
        self.max_len = max_len;
        self
    }

    pub fn with_mode(mut self, mode: SamplingMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config { field: field.into(), msg });
        if self.kind.takes_k() && self.k == 0 {
            return bad("k", "alphabet size must be at least 1".into());
        }
        if self.min_len > self.max_len {
            return bad("min_len", format!("{} > max_len {}", self.min_len, self.max_len));
        }
        if self.mode == SamplingMode::Pcfg {
            if self.kind != LanguageKind::Dyck {
                return bad("mode", format!("no PCFG is defined for {}", self.kind));
            }
            if !(self.pcfg_p > 0.0 && self.pcfg_p < 1.0) {
                return bad("pcfg_p", format!("{} is not in (0, 1)", self.pcfg_p));
            }
        }
        Ok(())
    }

    /// Short human-readable name, e.g. `dyck(3)`.
    pub fn label(&self) -> String {
        if self.kind.takes_k() {
            format!("{}({})", self.kind, self.k)
        } else {
            self.kind.to_string()
        }
    }

    pub fn symbols(&self) -> Vec<String> {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        let digits = |k: usize| (0..k).map(|i| i.to_string()).collect::<Vec<_>>();
        match self.kind {
            LanguageKind::AnBnCn => s(&["a", "b", "c"]),
            LanguageKind::MarkedCopyReverseCopy | LanguageKind::PaddedCopy | LanguageKind::MarkedCopy => {
                s(&["0", "1", "#"])
            }
            LanguageKind::HomomorphicCopy => s(&["0", "1", "2", "3"]),
            LanguageKind::CopyReverseCopy | LanguageKind::Copy => s(&["0", "1"]),
            LanguageKind::MarkedReverse => {
                let mut v = digits(self.k);
                v.push("#".into());
                v
            }
            LanguageKind::UnmarkedReverse => digits(self.k),
            LanguageKind::Dyck if self.k == 1 => s(&["(", ")"]),
            LanguageKind::Dyck => (1..=self.k).flat_map(|i| [format!("({i}"), format!("){i}")]).collect(),
        }
    }

    pub fn alphabet_size(&self) -> usize {
        match self.kind {
            LanguageKind::AnBnCn | LanguageKind::MarkedCopyReverseCopy | LanguageKind::PaddedCopy => 3,
            LanguageKind::MarkedCopy => 3,
            LanguageKind::HomomorphicCopy => 4,
            LanguageKind::CopyReverseCopy | LanguageKind::Copy => 2,
            LanguageKind::MarkedReverse => self.k + 1,
            LanguageKind::UnmarkedReverse => self.k,
            LanguageKind::Dyck => 2 * self.k,
        }
    }

    /// Map symbol names to indices.
    pub fn encode<S: AsRef<str>>(&self, w: &[S]) -> Result<Vec<usize>> {
        let symbols = self.symbols();
        w.iter()
            .map(|a| {
                symbols
                    .iter()
                    .position(|s| s == a.as_ref())
                    .ok_or_else(|| Error::UnknownSymbol(a.as_ref().to_string()))
            })
            .collect()
    }

    pub fn decode(&self, w: &[usize]) -> Vec<String> {
        let symbols = self.symbols();
        w.iter().map(|&i| symbols[i].clone()).collect()
    }

    /// Membership, checked directly on the string.
    pub fn contains(&self, w: &[usize]) -> bool {
        if w.iter().any(|&a| a >= self.alphabet_size()) {
            return false;
        }
        let n = w.len();
        let bits = |v: &[usize]| v.iter().all(|&a| a < 2);
        match self.kind {
            LanguageKind::AnBnCn => {
                n % 3 == 0 && {
                    let m = n / 3;
                    (0..n).all(|i| w[i] == i / m.max(1))
                }
            }
            LanguageKind::MarkedCopyReverseCopy => {
                if n < 2 || (n - 2) % 3 != 0 {
                    return false;
                }
                let m = (n - 2) / 3;
                let (a, rest) = w.split_at(m);
                bits(a)
                    && rest[0] == 2
                    && rest[1..=m].iter().eq(a.iter().rev())
                    && rest[m + 1] == 2
                    && rest[m + 2..] == *a
            }
            LanguageKind::PaddedCopy => {
                if n % 3 != 0 {
                    return false;
                }
                let m = n / 3;
                bits(&w[..m]) && w[m..2 * m].iter().all(|&a| a == 2) && w[2 * m..] == w[..m]
            }
            LanguageKind::MarkedCopy => {
                n % 2 == 1 && {
                    let m = n / 2;
                    bits(&w[..m]) && w[m] == 2 && w[m + 1..] == w[..m]
                }
            }
            LanguageKind::HomomorphicCopy => {
                n % 2 == 0 && {
                    let m = n / 2;
                    bits(&w[..m]) && (0..m).all(|i| w[m + i] == w[i] + 2)
                }
            }
            LanguageKind::CopyReverseCopy => {
                n % 3 == 0 && {
                    let m = n / 3;
                    w[m..2 * m].iter().eq(w[..m].iter().rev()) && w[2 * m..] == w[..m]
                }
            }
            LanguageKind::Copy => n % 2 == 0 && w[n / 2..] == w[..n / 2],
            LanguageKind::MarkedReverse => {
                let k = self.k;
                n % 2 == 1 && {
                    let m = n / 2;
                    w[m] == k && w[..m].iter().all(|&a| a < k) && w[m + 1..].iter().eq(w[..m].iter().rev())
                }
            }
            LanguageKind::UnmarkedReverse => n % 2 == 0 && w[n / 2..].iter().eq(w[..n / 2].iter().rev()),
            LanguageKind::Dyck => {
                // even index opens, odd index closes bracket type a / 2
                let mut stack = Vec::new();
                for &a in w {
                    if a % 2 == 0 {
                        stack.push(a / 2);
                    } else if stack.pop() != Some(a / 2) {
                        return false;
                    }
                }
                stack.is_empty()
            }
        }
    }

    /// A context-free grammar for the language, when it is context-free.
    pub fn grammar(&self) -> Option<ContextFreeGrammar> {
        let text = match self.kind {
            LanguageKind::MarkedReverse => {
                let alts: Vec<String> = (0..self.k).map(|i| format!("\"{i}\" S \"{i}\"")).collect();
                format!("S -> {} | \"#\"\n", alts.join(" | "))
            }
            LanguageKind::UnmarkedReverse => {
                let alts: Vec<String> = (0..self.k).map(|i| format!("\"{i}\" S \"{i}\"")).collect();
                format!("S -> {} | ε\n", alts.join(" | "))
            }
            LanguageKind::Dyck => {
                let sym = self.symbols();
                let alts: Vec<String> = (0..self.k)
                    .map(|i| format!("'{}' S '{}' S", sym[2 * i], sym[2 * i + 1]))
                    .collect();
                format!("S -> {} | ε\n", alts.join(" | "))
            }
            _ => return None,
        };
        let g = ContextFreeGrammar::parse(&text).expect("well-formed grammar");
        // reorder terminals to match `symbols`
        let names = self.symbols();
        let map: Vec<usize> = g
            .terminals
            .iter()
            .map(|t| names.iter().position(|s| s == t).expect("terminal in alphabet"))
            .collect();
        let rules = g
            .rules
            .iter()
            .map(|r| crate::grammar::Rule {
                lhs: r.lhs,
                rhs: r
                    .rhs
                    .iter()
                    .map(|s| match *s {
                        crate::grammar::Symbol::T(a) => crate::grammar::Symbol::T(map[a]),
                        n => n,
                    })
                    .collect(),
            })
            .collect();
        Some(ContextFreeGrammar::new(g.nonterminals, names, rules, g.start).expect("valid"))
    }

    /// Lengths in the window with at least one string, under the sampling
    /// mode's support.
    pub fn support_lengths(&self) -> Vec<usize> {
        (self.min_len..=self.max_len)
            .filter(|&l| !count_strings(self, l).is_zero())
            .collect()
    }
}

/// `|L_ℓ|`, exactly.
pub fn count_strings(spec: &LanguageSpec, len: usize) -> BigUint {
    let two = || BigUint::from(2u32);
    let pow = |b: BigUint, e: usize| num_traits::pow(b, e);
    let zero = BigUint::zero();
    match spec.kind {
        LanguageKind::AnBnCn if len % 3 == 0 => BigUint::one(),
        LanguageKind::MarkedCopyReverseCopy if len >= 2 && (len - 2) % 3 == 0 => pow(two(), (len - 2) / 3),
        LanguageKind::PaddedCopy | LanguageKind::CopyReverseCopy if len % 3 == 0 => pow(two(), len / 3),
        LanguageKind::MarkedCopy if len % 2 == 1 => pow(two(), len / 2),
        LanguageKind::HomomorphicCopy | LanguageKind::Copy if len % 2 == 0 => pow(two(), len / 2),
        LanguageKind::MarkedReverse if len % 2 == 1 => pow(BigUint::from(spec.k), len / 2),
        LanguageKind::UnmarkedReverse if len % 2 == 0 => pow(BigUint::from(spec.k), len / 2),
        LanguageKind::Dyck => DyckTable::new(spec.k, len).completions(len, 0),
        _ => zero,
    }
}

/// Weighted count of Dyck completions: `completions(r, d)` is the number of
/// ways to finish a prefix at depth `d` with `r` symbols left.
pub(crate) struct DyckTable {
    k: BigUint,
    /// `paths[r][d]`: monotone lattice paths from height `d` to 0 in `r`
    /// steps that never go below 0.
    paths: Vec<Vec<BigUint>>,
}

impl DyckTable {
    pub(crate) fn new(k: usize, max_len: usize) -> Self {
        let mut paths = vec![vec![BigUint::zero(); max_len + 2]; max_len + 1];
        paths[0][0] = BigUint::one();
        for r in 1..=max_len {
            for d in 0..=r.min(max_len) {
                let mut v = BigUint::zero();
                if d > 0 {
                    v += &paths[r - 1][d - 1];
                }
                if d < max_len {
                    v += &paths[r - 1][d + 1];
                }
                paths[r][d] = v;
            }
        }
        DyckTable {
            k: BigUint::from(k),
            paths,
        }
    }

    pub(crate) fn completions(&self, r: usize, d: usize) -> BigUint {
        if d > r || (r - d) % 2 == 1 {
            return BigUint::zero();
        }
        &self.paths[r][d] * num_traits::pow(self.k.clone(), (r - d) / 2)
    }
}

/// Natural log of a big integer, accurate to f64 precision.
pub fn ln_biguint(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let shift = x.bits().saturating_sub(64);
    let top = (x >> shift).to_f64().expect("64-bit value");
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// `−Σ log p(w) / Σ (|w| + 1)` in nats per symbol (EOS included).
pub fn cross_entropy(lengths: &[usize], log_probs: &[f64]) -> f64 {
    assert_eq!(lengths.len(), log_probs.len());
    let symbols: usize = lengths.iter().map(|n| n + 1).sum();
    -log_probs.iter().sum::<f64>() / symbols as f64
}

/// `H(S, p_M) − H(S, p_L)`.
pub fn cross_entropy_diff(lengths: &[usize], model_log_probs: &[f64], true_log_probs: &[f64]) -> f64 {
    assert_eq!(model_log_probs.len(), true_log_probs.len());
    let symbols: usize = lengths.iter().map(|n| n + 1).sum();
    let diff: f64 = true_log_probs.iter().zip(model_log_probs).map(|(t, m)| t - m).sum();
    diff / symbols as f64
}
