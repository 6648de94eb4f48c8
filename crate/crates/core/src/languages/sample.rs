use num_bigint::{BigUint, RandBigInt};
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pcfg::{LengthChart, Pcfg};
use super::{count_strings, ln_biguint, DyckTable, LanguageKind, LanguageSpec, SamplingMode};
use crate::error::{Error, Result};

/// The distribution `p_L`: choose a length uniformly among the nonempty
/// lengths of the window, then a string of that length (uniformly, or from
/// the PCFG conditioned on the length).
pub struct TrueDistribution {
    pub spec: LanguageSpec,
    rng: ChaCha8Rng,
    lengths: Vec<usize>,
    /// `counts[ℓ − min_len] = |L_ℓ|`
    counts: Vec<BigUint>,
    dyck: Option<DyckTable>,
    pcfg: Option<(Pcfg, LengthChart)>,
}

impl TrueDistribution {
    pub fn new(spec: LanguageSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let pcfg = match spec.mode {
            SamplingMode::Uniform => None,
            SamplingMode::Pcfg => {
                let g = Pcfg::dyck(spec.k, spec.pcfg_p)?;
                let chart = g.length_chart(spec.max_len);
                Some((g, chart))
            }
        };
        let counts: Vec<BigUint> = (spec.min_len..=spec.max_len).map(|l| count_strings(&spec, l)).collect();
        let lengths: Vec<usize> = (spec.min_len..=spec.max_len)
            .filter(|&l| match &pcfg {
                None => !counts[l - spec.min_len].is_zero(),
                Some((g, chart)) => chart.inside[l][g.grammar.start] > 0.0,
            })
            .collect();
        if lengths.is_empty() {
            return Err(Error::EmptySupport {
                min: spec.min_len,
                max: spec.max_len,
            });
        }
        let dyck = (spec.kind == LanguageKind::Dyck).then(|| DyckTable::new(spec.k, spec.max_len));
        Ok(TrueDistribution {
            rng: ChaCha8Rng::seed_from_u64(seed),
            lengths,
            counts,
            dyck,
            pcfg,
            spec,
        })
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Lengths with nonzero probability.
    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn count(&self, len: usize) -> BigUint {
        if (self.spec.min_len..=self.spec.max_len).contains(&len) {
            self.counts[len - self.spec.min_len].clone()
        } else {
            count_strings(&self.spec, len)
        }
    }

    pub fn sample(&mut self) -> Vec<usize> {
        let len = self.lengths[self.rng.gen_range(0..self.lengths.len())];
        self.sample_of_length(len).expect("length in support")
    }

    /// A string of length `len` drawn from the distribution conditioned on
    /// that length. Works outside the window too (uniform mode, or up to the
    /// PCFG chart size).
    pub fn sample_of_length(&mut self, len: usize) -> Result<Vec<usize>> {
        let empty = Error::EmptySupport { min: len, max: len };
        if let Some((g, chart)) = &self.pcfg {
            let rng = &mut self.rng;
            return if len <= chart.max_len() {
                g.sample_of_length(chart, len, rng)
            } else {
                g.sample_of_length(&g.length_chart(len), len, rng)
            }
            .ok_or(empty);
        }
        let count = self.count(len);
        if count.is_zero() {
            return Err(empty);
        }
        let index = self.rng.gen_biguint_below(&count);
        Ok(self.unrank(len, index))
    }

    /// The `index`-th string of length `len` (`index < |L_len|`).
    pub fn unrank(&self, len: usize, index: BigUint) -> Vec<usize> {
        let spec = &self.spec;
        // least significant digit last
        let digits = |mut x: BigUint, base: usize, n: usize| -> Vec<usize> {
            let mut out = vec![0; n];
            for slot in out.iter_mut().rev() {
                *slot = (&x % base).to_usize().expect("digit");
                x /= base;
            }
            out
        };
        match spec.kind {
            LanguageKind::AnBnCn => (0..len).map(|i| i / (len / 3).max(1)).collect(),
            LanguageKind::MarkedCopyReverseCopy => {
                let w = digits(index, 2, (len - 2) / 3);
                let mut out = w.clone();
                out.push(2);
                out.extend(w.iter().rev());
                out.push(2);
                out.extend(&w);
                out
            }
            LanguageKind::PaddedCopy => {
                let w = digits(index, 2, len / 3);
                let mut out = w.clone();
                out.extend(std::iter::repeat_n(2, w.len()));
                out.extend(&w);
                out
            }
            LanguageKind::MarkedCopy => {
                let w = digits(index, 2, len / 2);
                let mut out = w.clone();
                out.push(2);
                out.extend(&w);
                out
            }
            LanguageKind::HomomorphicCopy => {
                let w = digits(index, 2, len / 2);
                let mut out = w.clone();
                out.extend(w.iter().map(|a| a + 2));
                out
            }
            LanguageKind::CopyReverseCopy => {
                let w = digits(index, 2, len / 3);
                let mut out = w.clone();
                out.extend(w.iter().rev());
                out.extend(&w);
                out
            }
            LanguageKind::Copy => {
                let w = digits(index, 2, len / 2);
                [w.clone(), w].concat()
            }
            LanguageKind::MarkedReverse => {
                let w = digits(index, spec.k, len / 2);
                let mut out = w.clone();
                out.push(spec.k);
                out.extend(w.iter().rev());
                out
            }
            LanguageKind::UnmarkedReverse => {
                let w = digits(index, spec.k, len / 2);
                let mut out = w.clone();
                out.extend(w.iter().rev());
                out
            }
            LanguageKind::Dyck => {
                let fresh;
                let table = match &self.dyck {
                    Some(t) if len <= spec.max_len => t,
                    _ => {
                        fresh = DyckTable::new(spec.k, len);
                        &fresh
                    }
                };
                // options in order: close the open bracket, then open type 0..k
                let mut index = index;
                let mut stack: Vec<usize> = Vec::new();
                let mut out = Vec::with_capacity(len);
                for pos in 0..len {
                    let r = len - pos - 1;
                    let d = stack.len();
                    if d > 0 {
                        let close = table.completions(r, d - 1);
                        if index < close {
                            let b = stack.pop().expect("open bracket");
                            out.push(2 * b + 1);
                            continue;
                        }
                        index -= close;
                    }
                    let each = table.completions(r, d + 1);
                    let b = (&index / &each).to_usize().expect("bracket type");
                    index %= &each;
                    stack.push(b);
                    out.push(2 * b);
                }
                out
            }
        }
    }

    /// `log p_L(w)`; `−∞` outside the language or the window.
    pub fn log_prob(&self, w: &[usize]) -> f64 {
        let len = w.len();
        if !(self.spec.min_len..=self.spec.max_len).contains(&len)
            || !self.lengths.contains(&len)
            || !self.spec.contains(w)
        {
            return f64::NEG_INFINITY;
        }
        -(self.lengths.len() as f64).ln() + self.log_prob_given_length(w)
    }

    /// `log p_L(w | |w|)`: the probability of `w` among strings of its length.
    pub fn log_prob_given_length(&self, w: &[usize]) -> f64 {
        if !self.spec.contains(w) {
            return f64::NEG_INFINITY;
        }
        match &self.pcfg {
            None => -ln_biguint(&self.count(w.len())),
            Some((g, chart)) => {
                let norm = if w.len() <= chart.max_len() {
                    chart.inside[w.len()][g.grammar.start]
                } else {
                    g.length_chart(w.len()).inside[w.len()][g.grammar.start]
                };
                g.inside(w) - norm.ln()
            }
        }
    }
}

pub fn sample_string(dist: &mut TrueDistribution) -> Vec<usize> {
    dist.sample()
}

pub fn log_true_prob(dist: &TrueDistribution, w: &[usize]) -> f64 {
    dist.log_prob(w)
}
