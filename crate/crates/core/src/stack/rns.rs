//! Reference dynamic program over all runs of a restricted-form PDA.
//!
//! Timesteps carry a +1 offset internally: slot 0 holds the `-1`
//! pseudo-timestep that simulates an extra push beneath the initial `⊥`, so
//! the symbol directly above `⊥` is poppable and `⊥` itself can be replaced.
//!
//! * `gamma[t][i + 1]` is the inner-weight block `γ[i → t]`, a
//!   `[(q, x), (r, y)]` matrix, for `-1 <= i < t`.
//! * `gamma_prime[t][k]` is `γ'[k → t]`, a `[(u, y), r]` matrix, for
//!   `0 <= k <= t - 2`.
//! * `alpha[t + 1]` is the forward-weight row `α[t]` over `(r, y)`.
//! * When vectors are tracked, `zeta[t][i + 1]` stores `ζ[i → t]` as
//!   `[(q, x), (r, y), j]` and `eta[t]` the numerator `η_t` over `(r, y, j)`.
//!
//! The DP is generic over a [`Semiring`], which lets the same recurrence run
//! on real weights, log weights or exact counts.

use serde::{Deserialize, Serialize};

use super::pda::{PdaSignature, TransitionWeights};
use crate::autodiff::{FloatSemiring, Semiring};
use crate::error::{Error, Result};

/// How `ζ[-1 → 0]` is initialized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZetaInit {
    /// `1[q = q0, x = ⊥, r = q0, y = ⊥] · v0`.
    #[default]
    Indicator,
    /// `v0` for every `(q, x, r, y)`; reproduces an older released
    /// implementation for replication studies.
    AllPairs,
}

pub struct RnsDp<S: Semiring> {
    sig: PdaSignature,
    gamma: Vec<Vec<Vec<S::Elem>>>,
    gamma_prime: Vec<Vec<Vec<S::Elem>>>,
    alpha: Vec<Vec<S::Elem>>,
    vec_dim: usize,
    zeta: Vec<Vec<Vec<S::Elem>>>,
    eta: Vec<Vec<S::Elem>>,
}

impl<S: Semiring> RnsDp<S> {
    /// DP initialized through timestep 0, without vectors.
    pub fn new(sig: PdaSignature) -> Self {
        let d = sig.pairs();
        let bottom = sig.pair(PdaSignature::START, PdaSignature::BOTTOM);
        let mut init = vec![S::zero(); d * d];
        init[bottom * d + bottom] = S::one();
        let mut alpha_init = vec![S::zero(); d];
        alpha_init[bottom] = S::one();
        let mut dp = RnsDp {
            sig,
            gamma: vec![vec![init]],
            gamma_prime: vec![Vec::new()],
            alpha: vec![alpha_init],
            vec_dim: 0,
            zeta: Vec::new(),
            eta: Vec::new(),
        };
        let a0 = dp.alpha_from(0);
        dp.alpha.push(a0);
        dp
    }

    /// DP that also carries stack vectors of dimension `v0.len()`.
    pub fn with_vectors(sig: PdaSignature, v0: &[S::Elem], init: ZetaInit) -> Self {
        let mut dp = RnsDp::new(sig);
        let d = sig.pairs();
        let m = v0.len();
        let bottom = sig.pair(PdaSignature::START, PdaSignature::BOTTOM);
        let mut z = vec![S::zero(); d * d * m];
        match init {
            ZetaInit::Indicator => {
                z[(bottom * d + bottom) * m..(bottom * d + bottom + 1) * m].clone_from_slice(v0);
            }
            ZetaInit::AllPairs => {
                for e in 0..d * d {
                    z[e * m..(e + 1) * m].clone_from_slice(v0);
                }
            }
        }
        dp.vec_dim = m;
        dp.zeta = vec![vec![z]];
        let eta0 = dp.eta_from(0);
        dp.eta.push(eta0);
        dp
    }

    pub fn signature(&self) -> &PdaSignature {
        &self.sig
    }

    /// The next timestep `step` expects.
    pub fn next_t(&self) -> usize {
        self.gamma.len()
    }

    /// Last timestep with computed weights.
    pub fn last_t(&self) -> usize {
        self.gamma.len() - 1
    }

    pub fn tracks_vectors(&self) -> bool {
        !self.zeta.is_empty()
    }

    pub fn vec_dim(&self) -> usize {
        self.vec_dim
    }

    /// `γ[i → t]` for `-1 <= i < t`.
    pub fn gamma(&self, i: isize, t: usize) -> &[S::Elem] {
        &self.gamma[t][(i + 1) as usize]
    }

    /// `γ'[k → t]` for `0 <= k <= t - 2`.
    pub fn gamma_prime(&self, k: usize, t: usize) -> &[S::Elem] {
        &self.gamma_prime[t][k]
    }

    /// `α[t]` for `t >= -1`.
    pub fn alpha(&self, t: isize) -> &[S::Elem] {
        &self.alpha[(t + 1) as usize]
    }

    pub fn eta(&self, t: usize) -> &[S::Elem] {
        &self.eta[t]
    }

    /// Advance from `t - 1` to `t` using the weights `Δ[t]`, and the pushed
    /// vector `v_t` when vectors are tracked.
    pub fn step(
        &mut self,
        t: usize,
        delta: &TransitionWeights<S::Elem>,
        pushed: Option<&[S::Elem]>,
    ) -> Result<()> {
        if t != self.next_t() {
            return Err(Error::OutOfOrder {
                expected: self.next_t(),
                got: t,
            });
        }
        delta.check(&self.sig)?;
        self.check_pushed(pushed)?;
        let (gp, blocks) = self.inner_step(t, delta, Factoring::Cached);
        self.gamma_prime.push(gp);
        self.gamma.push(blocks);
        if self.tracks_vectors() {
            let z = self.zeta_step(t, delta, pushed.expect("checked"));
            self.zeta.push(z);
        }
        let a = self.alpha_from(t);
        self.alpha.push(a);
        if self.tracks_vectors() {
            let e = self.eta_from(t);
            self.eta.push(e);
        }
        Ok(())
    }

    fn check_pushed(&self, pushed: Option<&[S::Elem]>) -> Result<()> {
        match (self.tracks_vectors(), pushed) {
            (true, Some(v)) if v.len() == self.vec_dim => Ok(()),
            (true, Some(v)) => Err(Error::Dimension(format!(
                "pushed vector has dimension {}, stack vectors have {}",
                v.len(),
                self.vec_dim
            ))),
            (true, None) => Err(Error::Dimension("vector stack step needs a pushed vector".into())),
            (false, _) => Ok(()),
        }
    }

    /// Compute `γ'[· → t]` and `γ[· → t]`.
    fn inner_step(
        &self,
        t: usize,
        delta: &TransitionWeights<S::Elem>,
        factoring: Factoring,
    ) -> (Vec<Vec<S::Elem>>, Vec<Vec<S::Elem>>) {
        let sig = &self.sig;
        let (d, nq, ng) = (sig.pairs(), sig.num_states, sig.stack_symbols);
        let prev = &self.gamma[t - 1];

        // γ'[k → t][(u, y), r] = Σ_{s,z} γ[k → t-1][(u, y), (s, z)] Δ[t][s, z → r, ε]
        let gp: Vec<Vec<S::Elem>> = (0..t.saturating_sub(1))
            .map(|k| {
                let g = &prev[k + 1];
                let mut out = vec![S::zero(); d * nq];
                for uy in 0..d {
                    for r in 0..nq {
                        out[uy * nq + r] = pop_inner::<S>(g, &delta.pop, uy, r, d, nq);
                    }
                }
                out
            })
            .collect();

        let mut blocks = Vec::with_capacity(t + 1);
        for slot in 0..=t {
            if slot == t {
                blocks.push(delta.push.clone());
                continue;
            }
            // slot = i + 1 with i <= t - 2
            let mut block = vec![S::zero(); d * d];
            for qx in 0..d {
                for r in 0..nq {
                    for y in 0..ng {
                        let ry = r * ng + y;
                        let mut acc = S::zero();
                        for sz in 0..d {
                            let term = S::mul(&prev[slot][qx * d + sz], &delta.replace[sz * d + ry]);
                            S::add_assign(&mut acc, &term);
                        }
                        // k from max(i + 1, 0) = slot to t - 2
                        for k in slot..t.saturating_sub(1) {
                            let g_ik = &self.gamma[k][slot];
                            for u in 0..nq {
                                let uy = u * ng + y;
                                let left = &g_ik[qx * d + uy];
                                let term = match factoring {
                                    Factoring::Cached => S::mul(left, &gp[k][uy * nq + r]),
                                    Factoring::Inline => {
                                        let inner = pop_inner::<S>(&prev[k + 1], &delta.pop, uy, r, d, nq);
                                        S::mul(left, &inner)
                                    }
                                    Factoring::Expanded => {
                                        let g_kt = &prev[k + 1];
                                        let mut sum = S::zero();
                                        for sz in 0..d {
                                            let p = S::mul(left, &g_kt[uy * d + sz]);
                                            S::add_assign(&mut sum, &S::mul(&p, &delta.pop[sz * nq + r]));
                                        }
                                        sum
                                    }
                                };
                                S::add_assign(&mut acc, &term);
                            }
                        }
                        block[qx * d + ry] = acc;
                    }
                }
            }
            blocks.push(block);
        }
        (gp, blocks)
    }

    fn zeta_step(&self, t: usize, delta: &TransitionWeights<S::Elem>, v: &[S::Elem]) -> Vec<Vec<S::Elem>> {
        let sig = &self.sig;
        let (d, nq, ng, m) = (sig.pairs(), sig.num_states, sig.stack_symbols, self.vec_dim);
        let prev = &self.zeta[t - 1];
        let gp = &self.gamma_prime[t];
        let mut blocks = Vec::with_capacity(t + 1);
        for slot in 0..=t {
            let mut block = vec![S::zero(); d * d * m];
            if slot == t {
                for e in 0..d * d {
                    for j in 0..m {
                        block[e * m + j] = S::mul(&delta.push[e], &v[j]);
                    }
                }
                blocks.push(block);
                continue;
            }
            for qx in 0..d {
                for r in 0..nq {
                    for y in 0..ng {
                        let ry = r * ng + y;
                        for j in 0..m {
                            let mut acc = S::zero();
                            for sz in 0..d {
                                let term = S::mul(&prev[slot][(qx * d + sz) * m + j], &delta.replace[sz * d + ry]);
                                S::add_assign(&mut acc, &term);
                            }
                            for k in slot..t.saturating_sub(1) {
                                let z_ik = &self.zeta[k][slot];
                                for u in 0..nq {
                                    let uy = u * ng + y;
                                    let term = S::mul(&z_ik[(qx * d + uy) * m + j], &gp[k][uy * nq + r]);
                                    S::add_assign(&mut acc, &term);
                                }
                            }
                            block[(qx * d + ry) * m + j] = acc;
                        }
                    }
                }
            }
            blocks.push(block);
        }
        blocks
    }

    /// `α[t] = Σ_{i=-1}^{t-1} Σ_{q,x} α[i][q, x] γ[i → t][q, x → r, y]`.
    fn alpha_from(&self, t: usize) -> Vec<S::Elem> {
        let d = self.sig.pairs();
        let mut out = vec![S::zero(); d];
        for (ry, slot_out) in out.iter_mut().enumerate() {
            let mut acc = S::zero();
            for slot in 0..=t {
                let a = &self.alpha[slot];
                let g = &self.gamma[t][slot];
                for qx in 0..d {
                    S::add_assign(&mut acc, &S::mul(&a[qx], &g[qx * d + ry]));
                }
            }
            *slot_out = acc;
        }
        out
    }

    fn eta_from(&self, t: usize) -> Vec<S::Elem> {
        let (d, m) = (self.sig.pairs(), self.vec_dim);
        let mut out = vec![S::zero(); d * m];
        for ry in 0..d {
            for j in 0..m {
                let mut acc = S::zero();
                for slot in 0..=t {
                    let a = &self.alpha[slot];
                    let z = &self.zeta[t][slot];
                    for qx in 0..d {
                        S::add_assign(&mut acc, &S::mul(&a[qx], &z[(qx * d + ry) * m + j]));
                    }
                }
                out[ry * m + j] = acc;
            }
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Factoring {
    /// Pop term through precomputed `γ'`.
    Cached,
    /// Unfactored pop: recompute the `Σ_{s,z}` for every `(i, q, x)`.
    Inline,
    /// Unfactored pop with the triple product associated left to right.
    Expanded,
}

fn pop_inner<S: Semiring>(
    g_kt: &[S::Elem],
    pop: &[S::Elem],
    uy: usize,
    r: usize,
    d: usize,
    nq: usize,
) -> S::Elem {
    let mut acc = S::zero();
    for sz in 0..d {
        S::add_assign(&mut acc, &S::mul(&g_kt[uy * d + sz], &pop[sz * nq + r]));
    }
    acc
}

impl<S: FloatSemiring> RnsDp<S> {
    /// Normalized reading `r_t` over `(r, y)`.
    pub fn reading(&self, t: usize) -> Result<Vec<f64>> {
        rns_reading::<S>(self.alpha(t as isize), t)
    }

    /// Vector reading `r_t` over `(r, y, j)`.
    pub fn vector_reading(&self, t: usize) -> Result<Vec<f64>> {
        let alpha = self.alpha(t as isize);
        let total = alpha.iter().fold(S::zero(), |acc, a| S::add(&acc, a));
        if S::is_zero(&total) {
            return Err(Error::NoSurvivingRuns(t));
        }
        Ok(self.eta[t].iter().map(|e| S::to_real(S::div(*e, total))).collect())
    }
}

/// Normalize a forward-weight row into a reading.
pub fn rns_reading<S: FloatSemiring>(alpha_row: &[f64], t: usize) -> Result<Vec<f64>> {
    let total = alpha_row.iter().fold(S::zero(), |acc, a| S::add(&acc, a));
    if S::is_zero(&total) {
        return Err(Error::NoSurvivingRuns(t));
    }
    Ok(alpha_row
        .iter()
        .map(|a| S::to_real(S::div(*a, total)))
        .collect())
}

/// Readings `r_0 .. r_n` for the weight sequence `Δ[1] .. Δ[n]`.
pub fn rns_readings<S: FloatSemiring>(
    sig: PdaSignature,
    deltas: &[TransitionWeights<f64>],
) -> Result<Vec<Vec<f64>>> {
    let mut dp = RnsDp::<S>::new(sig);
    let mut out = vec![dp.reading(0)?];
    for (idx, delta) in deltas.iter().enumerate() {
        let t = idx + 1;
        dp.step(t, &delta.map(|&w| S::from_real(w)), None)?;
        out.push(dp.reading(t)?);
    }
    Ok(out)
}

/// Vector readings `r_0 .. r_n` given `v0` and the pushed vectors `v_1 .. v_n`.
pub fn vrns_readings<S: FloatSemiring>(
    sig: PdaSignature,
    deltas: &[TransitionWeights<f64>],
    v0: &[f64],
    pushed: &[Vec<f64>],
    init: ZetaInit,
) -> Result<Vec<Vec<f64>>> {
    if pushed.len() != deltas.len() {
        return Err(Error::Dimension(format!(
            "{} pushed vectors for {} timesteps",
            pushed.len(),
            deltas.len()
        )));
    }
    let lift = |v: &[f64]| v.iter().map(|&x| S::from_real(x)).collect::<Vec<_>>();
    let mut dp = RnsDp::<S>::with_vectors(sig, &lift(v0), init);
    let mut out = vec![dp.vector_reading(0)?];
    for (idx, (delta, v)) in deltas.iter().zip(pushed).enumerate() {
        let t = idx + 1;
        dp.step(t, &delta.map(|&w| S::from_real(w)), Some(&lift(v)))?;
        out.push(dp.vector_reading(t)?);
    }
    Ok(out)
}

/// Which unfactored form of the pop recurrence to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NaivePop {
    /// Same summation order as the factored DP, recomputing the inner sum
    /// for every `(i, q, x)`; agrees bit for bit in real arithmetic.
    SameOrder,
    /// Flat sum over `(k, u, s, z)` of `(γ · γ) · Δ`.
    Expanded,
}

/// Forward weights `α[0] .. α[n]` computed with the unfactored pop
/// recurrence (no cached `γ'`). Test oracle for small instances.
pub fn rns_forward_naive<S: Semiring>(
    sig: PdaSignature,
    deltas: &[TransitionWeights<S::Elem>],
    order: NaivePop,
) -> Result<Vec<Vec<S::Elem>>> {
    let mut dp = RnsDp::<S>::new(sig);
    let mut alphas = vec![dp.alpha(0).to_vec()];
    let factoring = match order {
        NaivePop::SameOrder => Factoring::Inline,
        NaivePop::Expanded => Factoring::Expanded,
    };
    for (idx, delta) in deltas.iter().enumerate() {
        let t = idx + 1;
        delta.check(&sig)?;
        let (_, blocks) = dp.inner_step(t, delta, factoring);
        dp.gamma_prime.push(Vec::new());
        dp.gamma.push(blocks);
        let a = dp.alpha_from(t);
        dp.alpha.push(a);
        alphas.push(dp.alpha(t as isize).to_vec());
    }
    Ok(alphas)
}

/// Forward weights `α[0] .. α[n]` from the factored recurrence.
pub fn rns_forward_alphas<S: Semiring>(
    sig: PdaSignature,
    deltas: &[TransitionWeights<S::Elem>],
) -> Result<Vec<Vec<S::Elem>>> {
    let mut dp = RnsDp::<S>::new(sig);
    let mut alphas = vec![dp.alpha(0).to_vec()];
    for (idx, delta) in deltas.iter().enumerate() {
        dp.step(idx + 1, delta, None)?;
        alphas.push(dp.alpha((idx + 1) as isize).to_vec());
    }
    Ok(alphas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Log, Real};
    use crate::stack::pda::Transition;

    fn sig(q: usize, g: usize) -> PdaSignature {
        PdaSignature::new(q, g).unwrap()
    }

    #[test]
    fn single_pair_reading_is_one() {
        let s = sig(1, 1);
        let deltas: Vec<_> = [0.3, 2.0, 7.5]
            .iter()
            .map(|&w| TransitionWeights::filled(&s, w))
            .collect();
        for r in rns_readings::<Real>(s, &deltas).unwrap() {
            assert_eq!(r, vec![1.0]);
        }
        for r in rns_readings::<Log>(s, &deltas).unwrap() {
            assert!((r[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn push_versus_replace_three_to_one() {
        let s = sig(1, 2);
        let mut d = TransitionWeights::filled(&s, 0.0);
        d.set(&s, Transition::Push { q: 0, x: 0, r: 0, y: 1 }, 3.0);
        d.set(&s, Transition::Replace { q: 0, x: 0, r: 0, y: 0 }, 1.0);
        let r = rns_readings::<Real>(s, &[d.clone()]).unwrap();
        assert_eq!(r[0], vec![1.0, 0.0]);
        assert_eq!(r[1], vec![0.25, 0.75]);
        let r = rns_readings::<Log>(s, &[d]).unwrap();
        assert!((r[1][1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn push_then_pop_uncovers_bottom() {
        let s = sig(1, 2);
        let mut d1 = TransitionWeights::filled(&s, 0.0);
        d1.set(&s, Transition::Push { q: 0, x: 0, r: 0, y: 1 }, 1.0);
        let mut d2 = TransitionWeights::filled(&s, 0.0);
        d2.set(&s, Transition::Pop { q: 0, x: 1, r: 0 }, 1.0);
        let r = rns_readings::<Real>(s, &[d1, d2]).unwrap();
        assert_eq!(r[1], vec![0.0, 1.0]);
        assert_eq!(r[2], vec![1.0, 0.0]);
    }

    #[test]
    fn bottom_is_replaceable_but_not_poppable() {
        let s = sig(1, 2);
        let mut d = TransitionWeights::filled(&s, 0.0);
        d.set(&s, Transition::Pop { q: 0, x: 0, r: 0 }, 1.0);
        let err = rns_readings::<Real>(s, &[d]).unwrap_err();
        assert!(matches!(err, Error::NoSurvivingRuns(1)));

        let mut d = TransitionWeights::filled(&s, 0.0);
        d.set(&s, Transition::Replace { q: 0, x: 0, r: 0, y: 1 }, 1.0);
        let r = rns_readings::<Real>(s, &[d]).unwrap();
        assert_eq!(r[1], vec![0.0, 1.0]);
    }

    #[test]
    fn out_of_order_step_rejected() {
        let s = sig(1, 1);
        let mut dp = RnsDp::<Real>::new(s);
        let d = TransitionWeights::filled(&s, 1.0);
        assert!(matches!(
            dp.step(2, &d, None),
            Err(Error::OutOfOrder { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn reading_normalization() {
        assert_eq!(rns_reading::<Real>(&[2.0, 2.0], 3).unwrap(), vec![0.5, 0.5]);
        assert_eq!(
            rns_reading::<Real>(&[0.0, 5.0, 0.0, 0.0], 3).unwrap(),
            vec![0.0, 1.0, 0.0, 0.0]
        );
        assert!(matches!(
            rns_reading::<Real>(&[0.0, 0.0], 4),
            Err(Error::NoSurvivingRuns(4))
        ));
    }

    #[test]
    fn vector_push_then_replace_keeps_vector() {
        let s = sig(1, 3);
        let mut d1 = TransitionWeights::filled(&s, 0.0);
        d1.set(&s, Transition::Push { q: 0, x: 0, r: 0, y: 1 }, 1.0);
        let mut d2 = TransitionWeights::filled(&s, 0.0);
        d2.set(&s, Transition::Replace { q: 0, x: 1, r: 0, y: 2 }, 1.0);
        let v0 = [0.5, 0.5];
        let u = vec![0.2, 0.9];
        let v2 = vec![0.7, 0.1];
        let r = vrns_readings::<Real>(s, &[d1, d2], &v0, &[u.clone(), v2], ZetaInit::Indicator).unwrap();
        assert_eq!(r[0], vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(r[1], vec![0.0, 0.0, 0.2, 0.9, 0.0, 0.0]);
        assert_eq!(r[2], vec![0.0, 0.0, 0.0, 0.0, 0.2, 0.9]);
    }
}
