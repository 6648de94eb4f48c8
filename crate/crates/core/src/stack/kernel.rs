//! Training-time RNS / VRNS kernel.
//!
//! Same recurrence as [`super::rns::RnsDp`], but every `γ`, `γ'` and `α`
//! block is stored in real space as `exp(s) · M` with `max |M| = 1`, and
//! `ζ` / `η` share the scale of the matching `γ` / `α` block. Each `Δ[t]` is
//! divided by its largest entry before use; readings are invariant under a
//! per-timestep rescaling of `Δ[t]`, so this changes nothing but the range
//! of the stored numbers.
//!
//! The reverse pass works directly on the `M` blocks with the scales held
//! fixed. Each timestep is one tape node; the nodes share the kernel through
//! an `Rc<RefCell<_>>` and are visited last-to-first by the tape's backward
//! pass.

use std::cell::RefCell;
use std::rc::Rc;

use super::pda::PdaSignature;
use super::rns::ZetaInit;
use crate::autodiff::{Array, CustomOp, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
struct Scaled {
    s: f64,
    m: Vec<f64>,
}

/// `exp(a - out)`, treating empty blocks (`-inf` scale) as contributing 0.
#[inline]
fn weight(a: f64, out: f64) -> f64 {
    if a == f64::NEG_INFINITY || out == f64::NEG_INFINITY {
        0.0
    } else {
        (a - out).exp()
    }
}

/// Rescale `main` (and `companion`) by the largest magnitude in either and
/// return the new log scale.
fn normalize(s_ref: f64, main: &mut [f64], companion: Option<&mut [f64]>) -> f64 {
    let mut mx = main.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(c) = companion.as_deref() {
        mx = c.iter().fold(mx, |m, v| m.max(v.abs()));
    }
    if mx == 0.0 || s_ref == f64::NEG_INFINITY {
        main.iter_mut().for_each(|v| *v = 0.0);
        if let Some(c) = companion {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return f64::NEG_INFINITY;
    }
    let inv = 1.0 / mx;
    main.iter_mut().for_each(|v| *v *= inv);
    if let Some(c) = companion {
        c.iter_mut().for_each(|v| *v *= inv);
    }
    s_ref + mx.ln()
}

/// `Δ[t]` divided by its largest entry, in the flat `push ++ replace ++ pop`
/// layout.
fn normalized_delta(log_delta: &[f64]) -> Result<Vec<f64>> {
    let mx = log_delta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return Err(Error::NonFinite { op: "stack_step" });
    }
    log_delta
        .iter()
        .map(|&x| {
            if x.is_nan() || x == f64::INFINITY {
                Err(Error::NonFinite { op: "stack_step" })
            } else {
                Ok((x - mx).exp())
            }
        })
        .collect()
}

/// Incremental RNS (or VRNS, when constructed with vectors) over one sequence.
pub struct StackKernel {
    sig: PdaSignature,
    /// Stack vector dimension; 0 for the plain RNS.
    m: usize,
    init: ZetaInit,
    /// `g[t][i + 1]`
    g: Vec<Vec<Scaled>>,
    /// `z[t][i + 1]`, scale shared with `g[t][i + 1]`.
    z: Vec<Vec<Vec<f64>>>,
    /// `gp[t][k]`
    gp: Vec<Vec<Scaled>>,
    /// `a[i + 1]`
    a: Vec<Scaled>,
    /// `e[t]`, scale shared with `a[t + 1]`.
    e: Vec<Vec<f64>>,
    /// Normalized `Δ[t]` at index `t - 1`.
    deltas: Vec<Vec<f64>>,
    pushed: Vec<Vec<f64>>,
    readings: Vec<Vec<f64>>,
    adj: Option<Adjoints>,
    /// Next timestep the reverse pass expects.
    bw_next: Option<usize>,
}

struct Adjoints {
    g: Vec<Vec<Vec<f64>>>,
    z: Vec<Vec<Vec<f64>>>,
    gp: Vec<Vec<Vec<f64>>>,
    a: Vec<Vec<f64>>,
    e: Vec<Vec<f64>>,
}

impl StackKernel {
    /// Plain RNS kernel, initialized through timestep 0.
    pub fn new(sig: PdaSignature) -> Self {
        Self::build(sig, &[], ZetaInit::Indicator)
    }

    /// VRNS kernel with initial bottom vector `v0`.
    pub fn with_vectors(sig: PdaSignature, v0: &[f64], init: ZetaInit) -> Result<Self> {
        if v0.is_empty() {
            return Err(Error::Dimension("stack vectors need dimension >= 1".into()));
        }
        Ok(Self::build(sig, v0, init))
    }

    fn build(sig: PdaSignature, v0: &[f64], init: ZetaInit) -> Self {
        let d = sig.pairs();
        let m = v0.len();
        let bottom = sig.pair(PdaSignature::START, PdaSignature::BOTTOM);
        let mut g00 = vec![0.0; d * d];
        g00[bottom * d + bottom] = 1.0;
        let mut a0 = vec![0.0; d];
        a0[bottom] = 1.0;
        let mut z00 = vec![0.0; d * d * m];
        if m > 0 {
            match init {
                ZetaInit::Indicator => {
                    let e = bottom * d + bottom;
                    z00[e * m..(e + 1) * m].copy_from_slice(v0);
                }
                ZetaInit::AllPairs => {
                    for e in 0..d * d {
                        z00[e * m..(e + 1) * m].copy_from_slice(v0);
                    }
                }
            }
        }
        let s00 = normalize(0.0, &mut g00, Some(&mut z00));
        let mut k = StackKernel {
            sig,
            m,
            init,
            g: vec![vec![Scaled { s: s00, m: g00 }]],
            z: vec![vec![z00]],
            gp: vec![Vec::new()],
            a: vec![Scaled { s: 0.0, m: a0 }],
            e: Vec::new(),
            deltas: Vec::new(),
            pushed: Vec::new(),
            readings: Vec::new(),
            adj: None,
            bw_next: None,
        };
        k.push_alpha(0);
        let r0 = k.compute_reading(0).expect("initial configuration has mass");
        k.readings.push(r0);
        k
    }

    pub fn signature(&self) -> &PdaSignature {
        &self.sig
    }

    pub fn vec_dim(&self) -> usize {
        self.m
    }

    pub fn reading_len(&self) -> usize {
        self.sig.pairs() * self.m.max(1)
    }

    /// Last computed timestep.
    pub fn last_t(&self) -> usize {
        self.g.len() - 1
    }

    pub fn reading(&self, t: usize) -> &[f64] {
        &self.readings[t]
    }

    /// Advance one timestep from unnormalized log weights `log Δ[t]` (flat
    /// `push ++ replace ++ pop` layout) and, for VRNS, the pushed vector.
    /// Entries of `-inf` are zero weights. Returns the new reading.
    pub fn step(&mut self, log_delta: &[f64], pushed: Option<&[f64]>) -> Result<Vec<f64>> {
        if log_delta.len() != self.sig.delta_len() {
            return Err(Error::Dimension(format!(
                "log Δ has {} entries, expected {}",
                log_delta.len(),
                self.sig.delta_len()
            )));
        }
        let v = match (self.m, pushed) {
            (0, _) => Vec::new(),
            (m, Some(v)) if v.len() == m => v.to_vec(),
            (m, Some(v)) => {
                return Err(Error::Dimension(format!(
                    "pushed vector has dimension {}, stack vectors have {m}",
                    v.len()
                )))
            }
            (_, None) => return Err(Error::Dimension("vector stack step needs a pushed vector".into())),
        };
        let delta = normalized_delta(log_delta)?;
        self.deltas.push(delta);
        self.pushed.push(v);
        let t = self.g.len();
        self.forward_blocks(t);
        self.push_alpha(t);
        match self.compute_reading(t) {
            Ok(r) => {
                self.readings.push(r.clone());
                Ok(r)
            }
            Err(e) => {
                self.g.pop();
                self.z.pop();
                self.gp.pop();
                self.a.pop();
                if self.m > 0 {
                    self.e.pop();
                }
                self.deltas.pop();
                self.pushed.pop();
                Err(e)
            }
        }
    }

    fn forward_blocks(&mut self, t: usize) {
        let (d, nq, ng, m) = (self.sig.pairs(), self.sig.num_states, self.sig.stack_symbols, self.m);
        let pl = self.sig.push_len();
        let delta = &self.deltas[t - 1];
        let (push, replace, pop) = (&delta[..pl], &delta[pl..2 * pl], &delta[2 * pl..]);

        let mut gp_t = Vec::with_capacity(t.saturating_sub(1));
        for k in 0..t.saturating_sub(1) {
            let src = &self.g[t - 1][k + 1];
            let mut raw = vec![0.0; d * nq];
            if src.s != f64::NEG_INFINITY {
                for uy in 0..d {
                    let row = &src.m[uy * d..(uy + 1) * d];
                    let out = &mut raw[uy * nq..(uy + 1) * nq];
                    for (sz, &gv) in row.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let prow = &pop[sz * nq..(sz + 1) * nq];
                        for r in 0..nq {
                            out[r] += gv * prow[r];
                        }
                    }
                }
            }
            let s = normalize(src.s, &mut raw, None);
            gp_t.push(Scaled { s, m: raw });
        }

        let mut g_t = Vec::with_capacity(t + 1);
        let mut z_t = Vec::with_capacity(t + 1);
        for slot in 0..t {
            let prev = &self.g[t - 1][slot];
            let mut s_ref = prev.s;
            for k in slot..t - 1 {
                s_ref = s_ref.max(self.g[k][slot].s + gp_t[k].s);
            }
            let mut raw = vec![0.0; d * d];
            let mut zraw = vec![0.0; d * d * m];
            if s_ref != f64::NEG_INFINITY {
                let w = weight(prev.s, s_ref);
                if w != 0.0 {
                    matmul_acc(&prev.m, replace, &mut raw, d, d, d, w);
                    if m > 0 {
                        vec_matmul_acc(&self.z[t - 1][slot], replace, &mut zraw, d, m, w);
                    }
                }
                for k in slot..t - 1 {
                    let gk = &self.g[k][slot];
                    let w = weight(gk.s + gp_t[k].s, s_ref);
                    if w == 0.0 {
                        continue;
                    }
                    let gpk = &gp_t[k].m;
                    pop_acc(&gk.m, gpk, &mut raw, d, nq, ng, 1, w);
                    if m > 0 {
                        pop_acc(&self.z[k][slot], gpk, &mut zraw, d, nq, ng, m, w);
                    }
                }
            }
            let s = normalize(s_ref, &mut raw, if m > 0 { Some(&mut zraw) } else { None });
            g_t.push(Scaled { s, m: raw });
            z_t.push(zraw);
        }
        let mut raw = push.to_vec();
        let mut zraw = vec![0.0; d * d * m];
        if m > 0 {
            let v = &self.pushed[t - 1];
            for e in 0..d * d {
                for j in 0..m {
                    zraw[e * m + j] = push[e] * v[j];
                }
            }
        }
        let s = normalize(0.0, &mut raw, if m > 0 { Some(&mut zraw) } else { None });
        g_t.push(Scaled { s, m: raw });
        z_t.push(zraw);

        self.gp.push(gp_t);
        self.g.push(g_t);
        self.z.push(z_t);
    }

    /// `α[t]` (and `η_t`) from the blocks `γ[· → t]`.
    fn push_alpha(&mut self, t: usize) {
        let (d, m) = (self.sig.pairs(), self.m);
        let mut s_ref = f64::NEG_INFINITY;
        for slot in 0..=t {
            s_ref = s_ref.max(self.a[slot].s + self.g[t][slot].s);
        }
        let mut raw = vec![0.0; d];
        let mut eraw = vec![0.0; d * m];
        if s_ref != f64::NEG_INFINITY {
            for slot in 0..=t {
                let (a, g) = (&self.a[slot], &self.g[t][slot]);
                let w = weight(a.s + g.s, s_ref);
                if w == 0.0 {
                    continue;
                }
                for qx in 0..d {
                    let aw = a.m[qx] * w;
                    if aw == 0.0 {
                        continue;
                    }
                    let row = &g.m[qx * d..(qx + 1) * d];
                    for ry in 0..d {
                        raw[ry] += aw * row[ry];
                    }
                    if m > 0 {
                        let zrow = &self.z[t][slot][qx * d * m..(qx + 1) * d * m];
                        for (o, zv) in eraw.iter_mut().zip(zrow) {
                            *o += aw * zv;
                        }
                    }
                }
            }
        }
        let s = normalize(s_ref, &mut raw, if m > 0 { Some(&mut eraw) } else { None });
        self.a.push(Scaled { s, m: raw });
        if m > 0 {
            self.e.push(eraw);
        }
    }

    fn compute_reading(&self, t: usize) -> Result<Vec<f64>> {
        let a = &self.a[t + 1];
        let total: f64 = a.m.iter().sum();
        if a.s == f64::NEG_INFINITY || total == 0.0 {
            return Err(Error::NoSurvivingRuns(t));
        }
        let src = if self.m > 0 { &self.e[t] } else { &a.m };
        Ok(src.iter().map(|v| v / total).collect())
    }

    fn reset_adjoints(&mut self) {
        let (d, nq, m) = (self.sig.pairs(), self.sig.num_states, self.m);
        let tl = self.g.len();
        self.adj = Some(Adjoints {
            g: (0..tl).map(|t| vec![vec![0.0; d * d]; t + 1]).collect(),
            z: if m > 0 {
                (0..tl).map(|t| vec![vec![0.0; d * d * m]; t + 1]).collect()
            } else {
                Vec::new()
            },
            gp: (0..tl).map(|t| vec![vec![0.0; d * nq]; t.saturating_sub(1)]).collect(),
            a: vec![vec![0.0; d]; tl + 1],
            e: if m > 0 { vec![vec![0.0; d * m]; tl] } else { Vec::new() },
        });
    }

    fn begin_backward(&mut self, t: usize) {
        if self.bw_next != Some(t) || self.adj.is_none() {
            self.reset_adjoints();
        }
        self.bw_next = t.checked_sub(1);
    }

    /// Reverse step for timestep `t >= 1`. Returns `∂L/∂ log Δ[t]` and, for
    /// VRNS, `∂L/∂v_t`.
    fn backward_step(&mut self, t: usize, rbar: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        self.begin_backward(t);
        let mut adj = self.adj.take().expect("allocated");
        self.backward_reading(&mut adj, t, rbar);
        self.backward_alpha(&mut adj, t);

        let (d, nq, ng, m) = (self.sig.pairs(), self.sig.num_states, self.sig.stack_symbols, self.m);
        let pl = self.sig.push_len();
        let delta = &self.deltas[t - 1];
        let (push, replace, pop) = (&delta[..pl], &delta[pl..2 * pl], &delta[2 * pl..]);
        let mut dpush = vec![0.0; pl];
        let mut drep = vec![0.0; pl];
        let mut dpop = vec![0.0; pop.len()];
        let mut dv = vec![0.0; m];

        // Push block.
        {
            let w = weight(0.0, self.g[t][t].s);
            let gbar = &adj.g[t][t];
            for e in 0..d * d {
                dpush[e] += w * gbar[e];
            }
            if m > 0 {
                let v = &self.pushed[t - 1];
                let zbar = &adj.z[t][t];
                for e in 0..d * d {
                    let mut acc = 0.0;
                    for j in 0..m {
                        acc += zbar[e * m + j] * v[j];
                        dv[j] += w * zbar[e * m + j] * push[e];
                    }
                    dpush[e] += w * acc;
                }
            }
        }

        // Replace and pop terms.
        for slot in 0..t {
            let s_out = self.g[t][slot].s;
            if s_out == f64::NEG_INFINITY {
                continue;
            }
            let gbar = std::mem::take(&mut adj.g[t][slot]);
            let zbar = if m > 0 { std::mem::take(&mut adj.z[t][slot]) } else { Vec::new() };

            let prev = &self.g[t - 1][slot];
            let w = weight(prev.s, s_out);
            if w != 0.0 {
                // ḡ[t-1] += w ḡ[t] Rᵀ ; R̄ += w g[t-1]ᵀ ḡ[t]
                matmul_bt_acc(&gbar, replace, &mut adj.g[t - 1][slot], d, d, d, w);
                matmul_at_acc(&prev.m, &gbar, &mut drep, d, d, d, w);
                if m > 0 {
                    vec_matmul_bt_acc(&zbar, replace, &mut adj.z[t - 1][slot], d, m, w);
                    vec_matmul_at_acc(&self.z[t - 1][slot], &zbar, &mut drep, d, m, w);
                }
            }
            for k in slot..t - 1 {
                let gk = &self.g[k][slot];
                let gpk = &self.gp[t][k];
                let w = weight(gk.s + gpk.s, s_out);
                if w == 0.0 {
                    continue;
                }
                pop_backward(
                    &gk.m,
                    &gpk.m,
                    &gbar,
                    &mut adj.g[k][slot],
                    &mut adj.gp[t][k],
                    d,
                    nq,
                    ng,
                    1,
                    w,
                );
                if m > 0 {
                    pop_backward(
                        &self.z[k][slot],
                        &gpk.m,
                        &zbar,
                        &mut adj.z[k][slot],
                        &mut adj.gp[t][k],
                        d,
                        nq,
                        ng,
                        m,
                        w,
                    );
                }
            }
        }

        // γ'[k → t] = γ[k → t-1] · P
        for k in 0..t.saturating_sub(1) {
            let s_out = self.gp[t][k].s;
            if s_out == f64::NEG_INFINITY {
                continue;
            }
            let src = &self.g[t - 1][k + 1];
            let w = weight(src.s, s_out);
            if w == 0.0 {
                continue;
            }
            let gpbar = std::mem::take(&mut adj.gp[t][k]);
            matmul_bt_acc(&gpbar, pop, &mut adj.g[t - 1][k + 1], d, nq, d, w);
            matmul_at_acc(&src.m, &gpbar, &mut dpop, d, d, nq, w);
        }

        let mut dlog = dpush;
        dlog.extend_from_slice(&drep);
        dlog.extend_from_slice(&dpop);
        for (g, dv) in dlog.iter_mut().zip(delta) {
            *g *= dv;
        }
        self.adj = Some(adj);
        (dlog, dv)
    }

    /// Reverse step for timestep 0 (VRNS only). Returns `∂L/∂v0`.
    fn backward_initial(&mut self, rbar: Option<&[f64]>) -> Vec<f64> {
        self.begin_backward(0);
        let mut adj = self.adj.take().expect("allocated");
        self.backward_reading(&mut adj, 0, rbar);
        self.backward_alpha(&mut adj, 0);
        let (d, m) = (self.sig.pairs(), self.m);
        let w = weight(0.0, self.g[0][0].s);
        let zbar = &adj.z[0][0];
        let mut dv0 = vec![0.0; m];
        let bottom = self.sig.pair(PdaSignature::START, PdaSignature::BOTTOM);
        let support: Vec<usize> = match self.init {
            ZetaInit::Indicator => vec![bottom * d + bottom],
            ZetaInit::AllPairs => (0..d * d).collect(),
        };
        for e in support {
            for j in 0..m {
                dv0[j] += w * zbar[e * m + j];
            }
        }
        self.adj = Some(adj);
        dv0
    }

    fn backward_reading(&self, adj: &mut Adjoints, t: usize, rbar: Option<&[f64]>) {
        let Some(rbar) = rbar else { return };
        let a = &self.a[t + 1];
        let total: f64 = a.m.iter().sum();
        let r = &self.readings[t];
        let dot: f64 = rbar.iter().zip(r).map(|(g, v)| g * v).sum();
        if self.m > 0 {
            for (e, g) in adj.e[t].iter_mut().zip(rbar) {
                *e += g / total;
            }
            for v in adj.a[t + 1].iter_mut() {
                *v -= dot / total;
            }
        } else {
            for (v, g) in adj.a[t + 1].iter_mut().zip(rbar) {
                *v += (g - dot) / total;
            }
        }
    }

    /// Reverse of `α[t] = Σ_i α[i] γ[i → t]` and `η_t = Σ_i α[i] ζ[i → t]`.
    fn backward_alpha(&self, adj: &mut Adjoints, t: usize) {
        let (d, m) = (self.sig.pairs(), self.m);
        let out = &self.a[t + 1];
        if out.s == f64::NEG_INFINITY {
            return;
        }
        let abar = std::mem::take(&mut adj.a[t + 1]);
        let ebar = if m > 0 { std::mem::take(&mut adj.e[t]) } else { Vec::new() };
        for slot in 0..=t {
            let (a, g) = (&self.a[slot], &self.g[t][slot]);
            let w = weight(a.s + g.s, out.s);
            if w == 0.0 {
                continue;
            }
            let gbar = &mut adj.g[t][slot];
            for qx in 0..d {
                let row = &g.m[qx * d..(qx + 1) * d];
                let mut acc = 0.0;
                for ry in 0..d {
                    acc += row[ry] * abar[ry];
                }
                let aw = w * a.m[qx];
                let grow = &mut gbar[qx * d..(qx + 1) * d];
                for ry in 0..d {
                    grow[ry] += aw * abar[ry];
                }
                if m > 0 {
                    let zrow = &self.z[t][slot][qx * d * m..(qx + 1) * d * m];
                    for (zv, eb) in zrow.iter().zip(&ebar) {
                        acc += zv * eb;
                    }
                    let zgrow = &mut adj.z[t][slot][qx * d * m..(qx + 1) * d * m];
                    for (zg, eb) in zgrow.iter_mut().zip(&ebar) {
                        *zg += aw * eb;
                    }
                }
                adj.a[slot][qx] += w * acc;
            }
        }
    }
}

/// `c += w · a[n×k] · b[k×p]`
fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, p: usize, w: f64) {
    for i in 0..n {
        let crow = &mut c[i * p..(i + 1) * p];
        for l in 0..k {
            let av = a[i * k + l] * w;
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * p..(l + 1) * p];
            for j in 0..p {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// `c += w · a[n×p] · b[k×p]ᵀ`
fn matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, p: usize, k: usize, w: f64) {
    for i in 0..n {
        let arow = &a[i * p..(i + 1) * p];
        for l in 0..k {
            let brow = &b[l * p..(l + 1) * p];
            let mut acc = 0.0;
            for j in 0..p {
                acc += arow[j] * brow[j];
            }
            c[i * k + l] += w * acc;
        }
    }
}

/// `c += w · a[n×k]ᵀ · b[n×p]`
fn matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, p: usize, w: f64) {
    for i in 0..n {
        let brow = &b[i * p..(i + 1) * p];
        for l in 0..k {
            let av = a[i * k + l] * w;
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[l * p..(l + 1) * p];
            for j in 0..p {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// Vector-valued blocks `[qx, sz, j]` times a `[sz, ry]` matrix:
/// `c[qx, ry, j] += w Σ_sz a[qx, sz, j] b[sz, ry]`.
fn vec_matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], d: usize, m: usize, w: f64) {
    for qx in 0..d {
        for sz in 0..d {
            let av = &a[(qx * d + sz) * m..(qx * d + sz + 1) * m];
            if av.iter().all(|&v| v == 0.0) {
                continue;
            }
            for ry in 0..d {
                let bv = b[sz * d + ry] * w;
                let cv = &mut c[(qx * d + ry) * m..(qx * d + ry + 1) * m];
                for j in 0..m {
                    cv[j] += av[j] * bv;
                }
            }
        }
    }
}

/// `c[qx, sz, j] += w Σ_ry a[qx, ry, j] b[sz, ry]`
fn vec_matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], d: usize, m: usize, w: f64) {
    for qx in 0..d {
        for ry in 0..d {
            let av = &a[(qx * d + ry) * m..(qx * d + ry + 1) * m];
            for sz in 0..d {
                let bv = b[sz * d + ry] * w;
                let cv = &mut c[(qx * d + sz) * m..(qx * d + sz + 1) * m];
                for j in 0..m {
                    cv[j] += av[j] * bv;
                }
            }
        }
    }
}

/// `c[sz, ry] += w Σ_{qx, j} a[qx, sz, j] b[qx, ry, j]`
fn vec_matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], d: usize, m: usize, w: f64) {
    for qx in 0..d {
        for sz in 0..d {
            let av = &a[(qx * d + sz) * m..(qx * d + sz + 1) * m];
            for ry in 0..d {
                let bv = &b[(qx * d + ry) * m..(qx * d + ry + 1) * m];
                let mut acc = 0.0;
                for j in 0..m {
                    acc += av[j] * bv[j];
                }
                c[sz * d + ry] += w * acc;
            }
        }
    }
}

/// Pop term: `out[qx, (r, y), j] += w Σ_u g[qx, (u, y), j] gp[(u, y), r]`.
#[allow(clippy::too_many_arguments)]
fn pop_acc(g: &[f64], gp: &[f64], out: &mut [f64], d: usize, nq: usize, ng: usize, m: usize, w: f64) {
    if m == 1 {
        return pop_acc_scalar(g, gp, out, d, nq, ng, w);
    }
    for qx in 0..d {
        for u in 0..nq {
            for y in 0..ng {
                let uy = u * ng + y;
                let gv = &g[(qx * d + uy) * m..(qx * d + uy + 1) * m];
                if gv.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let gprow = &gp[uy * nq..(uy + 1) * nq];
                for r in 0..nq {
                    let c = gprow[r] * w;
                    let o = &mut out[(qx * d + r * ng + y) * m..(qx * d + r * ng + y + 1) * m];
                    for j in 0..m {
                        o[j] += gv[j] * c;
                    }
                }
            }
        }
    }
}

fn pop_acc_scalar(g: &[f64], gp: &[f64], out: &mut [f64], d: usize, nq: usize, ng: usize, w: f64) {
    let mut scaled = [0.0f64; 8];
    for (grow, orow) in g.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        for (uy, &gv) in grow.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            let y = uy % ng;
            let gv = gv * w;
            let gprow = &gp[uy * nq..(uy + 1) * nq];
            if nq <= scaled.len() {
                for (sv, &p) in scaled.iter_mut().zip(gprow) {
                    *sv = gv * p;
                }
                for (r, &sv) in scaled[..nq].iter().enumerate() {
                    orow[r * ng + y] += sv;
                }
            } else {
                for (r, &p) in gprow.iter().enumerate() {
                    orow[r * ng + y] += gv * p;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn pop_backward(
    g: &[f64],
    gp: &[f64],
    obar: &[f64],
    gbar: &mut [f64],
    gpbar: &mut [f64],
    d: usize,
    nq: usize,
    ng: usize,
    m: usize,
    w: f64,
) {
    if m == 1 {
        for ((grow, gbrow), orow) in g.chunks_exact(d).zip(gbar.chunks_exact_mut(d)).zip(obar.chunks_exact(d)) {
            for (uy, (&gv, gb)) in grow.iter().zip(gbrow.iter_mut()).enumerate() {
                let y = uy % ng;
                let gprow = &gp[uy * nq..(uy + 1) * nq];
                let gprow_bar = &mut gpbar[uy * nq..(uy + 1) * nq];
                let mut acc = 0.0;
                for r in 0..nq {
                    let ob = orow[r * ng + y];
                    acc += ob * gprow[r];
                    gprow_bar[r] += w * gv * ob;
                }
                *gb += w * acc;
            }
        }
        return;
    }
    for qx in 0..d {
        for u in 0..nq {
            for y in 0..ng {
                let uy = u * ng + y;
                let gi = (qx * d + uy) * m;
                for r in 0..nq {
                    let oi = (qx * d + r * ng + y) * m;
                    let mut dot = 0.0;
                    for j in 0..m {
                        gbar[gi + j] += w * obar[oi + j] * gp[uy * nq + r];
                        dot += g[gi + j] * obar[oi + j];
                    }
                    gpbar[uy * nq + r] += w * dot;
                }
            }
        }
    }
}

/// Shared handle to a kernel whose timesteps are recorded on a tape.
#[derive(Clone)]
pub struct StackHandle(Rc<RefCell<StackKernel>>);

impl StackHandle {
    pub fn new(kernel: StackKernel) -> Self {
        StackHandle(Rc::new(RefCell::new(kernel)))
    }

    pub fn kernel(&self) -> std::cell::Ref<'_, StackKernel> {
        self.0.borrow()
    }

    /// Record the reading at timestep 0. For VRNS, `v0` must be the node the
    /// kernel's initial vector was taken from.
    pub fn initial_on_tape(&self, tape: &mut Tape, v0: Option<Var>) -> Result<Var> {
        let r0 = Array::vector(self.0.borrow().reading(0).to_vec());
        match v0 {
            Some(v) if self.0.borrow().vec_dim() > 0 => {
                tape.custom(Box::new(InitialNode(self.clone())), &[v], r0)
            }
            Some(_) => Err(Error::Dimension("plain RNS stack takes no initial vector".into())),
            None => Ok(tape.constant(r0)),
        }
    }

    /// Advance one timestep and record it. Returns the reading node.
    pub fn step_on_tape(&self, tape: &mut Tape, log_delta: Var, pushed: Option<Var>) -> Result<Var> {
        let reading = {
            let mut k = self.0.borrow_mut();
            let pv = pushed.map(|p| tape.value(p).data().to_vec());
            k.step(tape.value(log_delta).data(), pv.as_deref())?
        };
        let t = self.0.borrow().last_t();
        let mut inputs = vec![log_delta];
        inputs.extend(pushed);
        tape.custom(
            Box::new(StepNode { kernel: self.clone(), t }),
            &inputs,
            Array::vector(reading),
        )
    }
}

struct StepNode {
    kernel: StackHandle,
    t: usize,
}

impl CustomOp for StepNode {
    fn name(&self) -> &'static str {
        "stack_step"
    }

    fn stateful(&self) -> bool {
        true
    }

    fn backward(&self, inputs: &[&Array], _output: &Array, grad: Option<&Array>) -> Result<Vec<Option<Array>>> {
        let mut k = self.kernel.0.borrow_mut();
        let (dlog, dv) = k.backward_step(self.t, grad.map(|g| g.data()));
        let mut out = vec![Some(Array::new(inputs[0].shape().to_vec(), dlog)?)];
        if inputs.len() > 1 {
            out.push(Some(Array::new(inputs[1].shape().to_vec(), dv)?));
        }
        Ok(out)
    }
}

struct InitialNode(StackHandle);

impl CustomOp for InitialNode {
    fn name(&self) -> &'static str {
        "stack_initial"
    }

    fn stateful(&self) -> bool {
        true
    }

    fn backward(&self, inputs: &[&Array], _output: &Array, grad: Option<&Array>) -> Result<Vec<Option<Array>>> {
        let mut k = self.0 .0.borrow_mut();
        let dv0 = k.backward_initial(grad.map(|g| g.data()));
        Ok(vec![Some(Array::new(inputs[0].shape().to_vec(), dv0)?)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, GradCheckConfig, Log, ParamId, ParamStore};
    use crate::stack::pda::TransitionWeights;
    use crate::stack::rns::{rns_readings, vrns_readings};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logits(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-spread..spread)).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len()
            && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-300) || (x - y).abs() < 1e-300)
    }

    #[test]
    fn matches_log_space_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (q, g) in [(1, 2), (2, 2), (2, 3), (3, 1)] {
            let sig = PdaSignature::new(q, g).unwrap();
            let logits: Vec<Vec<f64>> = (0..9).map(|_| random_logits(&mut rng, sig.delta_len(), 3.0)).collect();
            let deltas: Vec<_> = logits
                .iter()
                .map(|l| TransitionWeights::from_flat(&sig, l).unwrap().map(|v| v.exp()))
                .collect();
            let reference = rns_readings::<Log>(sig, &deltas).unwrap();
            let mut k = StackKernel::new(sig);
            assert!(close(k.reading(0), &reference[0], 1e-12));
            for (t, l) in logits.iter().enumerate() {
                let r = k.step(l, None).unwrap();
                assert!(close(&r, &reference[t + 1], 1e-10), "t={} {:?} {:?}", t + 1, r, reference[t + 1]);
            }
        }
    }

    #[test]
    fn vector_kernel_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for init in [ZetaInit::Indicator, ZetaInit::AllPairs] {
            let sig = PdaSignature::new(2, 2).unwrap();
            let m = 2;
            let v0: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..0.95)).collect();
            let logits: Vec<Vec<f64>> = (0..7).map(|_| random_logits(&mut rng, sig.delta_len(), 2.0)).collect();
            let pushed: Vec<Vec<f64>> = (0..7).map(|_| (0..m).map(|_| rng.gen_range(0.05..0.95)).collect()).collect();
            let deltas: Vec<_> = logits
                .iter()
                .map(|l| TransitionWeights::from_flat(&sig, l).unwrap().map(|v| v.exp()))
                .collect();
            let reference = vrns_readings::<Log>(sig, &deltas, &v0, &pushed, init).unwrap();
            let mut k = StackKernel::with_vectors(sig, &v0, init).unwrap();
            assert!(close(k.reading(0), &reference[0], 1e-12));
            for t in 0..7 {
                let r = k.step(&logits[t], Some(&pushed[t])).unwrap();
                assert!(close(&r, &reference[t + 1], 1e-10), "{init:?} t={}", t + 1);
            }
        }
    }

    #[test]
    fn long_sequences_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sig = PdaSignature::new(2, 2).unwrap();
        let mut k = StackKernel::new(sig);
        for _ in 0..200 {
            let l = random_logits(&mut rng, sig.delta_len(), 40.0);
            let r = k.step(&l, None).unwrap();
            assert!(r.iter().all(|v| v.is_finite()));
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_via_neg_infinity() {
        let sig = PdaSignature::new(1, 2).unwrap();
        let mut l = vec![f64::NEG_INFINITY; sig.delta_len()];
        let mut d = TransitionWeights::from_flat(&sig, &l).unwrap();
        d.set(&sig, crate::stack::Transition::Push { q: 0, x: 0, r: 0, y: 1 }, 3f64.ln());
        d.set(&sig, crate::stack::Transition::Replace { q: 0, x: 0, r: 0, y: 0 }, 0.0);
        l = d.to_flat();
        let mut k = StackKernel::new(sig);
        let r = k.step(&l, None).unwrap();
        assert!((r[0] - 0.25).abs() < 1e-15 && (r[1] - 0.75).abs() < 1e-15);
    }

    /// Loss `Σ_t c_t · r_t` over a sequence of logits given as parameters.
    fn linear_loss(
        store: &ParamStore,
        sig: PdaSignature,
        n: usize,
        m: usize,
        coeffs: &[Vec<f64>],
        tape: &mut Tape,
    ) -> Result<Var> {
        let mut readings = Vec::new();
        let handle = if m > 0 {
            let w = tape.param(store, ParamId(0));
            let v0 = tape.sigmoid(w)?;
            let v0_val = tape.value(v0).data().to_vec();
            let handle = StackHandle::new(StackKernel::with_vectors(sig, &v0_val, ZetaInit::Indicator)?);
            readings.push(handle.initial_on_tape(tape, Some(v0))?);
            handle
        } else {
            let handle = StackHandle::new(StackKernel::new(sig));
            readings.push(handle.initial_on_tape(tape, None)?);
            handle
        };
        for t in 0..n {
            let base = if m > 0 { 1 + 2 * t } else { t };
            let l = tape.param(store, ParamId(base));
            let pushed = if m > 0 {
                let p = tape.param(store, ParamId(base + 1));
                Some(tape.sigmoid(p)?)
            } else {
                None
            };
            readings.push(handle.step_on_tape(tape, l, pushed)?);
        }
        let mut total = None;
        for (r, c) in readings.iter().zip(coeffs) {
            let cv = tape.constant(Array::vector(c.clone()));
            let prod = tape.mul(*r, cv)?;
            let s = tape.sum(prod)?;
            // Nonlinear in the readings so that cross-timestep adjoints matter.
            let s = tape.tanh(s)?;
            total = Some(match total {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
        }
        Ok(total.expect("nonempty"))
    }

    fn gradient_check(m: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sig = PdaSignature::new(2, 2).unwrap();
        let n = 5;
        let mut store = ParamStore::new();
        if m > 0 {
            store.add("w_v", Array::vector(random_logits(&mut rng, m, 1.0)));
        }
        for t in 0..n {
            store.add(format!("logits{t}"), Array::vector(random_logits(&mut rng, sig.delta_len(), 1.5)));
            if m > 0 {
                store.add(format!("push{t}"), Array::vector(random_logits(&mut rng, m, 1.0)));
            }
        }
        let rlen = sig.pairs() * m.max(1);
        let coeffs: Vec<Vec<f64>> = (0..=n).map(|_| random_logits(&mut rng, rlen, 2.0)).collect();
        let mut tape = Tape::new();
        let root = linear_loss(&store, sig, n, m, &coeffs, &mut tape).unwrap();
        let grads = tape.backward(root, &store).unwrap();
        // A second backward pass over the same tape must give the same answer.
        let again = tape.backward(root, &store).unwrap();
        for (a, b) in grads.iter().zip(again.iter()) {
            assert_eq!(a, b);
        }
        let f = |s: &ParamStore| -> Result<f64> {
            let mut tape = Tape::new();
            let root = linear_loss(s, sig, n, m, &coeffs, &mut tape)?;
            Ok(tape.value(root).item())
        };
        let report = finite_diff_check(f, &store, &grads, GradCheckConfig::default()).unwrap();
        assert!(report.pass(), "{:?}", report.worst());
    }

    #[test]
    fn rns_gradients_match_finite_differences() {
        gradient_check(0, 5);
    }

    #[test]
    fn vrns_gradients_match_finite_differences() {
        gradient_check(2, 6);
    }
}
