//! One-layer LSTM controller.
//!
//! Gates are computed by a single affine map over `[x_t; r_{t-1}; h_{t-1}]`
//! producing `[i; f; g; o]`, each of size `H`. Input and forget gates are
//! independent.

use rand::Rng;

use crate::autodiff::{Array, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParameters {
    /// `[4H, |x| + |r| + H]`
    pub gate_weight: Array,
    /// `[4H]`
    pub gate_bias: Array,
    /// `[V, H]`
    pub out_weight: Array,
    /// `[V]`
    pub out_bias: Array,
}

impl LstmParameters {
    pub fn zeros(input_dim: usize, reading_dim: usize, hidden: usize, vocab: usize) -> Self {
        LstmParameters {
            gate_weight: Array::zeros(&[4 * hidden, input_dim + reading_dim + hidden]),
            gate_bias: Array::zeros(&[4 * hidden]),
            out_weight: Array::zeros(&[vocab, hidden]),
            out_bias: Array::zeros(&[vocab]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.gate_bias.len() / 4
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Tape handles for the controller weights of one sequence.
#[derive(Clone, Copy, Debug)]
pub struct ControllerVars {
    pub gate_weight: Var,
    pub gate_bias: Var,
    pub out_weight: Var,
    pub out_bias: Var,
}

/// Where the controller weights live in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControllerIds {
    pub gate_weight: ParamId,
    pub gate_bias: ParamId,
    pub out_weight: ParamId,
    pub out_bias: ParamId,
}

impl ControllerIds {
    /// Register controller weights initialized uniformly in `[-0.1, 0.1]`;
    /// the output layer (outside the recurrent cell) gets Xavier uniform.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        input_dim: usize,
        reading_dim: usize,
        hidden: usize,
        vocab: usize,
        rng: &mut R,
    ) -> Self {
        let cols = input_dim + reading_dim + hidden;
        ControllerIds {
            gate_weight: store.add("lstm.weight", uniform(rng, &[4 * hidden, cols], 0.1)),
            gate_bias: store.add("lstm.bias", uniform(rng, &[4 * hidden], 0.1)),
            out_weight: store.add("output.weight", xavier(rng, vocab, hidden)),
            out_bias: store.add("output.bias", uniform(rng, &[vocab], 0.1)),
        }
    }

    pub fn load(&self, tape: &mut Tape, store: &ParamStore) -> ControllerVars {
        ControllerVars {
            gate_weight: tape.param(store, self.gate_weight),
            gate_bias: tape.param(store, self.gate_bias),
            out_weight: tape.param(store, self.out_weight),
            out_bias: tape.param(store, self.out_bias),
        }
    }
}

pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], a: f64) -> Array {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-a..=a)).collect();
    Array::new(shape.to_vec(), data).expect("shape matches data")
}

/// Xavier uniform for a `[rows, cols]` weight matrix.
pub fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, &[rows, cols], a)
}

/// One LSTM step on the tape. Returns `(h_t, c_t)`.
pub fn lstm_step_on_tape(
    tape: &mut Tape,
    p: &ControllerVars,
    h_prev: Var,
    c_prev: Var,
    x: Var,
    r_prev: Var,
) -> Result<(Var, Var)> {
    let hidden = tape.value(h_prev).len();
    let cols = tape.value(p.gate_weight).shape().get(1).copied().unwrap_or(0);
    let got = tape.value(x).len() + tape.value(r_prev).len() + hidden;
    if cols != got {
        return Err(Error::ShapeMismatch {
            op: "lstm_step",
            left: tape.value(p.gate_weight).shape().to_vec(),
            right: vec![got],
        });
    }
    let input = tape.concat(&[x, r_prev, h_prev])?;
    let gates = tape.affine(p.gate_weight, input, p.gate_bias)?;
    let i = tape.slice(gates, 0, hidden)?;
    let f = tape.slice(gates, hidden, hidden)?;
    let g = tape.slice(gates, 2 * hidden, hidden)?;
    let o = tape.slice(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let o = tape.sigmoid(o)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

pub fn logits_on_tape(tape: &mut Tape, p: &ControllerVars, h: Var) -> Result<Var> {
    tape.affine(p.out_weight, h, p.out_bias)
}

fn constants(tape: &mut Tape, params: &LstmParameters) -> ControllerVars {
    ControllerVars {
        gate_weight: tape.constant(params.gate_weight.clone()),
        gate_bias: tape.constant(params.gate_bias.clone()),
        out_weight: tape.constant(params.out_weight.clone()),
        out_bias: tape.constant(params.out_bias.clone()),
    }
}

/// Value-level LSTM step.
pub fn lstm_step(params: &LstmParameters, state: &LstmState, x: &[f64], r_prev: &[f64]) -> Result<LstmState> {
    if state.h.len() != params.hidden() || state.c.len() != params.hidden() {
        return Err(Error::Dimension(format!(
            "state has sizes ({}, {}), controller has {} hidden units",
            state.h.len(),
            state.c.len(),
            params.hidden()
        )));
    }
    let mut tape = Tape::new();
    let p = constants(&mut tape, params);
    let h = tape.constant(Array::vector(state.h.clone()));
    let c = tape.constant(Array::vector(state.c.clone()));
    let x = tape.constant(Array::vector(x.to_vec()));
    let r = tape.constant(Array::vector(r_prev.to_vec()));
    let (h, c) = lstm_step_on_tape(&mut tape, &p, h, c, x, r)?;
    Ok(LstmState {
        h: tape.value(h).data().to_vec(),
        c: tape.value(c).data().to_vec(),
    })
}

/// Value-level output logits `y = W h + b`.
pub fn predict_logits(params: &LstmParameters, h: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = constants(&mut tape, params);
    let h = tape.constant(Array::vector(h.to_vec()));
    let y = logits_on_tape(&mut tape, &p, h)?;
    Ok(tape.value(y).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_fixed_point() {
        let p = LstmParameters::zeros(3, 2, 4, 5);
        let s = lstm_step(&p, &LstmState::zeros(4), &[1.0, 0.0, 0.0], &[0.3, 0.7]).unwrap();
        assert_eq!(s, LstmState::zeros(4));
    }

    #[test]
    fn saturated_forget_gate_drops_memory() {
        let hdim = 2;
        let mut p = LstmParameters::zeros(1, 0, hdim, 2);
        let b = p.gate_bias.data_mut();
        // i, f, g, o blocks
        b[0] = 0.4;
        b[1] = -0.3;
        b[2] = -1e9;
        b[3] = -1e9;
        b[4] = 0.8;
        b[5] = 0.2;
        let fresh = lstm_step(&p, &LstmState::zeros(hdim), &[1.0], &[]).unwrap();
        let loaded = LstmState {
            h: vec![0.0; hdim],
            c: vec![123.0, -77.0],
        };
        let after = lstm_step(&p, &loaded, &[1.0], &[]).unwrap();
        assert_eq!(fresh.c, after.c);
        let expect: Vec<f64> = [(0.4f64, 0.8f64), (-0.3, 0.2)]
            .iter()
            .map(|(i, g)| 1.0 / (1.0 + (-i).exp()) * g.tanh())
            .collect();
        for (a, e) in after.c.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn hidden_state_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = LstmParameters::zeros(2, 1, 3, 2);
        p.gate_weight = uniform(&mut rng, &[12, 6], 5.0);
        let mut s = LstmState::zeros(3);
        for _ in 0..10 {
            s = lstm_step(&p, &s, &[1.0, -1.0], &[0.5]).unwrap();
            assert!(s.h.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = LstmParameters::zeros(3, 2, 4, 5);
        assert!(lstm_step(&p, &LstmState::zeros(4), &[1.0], &[0.0, 0.0]).is_err());
        assert!(lstm_step(&p, &LstmState::zeros(3), &[1.0, 0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn logits() {
        let p = LstmParameters::zeros(1, 0, 2, 3);
        assert_eq!(predict_logits(&p, &[0.5, -0.5]).unwrap(), vec![0.0; 3]);
        let mut p = p;
        p.out_bias.data_mut()[1] = 20.0;
        let y = predict_logits(&p, &[0.0, 0.0]).unwrap();
        let z: f64 = y.iter().map(|v| v.exp()).sum();
        assert!(y[1].exp() / z >= 1.0 - 1e-8);
    }

    #[test]
    fn three_step_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let ids = ControllerIds::register(&mut store, 2, 1, 3, 2, &mut rng);
        let run = |s: &ParamStore, tape: &mut Tape| -> Result<Var> {
            let p = ids.load(tape, s);
            let mut h = tape.constant(Array::zeros(&[3]));
            let mut c = tape.constant(Array::zeros(&[3]));
            let mut total = tape.constant(Array::scalar(0.0));
            for (t, target) in [(0usize, 1usize), (1, 0), (0, 0)] {
                let mut xv = vec![0.0; 2];
                xv[t] = 1.0;
                let x = tape.constant(Array::vector(xv));
                let r = tape.constant(Array::vector(vec![0.25 * (t as f64 + 1.0)]));
                (h, c) = lstm_step_on_tape(tape, &p, h, c, x, r)?;
                let y = logits_on_tape(tape, &p, h)?;
                let lp = tape.log_softmax(y)?;
                let l = tape.index(lp, target)?;
                total = tape.sub(total, l)?;
            }
            Ok(total)
        };
        let mut tape = Tape::new();
        let root = run(&store, &mut tape).unwrap();
        let grads = tape.backward(root, &store).unwrap();
        let report = finite_diff_check(
            |s| {
                let mut t = Tape::new();
                let r = run(s, &mut t)?;
                Ok(t.value(r).item())
            },
            &store,
            &grads,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.pass(), "{:?}", report.worst());
    }
}
