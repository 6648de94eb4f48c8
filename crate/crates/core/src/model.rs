//! Stack-augmented LSTM language models.
//!
//! A string `w_1 .. w_n` is fed as `BOS, w_1, .., w_n` (one-hot; `BOS`
//! shares the index reserved for `EOS` on the output side). At input step
//! `t` the controller reads `x_t` and the previous reading `r_{t-1}`, the
//! logits `y_t` predict `w_t` (or `EOS` at the last step), and for
//! `t < n + 1` the stack is updated from `h_t` to give `r_t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Gradients, ParamId, ParamStore, Tape, Var};
use crate::controller::{self, ControllerIds, ControllerVars};
use crate::error::{Error, Result};
use crate::stack::kernel::{StackHandle, StackKernel};
use crate::stack::superposition::sup_step_on_tape;
use crate::stack::{PdaSignature, ZetaInit};

/// What a superposition stack pushes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "push", rename_all = "kebab-case")]
pub enum SupPush {
    /// `v_t = h_t`
    Hidden,
    /// `v_t = tanh(W h_t + b)` of the given size.
    Learned { size: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    Lstm,
    /// `stacks` independent superposition stacks, readings concatenated.
    Sup {
        #[serde(flatten)]
        push: SupPush,
        #[serde(default = "one")]
        stacks: usize,
    },
    Rns {
        states: usize,
        symbols: usize,
    },
    Vrns {
        states: usize,
        symbols: usize,
        vector_dim: usize,
        #[serde(default)]
        zeta_init: ZetaInit,
    },
}

fn one() -> usize {
    1
}

fn default_hidden() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub kind: ModelKind,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Learned input embedding of this size instead of one-hot inputs.
    #[serde(default)]
    pub embedding: Option<usize>,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            hidden: default_hidden(),
            embedding: None,
        }
    }

    /// Short label such as `RNS 3-3` or `Sup. 3-3-3`.
    pub fn label(&self) -> String {
        match &self.kind {
            ModelKind::Lstm => "LSTM".into(),
            ModelKind::Sup { push: SupPush::Hidden, stacks } => {
                if *stacks == 1 {
                    "Sup. h".into()
                } else {
                    format!("Sup. h x{stacks}")
                }
            }
            ModelKind::Sup {
                push: SupPush::Learned { size },
                stacks,
            } => format!("Sup. {}", vec![size.to_string(); *stacks].join("-")),
            ModelKind::Rns { states, symbols } => format!("RNS {states}-{symbols}"),
            ModelKind::Vrns {
                states,
                symbols,
                vector_dim,
                ..
            } => format!("VRNS {states}-{symbols}-{vector_dim}"),
        }
    }

    pub fn reading_dim(&self) -> usize {
        match &self.kind {
            ModelKind::Lstm => 0,
            ModelKind::Sup { push, stacks } => {
                stacks
                    * match push {
                        SupPush::Hidden => self.hidden,
                        SupPush::Learned { size } => *size,
                    }
            }
            ModelKind::Rns { states, symbols } => states * symbols,
            ModelKind::Vrns {
                states,
                symbols,
                vector_dim,
                ..
            } => states * symbols * vector_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Error::Config {
            field: field.into(),
            msg: msg.into(),
        };
        if self.hidden == 0 {
            return Err(bad("hidden", "must be positive"));
        }
        match &self.kind {
            ModelKind::Lstm => {}
            ModelKind::Sup { push, stacks } => {
                if *stacks == 0 {
                    return Err(bad("stacks", "must be positive"));
                }
                if let SupPush::Learned { size: 0 } = push {
                    return Err(bad("size", "must be positive"));
                }
            }
            ModelKind::Rns { states, symbols } => {
                if *states == 0 || *symbols == 0 {
                    return Err(bad("states", "RNS needs |Q| >= 1 and |Γ| >= 1"));
                }
            }
            ModelKind::Vrns {
                states,
                symbols,
                vector_dim,
                ..
            } => {
                if *states == 0 || *symbols == 0 || *vector_dim == 0 {
                    return Err(bad("vector_dim", "VRNS needs |Q|, |Γ|, m >= 1"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Affine {
    weight: ParamId,
    bias: ParamId,
}

impl Affine {
    fn register<R: Rng>(store: &mut ParamStore, name: &str, out: usize, inp: usize, rng: &mut R) -> Self {
        Affine {
            weight: store.add(format!("{name}.weight"), controller::xavier(rng, out, inp)),
            bias: store.add(format!("{name}.bias"), controller::uniform(rng, &[out], 0.1)),
        }
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.affine(w, x, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum StackParams {
    None,
    Sup { actions: Vec<Affine>, push: Vec<Option<Affine>> },
    Rns { sig: PdaSignature, delta: Affine },
    Vrns { sig: PdaSignature, delta: Affine, push: Affine, w_v: ParamId, init: ZetaInit },
}

/// Model structure; the weights live in a separate [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// Size of the string alphabet (without `EOS`).
    pub alphabet: usize,
    controller: ControllerIds,
    embedding: Option<ParamId>,
    stack: StackParams,
}

/// Everything recorded while scoring one string.
pub struct SequenceRun {
    pub tape: Tape,
    /// `-log p(w)` including `EOS`.
    pub loss: Var,
    /// `r_0 .. r_n`
    pub readings: Vec<Var>,
}

impl Model {
    /// Build the model and initialize its parameters.
    pub fn new<R: Rng>(config: ModelConfig, alphabet: usize, rng: &mut R) -> Result<(Model, ParamStore)> {
        config.validate()?;
        if alphabet == 0 {
            return Err(Error::Config {
                field: "alphabet".into(),
                msg: "must be nonempty".into(),
            });
        }
        let mut store = ParamStore::new();
        let vocab = alphabet + 1;
        let h = config.hidden;
        let (embedding, input_dim) = match config.embedding {
            Some(e) => (Some(store.add("embedding", controller::uniform(rng, &[e, vocab], 0.1))), e),
            None => (None, vocab),
        };
        let controller = ControllerIds::register(&mut store, input_dim, config.reading_dim(), h, vocab, rng);
        let stack = match &config.kind {
            ModelKind::Lstm => StackParams::None,
            ModelKind::Sup { push, stacks } => {
                let mut actions = Vec::new();
                let mut pushes = Vec::new();
                for s in 0..*stacks {
                    actions.push(Affine::register(&mut store, &format!("sup{s}.actions"), 3, h, rng));
                    pushes.push(match push {
                        SupPush::Hidden => None,
                        SupPush::Learned { size } => {
                            Some(Affine::register(&mut store, &format!("sup{s}.push"), *size, h, rng))
                        }
                    });
                }
                StackParams::Sup {
                    actions,
                    push: pushes,
                }
            }
            ModelKind::Rns { states, symbols } => {
                let sig = PdaSignature::new(*states, *symbols)?;
                StackParams::Rns {
                    sig,
                    delta: Affine::register(&mut store, "rns.actions", sig.delta_len(), h, rng),
                }
            }
            ModelKind::Vrns {
                states,
                symbols,
                vector_dim,
                zeta_init,
            } => {
                let sig = PdaSignature::new(*states, *symbols)?;
                StackParams::Vrns {
                    sig,
                    delta: Affine::register(&mut store, "vrns.actions", sig.delta_len(), h, rng),
                    push: Affine::register(&mut store, "vrns.push", *vector_dim, h, rng),
                    w_v: store.add("vrns.w_v", controller::uniform(rng, &[*vector_dim], 0.1)),
                    init: *zeta_init,
                }
            }
        };
        Ok((
            Model {
                config,
                alphabet,
                controller,
                embedding,
                stack,
            },
            store,
        ))
    }

    /// Rebuild the structure for a parameter store saved earlier. Parameter
    /// ids are assigned in the same order as [`Model::new`].
    pub fn attach(config: ModelConfig, alphabet: usize, store: &ParamStore) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (model, fresh) = Model::new(config, alphabet, &mut rng)?;
        if fresh.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model needs {}",
                store.len(),
                fresh.len()
            )));
        }
        for ((_, n1, a1), (_, n2, a2)) in fresh.iter().zip(store.iter()) {
            if n1 != n2 || a1.shape() != a2.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {n2} {:?} does not match expected {n1} {:?}",
                    a2.shape(),
                    a1.shape()
                )));
            }
        }
        Ok(model)
    }

    pub fn eos(&self) -> usize {
        self.alphabet
    }

    pub fn reading_dim(&self) -> usize {
        self.config.reading_dim()
    }

    fn input(&self, tape: &mut Tape, store: &ParamStore, symbol: usize) -> Result<Var> {
        let mut onehot = vec![0.0; self.alphabet + 1];
        onehot[symbol] = 1.0;
        let x = tape.constant(Array::vector(onehot));
        match self.embedding {
            Some(id) => {
                let e = tape.param(store, id);
                tape.matvec(e, x)
            }
            None => Ok(x),
        }
    }

    /// Score `w` on a fresh tape.
    pub fn run(&self, store: &ParamStore, w: &[usize]) -> Result<SequenceRun> {
        if let Some(&bad) = w.iter().find(|&&s| s >= self.alphabet) {
            return Err(Error::UnknownSymbol(format!("symbol index {bad} outside alphabet of size {}", self.alphabet)));
        }
        let mut tape = Tape::new();
        let p: ControllerVars = self.controller.load(&mut tape, store);
        let h_dim = self.config.hidden;
        let mut h = tape.constant(Array::zeros(&[h_dim]));
        let mut c = tape.constant(Array::zeros(&[h_dim]));
        let mut stack = StackState::init(self, &mut tape, store)?;
        let mut readings = vec![stack.current];
        let mut loss = tape.constant(Array::scalar(0.0));
        let steps = w.len() + 1;
        for t in 0..steps {
            let sym = if t == 0 { self.eos() } else { w[t - 1] };
            let x = self.input(&mut tape, store, sym)?;
            let r_prev = *readings.last().expect("nonempty");
            (h, c) = controller::lstm_step_on_tape(&mut tape, &p, h, c, x, r_prev)?;
            let y = controller::logits_on_tape(&mut tape, &p, h)?;
            let lp = tape.log_softmax(y)?;
            let target = if t < w.len() { w[t] } else { self.eos() };
            let l = tape.index(lp, target)?;
            loss = tape.sub(loss, l)?;
            if t + 1 < steps {
                stack.update(self, &mut tape, store, h)?;
                readings.push(stack.current);
            }
        }
        Ok(SequenceRun { tape, loss, readings })
    }

    /// `log p(w)` including the `EOS` prediction.
    pub fn log_prob(&self, store: &ParamStore, w: &[usize]) -> Result<f64> {
        let run = self.run(store, w)?;
        Ok(-run.tape.value(run.loss).item())
    }

    /// `-log p(w)` and its gradient.
    pub fn loss_and_grad(&self, store: &ParamStore, w: &[usize]) -> Result<(f64, Gradients)> {
        let run = self.run(store, w)?;
        let loss = run.tape.value(run.loss).item();
        let grads = run.tape.backward(run.loss, store)?;
        Ok((loss, grads))
    }

    /// Stack readings `r_0 .. r_n` while reading `w`.
    pub fn readings(&self, store: &ParamStore, w: &[usize]) -> Result<Vec<Vec<f64>>> {
        let run = self.run(store, w)?;
        Ok(run
            .readings
            .iter()
            .map(|&r| run.tape.value(r).data().to_vec())
            .collect())
    }
}

struct StackState {
    kind: StackRuntime,
    /// Reading after the latest update.
    current: Var,
}

enum StackRuntime {
    None,
    Sup { cells: Vec<Var> },
    Kernel(StackHandle),
}

impl StackState {
    fn init(model: &Model, tape: &mut Tape, store: &ParamStore) -> Result<StackState> {
        let zeros = |tape: &mut Tape, n: usize| tape.constant(Array::zeros(&[n]));
        Ok(match &model.stack {
            StackParams::None => StackState {
                kind: StackRuntime::None,
                current: zeros(tape, 0),
            },
            StackParams::Sup { actions, .. } => StackState {
                kind: StackRuntime::Sup {
                    cells: (0..actions.len()).map(|_| zeros(tape, 0)).collect(),
                },
                current: zeros(tape, model.reading_dim()),
            },
            StackParams::Rns { sig, .. } => {
                let handle = StackHandle::new(StackKernel::new(*sig));
                let current = handle.initial_on_tape(tape, None)?;
                StackState {
                    kind: StackRuntime::Kernel(handle),
                    current,
                }
            }
            StackParams::Vrns { sig, w_v, init, .. } => {
                let w = tape.param(store, *w_v);
                let v0 = tape.sigmoid(w)?;
                let kernel = StackKernel::with_vectors(*sig, tape.value(v0).data(), *init)?;
                let handle = StackHandle::new(kernel);
                let current = handle.initial_on_tape(tape, Some(v0))?;
                StackState {
                    kind: StackRuntime::Kernel(handle),
                    current,
                }
            }
        })
    }

    fn update(&mut self, model: &Model, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<()> {
        self.current = match (&mut self.kind, &model.stack) {
            (StackRuntime::None, _) => self.current,
            (StackRuntime::Sup { cells }, StackParams::Sup { actions, push }) => {
                let mut reads = Vec::with_capacity(cells.len());
                for ((cell, act), push) in cells.iter_mut().zip(actions).zip(push) {
                    let logits = act.apply(tape, store, h)?;
                    let probs = tape.softmax(logits)?;
                    let v = match push {
                        None => h,
                        Some(p) => {
                            let a = p.apply(tape, store, h)?;
                            tape.tanh(a)?
                        }
                    };
                    let m = tape.value(v).len();
                    *cell = sup_step_on_tape(tape, probs, v, *cell, None)?;
                    reads.push(tape.slice(*cell, 0, m)?);
                }
                tape.concat(&reads)?
            }
            (StackRuntime::Kernel(handle), StackParams::Rns { delta, .. }) => {
                let logd = delta.apply(tape, store, h)?;
                handle.step_on_tape(tape, logd, None)?
            }
            (StackRuntime::Kernel(handle), StackParams::Vrns { delta, push, .. }) => {
                let logd = delta.apply(tape, store, h)?;
                let a = push.apply(tape, store, h)?;
                let v = tape.sigmoid(a)?;
                handle.step_on_tape(tape, logd, Some(v))?
            }
            _ => unreachable!("stack runtime matches the model it was built from"),
        };
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, GradCheckConfig};

    fn families() -> Vec<ModelConfig> {
        let small = |kind| ModelConfig {
            kind,
            hidden: 3,
            embedding: None,
        };
        vec![
            small(ModelKind::Lstm),
            small(ModelKind::Sup {
                push: SupPush::Learned { size: 2 },
                stacks: 2,
            }),
            small(ModelKind::Sup {
                push: SupPush::Hidden,
                stacks: 1,
            }),
            small(ModelKind::Rns { states: 2, symbols: 2 }),
            small(ModelKind::Vrns {
                states: 2,
                symbols: 2,
                vector_dim: 2,
                zeta_init: ZetaInit::Indicator,
            }),
        ]
    }

    #[test]
    fn end_to_end_gradients_for_every_family() {
        for (i, cfg) in families().into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
            let (model, store) = Model::new(cfg.clone(), 2, &mut rng).unwrap();
            let w = [0, 1, 1, 0];
            let (_, grads) = model.loss_and_grad(&store, &w).unwrap();
            let report = finite_diff_check(
                |s| Ok(-model.log_prob(s, &w)?),
                &store,
                &grads,
                GradCheckConfig::default(),
            )
            .unwrap();
            assert!(report.pass(), "{}: {:?}", cfg.label(), report.worst());
        }
    }

    #[test]
    fn log_prob_is_sum_of_step_log_probs() {
        use crate::controller::{lstm_step, predict_logits, LstmParameters, LstmState};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = ModelConfig {
            kind: ModelKind::Lstm,
            hidden: 4,
            embedding: None,
        };
        let (model, store) = Model::new(cfg, 2, &mut rng).unwrap();
        let get = |n: &str| store.get(store.find(n).unwrap()).clone();
        let params = LstmParameters {
            gate_weight: get("lstm.weight"),
            gate_bias: get("lstm.bias"),
            out_weight: get("output.weight"),
            out_bias: get("output.bias"),
        };
        let mut state = LstmState::zeros(4);
        let mut total = 0.0;
        for (input, target) in [(2usize, 0usize), (0, 1), (1, 2)] {
            let mut x = vec![0.0; 3];
            x[input] = 1.0;
            state = lstm_step(&params, &state, &x, &[]).unwrap();
            let y = predict_logits(&params, &state.h).unwrap();
            let z = y.iter().map(|v| v.exp()).sum::<f64>().ln();
            total += y[target] - z;
        }
        let lp = model.log_prob(&store, &[0, 1]).unwrap();
        assert!((lp - total).abs() < 1e-12, "{lp} vs {total}");
    }

    #[test]
    fn readings_have_expected_shape() {
        for cfg in families() {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let (model, store) = Model::new(cfg.clone(), 3, &mut rng).unwrap();
            let r = model.readings(&store, &[0, 2, 1]).unwrap();
            assert_eq!(r.len(), 4);
            assert!(r.iter().all(|v| v.len() == cfg.reading_dim()));
        }
    }

    #[test]
    fn attach_checks_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ModelConfig::new(ModelKind::Rns { states: 2, symbols: 3 });
        let (_, store) = Model::new(cfg.clone(), 2, &mut rng).unwrap();
        assert!(Model::attach(cfg, 2, &store).is_ok());
        let other = ModelConfig::new(ModelKind::Rns { states: 3, symbols: 3 });
        assert!(Model::attach(other, 2, &store).is_err());
    }

    #[test]
    fn labels_and_config_json() {
        let cfg = ModelConfig::new(ModelKind::Sup {
            push: SupPush::Learned { size: 3 },
            stacks: 3,
        });
        assert_eq!(cfg.label(), "Sup. 3-3-3");
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        let v: ModelConfig = serde_json::from_str(r#"{"kind":"vrns","states":2,"symbols":3,"vector_dim":3}"#).unwrap();
        assert_eq!(v.label(), "VRNS 2-3-3");
        assert_eq!(v.hidden, 20);
    }
}
