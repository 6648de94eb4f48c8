//! Superposition stack: every step interpolates the pushed, unchanged and
//! popped versions of the stack element by element.

use crate::autodiff::{Array, CustomOp, Tape, Var};
use crate::error::{Error, Result};

/// Stack of equal-length vectors, top first.
#[derive(Clone, Debug, PartialEq)]
pub struct SupStack {
    pub dim: usize,
    pub cells: Vec<Vec<f64>>,
    pub max_depth: Option<usize>,
}

/// Probabilities of (push, no-op, pop) and the vector to push.
#[derive(Clone, Debug, PartialEq)]
pub struct SupActions {
    pub probs: [f64; 3],
    pub pushed: Vec<f64>,
}

impl SupStack {
    pub fn new(dim: usize) -> Self {
        SupStack {
            dim,
            cells: Vec::new(),
            max_depth: None,
        }
    }

    pub fn with_max_depth(dim: usize, max_depth: usize) -> Self {
        SupStack {
            max_depth: Some(max_depth),
            ..SupStack::new(dim)
        }
    }

    /// Top cell, or zeros for an empty stack.
    pub fn reading(&self) -> Vec<f64> {
        self.cells.first().cloned().unwrap_or_else(|| vec![0.0; self.dim])
    }

    fn flat(&self) -> Vec<f64> {
        self.cells.iter().flatten().copied().collect()
    }
}

fn check_actions(probs: &[f64]) -> Result<()> {
    let sum: f64 = probs.iter().sum();
    if probs.len() != 3 || probs.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Dimension(format!(
            "stack actions must be a distribution over (push, no-op, pop), got {probs:?}"
        )));
    }
    Ok(())
}

/// Cells laid out top first, `depth × m`. Returns `new_depth × m`.
fn step_flat(probs: &[f64], v: &[f64], cells: &[f64], m: usize, new_depth: usize) -> Vec<f64> {
    let depth = cells.len() / m;
    let cell = |i: usize| -> Option<&[f64]> { (i < depth).then(|| &cells[i * m..(i + 1) * m]) };
    let mut out = vec![0.0; new_depth * m];
    for i in 0..new_depth {
        let o = &mut out[i * m..(i + 1) * m];
        let push = if i == 0 { Some(v) } else { cell(i - 1) };
        for (src, a) in [(push, probs[0]), (cell(i), probs[1]), (cell(i + 1), probs[2])] {
            if let Some(src) = src {
                for j in 0..m {
                    o[j] += a * src[j];
                }
            }
        }
    }
    out
}

fn next_depth(depth: usize, max_depth: Option<usize>) -> usize {
    match max_depth {
        Some(cap) => (depth + 1).min(cap),
        None => depth + 1,
    }
}

/// One stack update. Cells beyond the bottom read as zeros.
pub fn sup_step(s: &SupStack, act: &SupActions) -> Result<(SupStack, Vec<f64>)> {
    check_actions(&act.probs)?;
    if act.pushed.len() != s.dim {
        return Err(Error::Dimension(format!(
            "pushed vector has dimension {}, stack cells have {}",
            act.pushed.len(),
            s.dim
        )));
    }
    let new_depth = next_depth(s.cells.len(), s.max_depth);
    let flat = step_flat(&act.probs, &act.pushed, &s.flat(), s.dim, new_depth);
    let cells: Vec<Vec<f64>> = flat.chunks(s.dim.max(1)).map(|c| c.to_vec()).collect();
    let next = SupStack {
        dim: s.dim,
        cells: if s.dim == 0 { vec![Vec::new(); new_depth] } else { cells },
        max_depth: s.max_depth,
    };
    let r = next.reading();
    Ok((next, r))
}

struct SupStepOp {
    m: usize,
    new_depth: usize,
}

impl CustomOp for SupStepOp {
    fn name(&self) -> &'static str {
        "sup_step"
    }

    fn backward(&self, inputs: &[&Array], _output: &Array, grad: Option<&Array>) -> Result<Vec<Option<Array>>> {
        let Some(g) = grad else {
            return Ok(vec![None, None, None]);
        };
        let (probs, v, cells) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let (m, g) = (self.m, g.data());
        let depth = cells.len() / m.max(1);
        let mut dprobs = [0.0; 3];
        let mut dv = vec![0.0; m];
        let mut dcells = vec![0.0; cells.len()];
        for i in 0..self.new_depth {
            let gi = &g[i * m..(i + 1) * m];
            if i == 0 {
                for j in 0..m {
                    dprobs[0] += gi[j] * v[j];
                    dv[j] += probs[0] * gi[j];
                }
            } else if i - 1 < depth {
                for j in 0..m {
                    dprobs[0] += gi[j] * cells[(i - 1) * m + j];
                    dcells[(i - 1) * m + j] += probs[0] * gi[j];
                }
            }
            if i < depth {
                for j in 0..m {
                    dprobs[1] += gi[j] * cells[i * m + j];
                    dcells[i * m + j] += probs[1] * gi[j];
                }
            }
            if i + 1 < depth {
                for j in 0..m {
                    dprobs[2] += gi[j] * cells[(i + 1) * m + j];
                    dcells[(i + 1) * m + j] += probs[2] * gi[j];
                }
            }
        }
        Ok(vec![
            Some(Array::vector(dprobs.to_vec())),
            Some(Array::new(inputs[1].shape().to_vec(), dv)?),
            Some(Array::new(inputs[2].shape().to_vec(), dcells)?),
        ])
    }

    fn replay(&self, inputs: &[&Array]) -> Option<Result<Array>> {
        let out = step_flat(inputs[0].data(), inputs[1].data(), inputs[2].data(), self.m, self.new_depth);
        Some(Ok(Array::vector(out)))
    }
}

/// Record a stack update on the tape. `cells` is the flattened previous
/// stack (top first); the result is the flattened new stack, whose first
/// `m` entries are the reading.
pub fn sup_step_on_tape(
    tape: &mut Tape,
    probs: Var,
    pushed: Var,
    cells: Var,
    max_depth: Option<usize>,
) -> Result<Var> {
    let m = tape.value(pushed).len();
    let (p, v, c) = (tape.value(probs), tape.value(pushed), tape.value(cells));
    if p.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "sup_step",
            left: p.shape().to_vec(),
            right: vec![3],
        });
    }
    if m == 0 || c.len() % m != 0 {
        return Err(Error::ShapeMismatch {
            op: "sup_step",
            left: v.shape().to_vec(),
            right: c.shape().to_vec(),
        });
    }
    let new_depth = next_depth(c.len() / m, max_depth);
    let out = step_flat(p.data(), v.data(), c.data(), m, new_depth);
    tape.custom(Box::new(SupStepOp { m, new_depth }), &[probs, pushed, cells], Array::vector(out))
}
