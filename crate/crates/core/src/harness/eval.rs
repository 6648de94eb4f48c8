use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::parallel::par_map;
use crate::autodiff::ParamStore;
use crate::error::Result;
use crate::languages::{cross_entropy, cross_entropy_diff, Example};
use crate::model::Model;

/// `log p_M(w)` (with `EOS`) for every string.
pub fn model_log_probs(model: &Model, store: &ParamStore, examples: &[Example]) -> Result<Vec<f64>> {
    par_map(examples, |e| model.log_prob(store, &e.symbols)).into_iter().collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitScore {
    /// `H(S, p_M)` in nats per symbol.
    pub model_ce: f64,
    /// `H(S, p_L)`
    pub true_ce: f64,
    pub diff: f64,
}

pub fn score_from_log_probs(examples: &[Example], model: &[f64]) -> SplitScore {
    let lengths: Vec<usize> = examples.iter().map(|e| e.symbols.len()).collect();
    let truth: Vec<f64> = examples.iter().map(|e| e.log_prob).collect();
    SplitScore {
        model_ce: cross_entropy(&lengths, model),
        true_ce: cross_entropy(&lengths, &truth),
        diff: cross_entropy_diff(&lengths, model, &truth),
    }
}

pub fn score_split(model: &Model, store: &ParamStore, examples: &[Example]) -> Result<SplitScore> {
    let lp = model_log_probs(model, store, examples)?;
    Ok(score_from_log_probs(examples, &lp))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LengthRow {
    pub length: usize,
    pub count: usize,
    pub score: SplitScore,
}

/// One row per string length present in `examples`, in increasing order.
pub fn by_length_from_log_probs(examples: &[Example], model: &[f64]) -> Vec<LengthRow> {
    let mut groups: BTreeMap<usize, (Vec<Example>, Vec<f64>)> = BTreeMap::new();
    for (e, &lp) in examples.iter().zip(model) {
        let g = groups.entry(e.symbols.len()).or_default();
        g.0.push(e.clone());
        g.1.push(lp);
    }
    groups
        .into_iter()
        .map(|(length, (ex, lp))| LengthRow {
            length,
            count: ex.len(),
            score: score_from_log_probs(&ex, &lp),
        })
        .collect()
}

pub fn evaluate_by_length(model: &Model, store: &ParamStore, test: &[Example]) -> Result<Vec<LengthRow>> {
    let lp = model_log_probs(model, store, test)?;
    Ok(by_length_from_log_probs(test, &lp))
}

pub fn write_by_length_tsv(path: &Path, rows: &[LengthRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "length\tcount\tmodel_ce\ttrue_ce\tce_diff")?;
    for r in rows {
        writeln!(
            f,
            "{}\t{}\t{}\t{}\t{}",
            r.length, r.count, r.score.model_ce, r.score.true_ce, r.score.diff
        )?;
    }
    f.flush()?;
    Ok(())
}
