use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::eval::score_split;
use super::optim::Adam;
use super::parallel::par_map;
use crate::autodiff::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::languages::{Dataset, Example};
use crate::model::Model;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub restart: usize,
    /// 0 is the untrained model.
    pub epoch: usize,
    pub lr: f64,
    /// Training cross-entropy per symbol, averaged over the epoch.
    pub train_ce: f64,
    pub valid_ce: f64,
    pub valid_diff: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RestartOutcome {
    pub restart: usize,
    pub initial_lr: f64,
    /// Parameters with the best validation difference seen.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    /// Why the restart was aborted, if it was.
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub restarts: Vec<RestartOutcome>,
    /// Index into `restarts` of the lowest validation difference among the
    /// ones that did not fail.
    pub best: Option<usize>,
}

impl Experiment {
    pub fn best(&self) -> Option<&RestartOutcome> {
        self.best.map(|i| &self.restarts[i])
    }

    pub fn log(&self) -> impl Iterator<Item = &EpochRecord> {
        self.restarts.iter().flat_map(|r| &r.log)
    }
}

/// What to do after a validation score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Improved,
    Continue,
    Decay,
    Stop,
}

/// Plateau tracking: decay after every `decay_patience` epochs without
/// improvement, stop after `stop_patience`.
#[derive(Clone, Debug)]
pub struct Schedule {
    best: f64,
    since_best: usize,
    decay_patience: usize,
    stop_patience: usize,
}

impl Schedule {
    pub fn new(initial: f64, decay_patience: usize, stop_patience: usize) -> Self {
        Schedule {
            best: initial,
            since_best: 0,
            decay_patience,
            stop_patience,
        }
    }

    pub fn observe(&mut self, score: f64) -> Step {
        if score < self.best {
            self.best = score;
            self.since_best = 0;
            return Step::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.stop_patience {
            Step::Stop
        } else if self.since_best % self.decay_patience == 0 {
            Step::Decay
        } else {
            Step::Continue
        }
    }
}

/// Seed for everything random in one restart.
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(restart as u64 + 1)
}

/// Learning rate drawn log-uniformly from `[lo, hi]`.
pub fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Equal-length batches of at most `size` strings, shuffled.
pub fn make_batches<R: Rng>(examples: &[Example], size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        by_len.entry(e.symbols.len()).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (_, mut idx) in by_len {
        idx.shuffle(rng);
        batches.extend(idx.chunks(size).map(|c| c.to_vec()));
    }
    batches.shuffle(rng);
    batches
}

/// Summed loss and gradient over a batch. Items run through `par_map`; the
/// sum is taken in batch order so results do not depend on thread count.
pub fn batch_loss_and_grad(model: &Model, store: &ParamStore, batch: &[&[usize]]) -> Result<(f64, Gradients)> {
    let parts = par_map(batch, |w| model.loss_and_grad(store, w));
    let mut total = Gradients::zeros_like(store);
    let mut loss = 0.0;
    for p in parts {
        let (l, g) = p?;
        loss += l;
        total.accumulate(&g);
    }
    Ok((loss, total))
}

pub fn train_restart(cfg: &ExperimentConfig, data: &Dataset, restart: usize) -> Result<RestartOutcome> {
    cfg.validate()?;
    let t = &cfg.training;
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(cfg.seed, restart));
    let lr0 = log_uniform(&mut rng, t.lr_min, t.lr_max);
    let alphabet = cfg.language.alphabet_size();
    let (model, mut store) = Model::new(cfg.model.clone(), alphabet, &mut rng)?;
    let mut opt = Adam::new(&store, lr0, t.beta1, t.beta2, t.eps, t.clip);
    let start = Instant::now();

    let v0 = score_split(&model, &store, &data.validation)?;
    let mut log = vec![EpochRecord {
        restart,
        epoch: 0,
        lr: lr0,
        train_ce: f64::NAN,
        valid_ce: v0.model_ce,
        valid_diff: v0.diff,
        seconds: start.elapsed().as_secs_f64(),
    }];
    let snapshot = |store: &ParamStore, opt: &Adam, epoch: usize, best: f64| Checkpoint {
        config: cfg.clone(),
        params: store.clone(),
        optimizer: Some(opt.clone()),
        epoch: epoch as u64,
        best_valid: best,
        restart: restart as u32,
        initial_lr: lr0,
    };
    let mut best = snapshot(&store, &opt, 0, v0.diff);
    let mut schedule = Schedule::new(v0.diff, t.decay_patience, t.stop_patience);
    let mut failure = None;

    for epoch in 1..=t.max_epochs {
        let batches = make_batches(&data.train, t.batch_size, &mut rng);
        let mut loss_sum = 0.0;
        let mut symbols = 0usize;
        let mut diverged = None;
        for b in &batches {
            let strings: Vec<&[usize]> = b.iter().map(|&i| data.train[i].symbols.as_slice()).collect();
            let (loss, mut grads) = match batch_loss_and_grad(&model, &store, &strings) {
                Ok(x) => x,
                Err(e) => {
                    diverged = Some(e.to_string());
                    break;
                }
            };
            if !loss.is_finite() || !grads.global_norm().is_finite() {
                diverged = Some(format!("non-finite loss at epoch {epoch}"));
                break;
            }
            loss_sum += loss;
            symbols += strings.iter().map(|w| w.len() + 1).sum::<usize>();
            grads.scale(1.0 / strings.len() as f64);
            opt.clip_grads(&mut grads);
            opt.update(&mut store, &grads);
        }
        if let Some(e) = diverged {
            failure = Some(e);
            break;
        }
        let v = match score_split(&model, &store, &data.validation) {
            Ok(v) if v.diff.is_finite() => v,
            Ok(_) => {
                failure = Some(format!("non-finite validation score at epoch {epoch}"));
                break;
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        log.push(EpochRecord {
            restart,
            epoch,
            lr: opt.lr,
            train_ce: loss_sum / symbols.max(1) as f64,
            valid_ce: v.model_ce,
            valid_diff: v.diff,
            seconds: start.elapsed().as_secs_f64(),
        });
        match schedule.observe(v.diff) {
            Step::Improved => best = snapshot(&store, &opt, epoch, v.diff),
            Step::Continue => {}
            Step::Decay => opt.lr *= t.lr_decay,
            Step::Stop => break,
        }
        if t.max_seconds.is_some_and(|m| start.elapsed().as_secs_f64() >= m) {
            break;
        }
    }
    Ok(RestartOutcome {
        restart,
        initial_lr: lr0,
        checkpoint: best,
        log,
        failure,
    })
}

/// All restarts (in parallel when enabled); the best is chosen by
/// validation difference only.
pub fn train_with_restarts(cfg: &ExperimentConfig, data: &Dataset) -> Result<Experiment> {
    cfg.validate()?;
    if data.spec != cfg.language {
        return Err(Error::Config {
            field: "language".into(),
            msg: "dataset was generated for a different language".into(),
        });
    }
    let ids: Vec<usize> = (0..cfg.restarts).collect();
    let restarts = par_map(&ids, |&r| train_restart(cfg, data, r))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let best = restarts
        .iter()
        .enumerate()
        .filter(|(_, r)| r.failure.is_none())
        .min_by(|a, b| a.1.checkpoint.best_valid.total_cmp(&b.1.checkpoint.best_valid))
        .map(|(i, _)| i);
    Ok(Experiment { restarts, best })
}

pub fn write_metrics_tsv(path: &Path, cfg: &ExperimentConfig, records: &[&EpochRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "seed\trestart\tepoch\tlr\ttrain_ce\tvalid_ce\tvalid_ce_diff\tseconds")?;
    for r in records {
        writeln!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.3}",
            cfg.seed, r.restart, r.epoch, r.lr, r.train_ce, r.valid_ce, r.valid_diff, r.seconds
        )?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::languages::{DatasetSizes, LanguageKind, LanguageSpec};
    use crate::model::{ModelConfig, ModelKind};

    fn tiny(kind: ModelKind, max_epochs: usize) -> (ExperimentConfig, Dataset) {
        let mut cfg = ExperimentConfig::new(
            ModelConfig::new(kind),
            LanguageSpec::new(LanguageKind::MarkedReverse).with_k(2).with_window(1, 9),
        );
        cfg.model.hidden = 6;
        cfg.restarts = 2;
        cfg.seed = 3;
        cfg.training.max_epochs = max_epochs;
        cfg.training.lr_min = 1e-2;
        cfg.training.lr_max = 1e-2;
        cfg.data = DatasetSizes {
            train: 60,
            validation: 20,
            test_min_len: 1,
            test_max_len: 11,
            test_per_length: 2,
        };
        let data = Dataset::generate(&cfg.language, cfg.seed, &cfg.data).unwrap();
        (cfg, data)
    }

    #[test]
    fn zero_epochs_returns_the_initialization() {
        let (cfg, data) = tiny(ModelKind::Lstm, 0);
        let out = train_restart(&cfg, &data, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(cfg.seed, 0));
        let _lr = log_uniform(&mut rng, cfg.training.lr_min, cfg.training.lr_max);
        let (_, init) = Model::new(cfg.model.clone(), 3, &mut rng).unwrap();
        assert_eq!(out.checkpoint.params, init);
        assert_eq!(out.checkpoint.epoch, 0);
        assert_eq!(out.log.len(), 1);
    }

    #[test]
    fn first_epoch_lowers_the_loss_and_runs_are_deterministic() {
        let (mut cfg, data) = tiny(ModelKind::Rns { states: 2, symbols: 2 }, 2);
        cfg.training.lr_min = 1e-3;
        cfg.training.lr_max = 1e-3;
        let a = train_restart(&cfg, &data, 1).unwrap();
        assert!(a.failure.is_none());
        assert!(a.log[1].valid_ce < a.log[0].valid_ce, "{:?}", a.log);
        let b = train_restart(&cfg, &data, 1).unwrap();
        let strip = |l: &[EpochRecord]| {
            l.iter()
                .map(|r| format!("{:?}", EpochRecord { seconds: 0.0, ..r.clone() }))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.log), strip(&b.log));
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn restarts_pick_the_best_validation_score() {
        let (cfg, data) = tiny(ModelKind::Lstm, 2);
        let exp = train_with_restarts(&cfg, &data).unwrap();
        assert_eq!(exp.restarts.len(), 2);
        let best = exp.best().unwrap();
        for r in &exp.restarts {
            assert!(best.checkpoint.best_valid <= r.checkpoint.best_valid);
            // the checkpoint holds the minimum of the restart's log
            let min = r.log.iter().map(|e| e.valid_diff).fold(f64::INFINITY, f64::min);
            assert_eq!(r.checkpoint.best_valid, min);
        }
        assert_ne!(exp.restarts[0].initial_lr, 0.0);
    }

    #[test]
    fn schedule_decays_every_five_and_stops_at_ten() {
        let mut s = Schedule::new(1.0, 5, 10);
        assert_eq!(s.observe(0.9), Step::Improved);
        let steps: Vec<Step> = (0..10).map(|_| s.observe(0.95)).collect();
        let decays: Vec<usize> = (0..10).filter(|&i| steps[i] == Step::Decay).collect();
        assert_eq!(decays, [4]);
        assert_eq!(steps[9], Step::Stop);
        // improvement resets the count
        let mut s = Schedule::new(1.0, 5, 10);
        for _ in 0..9 {
            s.observe(2.0);
        }
        assert_eq!(s.observe(0.5), Step::Improved);
        assert_eq!(s.observe(0.6), Step::Continue);
    }

    #[test]
    fn batches_have_equal_lengths_and_cover_everything() {
        let (_, data) = tiny(ModelKind::Lstm, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = make_batches(&data.train, 10, &mut rng);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort();
        assert_eq!(seen, (0..data.train.len()).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.len() <= 10);
            assert!(b.iter().all(|&i| data.train[i].symbols.len() == data.train[b[0]].symbols.len()));
        }
    }

    #[test]
    fn log_uniform_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs: Vec<f64> = (0..2000).map(|_| log_uniform(&mut rng, 5e-4, 1e-2)).collect();
        assert!(xs.iter().all(|&x| (5e-4..=1e-2).contains(&x)));
        // median of a log-uniform is the geometric mean of the bounds
        let below = xs.iter().filter(|&&x| x < (5e-4f64 * 1e-2).sqrt()).count();
        assert!((below as f64 / 2000.0 - 0.5).abs() < 0.05);
    }
}
