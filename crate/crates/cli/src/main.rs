use std::fs;
use std::io::{self, BufRead};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nstack_core::grammar::{compile_grammar, recognize, ContextFreeGrammar, RestrictedPda};
use nstack_core::harness::analysis::{write_heatmap_tsv, write_pca_tsv};
use nstack_core::harness::eval::write_by_length_tsv;
use nstack_core::harness::train::write_metrics_tsv;
use nstack_core::harness::{
    evaluate_by_length, files, pca_2d, readings_after_marker, score_split, train_with_restarts, Checkpoint,
    ExperimentConfig,
};
use nstack_core::languages::{Dataset, DatasetSizes, LanguageKind, LanguageSpec, SamplingMode, TrueDistribution};

/// Stack RNN experiments on formal languages.
#[derive(Parser)]
#[command(name = "nstack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample train/validation/test sets for a language.
    SampleData(SampleArgs),
    /// Train with random restarts; keeps the best restart by validation score.
    Train(TrainArgs),
    /// Score a checkpoint on the test set, per length.
    Evaluate(EvalArgs),
    /// Compile a CFG into a restricted PDA and print it.
    CompileGrammar(CompileArgs),
    /// Decide membership for strings with a compiled grammar or PDA.
    Recognize(RecognizeArgs),
    /// Project stack readings to 2-D with PCA.
    AnalyzeReadings(AnalyzeArgs),
    /// Dump stack readings over time for one string.
    ExportHeatmap(HeatmapArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config restart count.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    /// Language name, e.g. dyck, w-hash-w, marked-reverse (ignored with --config).
    #[arg(long)]
    lang: Option<String>,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    pcfg: bool,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    validation_size: Option<usize>,
    #[arg(long)]
    test_per_length: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Use datasets written by `sample-data` instead of sampling new ones.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Defaults to `<out-dir>/checkpoint.bin`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct CompileArgs {
    grammar: PathBuf,
    /// Also write the PDA to `<out-dir>/pda.txt`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RecognizeArgs {
    #[arg(long, conflicts_with = "pda", required_unless_present = "pda")]
    grammar: Option<PathBuf>,
    #[arg(long)]
    pda: Option<PathBuf>,
    /// Strings to test; read from stdin, one per line, when none are given.
    /// Symbols are space-separated, or single characters if there is no space.
    strings: Vec<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    samples: usize,
}

#[derive(Args)]
struct HeatmapArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// String to read; sampled from the language when absent.
    #[arg(long)]
    string: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SampleData(a) => sample_data(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::CompileGrammar(a) => compile(a),
        Command::Recognize(a) => recognize_cmd(a),
        Command::AnalyzeReadings(a) => analyze(a),
        Command::ExportHeatmap(a) => heatmap(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let path = c.config.as_ref().context("--config is required")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(r) = c.restarts {
        cfg.restarts = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<&Path> {
    fs::create_dir_all(&c.out_dir).with_context(|| format!("creating {}", c.out_dir.display()))?;
    Ok(&c.out_dir)
}

fn sample_data(a: SampleArgs) -> Result<()> {
    let (spec, mut sizes, seed) = if a.common.config.is_some() {
        let cfg = load_config(&a.common)?;
        (cfg.language, cfg.data, cfg.seed)
    } else {
        let name = a.lang.as_deref().context("give --lang or --config")?;
        let kind: LanguageKind = name.parse()?;
        let mut spec = LanguageSpec::new(kind).with_k(a.k);
        spec.min_len = a.min_len.unwrap_or(spec.min_len);
        spec.max_len = a.max_len.unwrap_or(spec.max_len);
        if a.pcfg {
            spec = spec.with_mode(SamplingMode::Pcfg);
        }
        (spec, DatasetSizes::default(), a.common.seed.unwrap_or(0))
    };
    sizes.train = a.train_size.unwrap_or(sizes.train);
    sizes.validation = a.validation_size.unwrap_or(sizes.validation);
    sizes.test_per_length = a.test_per_length.unwrap_or(sizes.test_per_length);
    let dir = out_dir(&a.common)?;
    let data = Dataset::generate(&spec, seed, &sizes)?;
    data.save(dir)?;
    println!(
        "{}: {} train, {} validation, {} test strings in {}",
        spec.label(),
        data.train.len(),
        data.validation.len(),
        data.test.len(),
        dir.display()
    );
    Ok(())
}

fn dataset_for(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(d) => {
            let ds = Dataset::load(d).with_context(|| format!("loading {}", d.display()))?;
            if ds.spec != cfg.language {
                bail!("dataset in {} was sampled for {}, config asks for {}", d.display(), ds.spec.label(), cfg.language.label());
            }
            Ok(ds)
        }
        None => Ok(Dataset::generate(&cfg.language, cfg.seed, &cfg.data)?),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let dir = out_dir(&a.common)?;
    let data = dataset_for(&cfg, a.data.as_deref())?;
    eprintln!(
        "training {} on {} ({} restarts, {} threads)",
        cfg.model.label(),
        cfg.language.label(),
        cfg.restarts,
        nstack_core::harness::parallel::threads()
    );
    let exp = train_with_restarts(&cfg, &data)?;
    let records: Vec<_> = exp.log().collect();
    write_metrics_tsv(&dir.join(files::METRICS), &cfg, &records)?;
    for r in &exp.restarts {
        let last = r.log.last().expect("initial record");
        eprintln!(
            "restart {}: lr {:.2e}, {} epochs, best validation diff {:.6}{}",
            r.restart,
            r.initial_lr,
            last.epoch,
            r.checkpoint.best_valid,
            r.failure.as_deref().map(|f| format!(" (failed: {f})")).unwrap_or_default()
        );
    }
    let best = exp.best().context("every restart failed")?;
    best.checkpoint.save(&dir.join(files::CHECKPOINT))?;
    let model = best.checkpoint.model()?;
    let rows = evaluate_by_length(&model, &best.checkpoint.params, &data.test)?;
    write_by_length_tsv(&dir.join(files::TEST_BY_LENGTH), &rows)?;
    println!(
        "best restart {} validation cross-entropy diff {:.6}",
        best.restart, best.checkpoint.best_valid
    );
    Ok(())
}

fn checkpoint_path(c: &Common, p: Option<PathBuf>) -> PathBuf {
    p.unwrap_or_else(|| c.out_dir.join(files::CHECKPOINT))
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let path = checkpoint_path(&a.common, a.checkpoint);
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let mut cfg = ckpt.config.clone();
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    let dir = out_dir(&a.common)?;
    let data = dataset_for(&cfg, a.data.as_deref())?;
    let model = ckpt.model()?;
    let valid = score_split(&model, &ckpt.params, &data.validation)?;
    let rows = evaluate_by_length(&model, &ckpt.params, &data.test)?;
    write_by_length_tsv(&dir.join(files::TEST_BY_LENGTH), &rows)?;
    println!("validation cross-entropy diff {:.6}", valid.diff);
    println!("{} test lengths written to {}", rows.len(), dir.join(files::TEST_BY_LENGTH).display());
    Ok(())
}

fn compile(a: CompileArgs) -> Result<()> {
    let text = fs::read_to_string(&a.grammar).with_context(|| format!("reading {}", a.grammar.display()))?;
    let g = ContextFreeGrammar::parse(&text).with_context(|| format!("in {}", a.grammar.display()))?;
    let pda = compile_grammar(&g)?;
    print!("{pda}");
    if let Some(d) = a.out_dir {
        fs::create_dir_all(&d)?;
        fs::write(d.join("pda.txt"), pda.to_string())?;
    }
    Ok(())
}

fn tokenize(s: &str) -> Vec<String> {
    if s.contains(char::is_whitespace) {
        s.split_whitespace().map(String::from).collect()
    } else {
        s.chars().map(String::from).collect()
    }
}

fn recognize_cmd(a: RecognizeArgs) -> Result<()> {
    let pda = match (&a.grammar, &a.pda) {
        (Some(g), _) => {
            let text = fs::read_to_string(g).with_context(|| format!("reading {}", g.display()))?;
            compile_grammar(&ContextFreeGrammar::parse(&text).with_context(|| format!("in {}", g.display()))?)?
        }
        (None, Some(p)) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RestrictedPda::parse(&text).with_context(|| format!("in {}", p.display()))?
        }
        (None, None) => bail!("give --grammar or --pda"),
    };
    let strings: Vec<String> = if a.strings.is_empty() {
        io::stdin().lock().lines().collect::<io::Result<_>>()?
    } else {
        a.strings
    };
    for s in strings {
        let accepted = match pda.encode(&tokenize(&s)) {
            Ok(w) => recognize(&pda, &w)?,
            Err(_) => false,
        };
        println!("{}\t{s}", if accepted { "accept" } else { "reject" });
    }
    Ok(())
}

fn load_checkpoint(c: &Common, p: Option<PathBuf>) -> Result<Checkpoint> {
    let path = checkpoint_path(c, p);
    Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.common, a.checkpoint)?;
    let model = ckpt.model()?;
    let spec = ckpt.config.language.clone();
    let mut dist = TrueDistribution::new(spec.clone(), a.common.seed.unwrap_or(ckpt.config.seed))?;
    let strings: Vec<Vec<usize>> = (0..a.samples).map(|_| dist.sample()).collect();
    let marker = spec.symbols().iter().position(|s| s == "#");
    let readings = readings_after_marker(&model, &ckpt.params, &strings, marker)?;
    let points: Vec<Vec<f64>> = readings.iter().map(|r| r.reading.clone()).collect();
    let proj = pca_2d(&points)?;
    let symbols = spec.symbols();
    let labels: Vec<String> = readings.iter().map(|r| symbols[r.label].clone()).collect();
    let dir = out_dir(&a.common)?;
    write_pca_tsv(&dir.join(files::READINGS_PCA), &labels, &proj)?;
    println!(
        "{} readings projected; variance {:.4e} / {:.4e}",
        labels.len(),
        proj.variances[0],
        proj.variances[1]
    );
    Ok(())
}

fn heatmap(a: HeatmapArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.common, a.checkpoint)?;
    let model = ckpt.model()?;
    let spec = ckpt.config.language.clone();
    let w = match &a.string {
        Some(s) => spec.encode(&tokenize(s))?,
        None => TrueDistribution::new(spec.clone(), a.common.seed.unwrap_or(ckpt.config.seed))?.sample(),
    };
    let readings = model.readings(&ckpt.params, &w)?;
    let dir = out_dir(&a.common)?;
    write_heatmap_tsv(&dir.join(files::HEATMAP), &spec.symbols(), &w, &readings)?;
    println!("{} timesteps of {}-dimensional readings", readings.len(), model.reading_dim());
    Ok(())
}
