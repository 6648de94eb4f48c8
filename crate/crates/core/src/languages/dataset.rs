//! Train / validation / test splits and their text files.
//!
//! `<split>.txt` starts with a JSON header line (`{"spec": …, "seed": …,
//! "split": …}`) followed by one string per line, symbols separated by
//! spaces. `<split>.logp` has the matching true log-probabilities, one per
//! line, with 17 significant digits.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LanguageSpec, TrueDistribution};
use crate::error::{Error, Result};

pub const SPLITS: [&str; 3] = ["train", "validation", "test"];

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub symbols: Vec<usize>,
    /// True log-probability under the distribution the split was drawn from.
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub train: usize,
    pub validation: usize,
    pub test_min_len: usize,
    pub test_max_len: usize,
    pub test_per_length: usize,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        DatasetSizes {
            train: 10_000,
            validation: 1_000,
            test_min_len: 40,
            test_max_len: 100,
            test_per_length: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: LanguageSpec,
    pub seed: u64,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    /// `test_per_length` strings for every nonempty length in the test
    /// range, scored under the uniform-length distribution over that range.
    pub test: Vec<Example>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: LanguageSpec,
    seed: u64,
    split: String,
}

impl Dataset {
    pub fn generate(spec: &LanguageSpec, seed: u64, sizes: &DatasetSizes) -> Result<Self> {
        let mut dist = TrueDistribution::new(spec.clone(), seed)?;
        let mut draw = |n: usize| -> Vec<Example> {
            (0..n)
                .map(|_| {
                    let symbols = dist.sample();
                    let log_prob = dist.log_prob(&symbols);
                    Example { symbols, log_prob }
                })
                .collect()
        };
        let train = draw(sizes.train);
        let validation = draw(sizes.validation);
        let test_spec = spec.clone().with_window(sizes.test_min_len, sizes.test_max_len);
        let mut test_dist = TrueDistribution::new(test_spec, seed.wrapping_add(1))?;
        let mut test = Vec::new();
        for len in test_dist.lengths().to_vec() {
            for _ in 0..sizes.test_per_length {
                let symbols = test_dist.sample_of_length(len)?;
                let log_prob = test_dist.log_prob(&symbols);
                test.push(Example { symbols, log_prob });
            }
        }
        Ok(Dataset {
            spec: spec.clone(),
            seed,
            train,
            validation,
            test,
        })
    }

    pub fn split(&self, name: &str) -> Option<&[Example]> {
        match name {
            "train" => Some(&self.train),
            "validation" => Some(&self.validation),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for name in SPLITS {
            write_split(dir, name, &self.spec, self.seed, self.split(name).expect("known split"))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (spec, seed, train) = read_split(dir, "train")?;
        let (vspec, vseed, validation) = read_split(dir, "validation")?;
        let (tspec, tseed, test) = read_split(dir, "test")?;
        if vspec != spec || tspec != spec || vseed != seed || tseed != seed {
            return Err(Error::Config {
                field: "dataset".into(),
                msg: format!("splits in {} disagree on spec or seed", dir.display()),
            });
        }
        Ok(Dataset {
            spec,
            seed,
            train,
            validation,
            test,
        })
    }
}

pub fn write_split(dir: &Path, name: &str, spec: &LanguageSpec, seed: u64, examples: &[Example]) -> Result<()> {
    let symbols = spec.symbols();
    let mut txt = BufWriter::new(fs::File::create(dir.join(format!("{name}.txt")))?);
    let mut logp = BufWriter::new(fs::File::create(dir.join(format!("{name}.logp")))?);
    let header = Header {
        spec: spec.clone(),
        seed,
        split: name.to_string(),
    };
    writeln!(txt, "{}", serde_json::to_string(&header)?)?;
    for e in examples {
        let line: Vec<&str> = e.symbols.iter().map(|&a| symbols[a].as_str()).collect();
        writeln!(txt, "{}", line.join(" "))?;
        writeln!(logp, "{}", format_logp(e.log_prob))?;
    }
    txt.flush()?;
    logp.flush()?;
    Ok(())
}

pub fn read_split(dir: &Path, name: &str) -> Result<(LanguageSpec, u64, Vec<Example>)> {
    let txt = BufReader::new(fs::File::open(dir.join(format!("{name}.txt")))?);
    let logp = BufReader::new(fs::File::open(dir.join(format!("{name}.logp")))?);
    let mut lines = txt.lines();
    let header: Header = match lines.next() {
        Some(l) => serde_json::from_str(&l?)?,
        None => return Err(Error::Parse { line: 1, msg: "missing header".into() }),
    };
    let spec = header.spec;
    let mut examples = Vec::new();
    let mut probs = logp.lines();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let symbols = spec
            .encode(&line.split_whitespace().collect::<Vec<_>>())
            .map_err(|e| Error::Parse { line: i + 2, msg: e.to_string() })?;
        let lp = probs.next().ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("{name}.logp is shorter than {name}.txt"),
        })??;
        let log_prob = lp.trim().parse::<f64>().map_err(|e| Error::Parse {
            line: i + 1,
            msg: format!("{name}.logp: {e}"),
        })?;
        examples.push(Example { symbols, log_prob });
    }
    if probs.next().is_some() {
        return Err(Error::Parse {
            line: examples.len() + 1,
            msg: format!("{name}.logp is longer than {name}.txt"),
        });
    }
    Ok((spec, header.seed, examples))
}

/// 17 significant digits, enough to round-trip any f64.
pub fn format_logp(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::languages::LanguageKind;

    #[test]
    fn round_trips_through_files() {
        let spec = LanguageSpec::new(LanguageKind::Dyck).with_k(2).with_window(0, 6);
        let sizes = DatasetSizes {
            train: 50,
            validation: 10,
            test_min_len: 0,
            test_max_len: 8,
            test_per_length: 3,
        };
        let d = Dataset::generate(&spec, 4, &sizes).unwrap();
        // lengths 0, 2, 4, 6, 8
        assert_eq!(d.test.len(), 15);
        assert!(d.train.iter().any(|e| e.symbols.is_empty()));
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, d);
        let first = fs::read_to_string(dir.path().join("train.txt")).unwrap();
        let header: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        assert_eq!(header["seed"], 4);
        assert_eq!(header["spec"]["kind"], "dyck");
    }

    #[test]
    fn logp_has_17_significant_digits() {
        let s = format_logp(-std::f64::consts::PI);
        assert_eq!(s, "-3.1415926535897931e0");
        assert_eq!(s.parse::<f64>().unwrap(), -std::f64::consts::PI);
        assert_eq!(format_logp(f64::NEG_INFINITY), "-inf");
        assert_eq!("-inf".parse::<f64>().unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = LanguageSpec::new(LanguageKind::MarkedCopy).with_window(5, 11);
        let sizes = DatasetSizes {
            train: 20,
            validation: 5,
            test_min_len: 5,
            test_max_len: 9,
            test_per_length: 2,
        };
        let a = Dataset::generate(&spec, 9, &sizes).unwrap();
        let b = Dataset::generate(&spec, 9, &sizes).unwrap();
        let c = Dataset::generate(&spec, 10, &sizes).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }
}
