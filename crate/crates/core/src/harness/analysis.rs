//! Stack-reading analyses: 2-D PCA projections and reading heatmaps.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Clone, Debug)]
pub struct Projection {
    /// One `[pc1, pc2]` per input point.
    pub points: Vec<[f64; 2]>,
    /// Variances along the two axes (top eigenvalues of the covariance).
    pub variances: [f64; 2],
    /// Unit principal axes in the input space.
    pub axes: [Vec<f64>; 2],
    pub mean: Vec<f64>,
}

/// Center the points and project them onto the two leading eigenvectors of
/// their covariance (divided by `n`). Each axis is signed so that its
/// largest-magnitude entry is positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Projection> {
    if points.len() < 2 {
        return Err(Error::Dimension(format!("PCA needs at least 2 points, got {}", points.len())));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::Dimension("points must share a nonzero dimension".into()));
    }
    let n = points.len();
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = (x.transpose() * &x) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axis = |k: usize| -> (Vec<f64>, f64) {
        match order.get(k) {
            None => (vec![0.0; d], 0.0),
            Some(&c) => {
                let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
                let big = v.iter().copied().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
                if big < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                (v, eig.eigenvalues[c].max(0.0))
            }
        }
    };
    let (a1, v1) = axis(0);
    let (a2, v2) = axis(1);
    let dot = |row: usize, a: &[f64]| (0..d).map(|j| x[(row, j)] * a[j]).sum::<f64>();
    let projected = (0..n).map(|i| [dot(i, &a1), dot(i, &a2)]).collect();
    Ok(Projection {
        points: projected,
        variances: [v1, v2],
        axes: [a1, a2],
        mean,
    })
}

/// A stack reading with the symbol predicted right after it.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledReading {
    pub label: usize,
    pub reading: Vec<f64>,
}

/// Readings taken just before predicting each symbol strictly between the
/// first `marker` and `EOS`, labeled with that symbol. Without a marker
/// every position is used.
pub fn readings_after_marker(
    model: &Model,
    store: &ParamStore,
    strings: &[Vec<usize>],
    marker: Option<usize>,
) -> Result<Vec<LabeledReading>> {
    if model.reading_dim() == 0 {
        return Err(Error::Dimension("model has no stack readings".into()));
    }
    let mut out = Vec::new();
    for w in strings {
        let from = match marker {
            Some(m) => match w.iter().position(|&a| a == m) {
                Some(p) => p + 1,
                None => continue,
            },
            None => 0,
        };
        let r = model.readings(store, w)?;
        // r[j] is available when predicting w[j]
        for (j, &label) in w.iter().enumerate().skip(from) {
            out.push(LabeledReading {
                label,
                reading: r[j].clone(),
            });
        }
    }
    Ok(out)
}

pub fn write_pca_tsv(path: &Path, labels: &[String], proj: &Projection) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# variance\t{}\t{}", proj.variances[0], proj.variances[1])?;
    writeln!(f, "label\tpc1\tpc2")?;
    for (l, p) in labels.iter().zip(&proj.points) {
        writeln!(f, "{l}\t{}\t{}", p[0], p[1])?;
    }
    f.flush()?;
    Ok(())
}

/// Reading vectors over time for one string: row `t` holds `r_t` and the
/// input symbol read just before it (`BOS` for `t = 0`).
pub fn write_heatmap_tsv(path: &Path, symbols: &[String], w: &[usize], readings: &[Vec<f64>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = readings.first().map_or(0, Vec::len);
    let cols: Vec<String> = (0..d).map(|i| format!("r{i}")).collect();
    writeln!(f, "t\tinput\t{}", cols.join("\t"))?;
    for (t, r) in readings.iter().enumerate() {
        let input = if t == 0 { "BOS" } else { symbols[w[t - 1]].as_str() };
        let vals: Vec<String> = r.iter().map(|x| x.to_string()).collect();
        writeln!(f, "{t}\t{input}\t{}", vals.join("\t"))?;
    }
    f.flush()?;
    Ok(())
}
