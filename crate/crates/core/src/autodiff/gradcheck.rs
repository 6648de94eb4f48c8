//! Central finite-difference checks of analytic gradients.

use super::tape::{Gradients, ParamId, ParamStore};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Denominator floor for the relative deviation, so that coordinates
    /// whose true gradient is ~0 are compared absolutely.
    pub abs_floor: f64,
    /// Check at most this many coordinates per parameter (evenly strided).
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-6,
            max_coords_per_param: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordinateCheck {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub deviation: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: Vec<CoordinateCheck>,
    /// Coordinates where `f` was non-finite at a probe point.
    pub inconclusive: Vec<(ParamId, usize)>,
    pub max_deviation: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        !self.checked.is_empty() && self.max_deviation <= self.tol
    }

    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.checked
            .iter()
            .max_by(|a, b| a.deviation.total_cmp(&b.deviation))
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_deviation(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `analytic` against central differences of `f` around `params`.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &ParamStore,
    analytic: &Gradients,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut checked = Vec::new();
    let mut inconclusive = Vec::new();
    for id in params.ids() {
        let n = params.get(id).len();
        let stride = match cfg.max_coords_per_param {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for index in (0..n).step_by(stride) {
            let orig = params.get(id).data()[index];
            probe.get_mut(id).data_mut()[index] = orig + cfg.step;
            let plus = f(&probe);
            probe.get_mut(id).data_mut()[index] = orig - cfg.step;
            let minus = f(&probe);
            probe.get_mut(id).data_mut()[index] = orig;
            match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => {
                    let numeric = (p - m) / (2.0 * cfg.step);
                    let a = analytic.get(id).data()[index];
                    checked.push(CoordinateCheck {
                        param: id,
                        index,
                        analytic: a,
                        numeric,
                        deviation: relative_deviation(a, numeric, cfg.abs_floor),
                    });
                }
                _ => inconclusive.push((id, index)),
            }
        }
    }
    let max_deviation = checked.iter().map(|c| c.deviation).fold(0.0, f64::max);
    Ok(GradCheckReport {
        checked,
        inconclusive,
        max_deviation,
        tol: cfg.tol,
    })
}
