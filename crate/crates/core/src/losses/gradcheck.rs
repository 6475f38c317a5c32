//! Central finite-difference check of analytic gradients.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::LossValue;
use crate::error::Result;

/// Named input matrices of a loss.
pub type Inputs = BTreeMap<String, DMatrix<f64>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Step of the central difference.
    pub h: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// An entry whose one-sided slopes disagree by more than this straddles a
    /// kink of the loss and is skipped.
    pub kink_slope_gap: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { h: 1e-5, tol: 1e-4, kink_slope_gap: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Location of the worst entry: input name, row, column.
    pub worst: Option<(String, usize, usize)>,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub passed: bool,
}

/// Compares every analytic gradient entry with a central difference.
///
/// The relative error of an entry is `|g - n| / max(|g|, |n|, 1)`, with `g`
/// the analytic and `n` the numeric derivative. Inputs without a reported
/// gradient are treated as having a zero gradient.
pub fn finite_diff_check<F>(loss_fn: F, input: &Inputs, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&Inputs) -> Result<LossValue>,
{
    let base = loss_fn(input)?;
    let mut work = input.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
        passed: true,
    };

    for (name, matrix) in input {
        let analytic = base.gradients.get(name);
        for idx in 0..matrix.len() {
            let x0 = matrix[idx];
            work.get_mut(name).expect("cloned input")[idx] = x0 + cfg.h;
            let plus = loss_fn(&work)?.value;
            work.get_mut(name).expect("cloned input")[idx] = x0 - cfg.h;
            let minus = loss_fn(&work)?.value;
            work.get_mut(name).expect("cloned input")[idx] = x0;

            let right = (plus - base.value) / cfg.h;
            let left = (base.value - minus) / cfg.h;
            if (right - left).abs() > cfg.kink_slope_gap {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.h);
            let g = analytic.map_or(0.0, |a| a[idx]);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1.0);
            report.checked += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                let (r, c) = (idx % matrix.nrows(), idx / matrix.nrows());
                report.worst = Some((name.clone(), r, c));
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tol && report.max_rel_error.is_finite();
    Ok(report)
}
