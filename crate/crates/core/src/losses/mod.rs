//! Self-supervised consistency losses.
//!
//! Appearance side: symmetric and transitive similarity products of matching
//! matrices, supervised by diagonal pseudo labels with dummy nodes through a
//! pair of margin losses. Assignment side: focal pseudo-label loss, symmetry
//! penalty and nuclear norm on the assignment matrix.
//!
//! Every loss returns its value together with analytic (sub)gradients keyed by
//! input name. At kinks, `relu'(0) = 0` and `max`/`min` route the gradient to
//! the lowest column index among ties.

mod gradcheck;
mod suite;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport, Inputs};
pub use suite::{gradient_suite, SuiteEntry, SUITE_LOSSES, SUITE_MAX_SIDE};

/// Probability clip applied inside the focal loss.
pub const FOCAL_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsistencyKind {
    Symmetric,
    Transitive,
}

/// Product of matching matrices around a closed loop of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyMatrix {
    pub values: DMatrix<f64>,
    pub kind: ConsistencyKind,
}

/// Diagonal of a pseudo label: `true` when the subject is deemed re-found,
/// `false` for a dummy node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagonalPseudoLabel {
    pub present: Vec<bool>,
}

/// A loss value with gradients for each differentiable input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradients: BTreeMap<String, DMatrix<f64>>,
}

impl LossValue {
    pub fn gradient(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.gradients.get(name)
    }
}

fn check_inner(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.ncols() != b.nrows() {
        return Err(Error::Shape(format!(
            "{what}: {}x{} times {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

/// `I_S = X_ij · X_ji`.
pub fn symmetric_similarity(x_ij: &DMatrix<f64>, x_ji: &DMatrix<f64>) -> Result<ConsistencyMatrix> {
    check_inner(x_ij, x_ji, "symmetric similarity")?;
    if x_ji.ncols() != x_ij.nrows() {
        return Err(Error::Shape("symmetric similarity must close the loop".into()));
    }
    Ok(ConsistencyMatrix { values: x_ij * x_ji, kind: ConsistencyKind::Symmetric })
}

/// `I_T = X_ij · X_jk · X_ki`.
pub fn transitive_similarity(
    x_ij: &DMatrix<f64>,
    x_jk: &DMatrix<f64>,
    x_ki: &DMatrix<f64>,
) -> Result<ConsistencyMatrix> {
    check_inner(x_ij, x_jk, "transitive similarity (ij, jk)")?;
    check_inner(x_jk, x_ki, "transitive similarity (jk, ki)")?;
    if x_ki.ncols() != x_ij.nrows() {
        return Err(Error::Shape("transitive similarity must close the loop".into()));
    }
    Ok(ConsistencyMatrix { values: x_ij * x_jk * x_ki, kind: ConsistencyKind::Transitive })
}

fn row_max_above(x: &DMatrix<f64>, m: f64) -> Vec<bool> {
    x.row_iter().map(|row| row.iter().any(|&v| v > m)).collect()
}

fn col_max_above(x: &DMatrix<f64>, m: f64) -> Vec<bool> {
    x.column_iter().map(|col| col.iter().any(|&v| v > m)).collect()
}

/// Row `r` is present iff its largest matching score exceeds `m`.
pub fn pseudo_diag_sym(x_ij: &DMatrix<f64>, m: f64) -> DiagonalPseudoLabel {
    DiagonalPseudoLabel { present: row_max_above(x_ij, m) }
}

/// Row `r` is present iff it is re-found in both `j` and `k`.
pub fn pseudo_diag_trs(x_ij: &DMatrix<f64>, x_ik: &DMatrix<f64>, m: f64) -> Result<DiagonalPseudoLabel> {
    if x_ij.nrows() != x_ik.nrows() {
        return Err(Error::Shape(format!(
            "pseudo label rows {} vs {}",
            x_ij.nrows(),
            x_ik.nrows()
        )));
    }
    let a = row_max_above(x_ij, m);
    let b = row_max_above(x_ik, m);
    Ok(DiagonalPseudoLabel { present: a.iter().zip(&b).map(|(p, q)| *p && *q).collect() })
}

// Lowest-index argmax / argmin over c != r.
fn off_diag_extreme(i: &DMatrix<f64>, r: usize, want_max: bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for c in (0..i.ncols()).filter(|&c| c != r) {
        best = match best {
            None => Some(c),
            Some(b) if want_max && i[(r, c)] > i[(r, b)] => Some(c),
            Some(b) if !want_max && i[(r, c)] < i[(r, b)] => Some(c),
            keep => keep,
        };
    }
    best
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Margin loss for a row whose subject is present: the diagonal must beat the
/// hardest off-diagonal entry by `m1`. Rows without off-diagonal entries
/// contribute nothing.
pub fn row_loss_present(i: &DMatrix<f64>, r: usize, m1: f64) -> f64 {
    match off_diag_extreme(i, r, true) {
        Some(c) => relu(i[(r, c)] - i[(r, r)] + m1),
        None => 0.0,
    }
}

/// Margin loss for a dummy row: the diagonal must stay within `m2` of every
/// off-diagonal entry.
pub fn row_loss_absent(i: &DMatrix<f64>, r: usize, m2: f64) -> f64 {
    let (Some(cmax), Some(cmin)) = (off_diag_extreme(i, r, true), off_diag_extreme(i, r, false))
    else {
        return 0.0;
    };
    0.5 * (relu(i[(r, cmax)] - i[(r, r)] - m2) + relu(i[(r, r)] - i[(r, cmin)] - m2))
}

/// Sum of the per-row margin losses, selected by the pseudo label. Gradient is
/// reported under `"i"`.
pub fn matrix_loss(i: &DMatrix<f64>, label: &DiagonalPseudoLabel, m1: f64, m2: f64) -> Result<LossValue> {
    let (value, grad) = matrix_loss_raw(i, label, m1, m2)?;
    Ok(LossValue { value, gradients: BTreeMap::from([("i".to_string(), grad)]) })
}

fn matrix_loss_raw(
    i: &DMatrix<f64>,
    label: &DiagonalPseudoLabel,
    m1: f64,
    m2: f64,
) -> Result<(f64, DMatrix<f64>)> {
    if !i.is_square() {
        return Err(Error::Shape(format!("consistency matrix is {}x{}", i.nrows(), i.ncols())));
    }
    if label.present.len() != i.nrows() {
        return Err(Error::Shape(format!(
            "pseudo label has {} entries for {} rows",
            label.present.len(),
            i.nrows()
        )));
    }
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(i.nrows(), i.ncols());
    for (r, &present) in label.present.iter().enumerate() {
        let Some(cmax) = off_diag_extreme(i, r, true) else {
            continue;
        };
        if present {
            let arg = i[(r, cmax)] - i[(r, r)] + m1;
            if arg > 0.0 {
                value += arg;
                grad[(r, cmax)] += 1.0;
                grad[(r, r)] -= 1.0;
            }
        } else {
            let cmin = off_diag_extreme(i, r, false).expect("row has off-diagonal entries");
            let upper = i[(r, cmax)] - i[(r, r)] - m2;
            if upper > 0.0 {
                value += 0.5 * upper;
                grad[(r, cmax)] += 0.5;
                grad[(r, r)] -= 0.5;
            }
            let lower = i[(r, r)] - i[(r, cmin)] - m2;
            if lower > 0.0 {
                value += 0.5 * lower;
                grad[(r, r)] += 0.5;
                grad[(r, cmin)] -= 0.5;
            }
        }
    }
    Ok((value, grad))
}

/// Margin parameters shared by the appearance losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginParams {
    /// Matching threshold for the pseudo labels.
    pub m: f64,
    pub m1: f64,
    pub m2: f64,
}

impl Default for MarginParams {
    fn default() -> Self {
        Self { m: 0.5, m1: 0.5, m2: 0.4 }
    }
}

/// Symmetric-consistency loss `L(I_S) + L(I_Sᵀ)`.
///
/// Rows of `I_S` are labelled from the row maxima of `X_ij`; rows of `I_Sᵀ`
/// (the subjects of frame `i` seen as columns) from the column maxima of
/// `X_ji`. Gradients under `"x_ij"` and `"x_ji"`.
pub fn loss_sym_a(x_ij: &DMatrix<f64>, x_ji: &DMatrix<f64>, p: &MarginParams) -> Result<LossValue> {
    let is = symmetric_similarity(x_ij, x_ji)?.values;
    let fwd = pseudo_diag_sym(x_ij, p.m);
    let rev = DiagonalPseudoLabel { present: col_max_above(x_ji, p.m) };
    let (v1, g1) = matrix_loss_raw(&is, &fwd, p.m1, p.m2)?;
    let (v2, g2) = matrix_loss_raw(&is.transpose(), &rev, p.m1, p.m2)?;
    let g = g1 + g2.transpose();
    let gradients = BTreeMap::from([
        ("x_ij".to_string(), &g * x_ji.transpose()),
        ("x_ji".to_string(), x_ij.transpose() * &g),
    ]);
    Ok(LossValue { value: v1 + v2, gradients })
}

/// Transitive-consistency loss `L(I_T) + L(I_Tᵀ)` over the loop `i → j → k → i`.
///
/// Forward labels need the subject re-found in both `j` (`X_ij`) and `k`
/// (`X_ik`). Reverse labels look at the maps arriving back at `i`: column
/// maxima of `X_ki` and of the composed `X_jk · X_ki`. `X_ik` only feeds the
/// labels, so its gradient is zero. Gradients under `"x_ij"`, `"x_jk"`,
/// `"x_ki"`, `"x_ik"`.
pub fn loss_trs_a(
    x_ij: &DMatrix<f64>,
    x_jk: &DMatrix<f64>,
    x_ki: &DMatrix<f64>,
    x_ik: &DMatrix<f64>,
    p: &MarginParams,
) -> Result<LossValue> {
    let it = transitive_similarity(x_ij, x_jk, x_ki)?.values;
    let fwd = pseudo_diag_trs(x_ij, x_ik, p.m)?;
    let jk_ki = x_jk * x_ki;
    let rev = DiagonalPseudoLabel {
        present: col_max_above(x_ki, p.m)
            .into_iter()
            .zip(col_max_above(&jk_ki, p.m))
            .map(|(a, b)| a && b)
            .collect(),
    };
    let (v1, g1) = matrix_loss_raw(&it, &fwd, p.m1, p.m2)?;
    let (v2, g2) = matrix_loss_raw(&it.transpose(), &rev, p.m1, p.m2)?;
    let g = g1 + g2.transpose();
    let ij_jk = x_ij * x_jk;
    let gradients = BTreeMap::from([
        ("x_ij".to_string(), &g * jk_ki.transpose()),
        ("x_jk".to_string(), x_ij.transpose() * &g * x_ki.transpose()),
        ("x_ki".to_string(), ij_jk.transpose() * &g),
        ("x_ik".to_string(), DMatrix::zeros(x_ik.nrows(), x_ik.ncols())),
    ]);
    Ok(LossValue { value: v1 + v2, gradients })
}

/// Positive-class weight of the focal loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Fixed(f64),
    /// Share of negatives among all label entries.
    Auto,
}

impl Alpha {
    pub fn resolve(&self, label: &DMatrix<f64>) -> f64 {
        match *self {
            Alpha::Fixed(a) => a,
            Alpha::Auto => {
                let total = label.len();
                if total == 0 {
                    return 0.5;
                }
                let negatives = label.iter().filter(|&&v| v < 0.5).count();
                negatives as f64 / total as f64
            }
        }
    }
}

/// Focal loss of `A` against a binary pseudo label. Gradient under `"a"`;
/// entries outside the clip range have zero gradient.
pub fn focal_pseudo_loss(a: &DMatrix<f64>, label: &DMatrix<f64>, alpha: Alpha, gamma: f64) -> Result<LossValue> {
    if a.shape() != label.shape() {
        return Err(Error::Shape(format!(
            "assignment {:?} vs pseudo label {:?}",
            a.shape(),
            label.shape()
        )));
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
    }
    let alpha = alpha.resolve(label);
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(a.nrows(), a.ncols());
    for idx in 0..a.len() {
        let raw = a[idx];
        let x = raw.clamp(FOCAL_CLIP, 1.0 - FOCAL_CLIP);
        let inside = raw > FOCAL_CLIP && raw < 1.0 - FOCAL_CLIP;
        let (v, d) = if label[idx] >= 0.5 {
            let q = 1.0 - x;
            let v = -alpha * q.powf(gamma) * x.ln();
            let dq = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
            (v, alpha * dq * x.ln() - alpha * q.powf(gamma) / x)
        } else {
            let q = 1.0 - x;
            let v = -(1.0 - alpha) * x.powf(gamma) * q.ln();
            let dx = if gamma == 0.0 { 0.0 } else { gamma * x.powf(gamma - 1.0) };
            (v, -(1.0 - alpha) * (dx * q.ln() - x.powf(gamma) / q))
        };
        value += v;
        if inside {
            grad[idx] = d;
        }
    }
    Ok(LossValue { value, gradients: BTreeMap::from([("a".to_string(), grad)]) })
}

/// Frobenius norm of `A − Aᵀ`. Gradient `2 (A − Aᵀ) / ‖A − Aᵀ‖` under `"a"`,
/// zero at symmetric inputs.
pub fn loss_sym_m(a: &DMatrix<f64>) -> Result<LossValue> {
    if !a.is_square() {
        return Err(Error::Shape(format!("assignment is {}x{}", a.nrows(), a.ncols())));
    }
    let d = a - a.transpose();
    let value = d.norm();
    let grad = if value > 0.0 { d * (2.0 / value) } else { DMatrix::zeros(a.nrows(), a.ncols()) };
    Ok(LossValue { value, gradients: BTreeMap::from([("a".to_string(), grad)]) })
}

/// Nuclear norm `‖A‖_*`. Subgradient `U Vᵀ` under `"a"`, summed over the
/// singular values above round-off.
///
/// Singular triplets come from the symmetric eigendecomposition of
/// `[[0, A], [Aᵀ, 0]]`, whose eigenpairs are `±σ` with vectors `(u, ±v)/√2`.
pub fn loss_trs_m(a: &DMatrix<f64>) -> Result<LossValue> {
    if a.is_empty() {
        return Ok(LossValue {
            value: 0.0,
            gradients: BTreeMap::from([("a".to_string(), a.clone())]),
        });
    }
    let (m, n) = a.shape();
    let mut jw = DMatrix::zeros(m + n, m + n);
    jw.view_mut((0, m), (m, n)).copy_from(a);
    jw.view_mut((m, 0), (n, m)).copy_from(&a.transpose());
    let eig = SymmetricEigen::try_new(jw, f64::EPSILON, 0).ok_or(Error::Numeric {
        routine: "nuclear norm eigendecomposition",
        input_hash: crate::solver::matrix_hash(a),
    })?;
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric { routine: "nuclear norm eigendecomposition", input_hash: crate::solver::matrix_hash(a) });
    }
    let value = 0.5 * eig.eigenvalues.iter().map(|l| l.abs()).sum::<f64>();
    let cutoff = eig.eigenvalues.amax() * (m + n) as f64 * f64::EPSILON;
    let mut grad = DMatrix::zeros(m, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff {
            let x = eig.eigenvectors.column(k);
            grad += 2.0 * x.rows(0, m) * x.rows(m, n).transpose();
        }
    }
    Ok(LossValue { value, gradients: BTreeMap::from([("a".to_string(), grad)]) })
}

/// Nuclear norm minus trace; zero exactly when a symmetric matrix is PSD.
pub fn psd_gap(a: &DMatrix<f64>) -> Result<f64> {
    Ok(loss_trs_m(a)?.value - a.trace())
}

/// Unweighted sum of loss terms. Gradients that share a key are added.
pub fn total_loss<'a>(parts: impl IntoIterator<Item = &'a LossValue>) -> Result<LossValue> {
    let mut value = 0.0;
    let mut gradients: BTreeMap<String, DMatrix<f64>> = BTreeMap::new();
    for part in parts {
        value += part.value;
        for (k, g) in &part.gradients {
            match gradients.get_mut(k) {
                Some(acc) if acc.shape() == g.shape() => *acc += g,
                Some(acc) => {
                    return Err(Error::Shape(format!(
                        "gradient {k}: {:?} vs {:?}",
                        acc.shape(),
                        g.shape()
                    )))
                }
                None => {
                    gradients.insert(k.clone(), g.clone());
                }
            }
        }
    }
    Ok(LossValue { value, gradients })
}
