//! Global assignment from the spatial-temporal affinity.
//!
//! A consistent assignment over all slots has the form `A = P Pᵀ` for a
//! row-concatenated permutation `P` onto the identity universe: symmetric,
//! positive semidefinite, entries in `[0, 1]`, and identity on same-frame
//! blocks. [`consistency_solve`] alternates projections onto these sets
//! starting from the symmetrized affinity; [`extract_permutations`] rounds the
//! result block by block.

mod hungarian;

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::affinity::{block_of, BlockLayout, GlobalAffinity, Slot};
use crate::error::{Error, Result};

pub use hungarian::{hungarian, pairing_score};

/// Symmetric assignment over a block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    pub values: DMatrix<f64>,
    pub layout: BlockLayout,
}

impl AssignmentMatrix {
    pub fn block(&self, a: usize, b: usize) -> nalgebra::DMatrixView<'_, f64> {
        block_of(&self.values, &self.layout, a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMode {
    #[default]
    Consistency,
    /// Per-block Hungarian pseudo labels only, no global projection.
    PseudoOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Matching threshold: a rounded pair is kept only if its score exceeds it.
    #[serde(rename = "M")]
    pub m: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub mode: SolverMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { m: 0.5, max_iters: 10, tol: 1e-6, mode: SolverMode::Consistency }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m < 1.0) {
            return Err(Error::InvalidParameter(format!("M must lie in (0, 1), got {}", self.m)));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// One retained pair of a rounded block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub row: usize,
    pub col: usize,
    pub score: f64,
}

/// Binary one-to-one matching between two slots, stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationBlock {
    pub rows: usize,
    pub cols: usize,
    pub links: Vec<Link>,
}

impl PermutationBlock {
    pub fn transpose(&self) -> Self {
        let mut links: Vec<_> =
            self.links.iter().map(|l| Link { row: l.col, col: l.row, score: l.score }).collect();
        links.sort_by_key(|l| (l.row, l.col));
        Self { rows: self.cols, cols: self.rows, links }
    }

    pub fn col_of(&self, row: usize) -> Option<&Link> {
        self.links.iter().find(|l| l.row == row)
    }

    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.links.iter().any(|l| l.row == row && l.col == col)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for l in &self.links {
            m[(l.row, l.col)] = 1.0;
        }
        m
    }
}

/// Rounded blocks keyed by `(row slot, column slot)`.
pub type Permutations = BTreeMap<(Slot, Slot), PermutationBlock>;

/// Stable hash of a matrix, used to identify inputs in numeric errors.
pub fn matrix_hash(m: &DMatrix<f64>) -> u64 {
    let mut h = DefaultHasher::new();
    m.shape().hash(&mut h);
    for v in m.iter() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

fn round_block(block: &DMatrix<f64>, m: f64) -> PermutationBlock {
    let links = hungarian(block)
        .into_iter()
        .map(|(row, col)| Link { row, col, score: block[(row, col)] })
        .filter(|l| l.score > m)
        .collect();
    PermutationBlock { rows: block.nrows(), cols: block.ncols(), links }
}

/// Binary pseudo label: Hungarian per block, pairs scoring at most `m`
/// dropped, same-frame diagonal blocks set to identity.
pub fn pseudo_label_assignment(x: &GlobalAffinity, m: f64) -> AssignmentMatrix {
    let layout = &x.layout;
    let mut values = DMatrix::zeros(layout.total(), layout.total());
    for a in 0..layout.len() {
        for b in 0..layout.len() {
            let (oa, ob) = (layout.offset(a), layout.offset(b));
            if a == b {
                for r in 0..layout.count(a) {
                    values[(oa + r, oa + r)] = 1.0;
                }
                continue;
            }
            if layout.count(a) == 0 || layout.count(b) == 0 {
                continue;
            }
            let rounded = round_block(&x.block(a, b).clone_owned(), m);
            for l in rounded.links {
                values[(oa + l.row, ob + l.col)] = 1.0;
            }
        }
    }
    AssignmentMatrix { values, layout: layout.clone() }
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Nearest positive semidefinite matrix in Frobenius norm: negative
/// eigenvalues are clamped to zero.
pub fn psd_project(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Shape(format!("psd projection of a {}x{} matrix", a.nrows(), a.ncols())));
    }
    if a.is_empty() {
        return Ok(a.clone());
    }
    let numeric = || Error::Numeric { routine: "symmetric eigendecomposition", input_hash: matrix_hash(a) };
    if a.iter().any(|v| !v.is_finite()) {
        return Err(numeric());
    }
    let mut eig = SymmetricEigen::try_new(symmetrize(a), f64::EPSILON, 0).ok_or_else(numeric)?;
    eig.eigenvalues.apply(|l| *l = l.max(0.0));
    Ok(symmetrize(&eig.recompose()))
}

// Entries into [0, 1]; same-frame blocks to identity (unit diagonal included).
fn enforce_box_and_frames(a: &mut DMatrix<f64>, layout: &BlockLayout) {
    a.apply(|v| *v = v.clamp(0.0, 1.0));
    for s in 0..layout.len() {
        let (o, n) = (layout.offset(s), layout.count(s));
        for r in 0..n {
            for c in 0..n {
                a[(o + r, o + c)] = if r == c { 1.0 } else { 0.0 };
            }
        }
    }
}

/// One projection sweep: PSD cone, unit box, same-frame identity, symmetry.
pub fn project_once(a: &DMatrix<f64>, layout: &BlockLayout) -> Result<DMatrix<f64>> {
    let mut next = psd_project(a)?;
    enforce_box_and_frames(&mut next, layout);
    Ok(symmetrize(&next))
}

/// Globally consistent assignment matrix from the affinity.
///
/// In [`SolverMode::PseudoOnly`] the per-block pseudo label is returned,
/// symmetrized.
pub fn consistency_solve(x: &GlobalAffinity, cfg: &SolverConfig) -> Result<AssignmentMatrix> {
    cfg.validate()?;
    if cfg.mode == SolverMode::PseudoOnly {
        let pseudo = pseudo_label_assignment(x, cfg.m);
        return Ok(AssignmentMatrix { values: symmetrize(&pseudo.values), layout: pseudo.layout });
    }
    let mut a = symmetrize(&x.values);
    for _ in 0..cfg.max_iters {
        let next = project_once(&a, &x.layout)?;
        let change = (&next - &a).norm();
        a = next;
        if change < cfg.tol {
            break;
        }
    }
    Ok(AssignmentMatrix { values: a, layout: x.layout.clone() })
}

/// Rounds every cross-slot block of a solved assignment. Only blocks above the
/// diagonal are rounded; those below are their transposes, so
/// `P[(v, u)] = P[(u, v)]ᵀ` holds by construction.
pub fn extract_permutations(a: &AssignmentMatrix, m: f64) -> Permutations {
    let layout = &a.layout;
    let mut out = Permutations::new();
    for i in 0..layout.len() {
        for j in (i + 1)..layout.len() {
            let block = round_block(&a.block(i, j).clone_owned(), m);
            out.insert((layout.slot(j), layout.slot(i)), block.transpose());
            out.insert((layout.slot(i), layout.slot(j)), block);
        }
    }
    out
}

/// Binary matrix over `layout` assembled from rounded blocks, with identity
/// same-frame blocks.
pub fn rounded_matrix(layout: &BlockLayout, perms: &Permutations) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(layout.total(), layout.total());
    for s in 0..layout.len() {
        for r in 0..layout.count(s) {
            let o = layout.offset(s) + r;
            m[(o, o)] = 1.0;
        }
    }
    for ((from, to), block) in perms {
        let (Some(a), Some(b)) = (layout.index_of(*from), layout.index_of(*to)) else {
            continue;
        };
        for l in &block.links {
            m[(layout.offset(a) + l.row, layout.offset(b) + l.col)] = 1.0;
        }
    }
    m
}

/// Pairwise association accuracy of rounded blocks against a reference binary
/// assignment: `TP / (TP + FP + FN)` over cross-slot pairs above the block
/// diagonal. Returns 1 when neither side has any pair.
pub fn pairwise_accuracy(layout: &BlockLayout, perms: &Permutations, reference: &DMatrix<f64>) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for a in 0..layout.len() {
        for b in (a + 1)..layout.len() {
            let key = (layout.slot(a), layout.slot(b));
            let block = perms.get(&key);
            for r in 0..layout.count(a) {
                for c in 0..layout.count(b) {
                    let truth = reference[(layout.offset(a) + r, layout.offset(b) + c)] > 0.5;
                    let pred = block.is_some_and(|p| p.is_set(r, c));
                    match (truth, pred) {
                        (true, true) => tp += 1,
                        (false, true) => fp += 1,
                        (true, false) => fn_ += 1,
                        (false, false) => {}
                    }
                }
            }
        }
    }
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp + fn_) as f64
    }
}
