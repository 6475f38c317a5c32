//! Similarity matrices, the temperature-adaptive row softmax, and assembly of
//! the global spatial-temporal affinity matrix over all views at two time
//! points.

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// One detection's appearance feature together with where it was observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub bbox: BBox,
    pub view: usize,
    pub time: u32,
    pub det: usize,
}

/// A collection of embeddings sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    items: Vec<Embedding>,
}

impl EmbeddingSet {
    pub fn new(items: Vec<Embedding>) -> Result<Self> {
        let dim = items.first().map_or(0, |e| e.vector.len());
        for e in &items {
            if e.vector.len() != dim {
                return Err(Error::Shape(format!(
                    "embedding dimension {} differs from {} (view {}, time {}, det {})",
                    e.vector.len(),
                    dim,
                    e.view,
                    e.time,
                    e.det
                )));
            }
            if !(e.bbox.w > 0.0 && e.bbox.h > 0.0) {
                return Err(Error::InvalidBox { w: e.bbox.w, h: e.bbox.h });
            }
        }
        Ok(Self { dim, items })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> &[Embedding] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Row-stacked `len() × dim()` feature matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.items.len(), self.dim, |r, c| self.items[r].vector[c])
    }
}

/// Scales every vector to unit L2 norm.
pub fn normalize_embeddings(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut items = set.items.clone();
    for e in &mut items {
        let norm = e.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroNorm { view: e.view, time: e.time, det: e.det });
        }
        e.vector.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(EmbeddingSet { dim: set.dim, items })
}

/// Unit-normalizes the rows of a feature matrix in place.
pub fn normalize_rows(m: &mut DMatrix<f64>) -> Result<()> {
    for mut row in m.row_iter_mut() {
        let norm = row.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidParameter("zero-norm feature row".into()));
        }
        row /= norm;
    }
    Ok(())
}

/// Pairwise dot products between the subjects of two frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: DMatrix<f64>,
}

/// Row-stochastic soft matching between the subjects of two frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingMatrix {
    pub values: DMatrix<f64>,
    pub tau: f64,
}

/// `S = E_i · E_jᵀ` for row-stacked (normalized) features.
pub fn similarity(e_i: &DMatrix<f64>, e_j: &DMatrix<f64>) -> Result<SimilarityMatrix> {
    if e_i.ncols() != e_j.ncols() && e_i.nrows() > 0 && e_j.nrows() > 0 {
        return Err(Error::Shape(format!(
            "feature dimension {} vs {}",
            e_i.ncols(),
            e_j.ncols()
        )));
    }
    if e_i.nrows() == 0 || e_j.nrows() == 0 {
        return Ok(SimilarityMatrix { values: DMatrix::zeros(e_i.nrows(), e_j.nrows()) });
    }
    Ok(SimilarityMatrix { values: e_i * e_j.transpose() })
}

/// Softmax temperature that adapts to the number of columns `c`:
/// `tau = ln[(delta (c - 1) + 1) / (1 - delta)] / epsilon`.
pub fn adaptive_temperature(c: usize, epsilon: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if c == 0 {
        return Err(Error::InvalidParameter("column count must be at least 1".into()));
    }
    Ok(((delta * (c as f64 - 1.0) + 1.0) / (1.0 - delta)).ln() / epsilon)
}

/// Row-wise softmax of `tau · S`, evaluated with the row maximum subtracted.
pub fn row_softmax(s: &SimilarityMatrix, tau: f64) -> Result<MatchingMatrix> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!("tau must be finite and >= 0, got {tau}")));
    }
    let mut x = s.values.clone();
    for mut row in x.row_iter_mut() {
        if row.is_empty() {
            continue;
        }
        let peak = row.max();
        row.apply(|v| *v = (tau * (*v - peak)).exp());
        let total = row.sum();
        row /= total;
    }
    Ok(MatchingMatrix { values: x, tau })
}

/// A frame slot: one view at one time point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slot {
    pub time: u32,
    pub view: usize,
}

/// Ordered list of frame slots with their subject counts. Rows and columns of
/// a global matrix are laid out slot by slot in this order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    slots: Vec<(Slot, usize)>,
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(slots: Vec<(Slot, usize)>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(slots.len() + 1);
        let mut acc = 0;
        for (i, (slot, count)) in slots.iter().enumerate() {
            if slots[..i].iter().any(|(s, _)| s == slot) {
                return Err(Error::Data(format!(
                    "slot (time {}, view {}) listed twice",
                    slot.time, slot.view
                )));
            }
            offsets.push(acc);
            acc += count;
        }
        offsets.push(acc);
        Ok(Self { slots, offsets })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of subjects over all slots.
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn slot(&self, idx: usize) -> Slot {
        self.slots[idx].0
    }

    pub fn count(&self, idx: usize) -> usize {
        self.slots[idx].1
    }

    pub fn offset(&self, idx: usize) -> usize {
        self.offsets[idx]
    }

    pub fn slots(&self) -> impl Iterator<Item = (Slot, usize)> + '_ {
        self.slots.iter().copied()
    }

    pub fn index_of(&self, slot: Slot) -> Option<usize> {
        self.slots.iter().position(|(s, _)| *s == slot)
    }

    /// Slot index and local row for a global row index.
    pub fn locate(&self, global: usize) -> Option<(usize, usize)> {
        (0..self.slots.len())
            .find(|&i| global >= self.offsets[i] && global < self.offsets[i + 1])
            .map(|i| (i, global - self.offsets[i]))
    }
}

/// Block matrix of pairwise matching matrices between every pair of slots.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalAffinity {
    pub values: DMatrix<f64>,
    pub layout: BlockLayout,
}

impl GlobalAffinity {
    pub fn new(values: DMatrix<f64>, layout: BlockLayout) -> Result<Self> {
        let n = layout.total();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::Shape(format!(
                "affinity is {}x{} but layout totals {n}",
                values.nrows(),
                values.ncols()
            )));
        }
        Ok(Self { values, layout })
    }

    /// Block from slot `a` (rows) to slot `b` (columns).
    pub fn block(&self, a: usize, b: usize) -> DMatrixView<'_, f64> {
        block_of(&self.values, &self.layout, a, b)
    }
}

pub(crate) fn block_of<'a>(
    m: &'a DMatrix<f64>,
    layout: &BlockLayout,
    a: usize,
    b: usize,
) -> DMatrixView<'a, f64> {
    m.view(
        (layout.offset(a), layout.offset(b)),
        (layout.count(a), layout.count(b)),
    )
}

/// Softmax parameters for the adaptive temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self { epsilon: 0.1, delta: 0.5 }
    }
}

/// Normalized feature rows of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub slot: Slot,
    pub features: DMatrix<f64>,
}

impl FrameFeatures {
    /// Builds a slot from an (already normalized) embedding set.
    pub fn from_set(slot: Slot, set: &EmbeddingSet) -> Self {
        Self { slot, features: set.matrix() }
    }
}

/// Matching matrix of one block: similarity followed by a softmax whose
/// temperature depends on the block's column count.
pub fn matching_block(
    rows: &DMatrix<f64>,
    cols: &DMatrix<f64>,
    params: &AffinityParams,
) -> Result<MatchingMatrix> {
    let s = similarity(rows, cols)?;
    if s.values.ncols() == 0 {
        return Ok(MatchingMatrix { values: s.values, tau: 0.0 });
    }
    let tau = adaptive_temperature(s.values.ncols(), params.epsilon, params.delta)?;
    row_softmax(&s, tau)
}

/// Assembles the global affinity over the given slots, in the given order.
/// Slots without detections contribute zero-width blocks.
pub fn assemble_global_affinity(
    frames: &[FrameFeatures],
    params: &AffinityParams,
) -> Result<GlobalAffinity> {
    let dim = frames.iter().find(|f| f.features.nrows() > 0).map(|f| f.features.ncols());
    if let Some(dim) = dim {
        if let Some(bad) = frames
            .iter()
            .find(|f| f.features.nrows() > 0 && f.features.ncols() != dim)
        {
            return Err(Error::Shape(format!(
                "slot (time {}, view {}) has feature dimension {} instead of {dim}",
                bad.slot.time,
                bad.slot.view,
                bad.features.ncols()
            )));
        }
    }
    let layout = BlockLayout::new(frames.iter().map(|f| (f.slot, f.features.nrows())).collect())?;
    let n = layout.total();
    let mut values = DMatrix::zeros(n, n);
    for (a, fa) in frames.iter().enumerate() {
        if fa.features.nrows() == 0 {
            continue;
        }
        for (b, fb) in frames.iter().enumerate() {
            if fb.features.nrows() == 0 {
                continue;
            }
            let block = matching_block(&fa.features, &fb.features, params)?;
            values
                .view_mut((layout.offset(a), layout.offset(b)), (layout.count(a), layout.count(b)))
                .copy_from(&block.values);
        }
    }
    Ok(GlobalAffinity { values, layout })
}
