//! Evaluation suite: over-time tracking (MOTA, IDP/IDR/IDF1), cross-view
//! association (AIDP/AIDR/AIDF1, MHAA), their overall means and STMA@t.
//!
//! All functions take ground truth and prediction as flat record lists.
//! Boxes of one `(view, frame)` are paired by [`match_boxes`].

mod stma;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::records::TrackRecord;
use crate::solver::hungarian;

pub use stma::{stma, stma_windows};

/// Minimum IoU for a ground-truth and a predicted box to correspond.
pub const IOU_THRESHOLD: f64 = 0.5;

/// Pairs ground-truth boxes with predicted boxes of one view and frame.
///
/// Maximizes total IoU over pairs whose IoU reaches `iou_thresh` (inclusive).
/// Returns `(gt index, pred index)` sorted by gt index.
pub fn match_boxes(gt: &[TrackRecord], pred: &[TrackRecord], iou_thresh: f64) -> Vec<(usize, usize)> {
    let m = DMatrix::from_fn(gt.len(), pred.len(), |i, j| {
        let v = gt[i].bbox.iou(&pred[j].bbox);
        if v >= iou_thresh {
            v
        } else {
            0.0
        }
    });
    hungarian(&m).into_iter().filter(|&(i, j)| m[(i, j)] > 0.0 && m[(i, j)] >= iou_thresh).collect()
}

pub(crate) type Frames = BTreeMap<(usize, u32), Vec<TrackRecord>>;

pub(crate) fn by_view_frame(records: &[TrackRecord]) -> Frames {
    let mut out: Frames = BTreeMap::new();
    for r in records {
        out.entry((r.view, r.frame)).or_default().push(*r);
    }
    out
}

pub(crate) fn keys(gt: &Frames, pred: &Frames) -> BTreeSet<(usize, u32)> {
    gt.keys().chain(pred.keys()).copied().collect()
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// Harmonic mean; 0 when either argument is 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p <= 0.0 || r <= 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClearCounts {
    pub gt: usize,
    pub fn_: usize,
    pub fp: usize,
    pub idsw: usize,
}

/// CLEAR-MOT error counts, summed over views.
///
/// Per view, frames are visited in order. A ground-truth identity keeps its
/// previous predicted partner whenever that pair still overlaps enough; the
/// rest is paired by [`match_boxes`]. Switching partner counts one IDSW.
pub fn clear_counts(gt: &[TrackRecord], pred: &[TrackRecord]) -> ClearCounts {
    let g = by_view_frame(gt);
    let p = by_view_frame(pred);
    let empty = Vec::new();
    let mut c = ClearCounts::default();
    let mut last: HashMap<(usize, u64), u64> = HashMap::new();
    for key in keys(&g, &p) {
        let gs = g.get(&key).unwrap_or(&empty);
        let ps = p.get(&key).unwrap_or(&empty);
        let view = key.0;
        let mut gt_used = vec![false; gs.len()];
        let mut pred_used = vec![false; ps.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (i, gr) in gs.iter().enumerate() {
            if let Some(&prev) = last.get(&(view, gr.id)) {
                if let Some(j) = ps.iter().position(|pr| pr.id == prev) {
                    if !pred_used[j] && gr.bbox.iou(&ps[j].bbox) >= IOU_THRESHOLD {
                        gt_used[i] = true;
                        pred_used[j] = true;
                        pairs.push((i, j));
                    }
                }
            }
        }
        let gi: Vec<usize> = (0..gs.len()).filter(|&i| !gt_used[i]).collect();
        let pj: Vec<usize> = (0..ps.len()).filter(|&j| !pred_used[j]).collect();
        let sub_g: Vec<TrackRecord> = gi.iter().map(|&i| gs[i]).collect();
        let sub_p: Vec<TrackRecord> = pj.iter().map(|&j| ps[j]).collect();
        pairs.extend(match_boxes(&sub_g, &sub_p, IOU_THRESHOLD).into_iter().map(|(a, b)| (gi[a], pj[b])));

        for &(i, j) in &pairs {
            if let Some(prev) = last.insert((view, gs[i].id), ps[j].id) {
                if prev != ps[j].id {
                    c.idsw += 1;
                }
            }
        }
        c.gt += gs.len();
        c.fn_ += gs.len() - pairs.len();
        c.fp += ps.len() - pairs.len();
    }
    c
}

/// MOTA pooled over views: `1 − (FN + FP + IDSW) / Σ|GT|`.
pub fn mota(gt: &[TrackRecord], pred: &[TrackRecord]) -> f64 {
    let c = clear_counts(gt, pred);
    if c.gt == 0 {
        return if c.fp == 0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - (c.fn_ + c.fp + c.idsw) as f64 / c.gt as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IdCounts {
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

/// Per view: `overlap[g][p]` = frames where trajectory `g` and `p` both exist
/// with IoU ≥ threshold. Returns gt ids, pred ids, the overlap table and the
/// detection totals.
pub(crate) fn trajectory_overlap(
    gt: &[TrackRecord],
    pred: &[TrackRecord],
) -> BTreeMap<usize, (Vec<u64>, Vec<u64>, DMatrix<f64>, usize, usize)> {
    let mut views: BTreeSet<usize> = BTreeSet::new();
    views.extend(gt.iter().map(|r| r.view));
    views.extend(pred.iter().map(|r| r.view));
    let mut out = BTreeMap::new();
    for v in views {
        let gv: Vec<&TrackRecord> = gt.iter().filter(|r| r.view == v).collect();
        let pv: Vec<&TrackRecord> = pred.iter().filter(|r| r.view == v).collect();
        let gids: Vec<u64> = gv.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
        let pids: Vec<u64> = pv.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
        let gpos: HashMap<u64, usize> = gids.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        let ppos: HashMap<u64, usize> = pids.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let mut pred_at: HashMap<u32, Vec<&TrackRecord>> = HashMap::new();
        for r in &pv {
            pred_at.entry(r.frame).or_default().push(r);
        }
        let mut overlap = DMatrix::zeros(gids.len(), pids.len());
        for g in &gv {
            for p in pred_at.get(&g.frame).map(Vec::as_slice).unwrap_or(&[]) {
                if g.bbox.iou(&p.bbox) >= IOU_THRESHOLD {
                    overlap[(gpos[&g.id], ppos[&p.id])] += 1.0;
                }
            }
        }
        out.insert(v, (gids, pids, overlap, gv.len(), pv.len()));
    }
    out
}

/// Identity-level counts from the best one-to-one trajectory pairing per
/// view, summed over views.
pub fn id_counts(gt: &[TrackRecord], pred: &[TrackRecord]) -> IdCounts {
    let mut c = IdCounts::default();
    for (_, (_, _, overlap, n_gt, n_pred)) in trajectory_overlap(gt, pred) {
        let tp: f64 = hungarian(&overlap).into_iter().map(|(i, j)| overlap[(i, j)]).sum();
        let tp = tp as usize;
        c.idtp += tp;
        c.idfn += n_gt - tp;
        c.idfp += n_pred - tp;
    }
    c
}

/// `(IDP, IDR, IDF1)`, pooled over views.
pub fn id_metrics(gt: &[TrackRecord], pred: &[TrackRecord]) -> (f64, f64, f64) {
    let c = id_counts(gt, pred);
    let p = ratio(c.idtp as f64, (c.idtp + c.idfp) as f64);
    let r = ratio(c.idtp as f64, (c.idtp + c.idfn) as f64);
    let f = if c.idtp + c.idfp + c.idfn == 0 { 1.0 } else { 2.0 * c.idtp as f64 / (2 * c.idtp + c.idfp + c.idfn) as f64 };
    (p, r, f)
}

/// Boxes of one frame in one view with their ground-truth partner identity.
struct ViewFrame<'a> {
    gt: &'a [TrackRecord],
    pred: &'a [TrackRecord],
    /// `gt_of_pred[j]`: gt identity matched to predicted box `j`.
    gt_of_pred: Vec<Option<u64>>,
}

fn frame_views<'a>(g: &'a Frames, p: &'a Frames, views: &[usize], frame: u32) -> Vec<ViewFrame<'a>> {
    views
        .iter()
        .map(|&v| {
            let gs = g.get(&(v, frame)).map(Vec::as_slice).unwrap_or(&[]);
            let ps = p.get(&(v, frame)).map(Vec::as_slice).unwrap_or(&[]);
            let mut gt_of_pred = vec![None; ps.len()];
            for (i, j) in match_boxes(gs, ps, IOU_THRESHOLD) {
                gt_of_pred[j] = Some(gs[i].id);
            }
            ViewFrame { gt: gs, pred: ps, gt_of_pred }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub gt_pairs: usize,
    pub pred_pairs: usize,
    /// Predicted pairs whose boxes match ground truth of one identity.
    pub tp: usize,
    /// Predicted pairs whose boxes match ground truth of two identities.
    pub mm: usize,
    /// Predicted pairs with a box matching no ground truth.
    pub fp: usize,
}

fn pair_counts(a: &ViewFrame<'_>, b: &ViewFrame<'_>) -> PairCounts {
    let mut c = PairCounts::default();
    for g in a.gt {
        c.gt_pairs += b.gt.iter().filter(|h| h.id == g.id).count();
    }
    let b_by_id: HashMap<u64, usize> = b.pred.iter().enumerate().map(|(j, r)| (r.id, j)).collect();
    for (i, p) in a.pred.iter().enumerate() {
        let Some(&j) = b_by_id.get(&p.id) else { continue };
        c.pred_pairs += 1;
        match (a.gt_of_pred[i], b.gt_of_pred[j]) {
            (Some(x), Some(y)) if x == y => c.tp += 1,
            (Some(_), Some(_)) => c.mm += 1,
            _ => c.fp += 1,
        }
    }
    c
}

fn views_and_frames(g: &Frames, p: &Frames) -> (Vec<usize>, Vec<u32>) {
    let all = keys(g, p);
    let views: BTreeSet<usize> = all.iter().map(|k| k.0).collect();
    let frames: BTreeSet<u32> = all.iter().map(|k| k.1).collect();
    (views.into_iter().collect(), frames.into_iter().collect())
}

/// `(AIDP, AIDR, AIDF1)`: pair precision and recall averaged over every frame
/// and ordered view pair, with 0/0 read as 1.
pub fn cross_view_metrics(gt: &[TrackRecord], pred: &[TrackRecord]) -> (f64, f64, f64) {
    let g = by_view_frame(gt);
    let p = by_view_frame(pred);
    let (views, frames) = views_and_frames(&g, &p);
    let (mut sp, mut sr, mut n) = (0.0, 0.0, 0usize);
    for &t in &frames {
        let fv = frame_views(&g, &p, &views, t);
        for u in 0..fv.len() {
            for v in 0..fv.len() {
                if u == v {
                    continue;
                }
                let c = pair_counts(&fv[u], &fv[v]);
                sp += ratio(c.tp as f64, c.pred_pairs as f64);
                sr += ratio(c.tp as f64, c.gt_pairs as f64);
                n += 1;
            }
        }
    }
    if n == 0 {
        return (1.0, 1.0, 1.0);
    }
    let (ap, ar) = (sp / n as f64, sr / n as f64);
    (ap, ar, f1(ap, ar))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MhaaCounts {
    /// Ground-truth boxes, all views and frames.
    pub n: usize,
    /// Ground-truth cross-view pairs not recovered.
    pub ms: usize,
    pub fp: usize,
    pub mm: usize,
}

impl MhaaCounts {
    pub fn value(&self) -> f64 {
        if self.n == 0 {
            return if self.ms + self.fp + self.mm == 0 { 1.0 } else { f64::NEG_INFINITY };
        }
        1.0 - (self.ms + self.fp + 2 * self.mm) as f64 / self.n as f64
    }
}

/// Cross-view pair errors over unordered view pairs, all frames.
pub fn mhaa_counts(gt: &[TrackRecord], pred: &[TrackRecord]) -> MhaaCounts {
    let g = by_view_frame(gt);
    let p = by_view_frame(pred);
    let (views, frames) = views_and_frames(&g, &p);
    let mut c = MhaaCounts { n: gt.len(), ..MhaaCounts::default() };
    for &t in &frames {
        let fv = frame_views(&g, &p, &views, t);
        for u in 0..fv.len() {
            for v in u + 1..fv.len() {
                let pc = pair_counts(&fv[u], &fv[v]);
                c.ms += pc.gt_pairs - pc.tp;
                c.fp += pc.fp;
                c.mm += pc.mm;
            }
        }
    }
    c
}

/// `1 − Σ(MS + FP + 2·MM) / ΣN`.
pub fn mhaa(gt: &[TrackRecord], pred: &[TrackRecord]) -> f64 {
    mhaa_counts(gt, pred).value()
}

/// `(𝒜, ℱ) = (mean(MOTA, MHAA), mean(IDF1, AIDF1))`.
pub fn overall(mota: f64, mhaa: f64, idf1: f64, aidf1: f64) -> (f64, f64) {
    (0.5 * (mota + mhaa), 0.5 * (idf1 + aidf1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mota: f64,
    pub idp: f64,
    pub idr: f64,
    pub idf1: f64,
    pub aidp: f64,
    pub aidr: f64,
    pub aidf1: f64,
    pub mhaa: f64,
    pub a: f64,
    pub f: f64,
    /// STMA keyed by window length.
    pub stma: BTreeMap<u32, f64>,
}

impl MetricReport {
    /// Named values in report order.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = [
            ("MOTA", self.mota),
            ("IDP", self.idp),
            ("IDR", self.idr),
            ("IDF1", self.idf1),
            ("AIDP", self.aidp),
            ("AIDR", self.aidr),
            ("AIDF1", self.aidf1),
            ("MHAA", self.mhaa),
            ("A", self.a),
            ("F", self.f),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        out.extend(self.stma.iter().map(|(t, v)| (format!("STMA@{t}"), *v)));
        out
    }
}

pub const DEFAULT_STMA_WINDOWS: [u32; 3] = [5, 10, 30];

/// Computes every metric.
pub fn evaluate(gt: &[TrackRecord], pred: &[TrackRecord], windows: &[u32]) -> MetricReport {
    let mota_v = mota(gt, pred);
    let (idp, idr, idf1) = id_metrics(gt, pred);
    let (aidp, aidr, aidf1) = cross_view_metrics(gt, pred);
    let mhaa_v = mhaa(gt, pred);
    let (a, f) = overall(mota_v, mhaa_v, idf1, aidf1);
    let stma = windows.iter().map(|&t| (t, stma(gt, pred, t))).collect();
    MetricReport { mota: mota_v, idp, idr, idf1, aidp, aidr, aidf1, mhaa: mhaa_v, a, f, stma }
}
