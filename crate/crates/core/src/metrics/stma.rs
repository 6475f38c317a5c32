//! Spatial-temporal matching accuracy over sliding windows.

use std::collections::HashMap;

use super::{by_view_frame, keys, match_boxes, IOU_THRESHOLD};
use crate::records::TrackRecord;

/// Window start frames over `[first, last]` for length `t`, step `max(1, t/2)`.
/// A span shorter than `t` yields one window.
pub fn stma_windows(first: u32, last: u32, t: u32) -> Vec<u32> {
    let t = t.max(1);
    let step = (t / 2).max(1);
    let span = last - first + 1;
    if span <= t {
        return vec![first];
    }
    let count = (span - t) / step + 1;
    (0..count).map(|k| first + k * step).collect()
}

fn sum_sq<'a>(counts: impl Iterator<Item = &'a u64>) -> f64 {
    counts.map(|&c| (c * c) as f64).sum()
}

/// STMA@t: F1 between the ground-truth and predicted same-identity matrices
/// of every window, averaged over windows.
///
/// Subjects of a window are its boxes over all views and frames; a gt box and
/// its matched predicted box are one subject, unmatched boxes are padded.
/// Both matrices include the diagonal.
pub fn stma(gt: &[TrackRecord], pred: &[TrackRecord], t: u32) -> f64 {
    let g = by_view_frame(gt);
    let p = by_view_frame(pred);
    let all = keys(&g, &p);
    let (Some(first), Some(last)) = (all.iter().map(|k| k.1).min(), all.iter().map(|k| k.1).max()) else {
        return 1.0;
    };

    // Each box becomes a subject labelled (gt id, pred id).
    let mut subjects: Vec<(u32, Option<u64>, Option<u64>)> = Vec::new();
    let empty = Vec::new();
    for key in &all {
        let gs = g.get(key).unwrap_or(&empty);
        let ps = p.get(key).unwrap_or(&empty);
        let pairs = match_boxes(gs, ps, IOU_THRESHOLD);
        let mut g_hit = vec![false; gs.len()];
        let mut p_hit = vec![false; ps.len()];
        for &(i, j) in &pairs {
            g_hit[i] = true;
            p_hit[j] = true;
            subjects.push((key.1, Some(gs[i].id), Some(ps[j].id)));
        }
        subjects.extend(gs.iter().zip(&g_hit).filter(|(_, h)| !**h).map(|(r, _)| (key.1, Some(r.id), None)));
        subjects.extend(ps.iter().zip(&p_hit).filter(|(_, h)| !**h).map(|(r, _)| (key.1, None, Some(r.id))));
    }

    subjects.sort_by_key(|x| x.0);
    let starts = stma_windows(first, last, t);
    let mut total = 0.0;
    for &s in &starts {
        let end = s.saturating_add(t.max(1));
        let mut n_gt: HashMap<u64, u64> = HashMap::new();
        let mut n_pred: HashMap<u64, u64> = HashMap::new();
        let mut n_both: HashMap<(u64, u64), u64> = HashMap::new();
        let lo = subjects.partition_point(|x| x.0 < s);
        let hi = subjects.partition_point(|x| x.0 < end);
        for &(_, gi, pi) in &subjects[lo..hi] {
            if let Some(a) = gi {
                *n_gt.entry(a).or_default() += 1;
            }
            if let Some(b) = pi {
                *n_pred.entry(b).or_default() += 1;
            }
            if let (Some(a), Some(b)) = (gi, pi) {
                *n_both.entry((a, b)).or_default() += 1;
            }
        }
        let ones_gt = sum_sq(n_gt.values());
        let ones_pred = sum_sq(n_pred.values());
        let tp = sum_sq(n_both.values());
        total += if ones_gt + ones_pred == 0.0 { 1.0 } else { 2.0 * tp / (ones_gt + ones_pred) };
    }
    total / starts.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn rec(view: usize, frame: u32, id: u64, x: f64) -> TrackRecord {
        TrackRecord { view, frame, id, bbox: BBox { x, y: 0.0, w: 10.0, h: 10.0 } }
    }

    #[test]
    fn window_count() {
        assert_eq!(stma_windows(1, 100, 10).len(), 19);
        assert_eq!(stma_windows(1, 100, 10)[1], 6);
        assert_eq!(stma_windows(1, 3, 5), vec![1]);
        assert_eq!(stma_windows(1, 4, 1).len(), 4);
    }

    #[test]
    fn perfect_is_one() {
        let gt: Vec<_> = (1..=20).flat_map(|t| [rec(0, t, 1, 0.0), rec(1, t, 1, 50.0), rec(1, t, 2, 200.0)]).collect();
        let pred: Vec<_> = gt.iter().map(|r| TrackRecord { id: r.id + 40, ..*r }).collect();
        for t in [5, 10, 30] {
            assert_eq!(stma(&gt, &pred, t), 1.0);
        }
    }

    #[test]
    fn single_frame_wrong_association() {
        // Subject 1 in views 0 and 1, subject 2 in view 1; prediction gives
        // view 1's subject 1 a fresh id.
        let gt = vec![rec(0, 1, 1, 0.0), rec(1, 1, 1, 0.0), rec(1, 1, 2, 100.0)];
        let pred = vec![rec(0, 1, 7, 0.0), rec(1, 1, 8, 0.0), rec(1, 1, 9, 100.0)];
        // GT ones: 2² + 1² = 5; predicted ones: 3; common: the diagonal, 3.
        assert!((stma(&gt, &pred, 5) - 6.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn unmatched_boxes_are_padded() {
        let gt = vec![rec(0, 1, 1, 0.0)];
        let pred = vec![rec(0, 1, 1, 500.0)];
        assert_eq!(stma(&gt, &pred, 5), 0.0);
    }
}
