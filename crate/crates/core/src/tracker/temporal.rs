//! Per-view temporal association: an appearance cascade ordered by recency,
//! followed by IOU matching against constant-velocity box predictions.

use nalgebra::DMatrix;

use crate::geometry::BBox;
use crate::solver::hungarian;

/// What the temporal matcher needs to know about one tracklet in one view.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackCandidate {
    pub id: u64,
    /// Unit-norm representative embedding.
    pub embedding: Vec<f64>,
    /// Box predicted for the current frame.
    pub predicted: BBox,
    pub last_seen: u32,
}

/// A detection as seen by the matcher: box and unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub bbox: BBox,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemporalMatches {
    /// `(tracklet id, detection index)`, sorted by detection index.
    pub matches: Vec<(u64, usize)>,
    /// Detection indices left unmatched, ascending.
    pub unmatched: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalParams {
    /// Appearance stage accepts pairs whose dot product exceeds this.
    pub match_threshold: f64,
    /// IOU stage accepts pairs whose overlap exceeds this.
    pub iou_min: f64,
}

impl Default for TemporalParams {
    fn default() -> Self {
        Self { match_threshold: 0.5, iou_min: 0.3 }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Hungarian over the (track, detection) subsets; returns accepted pairs.
fn match_stage(
    tracks: &[usize],
    dets: &[usize],
    score: impl Fn(usize, usize) -> f64,
    accept: impl Fn(f64) -> bool,
) -> Vec<(usize, usize)> {
    if tracks.is_empty() || dets.is_empty() {
        return Vec::new();
    }
    let m = DMatrix::from_fn(tracks.len(), dets.len(), |i, j| score(tracks[i], dets[j]));
    hungarian(&m)
        .into_iter()
        .filter(|&(i, j)| accept(m[(i, j)]))
        .map(|(i, j)| (tracks[i], dets[j]))
        .collect()
}

/// Matches tracklets of one view to the detections of that view at `time`.
///
/// Stage one runs the appearance cascade: tracklets are grouped by frames
/// since they were last seen, most recent first, and each group is matched to
/// the still-free detections by embedding dot product. Stage two matches the
/// remaining tracklets that were seen in the previous frame by IOU of their
/// predicted boxes.
pub fn temporal_associate(
    candidates: &[TrackCandidate],
    detections: &[Observation],
    time: u32,
    params: &TemporalParams,
) -> TemporalMatches {
    let mut free_dets: Vec<usize> = (0..detections.len()).collect();
    let mut free_tracks: Vec<usize> = (0..candidates.len()).collect();
    let mut pairs: Vec<(usize, usize)> = Vec::new();

    let mut ages: Vec<u32> = candidates.iter().map(|c| time.saturating_sub(c.last_seen)).collect();
    ages.sort_unstable();
    ages.dedup();
    for age in ages {
        let level: Vec<usize> = free_tracks
            .iter()
            .copied()
            .filter(|&t| time.saturating_sub(candidates[t].last_seen) == age)
            .collect();
        let found = match_stage(
            &level,
            &free_dets,
            |t, d| dot(&candidates[t].embedding, &detections[d].embedding),
            |s| s > params.match_threshold,
        );
        for &(t, d) in &found {
            free_tracks.retain(|&x| x != t);
            free_dets.retain(|&x| x != d);
        }
        pairs.extend(found);
    }

    let recent: Vec<usize> = free_tracks
        .iter()
        .copied()
        .filter(|&t| time.saturating_sub(candidates[t].last_seen) <= 1)
        .collect();
    let found = match_stage(
        &recent,
        &free_dets,
        |t, d| candidates[t].predicted.iou(&detections[d].bbox),
        |s| s > params.iou_min,
    );
    for &(_, d) in &found {
        free_dets.retain(|&x| x != d);
    }
    pairs.extend(found);

    let mut matches: Vec<(u64, usize)> = pairs.into_iter().map(|(t, d)| (candidates[t].id, d)).collect();
    matches.sort_by_key(|&(_, d)| d);
    TemporalMatches { matches, unmatched: free_dets }
}

/// Constant-velocity extrapolation of the box centre from the last two
/// observations; size is kept from the latest one.
pub fn predict_box(previous: Option<(u32, BBox)>, last: (u32, BBox), time: u32) -> BBox {
    match previous {
        Some((t0, b0)) if last.0 > t0 => {
            let dt = (last.0 - t0) as f64;
            let ahead = time.saturating_sub(last.0) as f64;
            let b1 = last.1;
            BBox {
                x: b1.x + (b1.x - b0.x) / dt * ahead,
                y: b1.y + (b1.y - b0.y) / dt * ahead,
                ..b1
            }
        }
        _ => last.1,
    }
}
