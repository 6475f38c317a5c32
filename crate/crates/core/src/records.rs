//! Plain data carried between the tracker, the metrics and the file formats.

use crate::geometry::BBox;

/// One detection in one view at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub embedding: Vec<f32>,
}

/// Synchronized detections of all views at one time index. `views[v]` lists
/// the detections of view `v` in detection-index order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameBundle {
    pub time: u32,
    pub views: Vec<Vec<Detection>>,
}

/// A box labelled with an identity, as emitted by the tracker or read from
/// ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub view: usize,
    pub frame: u32,
    pub id: u64,
    pub bbox: BBox,
}

/// Sorts records by `(view, frame, id)`.
pub fn sort_records(records: &mut [TrackRecord]) {
    records.sort_by(|a, b| (a.view, a.frame, a.id).cmp(&(b.view, b.frame, b.id)));
}
