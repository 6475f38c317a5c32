//! Online multi-view tracking.
//!
//! Each frame, the detections of all views at `t` and the tracklets seen at
//! the previous time are laid out in one global affinity, solved for a
//! consistent assignment and rounded into cross-view (`t → t`) and
//! cross-view-over-time (`t → t-1`) permutations. Every view first runs its
//! own temporal matching; detections left over then join a tracklet through
//! the permutations, or open a new one. Tracklets missed in a view go to
//! sleep there and can be woken by either route.

mod temporal;

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::affinity::{assemble_global_affinity, AffinityParams, FrameFeatures, Slot};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::records::{sort_records, FrameBundle, TrackRecord};
use crate::solver::{consistency_solve, extract_permutations, Permutations, SolverConfig};

pub use temporal::{predict_box, temporal_associate, Observation, TemporalMatches, TemporalParams, TrackCandidate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub affinity: AffinityParams,
    pub solver: SolverConfig,
    pub iou_min: f64,
    /// Weight of the old representative embedding in the moving average.
    pub ema: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { affinity: AffinityParams::default(), solver: SolverConfig::default(), iou_min: 0.3, ema: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewStatus {
    Active,
    Sleep,
}

#[derive(Debug, Clone, PartialEq)]
struct ViewTrack {
    status: ViewStatus,
    previous: Option<(u32, BBox)>,
    last: (u32, BBox),
    embedding: Vec<f64>,
}

impl ViewTrack {
    fn unit_embedding(&self) -> Vec<f64> {
        let n = self.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            self.embedding.iter().map(|v| v / n).collect()
        } else {
            self.embedding.clone()
        }
    }
}

/// A multi-view tracklet: one global identity with per-view state.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub global_id: u64,
    views: BTreeMap<usize, ViewTrack>,
}

impl Tracklet {
    pub fn status(&self, view: usize) -> Option<ViewStatus> {
        self.views.get(&view).map(|v| v.status)
    }

    pub fn views(&self) -> impl Iterator<Item = usize> + '_ {
        self.views.keys().copied()
    }

    pub fn last_seen(&self, view: usize) -> Option<u32> {
        self.views.get(&view).map(|v| v.last.0)
    }
}

/// Everything spatial association reads besides the detections themselves.
#[derive(Debug, Clone, Copy)]
pub struct SpatialContext<'a> {
    pub time: u32,
    pub prev_time: Option<u32>,
    pub permutations: &'a Permutations,
    /// `current[u][q]`: tracklet holding detection `q` of view `u` at `time`.
    pub current: &'a [Vec<Option<u64>>],
    /// `previous[u][c]`: tracklet behind column `c` of the `(prev_time, u)` slot.
    pub previous: &'a [Vec<u64>],
}

/// Resolves unmatched detections of `view` against other views.
///
/// Detection `p` may join tracklet `g` when the current-time permutation to
/// some view `u != view` links `p` to a detection that `g` holds, or when the
/// permutation to `(prev_time, u)` links `p` to `g`'s column there. Competing
/// claims are settled by assignment score (ties: lower detection index, then
/// lower id); a tracklet listed in `taken` or already claimed in this view is
/// unavailable. Returns one entry per unmatched detection: `Some(id)` to join,
/// `None` to start a new tracklet.
pub fn spatial_associate(
    view: usize,
    unmatched: &[usize],
    ctx: &SpatialContext<'_>,
    taken: &HashSet<u64>,
) -> Vec<(usize, Option<u64>)> {
    let here = Slot { time: ctx.time, view };
    let mut claims: Vec<(f64, usize, u64)> = Vec::new();
    for u in (0..ctx.current.len()).filter(|&u| u != view) {
        if let Some(block) = ctx.permutations.get(&(here, Slot { time: ctx.time, view: u })) {
            for &p in unmatched {
                if let Some(link) = block.col_of(p) {
                    if let Some(g) = ctx.current[u].get(link.col).copied().flatten() {
                        claims.push((link.score, p, g));
                    }
                }
            }
        }
        let Some(prev) = ctx.prev_time else { continue };
        if let Some(block) = ctx.permutations.get(&(here, Slot { time: prev, view: u })) {
            for &p in unmatched {
                if let Some(link) = block.col_of(p) {
                    if let Some(&g) = ctx.previous.get(u).and_then(|cols| cols.get(link.col)) {
                        claims.push((link.score, p, g));
                    }
                }
            }
        }
    }
    claims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut decided: BTreeMap<usize, u64> = BTreeMap::new();
    let mut used: HashSet<u64> = HashSet::new();
    for (_, p, g) in claims {
        if decided.contains_key(&p) || used.contains(&g) || taken.contains(&g) {
            continue;
        }
        decided.insert(p, g);
        used.insert(g);
    }
    unmatched.iter().map(|&p| (p, decided.get(&p).copied())).collect()
}

/// Online tracker state for one sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracklets: Vec<Tracklet>,
    next_id: u64,
    last_time: Option<u32>,
    views: usize,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.solver.validate()?;
        if !(0.0..=1.0).contains(&cfg.ema) || !(0.0..=1.0).contains(&cfg.iou_min) {
            return Err(Error::InvalidParameter("ema and iou_min must lie in [0, 1]".into()));
        }
        Ok(Self { cfg, tracklets: Vec::new(), next_id: 1, last_time: None, views: 0 })
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    pub fn tracklet(&self, id: u64) -> Option<&Tracklet> {
        self.index_of(id).map(|i| &self.tracklets[i])
    }

    fn index_of(&self, id: u64) -> Option<usize> {
        // Ids are handed out in increasing order and never removed.
        self.tracklets.binary_search_by_key(&id, |t| t.global_id).ok()
    }

    /// Processes one synchronized frame and returns its labelled boxes.
    pub fn step(&mut self, bundle: &FrameBundle) -> Result<Vec<TrackRecord>> {
        let t = bundle.time;
        if self.last_time.is_some_and(|prev| t <= prev) {
            return Err(Error::Data(format!("frame {t} does not follow frame {}", self.last_time.unwrap_or(0))));
        }
        self.views = self.views.max(bundle.views.len());
        let views = self.views;

        let observations: Vec<Vec<Observation>> = (0..views)
            .map(|v| {
                bundle.views.get(v).map_or(Ok(Vec::new()), |dets| {
                    dets.iter()
                        .enumerate()
                        .map(|(d, det)| {
                            let e: Vec<f64> = det.embedding.iter().map(|&x| x as f64).collect();
                            let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
                            if !(n > 0.0) || !n.is_finite() {
                                return Err(Error::ZeroNorm { view: v, time: t, det: d });
                            }
                            Ok(Observation { bbox: det.bbox, embedding: e.into_iter().map(|x| x / n).collect() })
                        })
                        .collect()
                })
            })
            .collect::<Result<_>>()?;

        // Tracklets observed at the previous time, per view, by ascending id.
        let prev_time = self.last_time;
        let previous: Vec<Vec<u64>> = (0..views)
            .map(|v| {
                self.tracklets
                    .iter()
                    .filter(|tr| prev_time.is_some() && tr.views.get(&v).is_some_and(|s| Some(s.last.0) == prev_time))
                    .map(|tr| tr.global_id)
                    .collect()
            })
            .collect();

        let permutations = self.cross_permutations(t, prev_time, &observations, &previous)?;

        let mut current: Vec<Vec<Option<u64>>> = observations.iter().map(|o| vec![None; o.len()]).collect();
        let mut unmatched: Vec<Vec<usize>> = Vec::with_capacity(views);
        let temporal_params = TemporalParams { match_threshold: self.cfg.solver.m, iou_min: self.cfg.iou_min };
        for v in 0..views {
            let candidates: Vec<TrackCandidate> = self
                .tracklets
                .iter()
                .filter_map(|tr| {
                    tr.views.get(&v).map(|s| TrackCandidate {
                        id: tr.global_id,
                        embedding: s.unit_embedding(),
                        predicted: predict_box(s.previous, s.last, t),
                        last_seen: s.last.0,
                    })
                })
                .collect();
            let r = temporal_associate(&candidates, &observations[v], t, &temporal_params);
            for (id, d) in r.matches {
                current[v][d] = Some(id);
            }
            unmatched.push(r.unmatched);
        }

        for v in 0..views {
            let taken: HashSet<u64> = current[v].iter().flatten().copied().collect();
            let ctx = SpatialContext {
                time: t,
                prev_time,
                permutations: &permutations,
                current: &current,
                previous: &previous,
            };
            let outcome = spatial_associate(v, &unmatched[v], &ctx, &taken);
            for (d, joined) in outcome {
                let id = match joined {
                    Some(id) => id,
                    None => {
                        let id = self.next_id;
                        self.next_id += 1;
                        self.tracklets.push(Tracklet { global_id: id, views: BTreeMap::new() });
                        id
                    }
                };
                current[v][d] = Some(id);
            }
        }

        let ema = self.cfg.ema;
        let mut records = Vec::new();
        for v in 0..views {
            let mut seen: HashSet<u64> = HashSet::new();
            for (d, id) in current[v].iter().enumerate() {
                let id = id.expect("every detection is assigned");
                seen.insert(id);
                let obs = &observations[v][d];
                let idx = self.index_of(id).expect("known tracklet");
                let tr = &mut self.tracklets[idx];
                match tr.views.get_mut(&v) {
                    Some(s) => {
                        s.status = ViewStatus::Active;
                        s.previous = Some(s.last);
                        s.last = (t, obs.bbox);
                        for (e, x) in s.embedding.iter_mut().zip(&obs.embedding) {
                            *e = ema * *e + (1.0 - ema) * x;
                        }
                    }
                    None => {
                        tr.views.insert(
                            v,
                            ViewTrack {
                                status: ViewStatus::Active,
                                previous: None,
                                last: (t, obs.bbox),
                                embedding: obs.embedding.clone(),
                            },
                        );
                    }
                }
                records.push(TrackRecord { view: v, frame: t, id, bbox: obs.bbox });
            }
            for tr in &mut self.tracklets {
                if let Some(s) = tr.views.get_mut(&v) {
                    if !seen.contains(&tr.global_id) {
                        s.status = ViewStatus::Sleep;
                    }
                }
            }
        }
        self.last_time = Some(t);
        sort_records(&mut records);
        Ok(records)
    }

    fn cross_permutations(
        &self,
        t: u32,
        prev_time: Option<u32>,
        observations: &[Vec<Observation>],
        previous: &[Vec<u64>],
    ) -> Result<Permutations> {
        let dim = observations
            .iter()
            .flatten()
            .map(|o| o.embedding.len())
            .chain(self.tracklets.iter().flat_map(|tr| tr.views.values().map(|s| s.embedding.len())))
            .next()
            .unwrap_or(0);
        let mut frames = Vec::new();
        for (v, obs) in observations.iter().enumerate() {
            let features = DMatrix::from_fn(obs.len(), dim, |r, c| obs[r].embedding[c]);
            frames.push(FrameFeatures { slot: Slot { time: t, view: v }, features });
        }
        if let Some(prev) = prev_time {
            for (v, ids) in previous.iter().enumerate() {
                let rows: Vec<Vec<f64>> = ids
                    .iter()
                    .map(|&id| self.tracklet(id).expect("known tracklet").views[&v].unit_embedding())
                    .collect();
                let features = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r][c]);
                frames.push(FrameFeatures { slot: Slot { time: prev, view: v }, features });
            }
        }
        let affinity = assemble_global_affinity(&frames, &self.cfg.affinity)?;
        let solved = consistency_solve(&affinity, &self.cfg.solver)?;
        Ok(extract_permutations(&solved, self.cfg.solver.m))
    }
}

/// Runs a fresh tracker over a whole sequence.
pub fn run(bundles: &[FrameBundle], cfg: &TrackerConfig) -> Result<Vec<TrackRecord>> {
    let mut tracker = Tracker::new(*cfg)?;
    let mut out = Vec::new();
    for b in bundles {
        out.extend(tracker.step(b)?);
    }
    sort_records(&mut out);
    Ok(out)
}
