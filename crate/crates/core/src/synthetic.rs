//! Seeded ground-truth generators.
//!
//! [`generate_assignment_instance`] builds affinity/assignment pairs over all
//! views at two time points with a controllable error rate, for exercising the
//! solver and the losses. [`generate_scenario`] simulates people walking in a
//! shared ground plane seen by several affine cameras, for end-to-end tracking.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::affinity::{BlockLayout, GlobalAffinity, Slot};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::records::{Detection, FrameBundle, TrackRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignmentParams {
    pub n_ids: usize,
    pub views: usize,
    /// Probability that a row's peak is moved to a wrong column.
    pub error_rate: f64,
    /// Probability that an identity is visible in a given slot.
    pub visibility: f64,
    /// Upper bound of the mass spread off the peak of a row.
    pub spread: f64,
}

impl Default for AssignmentParams {
    fn default() -> Self {
        Self { n_ids: 6, views: 3, error_rate: 0.1, visibility: 0.9, spread: 0.05 }
    }
}

/// Affinity with its ground-truth assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentInstance {
    pub affinity: GlobalAffinity,
    /// `P Pᵀ` for the row-concatenated permutation onto the identities.
    pub a_gt: DMatrix<f64>,
    /// Identity of each row, slot by slot.
    pub identities: Vec<Vec<usize>>,
    /// `visibility[slot][identity]`.
    pub visibility: Vec<Vec<bool>>,
    /// Rows eligible for corruption (cross-slot, partner present, ≥ 2 columns).
    pub eligible_rows: usize,
    pub corrupted_rows: usize,
    pub seed: u64,
}

impl AssignmentInstance {
    pub fn layout(&self) -> &BlockLayout {
        &self.affinity.layout
    }

    /// Row-concatenated permutation onto the identity universe.
    pub fn universe_map(&self, n_ids: usize) -> DMatrix<f64> {
        let rows: Vec<usize> = self.identities.iter().flatten().copied().collect();
        DMatrix::from_fn(rows.len(), n_ids, |r, c| if rows[r] == c { 1.0 } else { 0.0 })
    }
}

pub fn generate_assignment_instance(params: &AssignmentParams, seed: u64) -> Result<AssignmentInstance> {
    if params.n_ids < 1 {
        return Err(Error::InvalidParameter("n_ids must be at least 1".into()));
    }
    if params.views < 2 {
        return Err(Error::InvalidParameter("at least two views are required".into()));
    }
    if !(0.0..=1.0).contains(&params.error_rate) {
        return Err(Error::InvalidParameter(format!(
            "error rate must lie in [0, 1], got {}",
            params.error_rate
        )));
    }
    if !(0.0..=1.0).contains(&params.visibility) || !(0.0..1.0).contains(&params.spread) {
        return Err(Error::InvalidParameter("visibility in [0, 1] and spread in [0, 1) required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Current time first, then the previous one.
    let slots: Vec<Slot> = [1u32, 0]
        .iter()
        .flat_map(|&time| (0..params.views).map(move |view| Slot { time, view }))
        .collect();
    let mut visibility: Vec<Vec<bool>> = slots
        .iter()
        .map(|_| (0..params.n_ids).map(|_| rng.random::<f64>() < params.visibility).collect())
        .collect();
    for id in 0..params.n_ids {
        if !visibility.iter().any(|v| v[id]) {
            let s = rng.random_range(0..slots.len());
            visibility[s][id] = true;
        }
    }
    let identities: Vec<Vec<usize>> = visibility
        .iter()
        .map(|vis| {
            let mut ids: Vec<usize> = (0..params.n_ids).filter(|&i| vis[i]).collect();
            ids.shuffle(&mut rng);
            ids
        })
        .collect();

    let layout = BlockLayout::new(slots.iter().zip(&identities).map(|(s, ids)| (*s, ids.len())).collect())?;
    let n = layout.total();
    let mut values = DMatrix::zeros(n, n);
    let (mut eligible, mut corrupted) = (0, 0);
    for a in 0..slots.len() {
        for b in 0..slots.len() {
            let cols = identities[b].len();
            if cols == 0 {
                continue;
            }
            for (r, id) in identities[a].iter().enumerate() {
                let partner = identities[b].iter().position(|x| x == id);
                let mut row = match partner {
                    Some(peak) => {
                        let eta = rng.random::<f64>() * params.spread;
                        let noise: Vec<f64> = (0..cols).map(|_| rng.random::<f64>()).collect();
                        let total: f64 = noise.iter().sum();
                        let mut row: Vec<f64> = noise.iter().map(|v| eta * v / total).collect();
                        row[peak] += 1.0 - eta;
                        let roll = rng.random::<f64>();
                        if a != b && cols >= 2 {
                            eligible += 1;
                            if roll < params.error_rate {
                                let mut wrong = rng.random_range(0..cols - 1);
                                if wrong >= peak {
                                    wrong += 1;
                                }
                                row.swap(peak, wrong);
                                corrupted += 1;
                            }
                        }
                        row
                    }
                    // Dummy row: nothing to match in the other slot.
                    None => vec![1.0 / cols as f64; cols],
                };
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= total);
                for (c, v) in row.into_iter().enumerate() {
                    values[(layout.offset(a) + r, layout.offset(b) + c)] = v;
                }
            }
        }
    }

    let flat: Vec<usize> = identities.iter().flatten().copied().collect();
    let a_gt = DMatrix::from_fn(n, n, |r, c| if flat[r] == flat[c] { 1.0 } else { 0.0 });
    Ok(AssignmentInstance {
        affinity: GlobalAffinity::new(values, layout)?,
        a_gt,
        identities,
        visibility,
        eligible_rows: eligible,
        corrupted_rows: corrupted,
        seed,
    })
}

/// A scripted absence of one identity from one view over `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occlusion {
    pub view: usize,
    pub identity: usize,
    pub start: u32,
    pub end: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub n_ids: usize,
    pub views: usize,
    pub frames: u32,
    pub dim: usize,
    /// Probability that a (view, identity) pair gets one random occlusion.
    pub occlusion_prob: f64,
    /// Length range of random occlusions, in frames.
    pub occlusion_len: (u32, u32),
    /// Occlusions applied on top of the random ones.
    pub scripted: Vec<Occlusion>,
    /// Standard deviation of box jitter in pixels.
    pub box_noise: f64,
    /// Standard deviation of per-coordinate embedding noise before
    /// normalization.
    pub embedding_noise: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n_ids: 8,
            views: 3,
            frames: 200,
            dim: 128,
            occlusion_prob: 0.0,
            occlusion_len: (5, 20),
            scripted: Vec::new(),
            box_noise: 0.0,
            embedding_noise: 0.0,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_ids < 1 || self.views < 1 || self.frames < 1 || self.dim < 1 {
            return bad("n_ids, views, frames and dim must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.occlusion_prob) {
            return bad(format!("occlusion_prob must lie in [0, 1], got {}", self.occlusion_prob));
        }
        if self.occlusion_len.0 > self.occlusion_len.1 {
            return bad("occlusion_len must be an ordered range".into());
        }
        if !(self.box_noise >= 0.0) || !(self.embedding_noise >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if let Some(o) = self.scripted.iter().find(|o| o.view >= self.views || o.identity >= self.n_ids) {
            return bad(format!("scripted occlusion {o:?} is out of range"));
        }
        Ok(())
    }
}

/// Simulated sequence: detections per frame and the ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub bundles: Vec<FrameBundle>,
    pub ground_truth: Vec<TrackRecord>,
    /// `gt_ids[t][v][d]`: identity of detection `d` of view `v` in frame `t`.
    pub gt_ids: Vec<Vec<Vec<u64>>>,
}

impl Scenario {
    /// `table[t][v][d]`: ground-truth id and box behind detection `d` of view
    /// `v` in the `t`-th bundle.
    pub fn truth_table(&self) -> Vec<Vec<Vec<(u64, BBox)>>> {
        let boxes: std::collections::HashMap<(usize, u32, u64), BBox> =
            self.ground_truth.iter().map(|r| ((r.view, r.frame, r.id), r.bbox)).collect();
        self.bundles
            .iter()
            .zip(&self.gt_ids)
            .map(|(b, views)| {
                views
                    .iter()
                    .enumerate()
                    .map(|(v, ids)| ids.iter().map(|&id| (id, boxes[&(v, b.time, id)])).collect())
                    .collect()
            })
            .collect()
    }
}

const ARENA: f64 = 100.0;
const IMAGE: (f64, f64) = (1920.0, 1080.0);
const BOX: (f64, f64) = (40.0, 100.0);

struct Camera {
    cos: f64,
    sin: f64,
    scale: f64,
}

impl Camera {
    fn project(&self, p: (f64, f64)) -> (f64, f64) {
        let (x, y) = (p.0 - ARENA / 2.0, p.1 - ARENA / 2.0);
        (
            IMAGE.0 / 2.0 + self.scale * (self.cos * x - self.sin * y),
            IMAGE.1 / 2.0 + self.scale * 0.55 * (self.sin * x + self.cos * y),
        )
    }
}

/// Generates a scenario; frames are numbered from 1 and ground-truth ids from 1.
pub fn generate_scenario(params: &ScenarioParams, seed: u64) -> Result<Scenario> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");

    let anchors: Vec<Vec<f64>> = (0..params.n_ids)
        .map(|_| {
            let v: Vec<f64> = (0..params.dim).map(|_| gauss.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let cameras: Vec<Camera> = (0..params.views)
        .map(|v| {
            let theta = std::f64::consts::TAU * v as f64 / params.views as f64 + rng.random_range(-0.2..0.2);
            Camera { cos: theta.cos(), sin: theta.sin(), scale: rng.random_range(12.0..16.0) }
        })
        .collect();

    let mut occlusions = params.scripted.clone();
    for view in 0..params.views {
        for identity in 0..params.n_ids {
            if rng.random::<f64>() < params.occlusion_prob {
                let len = rng.random_range(params.occlusion_len.0..=params.occlusion_len.1);
                let start = rng.random_range(1..=params.frames);
                occlusions.push(Occlusion { view, identity, start, end: start + len });
            }
        }
    }
    let hidden = |view: usize, identity: usize, t: u32| {
        occlusions.iter().any(|o| o.view == view && o.identity == identity && t >= o.start && t < o.end)
    };

    let mut pos: Vec<(f64, f64)> = (0..params.n_ids)
        .map(|_| (rng.random_range(5.0..ARENA - 5.0), rng.random_range(5.0..ARENA - 5.0)))
        .collect();
    let mut vel: Vec<(f64, f64)> = (0..params.n_ids)
        .map(|_| {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let s = rng.random_range(0.2..0.6);
            (s * a.cos(), s * a.sin())
        })
        .collect();

    let emb_noise = Normal::new(0.0, params.embedding_noise.max(0.0)).expect("finite sigma");
    let box_noise = Normal::new(0.0, params.box_noise.max(0.0)).expect("finite sigma");
    let mut bundles = Vec::with_capacity(params.frames as usize);
    let mut ground_truth = Vec::new();
    let mut gt_ids = Vec::with_capacity(params.frames as usize);

    for t in 1..=params.frames {
        if t > 1 {
            for (p, v) in pos.iter_mut().zip(vel.iter_mut()) {
                p.0 += v.0;
                p.1 += v.1;
                if p.0 < 0.0 || p.0 > ARENA {
                    v.0 = -v.0;
                    p.0 = p.0.clamp(0.0, ARENA);
                }
                if p.1 < 0.0 || p.1 > ARENA {
                    v.1 = -v.1;
                    p.1 = p.1.clamp(0.0, ARENA);
                }
            }
        }
        let mut views = Vec::with_capacity(params.views);
        let mut frame_ids = Vec::with_capacity(params.views);
        for (v, cam) in cameras.iter().enumerate() {
            let mut visible: Vec<usize> = (0..params.n_ids).filter(|&i| !hidden(v, i, t)).collect();
            visible.shuffle(&mut rng);
            let mut dets = Vec::with_capacity(visible.len());
            let mut ids = Vec::with_capacity(visible.len());
            for &i in &visible {
                let (cx, cy) = cam.project(pos[i]);
                let depth = 0.8 + 0.4 * (pos[i].1 / ARENA);
                let (w, h) = (BOX.0 * depth, BOX.1 * depth);
                let gt_box = BBox::from_center(cx, cy - h / 2.0, w, h);
                let det_box = if params.box_noise > 0.0 {
                    BBox {
                        x: gt_box.x + box_noise.sample(&mut rng),
                        y: gt_box.y + box_noise.sample(&mut rng),
                        ..gt_box
                    }
                } else {
                    gt_box
                };
                let mut e: Vec<f64> = anchors[i].clone();
                if params.embedding_noise > 0.0 {
                    e.iter_mut().for_each(|x| *x += emb_noise.sample(&mut rng));
                }
                let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
                dets.push(Detection { bbox: det_box, embedding: e.iter().map(|x| (x / n) as f32).collect() });
                ground_truth.push(TrackRecord { view: v, frame: t, id: i as u64 + 1, bbox: gt_box });
                ids.push(i as u64 + 1);
            }
            views.push(dets);
            frame_ids.push(ids);
        }
        bundles.push(FrameBundle { time: t, views });
        gt_ids.push(frame_ids);
    }
    crate::records::sort_records(&mut ground_truth);
    Ok(Scenario { bundles, ground_truth, gt_ids })
}

/// Identity `1` (ground-truth id 2) leaves view 0 at `t2` and comes back at
/// `t3`, staying visible in view 1 throughout. Returns the scenario and
/// `(view, gt id, t2, t3)`.
pub fn scripted_sleep_wake(seed: u64) -> Result<(Scenario, (usize, u64, u32, u32))> {
    let (t2, t3) = (15, 30);
    let params = ScenarioParams {
        n_ids: 3,
        views: 2,
        frames: 45,
        scripted: vec![Occlusion { view: 0, identity: 1, start: t2, end: t3 }],
        ..Default::default()
    };
    Ok((generate_scenario(&params, seed)?, (0, 2, t2, t3)))
}
