//! Brute-force oracles and random instance builders shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mvmhat::records::TrackRecord;
use mvmhat::BBox;
use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

/// Best total score over every one-to-one pairing of `min(R, C)` pairs.
pub fn brute_force_assignment(score: &DMatrix<f64>) -> f64 {
    fn go(score: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, transpose: bool) -> f64 {
        let (r, c) = if transpose { (score.ncols(), score.nrows()) } else { (score.nrows(), score.ncols()) };
        if row == r {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for col in 0..c {
            if used[col] {
                continue;
            }
            used[col] = true;
            let s = if transpose { score[(col, row)] } else { score[(row, col)] };
            best = best.max(s + go(score, row + 1, used, transpose));
            used[col] = false;
        }
        best
    }
    if score.nrows() == 0 || score.ncols() == 0 {
        return 0.0;
    }
    let transpose = score.nrows() > score.ncols();
    let c = if transpose { score.nrows() } else { score.ncols() };
    go(score, 0, &mut vec![false; c], transpose)
}

/// Best sum over partial injections of rows into columns (rows may stay unpaired).
fn best_partial(table: &[Vec<usize>]) -> usize {
    fn go(table: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
        if row == table.len() {
            return 0;
        }
        let mut best = go(table, row + 1, used);
        for col in 0..used.len() {
            if !used[col] {
                used[col] = true;
                best = best.max(table[row][col] + go(table, row + 1, used));
                used[col] = false;
            }
        }
        best
    }
    let cols = table.first().map_or(0, Vec::len);
    go(table, 0, &mut vec![false; cols])
}

/// IDP, IDR, IDF1 by enumerating every trajectory pairing per view.
pub fn brute_force_id_metrics(gt: &[TrackRecord], pred: &[TrackRecord]) -> (f64, f64, f64) {
    let views: BTreeSet<usize> = gt.iter().chain(pred).map(|r| r.view).collect();
    let (mut tp, mut n_gt, mut n_pred) = (0usize, 0usize, 0usize);
    for v in views {
        let gids: Vec<u64> = gt.iter().filter(|r| r.view == v).map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
        let pids: Vec<u64> = pred.iter().filter(|r| r.view == v).map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
        let table: Vec<Vec<usize>> = gids
            .iter()
            .map(|&g| {
                pids.iter()
                    .map(|&p| {
                        gt.iter()
                            .filter(|a| a.view == v && a.id == g)
                            .filter(|a| {
                                pred.iter().any(|b| {
                                    b.view == v && b.id == p && b.frame == a.frame && a.bbox.iou(&b.bbox) >= 0.5
                                })
                            })
                            .count()
                    })
                    .collect()
            })
            .collect();
        tp += best_partial(&table);
        n_gt += gt.iter().filter(|r| r.view == v).count();
        n_pred += pred.iter().filter(|r| r.view == v).count();
    }
    let (fp, fn_) = (n_pred - tp, n_gt - tp);
    let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f = if tp + fp + fn_ == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
    (p, r, f)
}

// Gt box paired with a predicted box: the unique gt box of the same view and
// frame overlapping it at IoU >= 0.5. Instances from `random_instance` never
// have more than one candidate.
fn gt_partner<'a>(gt: &'a [TrackRecord], b: &TrackRecord) -> Option<&'a TrackRecord> {
    let hits: Vec<&TrackRecord> =
        gt.iter().filter(|a| a.view == b.view && a.frame == b.frame && a.bbox.iou(&b.bbox) >= 0.5).collect();
    assert!(hits.len() <= 1, "ambiguous oracle instance");
    hits.first().copied()
}

fn pred_partner<'a>(pred: &'a [TrackRecord], a: &TrackRecord) -> Option<&'a TrackRecord> {
    let hits: Vec<&TrackRecord> =
        pred.iter().filter(|b| a.view == b.view && a.frame == b.frame && a.bbox.iou(&b.bbox) >= 0.5).collect();
    assert!(hits.len() <= 1, "ambiguous oracle instance");
    hits.first().copied()
}

/// AIDP, AIDR, AIDF1 by enumerating every box pair of every frame and
/// ordered view pair.
pub fn brute_force_cross_view(gt: &[TrackRecord], pred: &[TrackRecord]) -> (f64, f64, f64) {
    let views: BTreeSet<usize> = gt.iter().chain(pred).map(|r| r.view).collect();
    let frames: BTreeSet<u32> = gt.iter().chain(pred).map(|r| r.frame).collect();
    let (mut sp, mut sr, mut n) = (0.0, 0.0, 0usize);
    for &t in &frames {
        for &u in &views {
            for &v in &views {
                if u == v {
                    continue;
                }
                let at = |rs: &[TrackRecord], w: usize| -> Vec<TrackRecord> {
                    rs.iter().filter(|r| r.view == w && r.frame == t).copied().collect()
                };
                let (pu, pv, gu, gv) = (at(pred, u), at(pred, v), at(gt, u), at(gt, v));
                let (mut pred_pairs, mut good_pred) = (0usize, 0usize);
                for a in &pu {
                    for b in &pv {
                        if a.id != b.id {
                            continue;
                        }
                        pred_pairs += 1;
                        if let (Some(x), Some(y)) = (gt_partner(gt, a), gt_partner(gt, b)) {
                            if x.id == y.id {
                                good_pred += 1;
                            }
                        }
                    }
                }
                let (mut gt_pairs, mut found) = (0usize, 0usize);
                for a in &gu {
                    for b in &gv {
                        if a.id != b.id {
                            continue;
                        }
                        gt_pairs += 1;
                        if let (Some(x), Some(y)) = (pred_partner(pred, a), pred_partner(pred, b)) {
                            if x.id == y.id {
                                found += 1;
                            }
                        }
                    }
                }
                sp += if pred_pairs == 0 { 1.0 } else { good_pred as f64 / pred_pairs as f64 };
                sr += if gt_pairs == 0 { 1.0 } else { found as f64 / gt_pairs as f64 };
                n += 1;
            }
        }
    }
    if n == 0 {
        return (1.0, 1.0, 1.0);
    }
    let (p, r) = (sp / n as f64, sr / n as f64);
    let f = if p <= 0.0 || r <= 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

const CELL: f64 = 100.0;
const SIDE: f64 = 10.0;

fn cell_box(cell: usize, shift: f64) -> BBox {
    BBox { x: CELL * cell as f64 + shift, y: 0.0, w: SIDE, h: SIDE }
}

/// Small ground truth / prediction pair. Boxes sit in separate grid cells, so
/// box correspondence is unambiguous; predicted boxes are shifted by 0, 2 or 6
/// pixels (IoU 1, 2/3 or 1/4).
pub fn random_instance(rng: &mut impl Rng, max_ids: u64, max_views: usize) -> (Vec<TrackRecord>, Vec<TrackRecord>) {
    let views = rng.random_range(1..=max_views);
    let frames = rng.random_range(1..=5u32);
    let ids = rng.random_range(1..=max_ids);
    let mut relabel: Vec<u64> = (1..=max_ids).collect();
    relabel.shuffle(rng);
    let (mut gt, mut pred) = (Vec::new(), Vec::new());
    for v in 0..views {
        for t in 1..=frames {
            let mut cells: Vec<usize> = (0..8).collect();
            cells.shuffle(rng);
            let mut free_pred_ids: Vec<u64> = (1..=max_ids).collect();
            free_pred_ids.shuffle(rng);
            let mut used_pred = BTreeSet::new();
            let mut next_cell = 0;
            for id in 1..=ids {
                if !rng.random_bool(0.75) {
                    continue;
                }
                let cell = cells[next_cell];
                next_cell += 1;
                gt.push(TrackRecord { view: v, frame: t, id, bbox: cell_box(cell, 0.0) });
                if !rng.random_bool(0.85) {
                    continue;
                }
                let mut pid = relabel[(id - 1) as usize];
                if rng.random_bool(0.3) || used_pred.contains(&pid) {
                    match free_pred_ids.iter().find(|p| !used_pred.contains(*p)) {
                        Some(&p) => pid = p,
                        None => continue,
                    }
                }
                used_pred.insert(pid);
                let shift = *[0.0, 0.0, 2.0, 6.0].choose(rng).expect("non-empty");
                pred.push(TrackRecord { view: v, frame: t, id: pid, bbox: cell_box(cell, shift) });
            }
            if rng.random_bool(0.2) {
                if let Some(&p) = free_pred_ids.iter().find(|p| !used_pred.contains(*p)) {
                    pred.push(TrackRecord { view: v, frame: t, id: p, bbox: cell_box(cells[next_cell], 0.0) });
                }
            }
        }
    }
    (gt, pred)
}

/// Count of distinct ids per view, for checking instance sizes.
pub fn trajectories_per_view(records: &[TrackRecord]) -> BTreeMap<usize, usize> {
    let mut m: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
    for r in records {
        m.entry(r.view).or_default().insert(r.id);
    }
    m.into_iter().map(|(v, s)| (v, s.len())).collect()
}
