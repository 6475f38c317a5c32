mod common;

use common::{brute_force_assignment, brute_force_cross_view, brute_force_id_metrics, random_instance};
use mvmhat::metrics::{cross_view_metrics, id_metrics, match_boxes};
use mvmhat::solver::{hungarian, pairing_score};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn hungarian_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..1000 {
        let (r, c) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let m = DMatrix::from_fn(r, c, |_, _| rng.random_range(0..10) as f64);
        let pairs = hungarian(&m);
        assert_eq!(pairs.len(), r.min(c));
        let mut rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        assert_eq!((rows.len(), cols.len()), (pairs.len(), pairs.len()));
        assert_eq!(pairing_score(&m, &pairs), brute_force_assignment(&m), "{m}");
    }
}

#[test]
fn hungarian_on_real_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..300 {
        let (r, c) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let m = DMatrix::from_fn(r, c, |_, _| rng.random::<f64>());
        let got = pairing_score(&m, &hungarian(&m));
        assert!((got - brute_force_assignment(&m)).abs() < 1e-12);
    }
}

#[test]
fn id_metrics_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut imperfect = 0;
    for _ in 0..1000 {
        let (gt, pred) = random_instance(&mut rng, 4, 3);
        let got = id_metrics(&gt, &pred);
        assert_eq!(got, brute_force_id_metrics(&gt, &pred));
        imperfect += usize::from(got != (1.0, 1.0, 1.0));
    }
    assert!(imperfect > 500, "{imperfect}");
}

#[test]
fn cross_view_metrics_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut imperfect = 0;
    for _ in 0..1000 {
        let (gt, pred) = random_instance(&mut rng, 4, 3);
        let got = cross_view_metrics(&gt, &pred);
        assert_eq!(got, brute_force_cross_view(&gt, &pred));
        imperfect += usize::from(got != (1.0, 1.0, 1.0));
    }
    assert!(imperfect > 300, "{imperfect}");
}

#[test]
fn box_matching_keeps_inclusive_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    for _ in 0..300 {
        let (gt, pred) = random_instance(&mut rng, 4, 1);
        let frame = gt.first().map_or(1, |r| r.frame);
        let g: Vec<_> = gt.iter().filter(|r| r.frame == frame).copied().collect();
        let p: Vec<_> = pred.iter().filter(|r| r.frame == frame).copied().collect();
        let pairs = match_boxes(&g, &p, 0.5);
        let expected = g.iter().filter(|a| p.iter().any(|b| a.bbox.iou(&b.bbox) >= 0.5)).count();
        assert_eq!(pairs.len(), expected);
    }
}
