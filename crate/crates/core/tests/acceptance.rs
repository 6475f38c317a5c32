mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{brute_force_assignment, brute_force_cross_view, brute_force_id_metrics, random_instance};
use mvmhat::losses::{
    gradient_suite, loss_sym_a, loss_sym_m, loss_trs_a, psd_gap, GradCheckConfig, MarginParams, SUITE_MAX_SIDE,
};
use mvmhat::metrics::{cross_view_metrics, evaluate, id_metrics, match_boxes};
use mvmhat::records::TrackRecord;
use mvmhat::solver::{
    consistency_solve, extract_permutations, hungarian, pairing_score, pairwise_accuracy, rounded_matrix,
    SolverConfig, SolverMode,
};
use mvmhat::synthetic::{
    generate_assignment_instance, generate_scenario, scripted_sleep_wake, AssignmentInstance, AssignmentParams,
    ScenarioParams,
};
use mvmhat::tracker::{self, TrackerConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn exact_instances() -> Vec<AssignmentInstance> {
    (0..50u64)
        .map(|k| {
            let p = AssignmentParams {
                n_ids: 5 + (k % 6) as usize,
                views: 3 + (k % 2) as usize,
                error_rate: 0.0,
                visibility: 1.0,
                ..AssignmentParams::default()
            };
            generate_assignment_instance(&p, 1000 + k).expect("instance")
        })
        .collect()
}

fn loss_zero_at_ideal() -> Outcome {
    let start = Instant::now();
    let p = MarginParams::default();
    let (mut sym, mut trs, mut worst_gap) = (0usize, 0usize, 0.0f64);
    for inst in exact_instances() {
        let l = inst.layout();
        let x = |a: usize, b: usize| inst.affinity.block(a, b).clone_owned();
        let n = l.len();
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let v = loss_sym_a(&x(a, b), &x(b, a), &p).map_err(|e| e.to_string())?.value;
                if v != 0.0 {
                    return Err(format!("seed {}: symmetric loss {v:e} on slots ({a}, {b})", inst.seed));
                }
                sym += 1;
                for c in 0..n {
                    if c == a || c == b {
                        continue;
                    }
                    let v = loss_trs_a(&x(a, b), &x(b, c), &x(c, a), &x(a, c), &p).map_err(|e| e.to_string())?.value;
                    if v != 0.0 {
                        return Err(format!("seed {}: transitive loss {v:e} on slots ({a}, {b}, {c})", inst.seed));
                    }
                    trs += 1;
                }
            }
        }
        let v = loss_sym_m(&inst.a_gt).map_err(|e| e.to_string())?.value;
        if v != 0.0 {
            return Err(format!("seed {}: assignment asymmetry {v:e}", inst.seed));
        }
        worst_gap = worst_gap.max(psd_gap(&inst.a_gt).map_err(|e| e.to_string())?.abs());
    }
    let elapsed = start.elapsed();
    if worst_gap > 1e-8 {
        return Err(format!("nuclear norm minus trace reached {worst_gap:e}"));
    }
    if elapsed >= Duration::from_secs(10) {
        return Err(format!("took {elapsed:.2?}"));
    }
    Ok(format!("{sym} pairs and {trs} loops at zero, max gap {worst_gap:.1e}, {elapsed:.2?}"))
}

fn gradient_seeds() -> Outcome {
    let cfg = GradCheckConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        for e in gradient_suite(seed, &cfg).map_err(|e| e.to_string())? {
            if !e.report.passed || e.report.skipped_kinks > 0 || e.report.max_rel_error > 1e-4 {
                return Err(format!("seed {seed} {}: {:?}", e.loss, e.report));
            }
            worst = worst.max(e.report.max_rel_error);
        }
    }
    Ok(format!("100/100 seeds, sides up to {SUITE_MAX_SIDE}, max relative error {worst:.2e}"))
}

fn consistency_measure(a: &DMatrix<f64>) -> Result<f64, String> {
    Ok(loss_sym_m(a).map_err(|e| e.to_string())?.value + psd_gap(a).map_err(|e| e.to_string())?)
}

fn solver_gain() -> Outcome {
    let consistency = SolverConfig::default();
    let pseudo = SolverConfig { mode: SolverMode::PseudoOnly, ..consistency };
    let (mut before, mut after, mut acc_c, mut acc_p) = (0.0, 0.0, 0.0, 0.0);
    let runs = 100;
    for seed in 0..runs {
        let inst = generate_assignment_instance(&AssignmentParams::default(), seed).map_err(|e| e.to_string())?;
        let x = &inst.affinity;
        let sym = (&x.values + x.values.transpose()) * 0.5;
        before += consistency_measure(&sym)?;
        let solved = consistency_solve(x, &consistency).map_err(|e| e.to_string())?;
        after += consistency_measure(&solved.values)?;
        acc_c += pairwise_accuracy(&x.layout, &extract_permutations(&solved, consistency.m), &inst.a_gt);
        let base = consistency_solve(x, &pseudo).map_err(|e| e.to_string())?;
        acc_p += pairwise_accuracy(&x.layout, &extract_permutations(&base, pseudo.m), &inst.a_gt);
    }
    let n = runs as f64;
    let (before, after, acc_c, acc_p) = (before / n, after / n, acc_c / n, acc_p / n);
    let summary = format!("inconsistency {before:.4} -> {after:.4}, accuracy {acc_c:.4} vs pseudo-only {acc_p:.4}");
    if after < before && acc_c >= acc_p {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn exact_recovery() -> Outcome {
    let cfg = SolverConfig::default();
    let instances = exact_instances();
    for inst in &instances {
        let solved = consistency_solve(&inst.affinity, &cfg).map_err(|e| e.to_string())?;
        let rounded = rounded_matrix(inst.layout(), &extract_permutations(&solved, cfg.m));
        if rounded != inst.a_gt {
            return Err(format!("seed {} differs from the ground-truth assignment", inst.seed));
        }
    }
    Ok(format!("{} instances recovered exactly", instances.len()))
}

fn noiseless_tracking() -> Outcome {
    let sc = generate_scenario(&ScenarioParams::default(), 5).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let pred = tracker::run(&sc.bundles, &TrackerConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let r = evaluate(&sc.ground_truth, &pred, &[5]);
    let summary =
        format!("MOTA {} IDF1 {} MHAA {} STMA@5 {} in {elapsed:.2?}", r.mota, r.idf1, r.mhaa, r.stma[&5]);
    let perfect = [r.mota, r.idf1, r.mhaa, r.stma[&5]].iter().all(|&v| v == 1.0);
    if perfect && elapsed < Duration::from_secs(30) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

/// Predicted ids given to one ground-truth subject in one view, by frame.
fn predicted_ids(gt: &[TrackRecord], pred: &[TrackRecord], view: usize, gid: u64) -> BTreeMap<u32, u64> {
    let mut out = BTreeMap::new();
    for g in gt.iter().filter(|r| r.view == view && r.id == gid) {
        let gs: Vec<TrackRecord> = gt.iter().filter(|r| r.view == view && r.frame == g.frame).copied().collect();
        let ps: Vec<TrackRecord> = pred.iter().filter(|r| r.view == view && r.frame == g.frame).copied().collect();
        let me = gs.iter().position(|r| r.id == gid).expect("own record");
        if let Some(&(_, j)) = match_boxes(&gs, &ps, 0.5).iter().find(|&&(i, _)| i == me) {
            out.insert(g.frame, ps[j].id);
        }
    }
    out
}

fn sleep_wake() -> Outcome {
    let (sc, (view, gid, t2, t3)) = scripted_sleep_wake(0).map_err(|e| e.to_string())?;
    let pred = tracker::run(&sc.bundles, &TrackerConfig::default()).map_err(|e| e.to_string())?;
    let ids = predicted_ids(&sc.ground_truth, &pred, view, gid);
    let before: BTreeSet<u64> = ids.range(..t2).map(|(_, &id)| id).collect();
    let after: BTreeSet<u64> = ids.range(t3..).map(|(_, &id)| id).collect();
    let summary = format!("ids before frame {t2}: {before:?}, from frame {t3}: {after:?}");
    if before.len() == 1 && before == after {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cases = 1000;
    for k in 0..cases {
        let (r, c) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let m = DMatrix::from_fn(r, c, |_, _| rng.random_range(0..10) as f64);
        if pairing_score(&m, &hungarian(&m)) != brute_force_assignment(&m) {
            return Err(format!("hungarian case {k}: {m}"));
        }
    }
    for k in 0..cases {
        let (gt, pred) = random_instance(&mut rng, 4, 3);
        if id_metrics(&gt, &pred) != brute_force_id_metrics(&gt, &pred) {
            return Err(format!("id metrics case {k}"));
        }
    }
    for k in 0..cases {
        let (gt, pred) = random_instance(&mut rng, 4, 3);
        if cross_view_metrics(&gt, &pred) != brute_force_cross_view(&gt, &pred) {
            return Err(format!("cross-view metrics case {k}"));
        }
    }
    Ok(format!("{cases} cases each for hungarian, id and cross-view metrics agree exactly"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mvmhat")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn tree_bytes(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(key, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let mut runs = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let root = tmp.path();
        let s = |p: &str| root.join(p).display().to_string();
        run_cli(&["generate", "scenario", "--seed", "11", "--out", &s("data"), "--frames", "60", "--box-noise", "1", "--embedding-noise", "0.2", "--occlusion-prob", "0.3"])?;
        run_cli(&["generate", "assignment", "--seed", "11", "--out", &s("affinity.json")])?;
        run_cli(&["track", "--data", &s("data"), "--out", &s("tracks")])?;
        runs.push(tree_bytes(root)?);
    }
    if runs[0] != runs[1] {
        let differing: Vec<&String> = runs[0].keys().filter(|k| runs[0].get(*k) != runs[1].get(*k)).collect();
        return Err(format!("files differ: {differing:?}"));
    }
    Ok(format!("{} files byte-identical across two runs", runs[0].len()))
}

fn throughput() -> Outcome {
    let p = ScenarioParams { views: 4, frames: 1000, n_ids: 10, ..ScenarioParams::default() };
    let sc = generate_scenario(&p, 9).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let pred = tracker::run(&sc.bundles, &TrackerConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let summary = format!("{} records over 4 views x 1000 frames x 10 subjects in {elapsed:.2?}", pred.len());
    if elapsed < Duration::from_secs(60) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("losses vanish at the ideal assignment", loss_zero_at_ideal),
        ("analytic gradients match finite differences", gradient_seeds),
        ("solver improves consistency and accuracy", solver_gain),
        ("rounding recovers the exact assignment", exact_recovery),
        ("noiseless tracking scores perfectly", noiseless_tracking),
        ("sleeping tracklet keeps its id", sleep_wake),
        ("metrics agree with brute force", metric_oracles),
        ("cli output is deterministic", determinism),
        ("tracking throughput", throughput),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
