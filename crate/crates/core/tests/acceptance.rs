//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line; run with
//! `cargo test -p wcluster --test acceptance -- --nocapture --test-threads=1`.

mod common;

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{desk_scene, sphere, three_objects, verdict};
use wcluster::bench::{self, mask_iou, score_frame};
use wcluster::cluster::{
    self, ClusterParams, IterationClock, StepOptions, WeightState,
};
use wcluster::config::PipelineConfig;
use wcluster::frame_io::{
    self, generate_synthetic_scene, CameraIntrinsics, Primitive, SceneObject, SyntheticSceneSpec,
};
use wcluster::pipeline::{self, Pipeline};
use wcluster::preprocess::{self, CloudPoint, OrganizedCloud, Projection};
use wcluster::render_export;

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.3}s (limit {:.0}s)", t.as_secs_f64(), limit.as_secs_f64()))
}

#[test]
fn c1_back_projection_exactness() {
    let start = Instant::now();
    let intr = CameraIntrinsics::kinect_v2();
    let proj = Projection::new(&intr);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let px = rng.random_range(0.0..intr.depth_width as f64);
        let py = rng.random_range(0.0..intr.depth_height as f64);
        let pz = rng.random_range(0.1..8.0);
        let w = preprocess::back_project(px, py, pz, &intr).unwrap();
        let (fx, fy, fz) = proj.forward_project(&w);
        for (a, b) in [(fx, px), (fy, py), (fz, pz)] {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    let center = preprocess::back_project(256.0, 212.0, 2.0, &intr).unwrap();
    let center_ok = center.x == 0.0 && center.y == 0.0 && center.z == 2.0;
    let (fast, time) = within(Duration::from_secs(1), start);
    verdict(
        1,
        "back-projection round trip",
        worst <= 1e-6 && center_ok && fast,
        &format!("max relative error {worst:.2e}, center exact {center_ok}, {time}"),
    );
}

#[test]
fn c2_simplex_invariant() {
    let start = Instant::now();
    let intr = CameraIntrinsics::kinect_v2().with_resolution(64, 64);
    let mut mover = sphere([-0.6, 0.0, 1.6], 0.25, [230, 200, 30]);
    mover.trajectory = (0..20).map(|f| [0.06 * f as f64, 0.0, 0.0]).collect();
    let mut spec = three_objects(20);
    spec.objects.push(mover);
    let (frames, _) = generate_synthetic_scene(&spec, &intr, 2).unwrap();
    let cfg = PipelineConfig {
        cluster: ClusterParams { k: 5, ..Default::default() },
        ..Default::default()
    };
    let mut p = Pipeline::new(cfg, &intr).unwrap();
    let mut checked = 0usize;
    let mut violations = 0usize;
    for f in &frames {
        p.process(f).unwrap();
        let s = p.state().unwrap();
        for cell in 0..s.cells() {
            let sum: f64 = s.mu(cell).iter().sum();
            let simplex = sum == 0.0 || (sum - 1.0).abs() <= 1e-9;
            let nonneg = s.delta(cell).iter().all(|d| *d >= 0.0);
            let unit = s.mu(cell).iter().all(|m| (0.0..=1.0).contains(m));
            violations += usize::from(!(simplex && nonneg && unit));
            checked += 1;
        }
    }
    let (fast, time) = within(Duration::from_secs(5), start);
    verdict(
        2,
        "simplex invariant",
        violations == 0 && fast,
        &format!("{checked} cell checks over 20 iterations, {violations} violations, {time}"),
    );
}

// --- independent Lloyd oracle -------------------------------------------

#[derive(Clone, Copy)]
struct Feat {
    pos: [f64; 3],
    rgb: [f64; 3],
    normal: Option<[f64; 3]>,
}

fn oracle_f(p: &Feat, c: &Feat, prm: &ClusterParams) -> f64 {
    let mut dp = 0.0;
    let mut dc = 0.0;
    for i in 0..3 {
        dp += (p.pos[i] - c.pos[i]).powi(2);
        dc += (p.rgb[i] - c.rgb[i]).powi(2);
    }
    let base = (prm.pos_scale.powi(2) * dp + prm.alpha.powi(2) * dc).sqrt();
    let angle = match (p.normal, c.normal) {
        (Some(a), Some(b)) => {
            let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            prm.gamma * (1.0 - cos)
        }
        _ => 0.0,
    };
    base + angle
}

const QUIET_ITERS: usize = 3000;
const MAX_ITERS: usize = 200_000;

fn hard_mean(points: &[Feat], assign: &[usize], ci: usize) -> Option<Feat> {
    let members: Vec<&Feat> = points.iter().zip(assign).filter(|(_, a)| **a == ci).map(|(p, _)| p).collect();
    if members.is_empty() {
        return None;
    }
    let n = members.len() as f64;
    let mut pos = [0.0; 3];
    let mut rgb = [0.0; 3];
    let mut nrm = [0.0; 3];
    for m in &members {
        for i in 0..3 {
            pos[i] += m.pos[i] / n;
            rgb[i] += m.rgb[i] / n;
            if let Some(v) = m.normal {
                nrm[i] += v[i] / n;
            }
        }
    }
    let len = (nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]).sqrt();
    Some(Feat { pos, rgb, normal: (len > 1e-6).then(|| nrm.map(|v| v / len)) })
}

/// Plain Lloyd iterations under the hybrid metric: hard assignment, then
/// per-cluster means with renormalized mean normals.
fn lloyd(points: &[Feat], seeds: &[Feat], prm: &ClusterParams) -> Vec<usize> {
    let mut cents = seeds.to_vec();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..1000 {
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                let mut best = (0, f64::INFINITY);
                for (i, c) in cents.iter().enumerate() {
                    let f = oracle_f(p, c, prm);
                    if f < best.1 {
                        best = (i, f);
                    }
                }
                best.0
            })
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        for (ci, c) in cents.iter_mut().enumerate() {
            if let Some(m) = hard_mean(points, &assign, ci) {
                *c = m;
            }
        }
    }
    assign
}

const MIN_BLOB_GAP: f64 = 1.0;

/// Blobs of half-width 0.15 m whose centers sit at least [`MIN_BLOB_GAP`] apart.
fn random_instance(rng: &mut ChaCha8Rng, n: usize, blobs: usize) -> Vec<CloudPoint> {
    let mut centers: Vec<([f64; 3], [f64; 3], [f64; 3])> = Vec::new();
    while centers.len() < blobs {
        let pos = [rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0), rng.random_range(1.0..4.0)];
        let separated = centers.iter().all(|(q, _, _)| {
            let d2: f64 = (0..3).map(|i| (pos[i] - q[i]).powi(2)).sum();
            d2 >= MIN_BLOB_GAP * MIN_BLOB_GAP
        });
        if !separated {
            continue;
        }
        let rgb = [0, 1, 2].map(|_| rng.random_range(0.0..255.0));
        let n = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), -1.0).normalize();
        centers.push((pos, rgb, [n.x, n.y, n.z]));
    }
    (0..n)
        .map(|i| {
            let (pos, rgb, nrm) = centers[rng.random_range(0..blobs)];
            let jitter = |s: f64, rng: &mut ChaCha8Rng| rng.random_range(-s..s);
            let position = Vector3::new(
                pos[0] + jitter(0.15, rng),
                pos[1] + jitter(0.15, rng),
                pos[2] + jitter(0.15, rng),
            );
            let color = rgb.map(|c| (c + jitter(12.0, rng)).clamp(0.0, 255.0).round() as u8);
            let normal = (rng.random::<f64>() > 0.1).then(|| {
                Vector3::new(nrm[0] + jitter(0.1, rng), nrm[1] + jitter(0.1, rng), nrm[2]).normalize()
            });
            CloudPoint {
                position,
                color,
                normal,
                valid: true,
                grid: (0, i),
            }
        })
        .collect()
}

fn feat(p: &CloudPoint) -> Feat {
    Feat {
        pos: [p.position.x, p.position.y, p.position.z],
        rgb: p.color.map(f64::from),
        normal: p.normal.map(|n| [n.x, n.y, n.z]),
    }
}

#[test]
fn c3_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 30;
    let mut agree = 0;
    let mut details = Vec::new();
    for t in 0..trials {
        let n = rng.random_range(50..=500);
        let blobs = rng.random_range(2..=6);
        let k = blobs;
        let prm = ClusterParams {
            k,
            alpha: rng.random_range(0.002..0.1),
            gamma: rng.random_range(0.0001..0.01),
            ..Default::default()
        };
        let prm = ClusterParams { pos_scale: 1.0 - prm.alpha, ..prm };
        let points = random_instance(&mut rng, n, blobs);
        let cloud = OrganizedCloud { width: n, height: 1, points, frame_index: 0 };
        let seeds = cluster::seed_kmeanspp(&cloud.points, &prm, t).unwrap();

        let mut state = WeightState::new(n, 1, k);
        let mut cents = seeds.clone();
        let mut clock = IterationClock::default();
        let mut iters = 0;
        let mut quiet = 0;
        while quiet < QUIET_ITERS && iters < MAX_ITERS {
            let s = cluster::step_frame(&cloud, &mut state, &mut cents, &mut clock, &prm, StepOptions::default()).unwrap();
            iters += 1;
            quiet = if s.label_changes == 0 && s.winner_mismatches == 0 { quiet + 1 } else { 0 };
        }
        let weighted: Vec<usize> = state.labels().iter().map(|l| l.unwrap()).collect();
        let oracle_seeds: Vec<Feat> = seeds
            .iter()
            .map(|c| Feat {
                pos: [c.position.x, c.position.y, c.position.z],
                rgb: [c.color.x, c.color.y, c.color.z],
                normal: c.normal.map(|v| [v.x, v.y, v.z]),
            })
            .collect();
        let feats: Vec<Feat> = cloud.points.iter().map(feat).collect();
        let reference = lloyd(&feats, &oracle_seeds, &prm);
        let same = weighted == reference;
        agree += usize::from(same);
        if !same {
            let diff = weighted.iter().zip(&reference).filter(|(a, b)| a != b).count();
            let hard: Vec<Feat> = (0..k).map(|c| hard_mean(&feats, &weighted, c).unwrap_or(oracle_seeds[c])).collect();
            let fixpoint = lloyd(&feats, &hard, &prm) == weighted;
            details.push(format!("trial {t}: n={n} k={k} iters={iters} differ at {diff}, weighted labels are a Lloyd fixpoint: {fixpoint}"));
        }
    }
    let (fast, time) = within(Duration::from_secs(10), start);
    verdict(
        3,
        "weighted fixpoint equals Lloyd oracle",
        agree as u64 == trials && fast,
        &format!("{agree}/{trials} instances identical, {time} {}", details.join("; ")),
    );
}

#[test]
fn c4_monotone_takeover_and_psi_scaling() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut takeover_fail = 0;
    let mut scale_fail = 0;
    let trials = 2000;
    for _ in 0..trials {
        let k = rng.random_range(2..=12);
        let i = rng.random_range(0..k);
        let j = (i + rng.random_range(1..k)) % k;
        let n = rng.random_range(0..50);
        let m = rng.random_range(n + 1..=n + 50);
        let psi = rng.random_range(1e-3..=1.0);
        let mut s = WeightState::new(1, 1, k);
        for _ in 0..n {
            s.record_win(0, i, psi);
        }
        for _ in 0..m {
            s.record_win(0, j, psi);
        }
        takeover_fail += usize::from(s.label(0) != Some(j));

        let c: f64 = rng.random_range(0.01..(1.0 / psi).min(100.0));
        let winners: Vec<usize> = (0..rng.random_range(1..80)).map(|_| rng.random_range(0..k)).collect();
        let mut a = WeightState::new(1, 1, k);
        let mut b = WeightState::new(1, 1, k);
        for w in &winners {
            a.record_win(0, *w, psi);
            b.record_win(0, *w, psi * c);
            if a.label(0) != b.label(0) {
                scale_fail += 1;
                break;
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(1), start);
    verdict(
        4,
        "monotone takeover and psi-scale invariance",
        takeover_fail == 0 && scale_fail == 0 && fast,
        &format!("{trials} trials, {takeover_fail} takeover failures, {scale_fail} label-sequence mismatches, {time}"),
    );
}

fn run_static(spec: &SyntheticSceneSpec, intr: &CameraIntrinsics, cfg: PipelineConfig, seed: u64) -> f64 {
    let (frames, truth) = generate_synthetic_scene(spec, intr, seed).unwrap();
    let mut p = Pipeline::new(cfg, intr).unwrap();
    let mut last = None;
    for f in &frames {
        last = Some(p.process(f).unwrap().labels);
    }
    score_frame(&last.unwrap(), truth.last().unwrap()).unwrap().accuracy
}

const ALPHA5: f64 = 0.1;

#[test]
fn c5_static_scene_accuracy() {
    let start = Instant::now();
    let intr = CameraIntrinsics::kinect_v2().with_resolution(128, 106);
    let spec = desk_scene(15);
    let mut good = 0;
    let mut accs = Vec::new();
    for seed in 0..10u64 {
        let cfg = PipelineConfig {
            cluster: ClusterParams { k: 4, alpha: ALPHA5, pos_scale: 1.0 - ALPHA5, ..Default::default() },
            rng_seed: seed,
            ..Default::default()
        };
        let acc = run_static(&spec, &intr, cfg, 100 + seed);
        good += usize::from(acc >= 0.95);
        accs.push(format!("{acc:.3}"));
    }
    let (fast, time) = within(Duration::from_secs(30), start);
    verdict(
        5,
        "three objects after 15 iterations",
        good >= 8 && fast,
        &format!("{good}/10 seeds >= 0.95 [{}], {time}", accs.join(" ")),
    );
}

fn entering_sphere_scene() -> SyntheticSceneSpec {
    let mut spec = three_objects(20);
    let mut newcomer = sphere([0.2, 0.45, 1.6], 0.2, [230, 210, 30]);
    newcomer.first_frame = 5;
    spec.objects.push(newcomer);
    spec
}

#[test]
fn c6_entering_object_gets_its_own_cluster() {
    let start = Instant::now();
    let intr = CameraIntrinsics::kinect_v2().with_resolution(128, 106);
    let spec = entering_sphere_scene();
    let (frames, truth) = generate_synthetic_scene(&spec, &intr, 6).unwrap();
    let cfg = PipelineConfig {
        cluster: ClusterParams { k: 6, ..Default::default() },
        rng_seed: 6,
        ..Default::default()
    };
    let mut p = Pipeline::new(cfg, &intr).unwrap();
    // pixel at the newcomer's center
    let proj = Projection::new(&intr);
    let (sc, sr, _) = proj.forward_project(&Vector3::new(0.2, 0.45, 1.6));
    let seed_px = (sr.round() as usize, sc.round() as usize);
    let newcomer = spec.objects.len() as u8;
    let mut ious = Vec::new();
    let mut ids = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        let out = p.process(f).unwrap();
        if i >= 15 {
            let mask = render_export::extract_object_mask(&out.labels, seed_px).unwrap();
            ious.push(mask_iou(&mask, &truth[i], newcomer));
            ids.push(mask.cluster_id);
        }
    }
    let stable = ids.windows(2).all(|w| w[0] == w[1]);
    let ok_iou = ious.iter().all(|v| *v >= 0.8);
    let (fast, time) = within(Duration::from_secs(60), start);
    verdict(
        6,
        "entering sphere segmented by frame 15",
        ok_iou && stable && fast,
        &format!("IoU frames 15-19 {:?}, cluster ids {ids:?}, {time}", ious.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()),
    );
}

#[test]
fn c7_cost_grows_with_k() {
    let intr = CameraIntrinsics::kinect_v2().with_resolution(256, 212);
    let (frames, _) = generate_synthetic_scene(&three_objects(1), &intr, 7).unwrap();
    let cfg = PipelineConfig {
        cluster: ClusterParams { inner_iters: 3, ..Default::default() },
        ..Default::default()
    };
    let report = bench::sweep_frames(&frames, &intr, &[2, 10, 25, 50], &cfg, 3).unwrap();
    print!("{}", report.to_csv());
    let times: Vec<f64> = report.rows.iter().map(|r| r.seconds).collect();
    let bytes: Vec<usize> = report.rows.iter().map(|r| r.weight_bytes).collect();
    let t_inc = times.windows(2).all(|w| w[1] > w[0]);
    let b_inc = bytes.windows(2).all(|w| w[1] > w[0]);
    verdict(
        7,
        "runtime and weight storage increase with k",
        t_inc && b_inc,
        &format!(
            "seconds {:?}, weight bytes {bytes:?}, machine {}",
            times.iter().map(|t| format!("{t:.4}")).collect::<Vec<_>>(),
            report.machine
        ),
    );
}

#[test]
fn c8_plane_normals() {
    let start = Instant::now();
    let intr = CameraIntrinsics::kinect_v2().with_resolution(128, 106);
    let proj = Projection::new(&intr);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut cases = 0;
    for axis in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]] {
        for deg in [0.0f64, 10.0, 20.0, 30.0, 40.0, 45.0] {
            let rot = nalgebra::Rotation3::from_axis_angle(
                &nalgebra::Unit::new_normalize(Vector3::from(axis)),
                deg.to_radians(),
            );
            let truth = rot * Vector3::new(0.0, 0.0, -1.0);
            let spec = SyntheticSceneSpec {
                objects: vec![SceneObject::new(
                    Primitive::Plane { center: [0.0, 0.0, 2.0], normal: truth.into(), radius: 50.0 },
                    [100, 100, 100],
                )],
                background_depth: None,
                background_color: [0, 0, 0],
                frame_count: 1,
                depth_noise: 0.0,
                color_noise: 0.0,
            };
            let (frames, labels) = generate_synthetic_scene(&spec, &intr, 0).unwrap();
            let mut cloud = preprocess::build_cloud(&frames[0], &proj);
            preprocess::compute_normals(&mut cloud);
            let on_plane = |r: usize, c: usize| *labels[0].get(r, c) == 1;
            for r in 1..intr.depth_height - 1 {
                for c in 1..intr.depth_width - 1 {
                    if !(on_plane(r, c) && on_plane(r - 1, c) && on_plane(r + 1, c) && on_plane(r, c - 1) && on_plane(r, c + 1)) {
                        continue;
                    }
                    let n = cloud.at(r, c).normal.expect("interior plane pixel has a normal");
                    let angle = n.dot(&truth).clamp(-1.0, 1.0).acos().to_degrees();
                    worst = worst.max(angle);
                    checked += 1;
                }
            }
            cases += 1;
        }
    }
    let (fast, time) = within(Duration::from_secs(5), start);
    verdict(
        8,
        "plane normals within 2 degrees",
        worst <= 2.0 && checked > 0 && fast,
        &format!("{cases} orientations, {checked} interior pixels, worst {worst:.2e} deg, {time}"),
    );
}

#[test]
fn c9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let intr = CameraIntrinsics::kinect_v2().with_resolution(96, 80);
    let mut spec = entering_sphere_scene();
    spec.frame_count = 10;
    let (frames, truth) = generate_synthetic_scene(&spec, &intr, 9).unwrap();
    let manifest = frame_io::write_dataset(&dir.path().join("data"), &intr, &frames, Some(&truth)).unwrap();
    let cfg = PipelineConfig {
        cluster: ClusterParams { k: 6, ..Default::default() },
        rng_seed: 9,
        threads: 1,
        ..Default::default()
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    pipeline::run(&cfg, &manifest, &a, |_| {}).unwrap();
    pipeline::run(&cfg, &manifest, &b, |_| {}).unwrap();
    let mut files = 0;
    let mut differing = Vec::new();
    for i in 0..10 {
        for path in [pipeline::ply_path, pipeline::labels_path] {
            let (pa, pb) = (path(&a, i), path(&b, i));
            let (ba, bb) = (std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
            files += 1;
            if ba != bb {
                differing.push(pa.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
    }
    verdict(
        9,
        "byte-identical reruns",
        differing.is_empty() && files == 20,
        &format!("{files} files compared, differing: {differing:?}"),
    );
}
