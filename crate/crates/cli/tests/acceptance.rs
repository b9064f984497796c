//! One pass/fail line per acceptance criterion. Exits non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::mpsc::{channel, Receiver};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tower::ServiceExt;

use handmend_core::backends::config::{BackendConfig, DetectorConfig};
use handmend_core::backends::{BackendError, Detector, HandDetection, HandLabel};
use handmend_core::dataset::{parse_annotations, serialize_annotations, split_pairs, HandAnnotation, ImagePair};
use handmend_core::evaluation::{
    exhaustive_match, feature_distribution, fid, greedy_match, iou, precision_recall, render_detection_table, round2,
    ConfusionCounts, FeatureDistribution, GroundTruth,
};
use handmend_core::geometry::{mirror_x, LandmarkSource, RotationDirection, TemplateFrame};
use handmend_core::masking::{expand_box, rasterize_box, union_masks};
use handmend_core::pipeline::{ControlArtifact, EditArtifact, InpaintArtifact};
use handmend_core::{
    apply_placement, compute_chirality, fixtures, raster, solve_placement, BoundingBox, Chirality, HandLandmarkSet,
    MaskLayer, Pipeline, PipelineSession, Point2, PromptBundle, SessionParams, StepName, StepStatus,
    TemplateRegistry,
};
use handmend_service::{router, AppState, ServiceConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(budget: Duration, started: Instant, detail: String) -> Outcome {
    let took = started.elapsed();
    ensure!(took <= budget, "took {took:?}, budget {budget:?}");
    Ok(format!("{detail}; {} ms", took.as_millis()))
}

// ---------------------------------------------------------------- table

fn table_reproduction() -> Outcome {
    let started = Instant::now();
    let rows = [
        (0.80, 1019, 132, 185, 988, 0.89, 0.85),
        (0.90, 936, 215, 443, 730, 0.81, 0.68),
        (0.95, 721, 430, 930, 243, 0.63, 0.44),
    ];
    let mut counts = Vec::new();
    for (t, tp, fp, fn_, tn, p, r) in rows {
        let c = ConfusionCounts::new(tp, fp, fn_, tn, t);
        let pr = precision_recall(&c);
        let (gp, gr) = (round2(pr.precision.unwrap()), round2(pr.recall.unwrap()));
        ensure!((gp, gr) == (p, r), "IOU {t}: computed {gp}/{gr}, printed {p}/{r}");
        counts.push(c);
    }
    let c85 = ConfusionCounts::new(994, 157, 246, 927, 0.85);
    let pr = precision_recall(&c85);
    let (p85, r85) = (round2(pr.precision.unwrap()), round2(pr.recall.unwrap()));
    ensure!(p85 == 0.86, "IOU 0.85 precision {p85}, printed 0.86");
    ensure!(r85 == 0.80, "IOU 0.85 recall recomputes to {r85}, expected 0.80");
    counts.push(c85);
    let table = render_detection_table(&counts);
    ensure!(table.contains("0.89") && table.contains("0.44"), "rendered table lost values:\n{table}");
    within(
        Duration::from_secs(1),
        started,
        format!("3 rows exact; IOU 0.85 precision 0.86 matches, recall cell is a discrepancy (computed {r85:.2}, printed 0.86)"),
    )
}

// ---------------------------------------------------------------- geometry

fn random_point(rng: &mut ChaCha8Rng) -> Point2 {
    Point2::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0))
}

fn random_hand(rng: &mut ChaCha8Rng, source: LandmarkSource) -> HandLandmarkSet {
    loop {
        let [a, b, c, d] = [(); 4].map(|_| random_point(rng));
        let (v1, v2) = (c.sub(a), d.sub(b));
        if v1.norm() > 1.0 && v2.norm() > 1.0 && (v1.cross(v2) / (v1.norm() * v2.norm())).abs() > 1e-3 {
            return HandLandmarkSet::new(a, b, c, d, source).unwrap();
        }
    }
}

fn geometry_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e6f);
    let n = 10_000;
    for case in 0..n {
        let hand = random_hand(&mut rng, LandmarkSource::PoseEstimate);
        let template = TemplateFrame {
            landmarks: random_hand(&mut rng, LandmarkSource::TemplateAnnotation),
            chirality: if rng.random_bool(0.5) { Chirality::Clockwise } else { Chirality::CounterClockwise },
            width: rng.random_range(1.0..400.0),
        };
        let chir = compute_chirality(&hand).map_err(|e| format!("case {case}: {e}"))?;
        let tf = solve_placement(&hand, chir, &template).map_err(|e| format!("case {case}: {e}"))?;
        for (src, dst) in [(template.landmarks.a, hand.a), (template.landmarks.c, hand.c)] {
            let err = apply_placement(&tf, src).distance(dst);
            let scale = dst.norm().max(hand.base_vector().norm());
            ensure!(err <= 1e-6 * scale, "case {case}: landmark off by {err} (scale {scale})");
        }
        let axis = rng.random_range(-100.0..100.0);
        let mirrored = hand.map(|p| mirror_x(p, axis));
        ensure!(
            compute_chirality(&mirrored).ok() == Some(chir.opposite()),
            "case {case}: mirror did not flip chirality"
        );
        let k = rng.random_range(0.01..100.0);
        let origin = random_point(&mut rng);
        let scaled = hand.map(|p| origin.add(p.sub(origin).scale(k)));
        ensure!(compute_chirality(&scaled).ok() == Some(chir), "case {case}: scaling by {k} changed chirality");
    }
    within(Duration::from_secs(10), started, format!("{n} cases"))
}

// ---------------------------------------------------------------- rotation

fn pinned_case(v1: Point2, v1t: Point2) -> Result<(f64, RotationDirection, Point2), String> {
    let normal = Point2::new(-v1.y, v1.x);
    let hand = HandLandmarkSet::new(
        Point2::ORIGIN,
        v1.scale(0.5).sub(normal),
        v1,
        v1.scale(0.5).add(normal),
        LandmarkSource::PoseEstimate,
    )
    .map_err(|e| e.to_string())?;
    let chir = compute_chirality(&hand).map_err(|e| e.to_string())?;
    let tnormal = Point2::new(-v1t.y, v1t.x);
    let template = TemplateFrame {
        landmarks: HandLandmarkSet::new(
            Point2::ORIGIN,
            v1t.scale(0.5).sub(tnormal),
            v1t,
            v1t.scale(0.5).add(tnormal),
            LandmarkSource::TemplateAnnotation,
        )
        .map_err(|e| e.to_string())?,
        chirality: chir,
        width: 4.0,
    };
    let tf = solve_placement(&hand, chir, &template).map_err(|e| e.to_string())?;
    ensure!(!tf.flipped, "same chirality must not flip");
    // rotate v1' by the signed angle as a plain 2x2 matrix
    let s = match tf.rotation_direction {
        RotationDirection::Clockwise => -tf.rotation_angle,
        RotationDirection::Counterclockwise => tf.rotation_angle,
        RotationDirection::None => 0.0,
    };
    let m = [[s.cos(), -s.sin()], [s.sin(), s.cos()]];
    let rotated = Point2::new(m[0][0] * v1t.x + m[0][1] * v1t.y, m[1][0] * v1t.x + m[1][1] * v1t.y);
    let unit = |p: Point2| p.scale(1.0 / p.norm());
    ensure!(unit(rotated).distance(unit(v1)) < 1e-9, "matrix turns v1' towards {rotated:?}, not {v1:?}");
    ensure!(apply_placement(&tf, v1t).distance(v1) < 1e-9 * v1.norm(), "placement sends v1' elsewhere");
    Ok((tf.rotation_angle, tf.rotation_direction, rotated))
}

fn rotation_pin() -> Outcome {
    let (theta, dir, _) = pinned_case(Point2::new(0.0, 1.0), Point2::new(1.0, 0.0))?;
    ensure!((theta - FRAC_PI_2).abs() < 1e-15, "theta {theta}");
    // a·c' − c·a' with v1 = (a, c), v1' = (a', c')
    let sign = |v1: Point2, v1t: Point2| v1.x * v1t.y - v1.y * v1t.x;
    ensure!(sign(Point2::new(0.0, 1.0), Point2::new(1.0, 0.0)) < 0.0, "pinned case sign");
    ensure!(dir == RotationDirection::Counterclockwise, "negative sign gave {dir:?}");
    let (theta2, dir2, _) = pinned_case(Point2::new(1.0, 0.0), Point2::new(0.0, 1.0))?;
    ensure!(sign(Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)) > 0.0, "mirror case sign");
    ensure!(dir2 == RotationDirection::Clockwise, "positive sign gave {dir2:?}");
    ensure!((theta2 - FRAC_PI_2).abs() < 1e-15, "theta {theta2}");
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let v1 = random_point(&mut rng);
        let v1t = random_point(&mut rng);
        let (_, d, _) = pinned_case(v1, v1t)?;
        let expected = if sign(v1, v1t) > 0.0 { RotationDirection::Clockwise } else { RotationDirection::Counterclockwise };
        ensure!(d == expected, "sign rule violated for v1={v1:?} v1'={v1t:?}");
    }
    Ok("theta = pi/2 rotates v1' onto v1; sign > 0 is clockwise and sign < 0 counterclockwise".into())
}

// ---------------------------------------------------------------- masks

fn random_mask(rng: &mut ChaCha8Rng, w: u32, h: u32) -> MaskLayer {
    let bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.4)).collect();
    MaskLayer::from_fn(w, h, |x, y| bits[(y * w + x) as usize])
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let x = rng.random_range(0.0..90.0);
    let y = rng.random_range(0.0..90.0);
    BoundingBox::new(x, y, x + rng.random_range(0.5..40.0), y + rng.random_range(0.5..40.0)).unwrap()
}

fn scene_pipeline(cfg: &BackendConfig) -> Pipeline {
    Pipeline::new(cfg.build().unwrap(), Arc::new(TemplateRegistry::builtin()))
}

fn run_fixture(cfg: &BackendConfig, params: SessionParams) -> (tempfile::TempDir, PipelineSession) {
    let dir = tempfile::tempdir().unwrap();
    let p = scene_pipeline(cfg);
    let mut s = p.create_session(dir.path(), fixtures::scene_image(), params).unwrap();
    p.run_all(&mut s).unwrap();
    (dir, s)
}

fn fixture_variants() -> Vec<(&'static str, BackendConfig, SessionParams)> {
    let scene = fixtures::scene_backend_config();
    let only_right = BackendConfig {
        detector: DetectorConfig::Fixture {
            detections: fixtures::scene_detections().into_iter().filter(|d| d.label == HandLabel::NonStandard).collect(),
        },
        ..scene.clone()
    };
    let none = BackendConfig {
        detector: DetectorConfig::Fixture { detections: Vec::new() },
        ..scene.clone()
    };
    let d = SessionParams::default;
    vec![
        ("default", scene.clone(), d()),
        ("include-standard", scene.clone(), SessionParams { include_standard_hands: true, ..d() }),
        ("fist-back expanded", scene.clone(), SessionParams { template_name: "fist-back".into(), template_expand_ratio: 0.5, ..d() }),
        ("no bbox expansion", scene.clone(), SessionParams { bbox_expand_ratio: 0.0, ..d() }),
        ("wide bbox expansion", scene.clone(), SessionParams { bbox_expand_ratio: 1.0, seed: 9, ..d() }),
        ("undetected hand", only_right, SessionParams { include_undetected_hand: true, ..d() }),
        ("no detections", none.clone(), d()),
        ("no detections, undetected", none, SessionParams { include_undetected_hand: true, ..d() }),
    ]
}

fn mask_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let u = |a: &MaskLayer, b: &MaskLayer| union_masks(&[a.clone(), b.clone()]).unwrap();
    for i in 0..500 {
        let (a, b, c) = (random_mask(&mut rng, 13, 9), random_mask(&mut rng, 13, 9), random_mask(&mut rng, 13, 9));
        ensure!(u(&a, &a) == a, "idempotence fails on case {i}");
        ensure!(u(&a, &b) == u(&b, &a), "commutativity fails on case {i}");
        ensure!(u(&u(&a, &b), &c) == u(&a, &u(&b, &c)), "associativity fails on case {i}");
    }
    let grid: Vec<f64> = (0..=16).map(|i| i as f64 * 0.25).collect();
    for i in 0..300 {
        let b = random_box(&mut rng);
        for w in grid.windows(2) {
            let small = expand_box(&b, w[0], 128, 128).unwrap();
            let big = expand_box(&b, w[1], 128, 128).unwrap();
            ensure!(big.contains_box(&small), "box {i}: ratio {} not monotone", w[1]);
            ensure!(
                rasterize_box(&big, 128, 128).is_superset_of(&rasterize_box(&small, 128, 128)),
                "box {i}: raster at ratio {} not monotone",
                w[1]
            );
        }
    }
    for _ in 0..500 {
        let (x, y, w, h) = (rng.random_range(0..60u32), rng.random_range(0..60u32), rng.random_range(1..40u32), rng.random_range(1..40u32));
        let b = BoundingBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap();
        ensure!(rasterize_box(&b, 100, 100).count_on() == (w * h) as usize, "area mismatch for {b:?}");
    }
    let variants = fixture_variants();
    for (name, cfg, params) in &variants {
        let (_dir, s) = run_fixture(cfg, params.clone());
        ensure!(s.status(StepName::Control).is_done(), "{name}: control step {:?}", s.status(StepName::Control));
        let bbox = s.load_mask(StepName::Detect, "bbox_mask.png").map_err(|e| e.to_string())?;
        let union = s.load_mask(StepName::Control, "union_mask.png").map_err(|e| e.to_string())?;
        ensure!(union.is_superset_of(&bbox), "{name}: union mask misses bbox pixels");
    }
    Ok(format!("500 union triples, 300 boxes x 16 ratio steps, 500 integer boxes, {} fixture runs", variants.len()))
}

// ---------------------------------------------------------------- fid

fn gaussian(rng: &mut ChaCha8Rng, n: usize, mean: &[f64]) -> Vec<Vec<f64>> {
    (0..n).map(|_| mean.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect()).collect()
}

fn random_distribution(rng: &mut ChaCha8Rng, d: usize) -> FeatureDistribution {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    FeatureDistribution {
        mean: DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0)),
        covariance: &a * a.transpose() + DMatrix::identity(d, d) * 0.05,
        sample_count: 100,
    }
}

fn fid_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_self = 0.0f64;
    let mut worst_sym = 0.0f64;
    for _ in 0..100 {
        let p = random_distribution(&mut rng, 6);
        let q = random_distribution(&mut rng, 6);
        worst_self = worst_self.max(fid(&p, &p).map_err(|e| e.to_string())?);
        let (pq, qp) = (fid(&p, &q).map_err(|e| e.to_string())?, fid(&q, &p).map_err(|e| e.to_string())?);
        worst_sym = worst_sym.max((pq - qp).abs() / pq.max(1.0));
    }
    ensure!(worst_self <= 1e-6, "fid(D, D) reached {worst_self}");
    ensure!(worst_sym <= 1e-8, "asymmetry reached {worst_sym}");
    let g = |m: &[f64], c: f64| FeatureDistribution {
        mean: DVector::from_column_slice(m),
        covariance: DMatrix::identity(m.len(), m.len()) * c,
        sample_count: 10,
    };
    let mean_case = fid(&g(&[0.0, 0.0], 1.0), &g(&[3.0, 4.0], 1.0)).map_err(|e| e.to_string())?;
    ensure!((mean_case - 25.0).abs() <= 1e-8, "mean shift case gave {mean_case}");
    let trace_case = fid(&g(&[0.0, 0.0], 4.0), &g(&[0.0, 0.0], 1.0)).map_err(|e| e.to_string())?;
    ensure!((trace_case - 2.0).abs() <= 1e-8, "trace case gave {trace_case}");
    let d = 8;
    let a = feature_distribution(&gaussian(&mut rng, 500, &vec![0.0; d])).map_err(|e| e.to_string())?;
    let b = feature_distribution(&gaussian(&mut rng, 500, &vec![1.0; d])).map_err(|e| e.to_string())?;
    let mc = fid(&a, &b).map_err(|e| e.to_string())?;
    ensure!((mc - d as f64).abs() <= 0.1 * d as f64, "Monte Carlo estimate {mc} vs {d}");
    within(
        Duration::from_secs(30),
        started,
        format!("self <= {worst_self:.1e}, asymmetry <= {worst_sym:.1e}, Monte Carlo {mc:.3} vs {d}"),
    )
}

// ---------------------------------------------------------------- matching

fn label(rng: &mut ChaCha8Rng) -> HandLabel {
    if rng.random_bool(0.5) { HandLabel::NonStandard } else { HandLabel::Standard }
}

fn small_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let x = rng.random_range(0.0..10.0);
    let y = rng.random_range(0.0..10.0);
    BoundingBox::new(x, y, x + rng.random_range(1.0..8.0), y + rng.random_range(1.0..8.0)).unwrap()
}

fn matching_oracle() -> Outcome {
    let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
    let b = BoundingBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
    let v = iou(&a, &b);
    ensure!((v - 1.0 / 7.0).abs() <= 1e-12, "iou {v} vs 1/7");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut by_shape = BTreeMap::new();
    let mut checked = 0;
    while checked < 5000 {
        let (np, ng) = (rng.random_range(0..=3usize), rng.random_range(0..=3usize));
        let preds: Vec<HandDetection> = (0..np)
            .map(|_| HandDetection { bbox: small_box(&mut rng), label: label(&mut rng), confidence: rng.random_range(0.0..1.0) })
            .collect();
        let gts: Vec<GroundTruth> = (0..ng).map(|_| GroundTruth { label: label(&mut rng), bbox: small_box(&mut rng) }).collect();
        let mut ious: Vec<f64> = preds.iter().flat_map(|p| gts.iter().map(|g| iou(&p.bbox, &g.bbox))).filter(|v| *v > 0.0).collect();
        ious.sort_by(f64::total_cmp);
        if ious.windows(2).any(|w| w[0] == w[1]) {
            continue;
        }
        let t = rng.random_range(0.05..0.6);
        let greedy = greedy_match(&preds, &gts, t).map_err(|e| e.to_string())?;
        let exact = exhaustive_match(&preds, &gts, t).map_err(|e| e.to_string())?;
        ensure!(greedy == exact, "greedy {greedy:?} vs exhaustive {exact:?} at t={t}");
        *by_shape.entry((np, ng)).or_insert(0) += 1;
        checked += 1;
    }
    ensure!(by_shape.len() == 16, "only {} of 16 instance shapes covered", by_shape.len());
    Ok(format!("iou 1/7 exact; greedy == exhaustive on {checked} instances over all 16 shapes up to 3x3"))
}

// ---------------------------------------------------------------- determinism

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn hashes(dir: &Path) -> BTreeMap<String, String> {
    tree(dir)
        .into_iter()
        .map(|(k, v)| (k, Sha256::digest(&v).iter().map(|b| format!("{b:02x}")).collect()))
        .collect()
}

fn end_to_end_determinism() -> Outcome {
    let started = Instant::now();
    let cfg = fixtures::scene_backend_config();
    let params = SessionParams { seed: 42, include_standard_hands: true, ..SessionParams::default() };
    let (d1, s1) = run_fixture(&cfg, params.clone());
    let (d2, _) = run_fixture(&cfg, params);
    ensure!(StepName::ALL.iter().all(|s| s1.status(*s).is_done()), "a step did not finish");
    let (t1, t2) = (tree(d1.path()), tree(d2.path()));
    ensure!(t1 == t2, "two runs differ in {:?}", t1.keys().filter(|k| t1.get(*k) != t2.get(*k)).collect::<Vec<_>>());

    let p = scene_pipeline(&cfg);
    let mut s = p.open_session(d1.path()).map_err(|e| e.to_string())?;
    let before = tree(d1.path());
    let upstream: Vec<String> = [StepName::Detect, StepName::Pose]
        .iter()
        .flat_map(|st| s.record(*st).artifacts.values().cloned().collect::<Vec<_>>())
        .collect();
    let overrides = handmend_core::pipeline::ParamOverrides { template_name: Some("fist-back".into()), ..Default::default() };
    p.update_params(&mut s, &overrides).map_err(|e| e.to_string())?;
    let reports = p.rerun_from(&mut s, StepName::Control).map_err(|e| e.to_string())?;
    ensure!(reports.len() == 3 && reports.iter().all(|r| r.status == StepStatus::Done), "rerun reports {reports:?}");
    let after = tree(d1.path());
    for f in &upstream {
        ensure!(before.get(f) == after.get(f), "upstream artifact {f} changed");
    }
    for st in [StepName::Detect, StepName::Pose] {
        ensure!(s.record(st).runs == 1, "{st} was rerun");
    }
    let old: ControlArtifact = serde_json::from_slice(&before[&s1.record(StepName::Control).artifacts["placements.json"]]).unwrap();
    let new: ControlArtifact = s.load_json(StepName::Control, "placements.json").map_err(|e| e.to_string())?;
    ensure!(old.template == "opened-palm" && new.template == "fist-back", "template change not applied");
    within(Duration::from_secs(20), started, format!("{} files identical; {} upstream files untouched by rerun", t1.len(), upstream.len()))
}

// ---------------------------------------------------------------- prompts

fn prompt_fidelity() -> Outcome {
    const HEAD: &str = "opened-palm, hand, realskin, photorealistic, RAW photo, best quality, realistic, photo-realistic, masterpiece, an extremely delicate and beautiful, extremely detailed, 2k wallpaper, Amazing, finely detailed, 8k wallpaper, huge filesize, ultra-detailed, high-res, and extremely detailed";
    const NEGATIVE: &str = "deformed, EasyNegative, paintings, sketches, (worst quality:2), (low quality:2), (normal quality:2), low-res, normal quality, and (monochrome).";
    const INSTRUCTION: &str = "Turn the deformed hand into normal";
    let bundle = PromptBundle::default();
    let positive = bundle.positive_for("opened-palm");
    ensure!(positive.starts_with(HEAD), "positive prompt is {positive:?}");
    ensure!(bundle.negative == NEGATIVE, "negative prompt is {:?}", bundle.negative);
    ensure!(bundle.instruction == INSTRUCTION, "instruction is {:?}", bundle.instruction);
    ensure!(bundle.instruction_variants.len() == 50, "{} variants", bundle.instruction_variants.len());
    ensure!(
        bundle.instruction_variants[0] == "Transform the distorted hand into a regular shape",
        "variant 0 is {:?}",
        bundle.instruction_variants[0]
    );
    let (_dir, s) = run_fixture(&fixtures::scene_backend_config(), SessionParams::default());
    let inpaint: InpaintArtifact = s.load_json(StepName::ControlNet, "controlnet.json").map_err(|e| e.to_string())?;
    ensure!(inpaint.prompt.starts_with(HEAD), "pipeline sent {:?}", inpaint.prompt);
    ensure!(inpaint.negative_prompt == NEGATIVE, "pipeline sent negative {:?}", inpaint.negative_prompt);
    let edit: EditArtifact = s.load_json(StepName::Ip2p, "ip2p.json").map_err(|e| e.to_string())?;
    ensure!(edit.instruction == INSTRUCTION, "pipeline sent instruction {:?}", edit.instruction);
    Ok("prompt head, negative prompt, instruction and 50 variants byte-exact, also as sent by the pipeline".into())
}

// ---------------------------------------------------------------- dataset

fn dataset_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..500 {
        let n = rng.random_range(1..80usize);
        let mut pairs: Vec<ImagePair> = (0..n)
            .map(|i| ImagePair { original_id: format!("img{i:04}"), redrawn_id: format!("img{i:04}_r") })
            .collect();
        let fraction = rng.random_range(0.01..0.99);
        let seed: u64 = rng.random();
        let (train, test) = split_pairs(&pairs, fraction, seed).map_err(|e| e.to_string())?;
        ensure!(train.len() == (fraction * n as f64).round() as usize, "case {case}: train size {}", train.len());
        let mut all: Vec<ImagePair> = train.iter().chain(&test).cloned().collect();
        all.sort();
        ensure!(all == pairs, "case {case}: split is not a partition");
        pairs.shuffle(&mut rng);
        ensure!(split_pairs(&pairs, fraction, seed).map_err(|e| e.to_string())? == (train, test), "case {case}: order dependent");
    }
    for case in 0..500 {
        let hands: Vec<HandAnnotation> = (0..rng.random_range(0..8))
            .map(|_| HandAnnotation {
                label: label(&mut rng),
                cx: rng.random_range(0.0..=1.0),
                cy: rng.random_range(0.0..=1.0),
                w: rng.random_range(0.001..=1.0),
                h: rng.random_range(0.001..=1.0),
                confidence: rng.random_bool(0.5).then(|| rng.random_range(0.0..=1.0)),
            })
            .collect();
        let text = serialize_annotations(&hands);
        let parsed = parse_annotations(&text).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(parsed.len() == hands.len(), "case {case}: lost lines");
        ensure!(serialize_annotations(&parsed) == text, "case {case}: not canonical");
    }
    let ten: Vec<ImagePair> = (0..10).map(|i| ImagePair { original_id: format!("o{i}"), redrawn_id: format!("r{i}") }).collect();
    let (train, test) = split_pairs(&ten, 0.9, 0).map_err(|e| e.to_string())?;
    ensure!((train.len(), test.len()) == (9, 1), "10 pairs split {}/{}", train.len(), test.len());
    Ok("500 split partitions, 500 annotation round trips, 10 pairs split 9/1".into())
}

// ---------------------------------------------------------------- service

struct GatedDetector {
    gate: Mutex<Receiver<()>>,
}

impl Detector for GatedDetector {
    fn name(&self) -> &str {
        "gated"
    }

    fn detect(&self, _: &image::RgbImage) -> Result<Vec<HandDetection>, BackendError> {
        self.gate.lock().unwrap().recv().map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(fixtures::scene_detections())
    }
}

async fn call(app: &Router, method: Method, uri: &str, body: impl Into<Body>) -> (StatusCode, Bytes) {
    let req = Request::builder().method(method).uri(uri).body(body.into()).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes())
}

fn json(b: &Bytes) -> Value {
    serde_json::from_slice(b).unwrap()
}

fn app_for(pipeline: Pipeline, root: &Path, tweak: impl FnOnce(&mut ServiceConfig)) -> Router {
    let mut config = ServiceConfig { artifact_root: root.to_path_buf(), ..ServiceConfig::default() };
    tweak(&mut config);
    router(Arc::new(AppState::new(pipeline, config)))
}

async fn service_checks(cli_dir: &Path) -> Outcome {
    let png = raster::encode_rgb_png(&fixtures::scene_image()).unwrap();
    let cfg = fixtures::scene_backend_config();

    let root = tempfile::tempdir().unwrap();
    let app = app_for(scene_pipeline(&cfg), root.path(), |_| {});
    let (st, body) = call(&app, Method::POST, "/sessions?seed=3&include_standard_hands=true", png.clone()).await;
    ensure!(st == StatusCode::CREATED, "create gave {st}");
    let id = json(&body)["id"].as_str().unwrap().to_string();
    let (st, _) = call(&app, Method::POST, &format!("/sessions/{id}/steps/control"), Body::empty()).await;
    ensure!(st == StatusCode::CONFLICT, "control before pose gave {st}");
    let (st, _) = call(&app, Method::POST, &format!("/sessions/{id}/steps/detect"), Body::empty()).await;
    ensure!(st == StatusCode::OK, "detect gave {st}");
    let api_hashes = hashes(&root.path().join(&id));
    let cli_hashes = hashes(cli_dir);
    ensure!(
        api_hashes == cli_hashes,
        "CLI and API artifacts differ: {:?}",
        api_hashes.keys().filter(|k| api_hashes.get(*k) != cli_hashes.get(*k)).collect::<Vec<_>>()
    );

    let (tx, rx) = channel();
    let mut backends = cfg.build().unwrap();
    backends.detector = Arc::new(GatedDetector { gate: Mutex::new(rx) });
    let busy_root = tempfile::tempdir().unwrap();
    let app = app_for(Pipeline::new(backends, Arc::new(TemplateRegistry::builtin())), busy_root.path(), |_| {});
    let (_, body) = call(&app, Method::POST, "/sessions", png.clone()).await;
    let id = json(&body)["id"].as_str().unwrap().to_string();
    let (st, _) = call(&app, Method::POST, &format!("/sessions/{id}/steps/detect?async=true"), Body::empty()).await;
    ensure!(st == StatusCode::ACCEPTED, "async detect gave {st}");
    let (st, _) = call(&app, Method::POST, &format!("/sessions/{id}/steps/detect"), Body::empty()).await;
    ensure!(st == StatusCode::LOCKED, "second step on a busy session gave {st}");
    for _ in 0..5 {
        tx.send(()).unwrap();
    }
    let mut idle = false;
    for _ in 0..500 {
        let (_, body) = call(&app, Method::GET, &format!("/sessions/{id}"), Body::empty()).await;
        if json(&body)["running"].is_null() {
            idle = true;
            break;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    ensure!(idle, "busy session never finished");

    let ttl_root = tempfile::tempdir().unwrap();
    let app = app_for(scene_pipeline(&cfg), ttl_root.path(), |c| c.session_ttl = Duration::from_millis(300));
    let (_, body) = call(&app, Method::POST, "/sessions", png).await;
    let id = json(&body)["id"].as_str().unwrap().to_string();
    tokio::time::sleep(Duration::from_millis(450)).await;
    let (st, _) = call(&app, Method::GET, &format!("/sessions/{id}"), Body::empty()).await;
    ensure!(st == StatusCode::GONE, "expired session gave {st}");

    Ok(format!("{} artifact hashes equal between CLI and API; 409, 423 and 410 observed", api_hashes.len()))
}

fn service_conformance() -> Outcome {
    let work = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_handmend");
    let demo = Command::new(bin).args(["demo", "--out"]).arg(work.path()).output().map_err(|e| e.to_string())?;
    ensure!(demo.status.success(), "demo failed: {}", String::from_utf8_lossy(&demo.stderr));
    let session = work.path().join("cli-session");
    let run = Command::new(bin)
        .arg("run")
        .arg("--image")
        .arg(work.path().join("scene.png"))
        .arg("--backend-config")
        .arg(work.path().join("backends.toml"))
        .args(["--seed", "3", "--include-standard", "--out"])
        .arg(&session)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(run.status.success(), "CLI run failed: {}", String::from_utf8_lossy(&run.stdout));
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(service_checks(&session))
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("table reproduction", table_reproduction),
        ("geometry suite", geometry_suite),
        ("rotation convention pin", rotation_pin),
        ("mask suite", mask_suite),
        ("FID oracle", fid_oracle),
        ("IOU/matching oracle", matching_oracle),
        ("end-to-end determinism", end_to_end_determinism),
        ("prompt fidelity", prompt_fidelity),
        ("dataset suite", dataset_suite),
        ("service conformance", service_conformance),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
