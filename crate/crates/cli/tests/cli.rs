use std::path::Path;
use std::process::{Command, Output};

use handmend_core::backends::config::{BackendConfig, ControlInpaintConfig, DetectorConfig, InstructionInpaintConfig, PoseConfig, ProcessConfig};
use handmend_core::{fixtures, Pipeline, SessionParams, StepName};

fn handmend(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handmend")).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_then_rerun_a_step() {
    let work = tempfile::tempdir().unwrap();
    assert!(handmend(&["demo", "--out", p(work.path())]).status.success());
    let image = work.path().join("scene.png");
    let config = work.path().join("backends.toml");
    let session = work.path().join("s");
    let out = handmend(&["run", "--image", p(&image), "--backend-config", p(&config), "--out", p(&session), "--seed", "4"]);
    assert!(out.status.success(), "{}", text(&out));
    assert!(session.join("final.r1.png").is_file());

    let out = handmend(&["step", p(&session), "control", "--template", "fist-back", "--only", "--backend-config", p(&config)]);
    assert!(out.status.success(), "{}", text(&out));
    assert!(session.join("control.r2.png").is_file());
    let p2 = Pipeline::from_config(&BackendConfig::load(&config).unwrap()).unwrap();
    let s = p2.open_session(&session).unwrap();
    assert_eq!(s.params().template_name, "fist-back");
    assert!(!s.status(StepName::ControlNet).is_done());

    let out = handmend(&["step", p(&session), "ip2p", "--backend-config", p(&config)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("controlnet"), "{}", text(&out));

    let again = handmend(&["run", "--image", p(&image), "--out", p(&session)]);
    assert_eq!(again.status.code(), Some(2));
}

#[test]
fn failed_step_sets_exit_code_one() {
    let work = tempfile::tempdir().unwrap();
    assert!(handmend(&["demo", "--out", p(work.path())]).status.success());
    let no_person = BackendConfig {
        pose: PoseConfig::Fixture { person: None },
        ..fixtures::scene_backend_config()
    };
    let config = work.path().join("no-person.toml");
    std::fs::write(&config, no_person.to_toml().unwrap()).unwrap();
    let image = work.path().join("scene.png");
    let out = handmend(&["run", "--image", p(&image), "--backend-config", p(&config), "--out", p(&work.path().join("s"))]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
    assert!(text(&out).contains("NoPersonDetected"));
}

#[test]
fn eval_detect_prints_table_and_metrics() {
    let pred = tempfile::tempdir().unwrap();
    let gt = tempfile::tempdir().unwrap();
    std::fs::write(gt.path().join("a.txt"), "1 0.5 0.5 0.2 0.2\n").unwrap();
    std::fs::write(pred.path().join("a.txt"), "1 0.5 0.5 0.2 0.19 0.9\n").unwrap();
    let metrics = pred.path().join("metrics.txt");
    let out = handmend(&["eval", "detect", "--pred", p(pred.path()), "--gt", p(gt.path()), "--iou", "0.9,0.96", "--metrics", p(&metrics)]);
    assert!(out.status.success(), "{}", text(&out));
    let table = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(table.contains("0.90") && table.contains("0.96"), "{table}");
    let m = std::fs::read_to_string(metrics).unwrap();
    assert!(m.lines().any(|l| l.replace(' ', "").contains("tp=1")), "{m}");
}

#[test]
fn eval_fid_of_a_set_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..4u8 {
        let img = image::RgbImage::from_fn(16, 16, |x, y| image::Rgb([x as u8 * 9 + i * 20, y as u8 * 5, i * 60]));
        img.save(dir.path().join(format!("{i}.png"))).unwrap();
    }
    let out = handmend(&["eval", "fid", "--a", p(dir.path()), "--b", p(dir.path())]);
    assert!(out.status.success(), "{}", text(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FID        0.0000"));
    let bad = handmend(&["eval", "fid", "--a", p(dir.path()), "--b", p(dir.path()), "--extractor", "inception"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn dataset_pairs_and_split() {
    let root = tempfile::tempdir().unwrap();
    let (orig, red, ann) = (root.path().join("o"), root.path().join("r"), root.path().join("a"));
    for d in [&orig, &red, &ann] {
        std::fs::create_dir(d).unwrap();
    }
    let png = handmend_core::raster::encode_rgb_png(&image::RgbImage::new(4, 4)).unwrap();
    for i in 0..10 {
        std::fs::write(orig.join(format!("img{i}.png")), &png).unwrap();
        std::fs::write(red.join(format!("img{i}_redrawn.png")), &png).unwrap();
        std::fs::write(ann.join(format!("img{i}.txt")), "0 0.5 0.5 0.2 0.2\n").unwrap();
        std::fs::write(ann.join(format!("img{i}_redrawn.txt")), "1 0.5 0.5 0.2 0.2\n").unwrap();
    }
    std::fs::write(orig.join("lonely.png"), &png).unwrap();
    let index = root.path().join("pairs.tsv");
    let out = handmend(&["dataset", "pairs", "--originals", p(&orig), "--redrawn", p(&red), "--annotations", p(&ann), "--out", p(&index)]);
    assert!(out.status.success(), "{}", text(&out));
    assert!(text(&out).contains("lonely"));
    assert_eq!(std::fs::read_to_string(&index).unwrap().lines().count(), 10);

    let split = root.path().join("split");
    let out = handmend(&["dataset", "split", "--index", p(&index), "--seed", "3", "--out", p(&split)]);
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(std::fs::read_to_string(split.join("train.txt")).unwrap().lines().count(), 9);
    assert_eq!(std::fs::read_to_string(split.join("test.txt")).unwrap().lines().count(), 1);
}

#[test]
fn process_backends_through_the_mock_engine() {
    let work = tempfile::tempdir().unwrap();
    let engine_cfg = work.path().join("engine.toml");
    std::fs::write(&engine_cfg, fixtures::scene_backend_config().to_toml().unwrap()).unwrap();
    let process = || ProcessConfig {
        command: vec![
            env!("CARGO_BIN_EXE_handmend").into(),
            "mock-engine".into(),
            "--backend-config".into(),
            p(&engine_cfg).into(),
        ],
        reentrant: false,
        options: serde_json::Value::Null,
    };
    let cfg = BackendConfig {
        detector: DetectorConfig::Process(process()),
        pose: PoseConfig::Process(process()),
        control_inpaint: ControlInpaintConfig::Process(process()),
        instruction_inpaint: InstructionInpaintConfig::Process(process()),
        templates: None,
    };
    let pipeline = Pipeline::from_config(&cfg).unwrap();
    let mut remote = pipeline
        .create_session(&work.path().join("remote"), fixtures::scene_image(), SessionParams::default())
        .unwrap();
    let reports = pipeline.run_all(&mut remote).unwrap();
    assert!(reports.iter().all(|r| r.status.is_done()), "{reports:?}");

    let local = Pipeline::from_config(&fixtures::scene_backend_config()).unwrap();
    let mut direct = local
        .create_session(&work.path().join("local"), fixtures::scene_image(), SessionParams::default())
        .unwrap();
    local.run_all(&mut direct).unwrap();
    let read = |s: &handmend_core::PipelineSession, name: &str| std::fs::read(s.resolve_artifact(name).unwrap()).unwrap();
    for name in ["bbox_mask.png", "union_mask.png", "final.png"] {
        assert_eq!(read(&remote, name), read(&direct, name), "{name}");
    }
}
