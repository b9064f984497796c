//! A small synthetic scene with matching detector and pose fixtures, so the
//! whole pipeline can run end to end without model engines.

use image::{Rgb, RgbImage};

use crate::backends::config::{BackendConfig, DetectorConfig, PoseConfig};
use crate::backends::contract::{hands_from_landmarks, HAND_VISIBILITY_THRESHOLD};
use crate::backends::{BodyPoseResult, HandDetection, HandLabel, PoseLandmark, POSE_CONNECTIONS};
use crate::masking::BoundingBox;
use crate::raster::{draw_dot, draw_line};

pub const SCENE_WIDTH: u32 = 256;
pub const SCENE_HEIGHT: u32 = 256;

/// Body keypoints in engine order, pixel coordinates.
const BODY: [(f64, f64); 33] = [
    (128.0, 40.0),
    (122.0, 34.0),
    (119.0, 34.0),
    (116.0, 35.0),
    (134.0, 34.0),
    (137.0, 34.0),
    (140.0, 35.0),
    (112.0, 40.0),
    (144.0, 40.0),
    (123.0, 50.0),
    (133.0, 50.0),
    (100.0, 80.0),
    (156.0, 80.0),
    (85.0, 120.0),
    (168.0, 115.0),
    (80.0, 160.0),
    (170.0, 150.0),
    (66.0, 134.0),
    (184.0, 124.0),
    (78.0, 128.0),
    (172.0, 118.0),
    (92.0, 138.0),
    (158.0, 128.0),
    (108.0, 170.0),
    (148.0, 170.0),
    (105.0, 210.0),
    (150.0, 210.0),
    (104.0, 242.0),
    (152.0, 242.0),
    (100.0, 248.0),
    (156.0, 248.0),
    (112.0, 250.0),
    (144.0, 250.0),
];

pub fn scene_landmarks() -> Vec<PoseLandmark> {
    BODY.iter()
        .map(|&(x, y)| PoseLandmark {
            x,
            y,
            visibility: 0.95,
        })
        .collect()
}

pub fn scene_pose() -> BodyPoseResult {
    let landmarks = scene_landmarks();
    let hands = hands_from_landmarks(&landmarks, HAND_VISIBILITY_THRESHOLD);
    BodyPoseResult { landmarks, hands }
}

/// One non-standard hand (the CCW hand on the image right) and one
/// standard hand (the CW hand on the image left).
pub fn scene_detections() -> Vec<HandDetection> {
    vec![
        HandDetection {
            bbox: BoundingBox::new(150.0, 108.0, 196.0, 162.0).expect("valid box"),
            label: HandLabel::NonStandard,
            confidence: 0.91,
        },
        HandDetection {
            bbox: BoundingBox::new(58.0, 118.0, 102.0, 170.0).expect("valid box"),
            label: HandLabel::Standard,
            confidence: 0.84,
        },
    ]
}

/// Background gradient with a stick figure and a blob on each hand.
pub fn scene_image() -> RgbImage {
    let mut img = RgbImage::from_fn(SCENE_WIDTH, SCENE_HEIGHT, |x, y| {
        Rgb([
            (40 + x * 120 / SCENE_WIDTH) as u8,
            (70 + y * 100 / SCENE_HEIGHT) as u8,
            (150 - (x + y) * 60 / (SCENE_WIDTH + SCENE_HEIGHT)) as u8,
        ])
    });
    let skin = Rgb([224, 172, 138]);
    let cloth = Rgb([60, 60, 120]);
    let pt = |i: usize| (BODY[i].0 as i64, BODY[i].1 as i64);
    for (i, j) in POSE_CONNECTIONS {
        for off in -2..=2 {
            let (a, b) = (pt(i), pt(j));
            draw_line(&mut img, (a.0 + off, a.1), (b.0 + off, b.1), cloth);
        }
    }
    draw_dot(&mut img, 128, 40, 14, skin);
    for hand in [[15, 17, 19, 21], [16, 18, 20, 22]] {
        let (cx, cy) = hand
            .iter()
            .fold((0i64, 0i64), |acc, &i| (acc.0 + pt(i).0, acc.1 + pt(i).1));
        draw_dot(&mut img, cx / 4, cy / 4, 13, skin);
        for i in &hand[1..] {
            draw_line(&mut img, pt(hand[0]), pt(*i), skin);
        }
    }
    img
}

/// Mock backends primed with the scene fixtures.
pub fn scene_backend_config() -> BackendConfig {
    BackendConfig {
        detector: DetectorConfig::Fixture {
            detections: scene_detections(),
        },
        pose: PoseConfig::Fixture {
            person: Some(scene_pose()),
        },
        ..BackendConfig::default()
    }
}
