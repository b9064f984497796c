//! Normalization every engine adapter applies to raw engine output before it
//! reaches the pipeline.

use std::cmp::Ordering;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, BodyPoseResult, HandDetection, HandLabel, HandSide, PoseHand, PoseLandmark,
    LEFT_HAND_KEYPOINTS, POSE_LANDMARK_NAMES, RIGHT_HAND_KEYPOINTS,
};
use crate::geometry::{HandLandmarkSet, LandmarkSource};
use crate::masking::{BoundingBox, MaskLayer};

/// Minimum keypoint visibility for a hand to be reported.
pub const HAND_VISIBILITY_THRESHOLD: f64 = 0.5;

/// A detector box in pixel coordinates, possibly extending past the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub label: u8,
    pub confidence: f64,
}

/// Confidence descending, then `(y1, x1)` ascending.
pub fn detection_order(a: &HandDetection, b: &HandDetection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
}

/// Clamps boxes into the image and sorts. Boxes with no area left inside the
/// image are dropped.
pub fn normalize_detections(
    raw: &[RawDetection],
    width: u32,
    height: u32,
) -> Result<Vec<HandDetection>, BackendError> {
    let mut out = Vec::with_capacity(raw.len());
    for r in raw {
        let label = HandLabel::try_from(r.label).map_err(BackendError::InferenceFailure)?;
        if !r.confidence.is_finite() {
            return Err(BackendError::InferenceFailure(format!(
                "non-finite confidence {}",
                r.confidence
            )));
        }
        let unclamped = BoundingBox {
            x1: r.x1.min(r.x2),
            y1: r.y1.min(r.y2),
            x2: r.x1.max(r.x2),
            y2: r.y1.max(r.y2),
        };
        if let Some(bbox) = unclamped.clamp_to(width as f64, height as f64) {
            out.push(HandDetection {
                bbox,
                label,
                confidence: r.confidence.clamp(0.0, 1.0),
            });
        }
    }
    out.sort_by(detection_order);
    Ok(out)
}

/// Converts engine keypoints given in `[0, 1]` image fractions to pixels and
/// derives the hand landmark sets.
pub fn pose_from_normalized(
    raw: &[PoseLandmark],
    width: u32,
    height: u32,
) -> Result<BodyPoseResult, BackendError> {
    if raw.is_empty() {
        return Err(BackendError::NoPersonDetected);
    }
    if raw.len() != POSE_LANDMARK_NAMES.len() {
        return Err(BackendError::InferenceFailure(format!(
            "expected {} pose landmarks, got {}",
            POSE_LANDMARK_NAMES.len(),
            raw.len()
        )));
    }
    let landmarks: Vec<PoseLandmark> = raw
        .iter()
        .map(|lm| PoseLandmark {
            x: lm.x * width as f64,
            y: lm.y * height as f64,
            visibility: lm.visibility,
        })
        .collect();
    let hands = hands_from_landmarks(&landmarks, HAND_VISIBILITY_THRESHOLD);
    Ok(BodyPoseResult { landmarks, hands })
}

/// Builds left/right hand sets from body keypoints whose visibility clears
/// `min_visibility`.
pub fn hands_from_landmarks(landmarks: &[PoseLandmark], min_visibility: f64) -> Vec<PoseHand> {
    if landmarks.len() != POSE_LANDMARK_NAMES.len() {
        return Vec::new();
    }
    [
        (HandSide::Left, LEFT_HAND_KEYPOINTS),
        (HandSide::Right, RIGHT_HAND_KEYPOINTS),
    ]
    .into_iter()
    .filter_map(|(side, ix)| {
        let pts = ix.map(|i| landmarks[i]);
        if pts.iter().any(|p| p.visibility < min_visibility) {
            return None;
        }
        let [a, b, c, d] = pts.map(|p| p.point());
        HandLandmarkSet::new(a, b, c, d, LandmarkSource::PoseEstimate)
            .ok()
            .map(|landmarks| PoseHand { side, landmarks })
    })
    .collect()
}

/// Keeps `original` wherever `mask` is off and `generated` where it is on.
pub fn composite_through_mask(
    original: &RgbImage,
    generated: &RgbImage,
    mask: &MaskLayer,
) -> Result<RgbImage, BackendError> {
    if generated.dimensions() != original.dimensions() {
        return Err(BackendError::InferenceFailure(format!(
            "engine returned {:?} for a {:?} input",
            generated.dimensions(),
            original.dimensions()
        )));
    }
    let mut out = original.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if mask.get(x, y) {
            *px = *generated.get_pixel(x, y);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn out_of_range_box_is_clamped_not_rejected() {
        let raw = [RawDetection {
            x1: -12.0,
            y1: 40.0,
            x2: 30.0,
            y2: 140.0,
            label: 1,
            confidence: 0.7,
        }];
        let d = normalize_detections(&raw, 100, 100).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox, BoundingBox::new(0.0, 40.0, 30.0, 100.0).unwrap());
        assert_eq!(d[0].label, HandLabel::NonStandard);
    }

    #[test]
    fn detections_sorted_with_tie_break() {
        let mk = |x1: f64, y1: f64, confidence| RawDetection {
            x1,
            y1,
            x2: x1 + 5.0,
            y2: y1 + 5.0,
            label: 0,
            confidence,
        };
        let d = normalize_detections(
            &[mk(10.0, 10.0, 0.5), mk(1.0, 10.0, 0.5), mk(0.0, 30.0, 0.9), mk(50.0, 2.0, 0.5)],
            100,
            100,
        )
        .unwrap();
        let order: Vec<_> = d.iter().map(|d| (d.bbox.x1, d.bbox.y1)).collect();
        assert_eq!(order, vec![(0.0, 30.0), (50.0, 2.0), (1.0, 10.0), (10.0, 10.0)]);
    }

    #[test]
    fn bad_label_is_an_inference_failure() {
        let raw = [RawDetection {
            x1: 0.0,
            y1: 0.0,
            x2: 1.0,
            y2: 1.0,
            label: 4,
            confidence: 0.2,
        }];
        assert!(matches!(
            normalize_detections(&raw, 10, 10),
            Err(BackendError::InferenceFailure(_))
        ));
    }

    #[test]
    fn normalized_pose_is_scaled_to_pixels() {
        let raw: Vec<PoseLandmark> = (0..33)
            .map(|i| PoseLandmark {
                x: i as f64 / 40.0,
                y: 1.0 - i as f64 / 40.0,
                visibility: 0.9,
            })
            .collect();
        let pose = pose_from_normalized(&raw, 200, 100).unwrap();
        assert_eq!(pose.landmarks.len(), 33);
        assert_eq!(pose.landmarks[10].x, 10.0 / 40.0 * 200.0);
        assert_eq!(pose.landmarks[10].y, (1.0 - 10.0 / 40.0) * 100.0);
        // Collinear keypoints still form valid landmark sets (a != c).
        assert_eq!(pose.hands.len(), 2);
        assert_eq!(pose.hands[0].landmarks.a, pose.landmarks[15].point());
        assert_eq!(pose.hands[1].landmarks.c, pose.landmarks[20].point());
    }

    #[test]
    fn empty_pose_means_no_person() {
        assert_eq!(pose_from_normalized(&[], 10, 10), Err(BackendError::NoPersonDetected));
    }

    #[test]
    fn low_visibility_hand_is_omitted() {
        let mut lm: Vec<PoseLandmark> = (0..33)
            .map(|i| PoseLandmark {
                x: i as f64,
                y: (i * i) as f64,
                visibility: 1.0,
            })
            .collect();
        lm[RIGHT_HAND_KEYPOINTS[2]].visibility = 0.1;
        let hands = hands_from_landmarks(&lm, HAND_VISIBILITY_THRESHOLD);
        assert_eq!(hands.len(), 1);
        assert_eq!(hands[0].side, HandSide::Left);
    }

    #[test]
    fn composite_restores_unmasked_pixels() {
        let original = RgbImage::from_pixel(3, 2, Rgb([1, 2, 3]));
        let generated = RgbImage::from_pixel(3, 2, Rgb([9, 9, 9]));
        let mask = MaskLayer::from_fn(3, 2, |x, _| x == 1);
        let out = composite_through_mask(&original, &generated, &mask).unwrap();
        assert_eq!(*out.get_pixel(0, 0), Rgb([1, 2, 3]));
        assert_eq!(*out.get_pixel(1, 1), Rgb([9, 9, 9]));
        assert!(composite_through_mask(&original, &RgbImage::new(2, 2), &mask).is_err());
    }
}
