//! Visualization rasters: detection boxes, skeleton overlay and the
//! control-step composite.

use image::{Rgb, RgbImage};

use crate::backends::{BodyPoseResult, HandDetection, HandLabel, POSE_CONNECTIONS};
use crate::backends::contract::HAND_VISIBILITY_THRESHOLD;
use crate::masking::{ControlImage, MaskLayer};
use crate::raster::{blend, draw_dot, draw_line, draw_rect_outline, put_checked};

const RED: Rgb<u8> = Rgb([230, 40, 40]);
const GREEN: Rgb<u8> = Rgb([40, 200, 70]);
const BONE: Rgb<u8> = Rgb([240, 240, 240]);
const JOINT: Rgb<u8> = Rgb([255, 140, 0]);
const HAND: Rgb<u8> = Rgb([255, 220, 0]);
const UNION_EDGE: Rgb<u8> = Rgb([255, 0, 255]);
const BOX_EDGE: Rgb<u8> = Rgb([0, 200, 255]);

fn round(v: f64) -> i64 {
    v.round() as i64
}

/// Non-standard boxes in red, standard ones in green.
pub fn draw_detections(image: &RgbImage, detections: &[HandDetection]) -> RgbImage {
    let mut out = image.clone();
    for d in detections {
        let color = match d.label {
            HandLabel::NonStandard => RED,
            HandLabel::Standard => GREEN,
        };
        let b = d.bbox;
        for inset in 0..2 {
            draw_rect_outline(
                &mut out,
                round(b.x1) + inset,
                round(b.y1) + inset,
                round(b.x2) - 1 - inset,
                round(b.y2) - 1 - inset,
                color,
            );
        }
    }
    out
}

pub fn draw_skeleton(out: &mut RgbImage, pose: &BodyPoseResult) {
    let lm = &pose.landmarks;
    let visible = |i: usize| lm.get(i).is_some_and(|p| p.visibility >= HAND_VISIBILITY_THRESHOLD);
    for (i, j) in POSE_CONNECTIONS {
        if visible(i) && visible(j) {
            draw_line(
                out,
                (round(lm[i].x), round(lm[i].y)),
                (round(lm[j].x), round(lm[j].y)),
                BONE,
            );
        }
    }
    for p in lm.iter().filter(|p| p.visibility >= HAND_VISIBILITY_THRESHOLD) {
        draw_dot(out, round(p.x), round(p.y), 2, JOINT);
    }
    for hand in &pose.hands {
        let l = &hand.landmarks;
        let pt = |p: crate::geometry::Point2| (round(p.x), round(p.y));
        draw_line(out, pt(l.a), pt(l.c), HAND);
        draw_line(out, pt(l.b), pt(l.d), HAND);
        for p in l.points() {
            draw_dot(out, round(p.x), round(p.y), 2, HAND);
        }
    }
}

pub fn skeleton_overlay(image: &RgbImage, pose: Option<&BodyPoseResult>) -> RgbImage {
    let mut out = image.clone();
    if let Some(p) = pose {
        draw_skeleton(&mut out, p);
    }
    out
}

fn outline(out: &mut RgbImage, mask: &MaskLayer, color: Rgb<u8>) {
    for (x, y) in mask.boundary() {
        put_checked(out, x as i64, y as i64, color);
    }
}

/// Input with the placed templates blended in, the skeleton on top and both
/// masks outlined.
pub fn control_composite(
    image: &RgbImage,
    pose: Option<&BodyPoseResult>,
    control: &ControlImage,
    template_mask: &MaskLayer,
    bbox_mask: &MaskLayer,
    union_mask: &MaskLayer,
) -> RgbImage {
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if template_mask.get(x, y) {
            *px = blend(*px, *control.0.get_pixel(x, y), 170);
        }
    }
    if let Some(p) = pose {
        draw_skeleton(&mut out, p);
    }
    outline(&mut out, union_mask, UNION_EDGE);
    outline(&mut out, bbox_mask, BOX_EDGE);
    out
}
