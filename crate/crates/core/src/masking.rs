//! Binary restore masks: box expansion, rasterization, template placement
//! and union composition.
//!
//! Rasterization uses pixel centers: pixel `(i, j)` is covered by a region
//! when its center `(i + 0.5, j + 0.5)` lies inside it, with the lower edges
//! inclusive and the upper edges exclusive.

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{apply_placement, PlacementTransform, Point2};
use crate::template::TemplateSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaskError {
    #[error("invalid bounding box ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("box has zero area after clamping to the image")]
    EmptyAfterClamp,
    #[error("expand ratio must be finite and non-negative, got {0}")]
    InvalidRatio(f64),
    #[error("placed template does not intersect the image")]
    TemplateFullyOutside,
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("no masks to combine")]
    Empty,
    #[error("mask image is not binary (value {0})")]
    NotBinary(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, MaskError> {
        let b = Self { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(MaskError::InvalidBox { x1, y1, x2, y2 })
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2 {
        Point2::new((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x1 && p.x <= self.x2 && p.y >= self.y1 && p.y <= self.y2
    }

    /// `true` when the boxes share a region of positive area.
    pub fn overlaps(&self, other: &BoundingBox) -> bool {
        self.x1.max(other.x1) < self.x2.min(other.x2)
            && self.y1.max(other.y1) < self.y2.min(other.y2)
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        other.x1 >= self.x1 && other.y1 >= self.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    /// Clamps to `[0, w] x [0, h]`; returns `None` when nothing of positive area remains.
    pub fn clamp_to(&self, w: f64, h: f64) -> Option<BoundingBox> {
        let b = BoundingBox {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        };
        b.is_valid().then_some(b)
    }

    /// Grows width and height by `1 + ratio` about the center, without clamping.
    pub fn scaled_about_center(&self, ratio: f64) -> BoundingBox {
        let c = self.center();
        let hw = self.width() * (1.0 + ratio) / 2.0;
        let hh = self.height() * (1.0 + ratio) / 2.0;
        BoundingBox {
            x1: c.x - hw,
            y1: c.y - hh,
            x2: c.x + hw,
            y2: c.y + hh,
        }
    }
}

pub fn expand_box(
    bbox: &BoundingBox,
    ratio: f64,
    image_w: u32,
    image_h: u32,
) -> Result<BoundingBox, MaskError> {
    if !bbox.is_valid() {
        return Err(MaskError::InvalidBox {
            x1: bbox.x1,
            y1: bbox.y1,
            x2: bbox.x2,
            y2: bbox.y2,
        });
    }
    if !(ratio.is_finite() && ratio >= 0.0) {
        return Err(MaskError::InvalidRatio(ratio));
    }
    let grown = if ratio == 0.0 {
        *bbox
    } else {
        bbox.scaled_about_center(ratio)
    };
    grown
        .clamp_to(image_w as f64, image_h as f64)
        .ok_or(MaskError::EmptyAfterClamp)
}

/// Row-major binary raster; `true` marks a pixel to restore.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskLayer {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl MaskLayer {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn filled(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.idx(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        let i = self.idx(x, y);
        self.bits[i] = on;
    }

    pub fn count_on(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// `true` when every on-pixel of `other` is also on here.
    pub fn is_superset_of(&self, other: &MaskLayer) -> bool {
        self.dims() == other.dims()
            && self.bits.iter().zip(&other.bits).all(|(a, b)| *a || !*b)
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    /// Reads a 0/255 single-channel mask; any other value is rejected.
    pub fn from_gray(img: &GrayImage) -> Result<Self, MaskError> {
        let mut m = Self::new(img.width(), img.height());
        for (x, y, px) in img.enumerate_pixels() {
            match px[0] {
                0 => {}
                255 => m.set(x, y, true),
                other => return Err(MaskError::NotBinary(other)),
            }
        }
        Ok(m)
    }

    /// Pixels on this mask whose 4-neighbourhood leaves the mask.
    pub fn boundary(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) {
                    continue;
                }
                let edge = x == 0
                    || y == 0
                    || x + 1 == self.width
                    || y + 1 == self.height
                    || !self.get(x - 1, y)
                    || !self.get(x + 1, y)
                    || !self.get(x, y - 1)
                    || !self.get(x, y + 1);
                if edge {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Black canvas carrying the placed template pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlImage(pub RgbImage);

impl ControlImage {
    pub fn black(width: u32, height: u32) -> Self {
        Self(RgbImage::new(width, height))
    }

    pub fn raster(&self) -> &RgbImage {
        &self.0
    }

    /// Copies `other` over `self` wherever `mask` is on.
    pub fn overlay(&mut self, other: &ControlImage, mask: &MaskLayer) {
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) {
                    self.0.put_pixel(x, y, *other.0.get_pixel(x, y));
                }
            }
        }
    }
}

fn center_span(lo: f64, hi: f64, limit: u32) -> std::ops::Range<u32> {
    // i + 0.5 >= lo and i + 0.5 < hi
    let start = (lo - 0.5).ceil().max(0.0);
    let end = (hi - 0.5).ceil().clamp(0.0, limit as f64);
    if start >= end {
        0..0
    } else {
        start as u32..end as u32
    }
}

pub fn rasterize_box(bbox: &BoundingBox, image_w: u32, image_h: u32) -> MaskLayer {
    let mut m = MaskLayer::new(image_w, image_h);
    for y in center_span(bbox.y1, bbox.y2, image_h) {
        for x in center_span(bbox.x1, bbox.x2, image_w) {
            m.set(x, y, true);
        }
    }
    m
}

fn bilinear(src: &RgbImage, sx: f64, sy: f64) -> Rgb<u8> {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let fetch = |x: f64, y: f64| -> [f64; 3] {
        if x < 0.0 || y < 0.0 || x >= src.width() as f64 || y >= src.height() as f64 {
            [0.0; 3]
        } else {
            let p = src.get_pixel(x as u32, y as u32);
            [p[0] as f64, p[1] as f64, p[2] as f64]
        }
    };
    let p00 = fetch(x0, y0);
    let p10 = fetch(x0 + 1.0, y0);
    let p01 = fetch(x0, y0 + 1.0);
    let p11 = fetch(x0 + 1.0, y0 + 1.0);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - fx) + p10[c] * fx;
        let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Places the template raster under `transform`; returns the control image
/// and the mask of the transformed template rectangle.
pub fn rasterize_template(
    template: &TemplateSpec,
    transform: &PlacementTransform,
    image_w: u32,
    image_h: u32,
) -> Result<(ControlImage, MaskLayer), MaskError> {
    let (tw, th) = (template.raster.width() as f64, template.raster.height() as f64);
    let corners = [
        Point2::new(0.0, 0.0),
        Point2::new(tw, 0.0),
        Point2::new(0.0, th),
        Point2::new(tw, th),
    ]
    .map(|p| apply_placement(transform, p));
    let (mut lo, mut hi) = (corners[0], corners[0]);
    for c in &corners[1..] {
        lo = Point2::new(lo.x.min(c.x), lo.y.min(c.y));
        hi = Point2::new(hi.x.max(c.x), hi.y.max(c.y));
    }

    let mut control = ControlImage::black(image_w, image_h);
    let mut mask = MaskLayer::new(image_w, image_h);
    for y in center_span(lo.y, hi.y, image_h) {
        for x in center_span(lo.x, hi.x, image_w) {
            let src = transform.inverse_apply(Point2::new(x as f64 + 0.5, y as f64 + 0.5));
            if src.x >= 0.0 && src.x < tw && src.y >= 0.0 && src.y < th {
                mask.set(x, y, true);
                control
                    .0
                    .put_pixel(x, y, bilinear(&template.raster, src.x - 0.5, src.y - 0.5));
            }
        }
    }
    if mask.is_empty() {
        return Err(MaskError::TemplateFullyOutside);
    }
    Ok((control, mask))
}

pub fn union_masks(masks: &[MaskLayer]) -> Result<MaskLayer, MaskError> {
    let first = masks.first().ok_or(MaskError::Empty)?;
    let mut out = first.clone();
    for m in &masks[1..] {
        if m.dims() != out.dims() {
            return Err(MaskError::DimensionMismatch(
                out.width, out.height, m.width, m.height,
            ));
        }
        for (o, b) in out.bits.iter_mut().zip(&m.bits) {
            *o |= *b;
        }
    }
    Ok(out)
}
