//! Planar geometry for hand landmarks: chirality and template placement.
//!
//! All coordinates are image pixels with the origin at the top-left corner,
//! x growing to the right and y growing downwards.
//!
//! A placement maps template coordinates into image coordinates in four
//! stages: an optional horizontal mirror about the template's centerline,
//! a uniform scale about the template origin, a translation that lands the
//! template wrist on the hand wrist, and a rotation about that wrist.
//!
//! Rotation directions follow the sign rule used to pick them: with
//! `s = v1.x * v1'.y - v1.y * v1'.x`, `s > 0` selects [`RotationDirection::Clockwise`]
//! and anything else [`RotationDirection::Counterclockwise`]. Numerically a
//! counterclockwise rotation by `θ` applies `[[cos θ, -sin θ], [sin θ, cos θ]]`
//! to `(x, y)`, and clockwise applies the same matrix with `-θ`. With this
//! pairing the chosen rotation always carries the template base vector onto
//! the hand base vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Threshold on the normalized cross product below which chirality is undecidable.
pub const EPS_CROSS: f64 = 1e-9;
/// Minimum usable base-vector length, in pixels.
pub const EPS_LEN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("landmark coordinates must be finite")]
    NonFinite,
    #[error("wrist and base landmark coincide")]
    CoincidentBase,
    #[error("chirality is indeterminate (normalized cross product {0:e})")]
    IndeterminateChirality(f64),
    #[error("base vector too short (|v1| = {hand:e}, |v1'| = {template:e})")]
    DegenerateBaseVector { hand: f64, template: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn sub(self, other: Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(self, other: Point2) -> Point2 {
        Point2::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Scalar 2D cross product `self.x * other.y - self.y * other.x`.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        self.sub(other).norm()
    }
}

impl From<(f64, f64)> for Point2 {
    fn from((x, y): (f64, f64)) -> Self {
        Point2::new(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandmarkSource {
    PoseEstimate,
    TemplateAnnotation,
}

/// The four hand keypoints: `a` is the wrist, `c` ends the base vector
/// `v1 = c - a`, and `b`, `d` span the cross vector `v2 = d - b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandLandmarkSet {
    pub a: Point2,
    pub b: Point2,
    pub c: Point2,
    pub d: Point2,
    pub source: LandmarkSource,
}

impl HandLandmarkSet {
    pub fn new(
        a: Point2,
        b: Point2,
        c: Point2,
        d: Point2,
        source: LandmarkSource,
    ) -> Result<Self, GeometryError> {
        let set = Self { a, b, c, d, source };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.points().iter().all(|p| p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if self.a == self.c {
            return Err(GeometryError::CoincidentBase);
        }
        Ok(())
    }

    pub fn points(&self) -> [Point2; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn base_vector(&self) -> Point2 {
        self.c.sub(self.a)
    }

    pub fn cross_vector(&self) -> Point2 {
        self.d.sub(self.b)
    }

    /// Applies `f` to all four points, keeping the source tag.
    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Self {
        Self {
            a: f(self.a),
            b: f(self.b),
            c: f(self.c),
            d: f(self.d),
            source: self.source,
        }
    }

    /// Axis-aligned bounds `(min, max)` of the four points.
    pub fn bounds(&self) -> (Point2, Point2) {
        let pts = self.points();
        let mut lo = pts[0];
        let mut hi = pts[0];
        for p in &pts[1..] {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Chirality {
    #[serde(rename = "CW")]
    Clockwise,
    #[serde(rename = "CCW")]
    CounterClockwise,
}

impl Chirality {
    pub fn opposite(self) -> Self {
        match self {
            Chirality::Clockwise => Chirality::CounterClockwise,
            Chirality::CounterClockwise => Chirality::Clockwise,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Chirality::Clockwise => "CW",
            Chirality::CounterClockwise => "CCW",
        }
    }
}

impl std::str::FromStr for Chirality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CW" => Ok(Chirality::Clockwise),
            "CCW" => Ok(Chirality::CounterClockwise),
            other => Err(format!("unknown chirality `{other}` (expected CW or CCW)")),
        }
    }
}

/// Classifies the hand by the sign of `v1 × v2`: negative is CW, positive CCW.
pub fn compute_chirality(landmarks: &HandLandmarkSet) -> Result<Chirality, GeometryError> {
    let v1 = landmarks.base_vector();
    let v2 = landmarks.cross_vector();
    let (n1, n2) = (v1.norm(), v2.norm());
    if !(n1 > EPS_LEN && n2 > EPS_LEN) {
        return Err(GeometryError::IndeterminateChirality(0.0));
    }
    let normalized = v1.cross(v2) / (n1 * n2);
    if !normalized.is_finite() || normalized.abs() <= EPS_CROSS {
        return Err(GeometryError::IndeterminateChirality(normalized));
    }
    Ok(if normalized < 0.0 {
        Chirality::Clockwise
    } else {
        Chirality::CounterClockwise
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationDirection {
    Clockwise,
    Counterclockwise,
    None,
}

/// Template landmarks plus the template's own chirality and raster width,
/// which is all placement needs to know about a template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateFrame {
    pub landmarks: HandLandmarkSet,
    pub chirality: Chirality,
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementTransform {
    pub flipped: bool,
    /// Vertical line `x = flip_axis` used for the mirror (template half-width).
    pub flip_axis: f64,
    pub scale: f64,
    pub translation: Point2,
    pub rotation_angle: f64,
    pub rotation_direction: RotationDirection,
    pub pivot: Point2,
}

impl PlacementTransform {
    pub const IDENTITY: PlacementTransform = PlacementTransform {
        flipped: false,
        flip_axis: 0.0,
        scale: 1.0,
        translation: Point2::ORIGIN,
        rotation_angle: 0.0,
        rotation_direction: RotationDirection::None,
        pivot: Point2::ORIGIN,
    };

    /// Rotation angle with sign: positive is counterclockwise in the numeric
    /// `(x, y)` frame.
    pub fn signed_angle(&self) -> f64 {
        match self.rotation_direction {
            RotationDirection::Clockwise => -self.rotation_angle,
            RotationDirection::Counterclockwise => self.rotation_angle,
            RotationDirection::None => 0.0,
        }
    }

    /// Multiplies the scale by `factor` about the pivot, keeping the pivot fixed.
    pub fn with_extra_scale(mut self, factor: f64) -> Self {
        self.translation = self
            .pivot
            .sub(self.pivot.sub(self.translation).scale(factor));
        self.scale *= factor;
        self
    }

    pub fn inverse_apply(&self, point: Point2) -> Point2 {
        let (sin, cos) = (-self.signed_angle()).sin_cos();
        let rel = point.sub(self.pivot);
        let unrotated = Point2::new(cos * rel.x - sin * rel.y, sin * rel.x + cos * rel.y)
            .add(self.pivot);
        let unscaled = unrotated.sub(self.translation).scale(1.0 / self.scale);
        if self.flipped {
            Point2::new(2.0 * self.flip_axis - unscaled.x, unscaled.y)
        } else {
            unscaled
        }
    }
}

/// Mirrors `p` about the vertical line `x = axis`.
pub fn mirror_x(p: Point2, axis: f64) -> Point2 {
    Point2::new(2.0 * axis - p.x, p.y)
}

/// Applies flip, scale, translation and rotation in that order.
pub fn apply_placement(transform: &PlacementTransform, point: Point2) -> Point2 {
    let flipped = if transform.flipped {
        mirror_x(point, transform.flip_axis)
    } else {
        point
    };
    let moved = flipped.scale(transform.scale).add(transform.translation);
    let (sin, cos) = transform.signed_angle().sin_cos();
    let rel = moved.sub(transform.pivot);
    Point2::new(cos * rel.x - sin * rel.y, sin * rel.x + cos * rel.y).add(transform.pivot)
}

/// Solves the transform that places `template` onto `hand`.
pub fn solve_placement(
    hand: &HandLandmarkSet,
    hand_chirality: Chirality,
    template: &TemplateFrame,
) -> Result<PlacementTransform, GeometryError> {
    hand.validate()?;
    template.landmarks.validate()?;

    let flipped = hand_chirality != template.chirality;
    let flip_axis = template.width / 2.0;
    let tpl = if flipped {
        template.landmarks.map(|p| mirror_x(p, flip_axis))
    } else {
        template.landmarks
    };

    let v1 = hand.base_vector();
    let v1t = tpl.base_vector();
    let (n1, n1t) = (v1.norm(), v1t.norm());
    if !(n1 > EPS_LEN && n1t > EPS_LEN) {
        return Err(GeometryError::DegenerateBaseVector {
            hand: n1,
            template: n1t,
        });
    }

    let scale = n1 / n1t;
    let translation = hand.a.sub(tpl.a.scale(scale));

    let cos = (v1.dot(v1t) / (n1 * n1t)).clamp(-1.0, 1.0);
    let rotation_angle = cos.acos();
    let sign = v1.x * v1t.y - v1.y * v1t.x;
    let rotation_direction = if rotation_angle == 0.0 {
        RotationDirection::None
    } else if sign > 0.0 {
        RotationDirection::Clockwise
    } else {
        RotationDirection::Counterclockwise
    };

    Ok(PlacementTransform {
        flipped,
        flip_axis,
        scale,
        translation,
        rotation_angle,
        rotation_direction,
        pivot: hand.a,
    })
}
