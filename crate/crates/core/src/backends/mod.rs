//! Interfaces to the four inference engines the pipeline drives: hand
//! detection, body pose estimation, control-guided inpainting and
//! instruction-driven editing.
//!
//! Every interface ships with a deterministic in-process mock ([`mock`]) and
//! can be served out of process through the framed protocol in [`wire`]
//! ([`process`]). Adapter-side normalization shared by all real engines lives
//! in [`contract`].

pub mod config;
pub mod contract;
pub mod engine;
pub mod mock;
pub mod process;
pub mod wire;

use std::sync::{Arc, Mutex};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{HandLandmarkSet, Point2};
use crate::masking::{BoundingBox, ControlImage, MaskLayer};

pub use config::BackendConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("inference failed: {0}")]
    InferenceFailure(String),
    #[error("no person detected")]
    NoPersonDetected,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Stable class name, used on the wire and in HTTP error bodies.
    pub fn class(&self) -> &'static str {
        match self {
            BackendError::Unavailable(_) => "BackendUnavailable",
            BackendError::InferenceFailure(_) => "InferenceFailure",
            BackendError::NoPersonDetected => "NoPersonDetected",
            BackendError::InvalidRequest(_) => "InvalidRequest",
            BackendError::Config(_) => "Config",
        }
    }

    pub fn from_class(class: &str, message: String) -> Self {
        match class {
            "BackendUnavailable" => BackendError::Unavailable(message),
            "NoPersonDetected" => BackendError::NoPersonDetected,
            "InvalidRequest" => BackendError::InvalidRequest(message),
            "Config" => BackendError::Config(message),
            _ => BackendError::InferenceFailure(message),
        }
    }

    pub fn is_recoverable(&self) -> bool {
        matches!(self, BackendError::NoPersonDetected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum HandLabel {
    Standard = 0,
    NonStandard = 1,
}

impl TryFrom<u8> for HandLabel {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(HandLabel::Standard),
            1 => Ok(HandLabel::NonStandard),
            other => Err(format!("hand label must be 0 or 1, got {other}")),
        }
    }
}

impl From<HandLabel> for u8 {
    fn from(l: HandLabel) -> u8 {
        l as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandDetection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: HandLabel,
    pub confidence: f64,
}

impl HandDetection {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.bbox.is_valid() {
            return Err(BackendError::InvalidRequest(format!(
                "invalid detection box {:?}",
                self.bbox
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(BackendError::InvalidRequest(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// Body keypoint names, in engine index order.
pub const POSE_LANDMARK_NAMES: [&str; 33] = [
    "nose",
    "left_eye_inner",
    "left_eye",
    "left_eye_outer",
    "right_eye_inner",
    "right_eye",
    "right_eye_outer",
    "left_ear",
    "right_ear",
    "mouth_left",
    "mouth_right",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_pinky",
    "right_pinky",
    "left_index",
    "right_index",
    "left_thumb",
    "right_thumb",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
    "left_heel",
    "right_heel",
    "left_foot_index",
    "right_foot_index",
];

/// Skeleton edges between body keypoints.
pub const POSE_CONNECTIONS: [(usize, usize); 35] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 7),
    (0, 4),
    (4, 5),
    (5, 6),
    (6, 8),
    (9, 10),
    (11, 12),
    (11, 13),
    (13, 15),
    (15, 17),
    (15, 19),
    (15, 21),
    (17, 19),
    (12, 14),
    (14, 16),
    (16, 18),
    (16, 20),
    (16, 22),
    (18, 20),
    (11, 23),
    (12, 24),
    (23, 24),
    (23, 25),
    (24, 26),
    (25, 27),
    (26, 28),
    (27, 29),
    (28, 30),
    (29, 31),
    (30, 32),
    (27, 31),
    (28, 32),
];

/// Keypoint indices `(wrist, thumb, index, pinky)` feeding the hand points
/// `(a, b, c, d)`.
pub const LEFT_HAND_KEYPOINTS: [usize; 4] = [15, 21, 19, 17];
pub const RIGHT_HAND_KEYPOINTS: [usize; 4] = [16, 22, 20, 18];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseLandmark {
    pub x: f64,
    pub y: f64,
    pub visibility: f64,
}

impl PoseLandmark {
    pub fn point(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandSide {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseHand {
    pub side: HandSide,
    pub landmarks: HandLandmarkSet,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyPoseResult {
    /// Either empty or exactly 33 keypoints in [`POSE_LANDMARK_NAMES`] order.
    #[serde(default)]
    pub landmarks: Vec<PoseLandmark>,
    #[serde(default)]
    pub hands: Vec<PoseHand>,
}

impl BodyPoseResult {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.landmarks.is_empty() && self.landmarks.len() != POSE_LANDMARK_NAMES.len() {
            return Err(BackendError::InvalidRequest(format!(
                "pose must carry {} landmarks, got {}",
                POSE_LANDMARK_NAMES.len(),
                self.landmarks.len()
            )));
        }
        for hand in &self.hands {
            hand.landmarks
                .validate()
                .map_err(|e| BackendError::InvalidRequest(format!("{:?} hand: {e}", hand.side)))?;
        }
        Ok(())
    }

    /// One line per keypoint: `index name x y visibility`.
    pub fn keypoints_string(&self) -> String {
        let mut out = String::new();
        for (i, (lm, name)) in self.landmarks.iter().zip(POSE_LANDMARK_NAMES).enumerate() {
            out.push_str(&format!(
                "{i} {name} {:.2} {:.2} {:.3}\n",
                lm.x, lm.y, lm.visibility
            ));
        }
        for hand in &self.hands {
            let l = &hand.landmarks;
            out.push_str(&format!(
                "{:?} hand a=({:.2}, {:.2}) b=({:.2}, {:.2}) c=({:.2}, {:.2}) d=({:.2}, {:.2})\n",
                hand.side, l.a.x, l.a.y, l.b.x, l.b.y, l.c.x, l.c.y, l.d.x, l.d.y
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct InpaintRequest {
    pub image: RgbImage,
    pub mask: MaskLayer,
    pub control: Option<ControlImage>,
    pub prompt: String,
    pub negative_prompt: Option<String>,
    pub seed: u64,
}

impl InpaintRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        let dims = self.image.dimensions();
        if self.mask.dims() != dims {
            return Err(BackendError::InvalidRequest(format!(
                "mask {:?} does not match image {:?}",
                self.mask.dims(),
                dims
            )));
        }
        if let Some(c) = &self.control {
            if c.0.dimensions() != dims {
                return Err(BackendError::InvalidRequest(format!(
                    "control {:?} does not match image {:?}",
                    c.0.dimensions(),
                    dims
                )));
            }
        }
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("prompt must be non-empty".into()));
        }
        Ok(())
    }
}

pub trait Detector: Send + Sync {
    fn name(&self) -> &str;
    /// Whether concurrent calls on one instance are allowed.
    fn reentrant(&self) -> bool {
        true
    }
    fn detect(&self, image: &RgbImage) -> Result<Vec<HandDetection>, BackendError>;
}

pub trait PoseEstimator: Send + Sync {
    fn name(&self) -> &str;
    fn reentrant(&self) -> bool {
        true
    }
    fn estimate(&self, image: &RgbImage) -> Result<BodyPoseResult, BackendError>;
}

pub trait ControlInpainter: Send + Sync {
    fn name(&self) -> &str;
    fn reentrant(&self) -> bool {
        true
    }
    fn inpaint(&self, request: &InpaintRequest) -> Result<RgbImage, BackendError>;
}

pub trait InstructionInpainter: Send + Sync {
    fn name(&self) -> &str;
    fn reentrant(&self) -> bool {
        true
    }
    fn edit(&self, image: &RgbImage, instruction: &str, seed: u64) -> Result<RgbImage, BackendError>;
}

/// Serializes calls into a backend that does not declare itself reentrant.
pub struct Serialized<B: ?Sized> {
    gate: Mutex<()>,
    inner: Arc<B>,
}

impl<B: ?Sized> Serialized<B> {
    pub fn new(inner: Arc<B>) -> Self {
        Self {
            gate: Mutex::new(()),
            inner,
        }
    }

    fn enter(&self) -> std::sync::MutexGuard<'_, ()> {
        self.gate.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl<B: Detector + ?Sized> Detector for Serialized<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn detect(&self, image: &RgbImage) -> Result<Vec<HandDetection>, BackendError> {
        let _g = self.enter();
        self.inner.detect(image)
    }
}

impl<B: PoseEstimator + ?Sized> PoseEstimator for Serialized<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn estimate(&self, image: &RgbImage) -> Result<BodyPoseResult, BackendError> {
        let _g = self.enter();
        self.inner.estimate(image)
    }
}

impl<B: ControlInpainter + ?Sized> ControlInpainter for Serialized<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn inpaint(&self, request: &InpaintRequest) -> Result<RgbImage, BackendError> {
        let _g = self.enter();
        self.inner.inpaint(request)
    }
}

impl<B: InstructionInpainter + ?Sized> InstructionInpainter for Serialized<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn edit(&self, image: &RgbImage, instruction: &str, seed: u64) -> Result<RgbImage, BackendError> {
        let _g = self.enter();
        self.inner.edit(image, instruction, seed)
    }
}

/// The full set of engines one pipeline runs against.
#[derive(Clone)]
pub struct Backends {
    pub detector: Arc<dyn Detector>,
    pub pose: Arc<dyn PoseEstimator>,
    pub control: Arc<dyn ControlInpainter>,
    pub instruction: Arc<dyn InstructionInpainter>,
}

impl Backends {
    /// Wraps every non-reentrant backend so calls on it are serialized.
    pub fn new(
        detector: Arc<dyn Detector>,
        pose: Arc<dyn PoseEstimator>,
        control: Arc<dyn ControlInpainter>,
        instruction: Arc<dyn InstructionInpainter>,
    ) -> Self {
        Self {
            detector: if detector.reentrant() {
                detector
            } else {
                Arc::new(Serialized::new(detector))
            },
            pose: if pose.reentrant() {
                pose
            } else {
                Arc::new(Serialized::new(pose))
            },
            control: if control.reentrant() {
                control
            } else {
                Arc::new(Serialized::new(control))
            },
            instruction: if instruction.reentrant() {
                instruction
            } else {
                Arc::new(Serialized::new(instruction))
            },
        }
    }

    /// All four in-tree mocks with empty fixtures.
    pub fn mock() -> Self {
        BackendConfig::default()
            .build()
            .expect("default mock configuration always builds")
    }
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends")
            .field("detector", &self.detector.name())
            .field("pose", &self.pose.name())
            .field("control", &self.control.name())
            .field("instruction", &self.instruction.name())
            .finish()
    }
}
