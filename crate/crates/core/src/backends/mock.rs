//! Deterministic in-process backends. Outputs depend only on the inputs and
//! the seed, so whole pipeline runs are reproducible without model engines.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{
    BackendError, BodyPoseResult, ControlInpainter, Detector, HandDetection, InpaintRequest,
    InstructionInpainter, PoseEstimator,
};
use crate::raster::blend;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

fn pixel_hash(key: u64, x: u32, y: u32) -> u64 {
    splitmix64(key ^ splitmix64(((x as u64) << 32) | y as u64))
}

/// Returns a configured detection list for every image.
#[derive(Debug, Clone, Default)]
pub struct FixtureDetector {
    pub detections: Vec<HandDetection>,
}

impl FixtureDetector {
    pub fn new(detections: Vec<HandDetection>) -> Self {
        Self { detections }
    }
}

impl Detector for FixtureDetector {
    fn name(&self) -> &str {
        "fixture"
    }

    fn detect(&self, _image: &RgbImage) -> Result<Vec<HandDetection>, BackendError> {
        Ok(self.detections.clone())
    }
}

/// Returns a configured skeleton, or reports that nobody is in the picture.
#[derive(Debug, Clone, Default)]
pub struct FixturePose {
    pub person: Option<BodyPoseResult>,
}

impl FixturePose {
    pub fn new(person: Option<BodyPoseResult>) -> Self {
        Self { person }
    }
}

impl PoseEstimator for FixturePose {
    fn name(&self) -> &str {
        "fixture"
    }

    fn estimate(&self, _image: &RgbImage) -> Result<BodyPoseResult, BackendError> {
        self.person.clone().ok_or(BackendError::NoPersonDetected)
    }
}

/// Fills the masked region with a seeded noise pattern tinted by the control
/// image; unmasked pixels are copied from the input.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashPatternInpainter;

impl ControlInpainter for HashPatternInpainter {
    fn name(&self) -> &str {
        "hash-pattern"
    }

    fn inpaint(&self, request: &InpaintRequest) -> Result<RgbImage, BackendError> {
        request.validate()?;
        let control = request
            .control
            .as_ref()
            .ok_or_else(|| BackendError::InvalidRequest("control image required".into()))?;
        let mut key = splitmix64(request.seed) ^ fnv1a(request.prompt.as_bytes());
        if let Some(neg) = &request.negative_prompt {
            key = splitmix64(key ^ fnv1a(neg.as_bytes()));
        }
        let mut out = request.image.clone();
        for (x, y, px) in out.enumerate_pixels_mut() {
            if !request.mask.get(x, y) {
                continue;
            }
            let h = pixel_hash(key, x, y);
            let noise = Rgb([h as u8, (h >> 8) as u8, (h >> 16) as u8]);
            let guide = *control.0.get_pixel(x, y);
            let base = blend(*px, noise, 96);
            *px = if guide == Rgb([0, 0, 0]) {
                base
            } else {
                blend(base, guide, 200)
            };
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum EditMode {
    Identity,
    /// Adds seeded per-channel offsets in `[-amplitude, amplitude]`.
    Perturb { amplitude: u8 },
}

#[derive(Debug, Clone, Copy)]
pub struct MockEditor {
    pub mode: EditMode,
}

impl MockEditor {
    pub fn identity() -> Self {
        Self {
            mode: EditMode::Identity,
        }
    }

    pub fn perturb(amplitude: u8) -> Self {
        Self {
            mode: EditMode::Perturb { amplitude },
        }
    }
}

impl InstructionInpainter for MockEditor {
    fn name(&self) -> &str {
        match self.mode {
            EditMode::Identity => "identity",
            EditMode::Perturb { .. } => "perturb",
        }
    }

    fn edit(&self, image: &RgbImage, instruction: &str, seed: u64) -> Result<RgbImage, BackendError> {
        if instruction.trim().is_empty() {
            return Err(BackendError::InvalidRequest("instruction must be non-empty".into()));
        }
        match self.mode {
            EditMode::Identity => Ok(image.clone()),
            EditMode::Perturb { amplitude } => {
                let key = splitmix64(seed) ^ fnv1a(instruction.as_bytes());
                let span = 2 * amplitude as u64 + 1;
                let mut out = image.clone();
                for (x, y, px) in out.enumerate_pixels_mut() {
                    let h = pixel_hash(key, x, y);
                    for c in 0..3 {
                        let delta = ((h >> (c * 16)) % span) as i32 - amplitude as i32;
                        px[c] = (px[c] as i32 + delta).clamp(0, 255) as u8;
                    }
                }
                Ok(out)
            }
        }
    }
}
