//! Repairing malformed hands in generated images.
//!
//! The crate covers the whole restoration chain: hand detection and pose
//! backends ([`backends`]), template placement ([`geometry`]), mask
//! composition ([`masking`]), the five-step session pipeline ([`pipeline`]),
//! plus dataset tooling ([`dataset`]) and detection/FID evaluation
//! ([`evaluation`]).

pub mod backends;
pub mod dataset;
pub mod evaluation;
pub mod fixtures;
pub mod geometry;
pub mod masking;
pub mod pipeline;
pub mod prompts;
pub mod raster;
pub mod template;

pub use geometry::{
    apply_placement, compute_chirality, solve_placement, Chirality, HandLandmarkSet, Point2,
    PlacementTransform, RotationDirection,
};
pub use masking::{BoundingBox, ControlImage, MaskLayer};
pub use prompts::PromptBundle;
pub use template::{TemplateRegistry, TemplateSpec};
pub use pipeline::{Pipeline, PipelineSession, SessionParams, StepName, StepStatus};
