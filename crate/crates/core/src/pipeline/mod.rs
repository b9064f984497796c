//! The five-step restoration session: detect, pose, control image, control
//! inpaint, instruction inpaint.
//!
//! A session lives in one directory. Every step writes its artifacts there as
//! soon as it finishes, named `<artifact>.r<run>.<ext>` so earlier runs stay
//! readable, and then rewrites `manifest.json`. Steps read their inputs back
//! from the directory, which makes a reopened session resumable from any
//! completed step.

mod render;
mod steps;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::config::BackendConfig;
use crate::backends::{BackendError, Backends, BodyPoseResult, HandDetection, HandLabel, PoseHand};
use crate::geometry::{Chirality, PlacementTransform};
use crate::masking::{BoundingBox, MaskError, MaskLayer};
use crate::prompts::PromptBundle;
use crate::raster::{self, RasterError};
use crate::template::{TemplateError, TemplateRegistry};

pub use render::{control_composite, draw_detections, draw_skeleton, skeleton_overlay};
pub use steps::associate_hands;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INPUT_FILE: &str = "input.png";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepName {
    Detect,
    Pose,
    Control,
    #[serde(rename = "controlnet")]
    ControlNet,
    Ip2p,
}

impl StepName {
    pub const ALL: [StepName; 5] = [
        StepName::Detect,
        StepName::Pose,
        StepName::Control,
        StepName::ControlNet,
        StepName::Ip2p,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StepName::Detect => "detect",
            StepName::Pose => "pose",
            StepName::Control => "control",
            StepName::ControlNet => "controlnet",
            StepName::Ip2p => "ip2p",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn predecessor(self) -> Option<StepName> {
        self.index().checked_sub(1).map(|i| Self::ALL[i])
    }

    /// This step and everything after it.
    pub fn and_downstream(self) -> &'static [StepName] {
        &Self::ALL[self.index()..]
    }
}

impl fmt::Display for StepName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StepName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| format!("unknown step `{s}` (expected detect, pose, control, controlnet or ip2p)"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum StepStatus {
    #[default]
    Pending,
    Done,
    Failed {
        class: String,
        reason: String,
        recoverable: bool,
    },
}

impl StepStatus {
    pub fn is_done(&self) -> bool {
        matches!(self, StepStatus::Done)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionParams {
    pub include_standard_hands: bool,
    pub bbox_expand_ratio: f64,
    pub template_name: String,
    /// Extra template scale about the wrist, applied as `1 + ratio`.
    pub template_expand_ratio: f64,
    pub include_undetected_hand: bool,
    pub seed: u64,
    /// Index into the instruction variants; the default instruction when unset.
    pub instruction_variant: Option<usize>,
}

impl Default for SessionParams {
    fn default() -> Self {
        Self {
            include_standard_hands: false,
            bbox_expand_ratio: 0.1,
            template_name: "opened-palm".into(),
            template_expand_ratio: 0.0,
            include_undetected_hand: false,
            seed: 0,
            instruction_variant: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl SessionParams {
    pub fn validate(&self, templates: &TemplateRegistry, prompts: &PromptBundle) -> Result<(), Vec<FieldError>> {
        let mut errors = Vec::new();
        let mut push = |field: &str, message: String| {
            errors.push(FieldError {
                field: field.into(),
                message,
            })
        };
        for (field, v) in [
            ("bbox_expand_ratio", self.bbox_expand_ratio),
            ("template_expand_ratio", self.template_expand_ratio),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                push(field, format!("must be a finite number >= 0, got {v}"));
            }
        }
        if !templates.contains(&self.template_name) {
            push(
                "template_name",
                format!(
                    "unknown template `{}` (available: {})",
                    self.template_name,
                    templates.names().join(", ")
                ),
            );
        }
        if let Some(i) = self.instruction_variant {
            if i >= prompts.instruction_variants.len() {
                push(
                    "instruction_variant",
                    format!("must be below {}, got {i}", prompts.instruction_variants.len()),
                );
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

/// Partial parameter update; absent fields keep their current value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamOverrides {
    pub include_standard_hands: Option<bool>,
    pub bbox_expand_ratio: Option<f64>,
    pub template_name: Option<String>,
    pub template_expand_ratio: Option<f64>,
    pub include_undetected_hand: Option<bool>,
    pub seed: Option<u64>,
    pub instruction_variant: Option<usize>,
}

impl ParamOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, base: &SessionParams) -> SessionParams {
        SessionParams {
            include_standard_hands: self.include_standard_hands.unwrap_or(base.include_standard_hands),
            bbox_expand_ratio: self.bbox_expand_ratio.unwrap_or(base.bbox_expand_ratio),
            template_name: self.template_name.clone().unwrap_or_else(|| base.template_name.clone()),
            template_expand_ratio: self.template_expand_ratio.unwrap_or(base.template_expand_ratio),
            include_undetected_hand: self.include_undetected_hand.unwrap_or(base.include_undetected_hand),
            seed: self.seed.unwrap_or(base.seed),
            instruction_variant: self.instruction_variant.or(base.instruction_variant),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSource {
    Detector,
    /// A hand found by pose estimation with no matching detection.
    Pose,
}

/// A hand region selected for restoration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub index: usize,
    pub source: TargetSource,
    pub label: Option<HandLabel>,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// The box grown by the expand ratio and clamped to the image.
    pub expanded: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectArtifact {
    pub detections: Vec<HandDetection>,
    pub targets: Vec<Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandTarget {
    pub target: Target,
    pub hand: Option<PoseHand>,
    /// Why no hand was associated.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseArtifact {
    /// `None` when estimation was not needed.
    pub person: Option<BodyPoseResult>,
    pub targets: Vec<HandTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum PlacementOutcome {
    Placed {
        chirality: Chirality,
        transform: PlacementTransform,
    },
    Skipped {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPlacement {
    pub target: usize,
    #[serde(flatten)]
    pub outcome: PlacementOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlArtifact {
    pub template: String,
    pub template_expand_ratio: f64,
    pub placed: usize,
    pub skipped: usize,
    pub placements: Vec<TargetPlacement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintArtifact {
    pub prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
    /// False when the union mask was empty and the input passed through.
    pub invoked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditArtifact {
    pub instruction: String,
    pub seed: u64,
    pub invoked: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub status: StepStatus,
    /// Number of times the step has been started.
    pub runs: u32,
    pub seed: Option<u64>,
    /// Logical artifact name (`union_mask.png`) → file of the current run.
    pub artifacts: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: StepName,
    pub run: u32,
    pub status: StepStatus,
    pub artifacts: BTreeMap<String, String>,
}

/// Session metadata. Holds no identifiers or clocks so that equal inputs
/// give byte-equal manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub input: String,
    pub width: u32,
    pub height: u32,
    pub params: SessionParams,
    pub steps: BTreeMap<StepName, StepRecord>,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("step `{step}` needs `{missing}` to be done first")]
    PredecessorNotDone { step: StepName, missing: StepName },
    #[error("invalid parameters: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidParams(Vec<FieldError>),
    #[error("session directory {0} already holds a session")]
    SessionExists(PathBuf),
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("artifact `{0}` is missing from the session")]
    MissingArtifact(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Per-call seed derived from the session seed, the step and a call index.
pub fn sub_seed(seed: u64, step: StepName, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(step.as_str().as_bytes());
    h.update(index.to_be_bytes());
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone)]
pub struct PipelineSession {
    dir: PathBuf,
    input: RgbImage,
    manifest: Manifest,
}

impl PipelineSession {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn input(&self) -> &RgbImage {
        &self.input
    }

    pub fn params(&self) -> &SessionParams {
        &self.manifest.params
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn record(&self, step: StepName) -> &StepRecord {
        self.manifest
            .steps
            .get(&step)
            .expect("every step has a record")
    }

    pub fn status(&self, step: StepName) -> &StepStatus {
        &self.record(step).status
    }

    pub fn manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        s.push('\n');
        s
    }

    fn save_manifest(&self) -> Result<(), PipelineError> {
        let path = self.dir.join(MANIFEST_FILE);
        let tmp = self.dir.join(format!(".{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, self.manifest_json()).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Resolves a requested name to a file in the session directory. Accepts
    /// the manifest, the input, a logical artifact name (current run) or any
    /// run-suffixed file the session has produced.
    pub fn resolve_artifact(&self, name: &str) -> Option<PathBuf> {
        if name == MANIFEST_FILE || name == INPUT_FILE {
            return Some(self.dir.join(name));
        }
        for rec in self.manifest.steps.values() {
            if let Some(file) = rec.artifacts.get(name) {
                return Some(self.dir.join(file));
            }
        }
        self.manifest
            .history
            .iter()
            .flat_map(|h| h.artifacts.values())
            .find(|f| *f == name)
            .map(|f| self.dir.join(f))
    }

    fn current_file(&self, step: StepName, logical: &str) -> Result<PathBuf, PipelineError> {
        self.record(step)
            .artifacts
            .get(logical)
            .map(|f| self.dir.join(f))
            .ok_or_else(|| PipelineError::MissingArtifact(logical.to_string()))
    }

    pub fn load_json<T: serde::de::DeserializeOwned>(&self, step: StepName, logical: &str) -> Result<T, PipelineError> {
        let path = self.current_file(step, logical)?;
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Manifest {
            path,
            reason: e.to_string(),
        })
    }

    pub fn load_rgb(&self, step: StepName, logical: &str) -> Result<RgbImage, PipelineError> {
        Ok(raster::read_rgb(&self.current_file(step, logical)?)?)
    }

    pub fn load_mask(&self, step: StepName, logical: &str) -> Result<MaskLayer, PipelineError> {
        let path = self.current_file(step, logical)?;
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        Ok(MaskLayer::from_gray(&raster::decode_gray(&bytes)?)?)
    }
}

/// Summary of one step execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: StepName,
    pub run: u32,
    pub status: StepStatus,
    pub artifacts: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    pub elapsed_ms: u64,
}

pub struct Pipeline {
    backends: Backends,
    templates: Arc<TemplateRegistry>,
    prompts: PromptBundle,
}

impl Pipeline {
    pub fn new(backends: Backends, templates: Arc<TemplateRegistry>) -> Self {
        Self {
            backends,
            templates,
            prompts: PromptBundle::default(),
        }
    }

    /// Builds the backends and loads the template registry a config names,
    /// falling back to the stock templates.
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, SetupError> {
        let templates = match &cfg.templates {
            Some(dir) => TemplateRegistry::load_dir(dir)?,
            None => TemplateRegistry::builtin(),
        };
        Ok(Self::new(cfg.build()?, Arc::new(templates)))
    }

    pub fn with_prompts(mut self, prompts: PromptBundle) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn templates(&self) -> &TemplateRegistry {
        &self.templates
    }

    pub fn prompts(&self) -> &PromptBundle {
        &self.prompts
    }

    pub fn validate_params(&self, params: &SessionParams) -> Result<(), PipelineError> {
        params
            .validate(&self.templates, &self.prompts)
            .map_err(PipelineError::InvalidParams)
    }

    /// Creates `dir` (which must be absent or empty), stores the input and
    /// the validated parameters.
    pub fn create_session(
        &self,
        dir: &Path,
        input: RgbImage,
        params: SessionParams,
    ) -> Result<PipelineSession, PipelineError> {
        self.validate_params(&params)?;
        if dir.join(MANIFEST_FILE).exists() {
            return Err(PipelineError::SessionExists(dir.to_path_buf()));
        }
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let input_path = dir.join(INPUT_FILE);
        std::fs::write(&input_path, raster::encode_rgb_png(&input)?).map_err(io_err(&input_path))?;
        let manifest = Manifest {
            input: INPUT_FILE.into(),
            width: input.width(),
            height: input.height(),
            params,
            steps: StepName::ALL.into_iter().map(|s| (s, StepRecord::default())).collect(),
            history: Vec::new(),
        };
        let session = PipelineSession {
            dir: dir.to_path_buf(),
            input,
            manifest,
        };
        session.save_manifest()?;
        Ok(session)
    }

    pub fn open_session(&self, dir: &Path) -> Result<PipelineSession, PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| PipelineError::Manifest {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if let Some(missing) = StepName::ALL.into_iter().find(|s| !manifest.steps.contains_key(s)) {
            return Err(PipelineError::Manifest {
                path,
                reason: format!("no record for step `{missing}`"),
            });
        }
        let input = raster::read_rgb(&dir.join(&manifest.input))?;
        Ok(PipelineSession {
            dir: dir.to_path_buf(),
            input,
            manifest,
        })
    }

    /// Validates and stores new parameters. Completed steps keep their
    /// artifacts until rerun.
    pub fn update_params(&self, session: &mut PipelineSession, overrides: &ParamOverrides) -> Result<(), PipelineError> {
        if overrides.is_empty() {
            return Ok(());
        }
        let params = overrides.apply(&session.manifest.params);
        self.validate_params(&params)?;
        session.manifest.params = params;
        session.save_manifest()
    }

    pub fn check_ready(&self, session: &PipelineSession, step: StepName) -> Result<(), PipelineError> {
        for prior in &StepName::ALL[..step.index()] {
            if !session.status(*prior).is_done() {
                return Err(PipelineError::PredecessorNotDone {
                    step,
                    missing: *prior,
                });
            }
        }
        Ok(())
    }

    /// Runs one step, invalidating it and everything downstream first. A
    /// failing step is reported through the returned status; `Err` is
    /// reserved for unmet preconditions and storage failures.
    pub fn run_step(&self, session: &mut PipelineSession, step: StepName) -> Result<StepReport, PipelineError> {
        self.check_ready(session, step)?;
        for s in step.and_downstream() {
            let rec = session.manifest.steps.get_mut(s).expect("every step has a record");
            rec.status = StepStatus::Pending;
            rec.artifacts.clear();
            rec.warnings.clear();
            rec.seed = None;
        }
        let run = {
            let rec = session.manifest.steps.get_mut(&step).expect("every step has a record");
            rec.runs += 1;
            rec.runs
        };
        session.save_manifest()?;

        let started = Instant::now();
        let outcome = steps::execute(self, session, step)?;
        let mut artifacts = BTreeMap::new();
        let status = match outcome {
            Ok(out) => {
                for file in &out.files {
                    let name = format!("{}.r{run}.{}", file.stem, file.ext);
                    let path = session.dir.join(&name);
                    std::fs::write(&path, &file.bytes).map_err(io_err(&path))?;
                    artifacts.insert(format!("{}.{}", file.stem, file.ext), name);
                }
                let rec = session.manifest.steps.get_mut(&step).expect("every step has a record");
                rec.seed = out.seed;
                rec.warnings = out.warnings;
                StepStatus::Done
            }
            Err(failure) => failure.into_status(),
        };
        let rec = session.manifest.steps.get_mut(&step).expect("every step has a record");
        rec.status = status.clone();
        rec.artifacts = artifacts.clone();
        let warnings = rec.warnings.clone();
        session.manifest.history.push(HistoryEntry {
            step,
            run,
            status: status.clone(),
            artifacts: artifacts.clone(),
        });
        session.save_manifest()?;
        Ok(StepReport {
            step,
            run,
            status,
            artifacts,
            warnings,
            elapsed_ms: started.elapsed().as_millis() as u64,
        })
    }

    /// Reruns `step` and then each downstream step, stopping at the first
    /// failure.
    pub fn rerun_from(&self, session: &mut PipelineSession, step: StepName) -> Result<Vec<StepReport>, PipelineError> {
        self.check_ready(session, step)?;
        let mut reports = Vec::new();
        for s in step.and_downstream() {
            let report = self.run_step(session, *s)?;
            let done = report.status.is_done();
            reports.push(report);
            if !done {
                break;
            }
        }
        Ok(reports)
    }

    pub fn run_all(&self, session: &mut PipelineSession) -> Result<Vec<StepReport>, PipelineError> {
        self.rerun_from(session, StepName::Detect)
    }
}
