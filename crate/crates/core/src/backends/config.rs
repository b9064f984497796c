//! Backend selection by name.
//!
//! ```toml
//! [detector]
//! kind = "fixture"
//! detections = [{ box = { x1 = 40.0, y1 = 60.0, x2 = 90.0, y2 = 120.0 }, label = 1, confidence = 0.92 }]
//!
//! [pose]
//! kind = "process"
//! command = ["python3", "pose_engine.py"]
//!
//! [control_inpaint]
//! kind = "hash-pattern"
//!
//! [instruction_inpaint]
//! kind = "perturb"
//! amplitude = 4
//! ```
//!
//! Every section is optional and defaults to the in-tree mock. Unknown kinds
//! are rejected when the file is parsed.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mock::{FixtureDetector, FixturePose, HashPatternInpainter, MockEditor};
use super::process::{EngineChannel, ProcessBackend};
use super::{BackendError, Backends, BodyPoseResult, HandDetection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub command: Vec<String>,
    #[serde(default)]
    pub reentrant: bool,
    /// Engine tuning (steps, guidance, ...), forwarded verbatim.
    #[serde(default)]
    pub options: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DetectorConfig {
    Fixture {
        #[serde(default)]
        detections: Vec<HandDetection>,
    },
    Process(ProcessConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PoseConfig {
    Fixture {
        /// Absent means the mock reports that no person was found.
        #[serde(default)]
        person: Option<BodyPoseResult>,
    },
    Process(ProcessConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControlInpaintConfig {
    HashPattern,
    Process(ProcessConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InstructionInpaintConfig {
    Identity,
    Perturb { amplitude: u8 },
    Process(ProcessConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub detector: DetectorConfig,
    pub pose: PoseConfig,
    pub control_inpaint: ControlInpaintConfig,
    pub instruction_inpaint: InstructionInpaintConfig,
    /// Template registry directory; the stock templates when unset.
    pub templates: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::Fixture {
                detections: Vec::new(),
            },
            pose: PoseConfig::Fixture { person: None },
            control_inpaint: ControlInpaintConfig::HashPattern,
            instruction_inpaint: InstructionInpaintConfig::Identity,
            templates: None,
        }
    }
}

impl BackendConfig {
    pub fn from_toml(text: &str) -> Result<Self, BackendError> {
        toml::from_str(text).map_err(|e| BackendError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, BackendError> {
        toml::to_string(self).map_err(|e| BackendError::Config(e.to_string()))
    }

    /// Reads a TOML config; a relative `templates` path resolves against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(t), Some(base)) = (&cfg.templates, path.parent()) {
            if t.is_relative() {
                cfg.templates = Some(base.join(t));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if let DetectorConfig::Fixture { detections } = &self.detector {
            for d in detections {
                d.validate()?;
            }
        }
        if let PoseConfig::Fixture {
            person: Some(person),
        } = &self.pose
        {
            person.validate()?;
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Backends, BackendError> {
        self.validate()?;
        let process = |name: &str, p: &ProcessConfig| -> Result<Arc<ProcessBackend>, BackendError> {
            Ok(Arc::new(ProcessBackend::new(
                name,
                EngineChannel::spawn(&p.command)?,
                p.options.clone(),
                p.reentrant,
            )))
        };
        let detector: Arc<dyn super::Detector> = match &self.detector {
            DetectorConfig::Fixture { detections } => Arc::new(FixtureDetector::new(detections.clone())),
            DetectorConfig::Process(p) => process("process-detector", p)?,
        };
        let pose: Arc<dyn super::PoseEstimator> = match &self.pose {
            PoseConfig::Fixture { person } => Arc::new(FixturePose::new(person.clone())),
            PoseConfig::Process(p) => process("process-pose", p)?,
        };
        let control: Arc<dyn super::ControlInpainter> = match &self.control_inpaint {
            ControlInpaintConfig::HashPattern => Arc::new(HashPatternInpainter),
            ControlInpaintConfig::Process(p) => process("process-control-inpaint", p)?,
        };
        let instruction: Arc<dyn super::InstructionInpainter> = match &self.instruction_inpaint {
            InstructionInpaintConfig::Identity => Arc::new(MockEditor::identity()),
            InstructionInpaintConfig::Perturb { amplitude } => Arc::new(MockEditor::perturb(*amplitude)),
            InstructionInpaintConfig::Process(p) => process("process-instruction-inpaint", p)?,
        };
        Ok(Backends::new(detector, pose, control, instruction))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_mocks() {
        let cfg = BackendConfig::from_toml("").unwrap();
        assert_eq!(cfg, BackendConfig::default());
        let b = cfg.build().unwrap();
        assert_eq!(b.detector.name(), "fixture");
        assert_eq!(b.control.name(), "hash-pattern");
        assert_eq!(b.instruction.name(), "identity");
    }

    #[test]
    fn unknown_backend_name_is_an_error() {
        let err = BackendConfig::from_toml("[detector]\nkind = \"yolo-magic\"\n").unwrap_err();
        assert_eq!(err.class(), "Config");
        assert!(BackendConfig::from_toml("[detectr]\nkind = \"fixture\"\n").is_err());
    }

    #[test]
    fn fixture_sections_parse() {
        let text = r#"
            [detector]
            kind = "fixture"
            detections = [{ box = { x1 = 1.0, y1 = 2.0, x2 = 30.0, y2 = 40.0 }, label = 1, confidence = 0.9 }]

            [pose]
            kind = "fixture"
            [[pose.person.hands]]
            side = "right"
            landmarks = { a = { x = 10.0, y = 40.0 }, b = { x = 4.0, y = 30.0 }, c = { x = 10.0, y = 20.0 }, d = { x = 16.0, y = 30.0 }, source = "pose-estimate" }

            [instruction_inpaint]
            kind = "perturb"
            amplitude = 2
        "#;
        let cfg = BackendConfig::from_toml(text).unwrap();
        let b = cfg.build().unwrap();
        assert_eq!(b.instruction.name(), "perturb");
        match cfg.pose {
            PoseConfig::Fixture { person: Some(p) } => assert_eq!(p.hands.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_fixture_is_rejected_at_build() {
        let text = r#"
            [detector]
            kind = "fixture"
            detections = [{ box = { x1 = 5.0, y1 = 2.0, x2 = 1.0, y2 = 40.0 }, label = 1, confidence = 0.9 }]
        "#;
        assert!(BackendConfig::from_toml(text).unwrap().build().is_err());
    }

    #[test]
    fn missing_engine_binary_is_unavailable() {
        let cfg = BackendConfig {
            detector: DetectorConfig::Process(ProcessConfig {
                command: vec!["/nonexistent/engine-binary".into()],
                reentrant: false,
                options: serde_json::Value::Null,
            }),
            ..Default::default()
        };
        assert!(matches!(cfg.build(), Err(BackendError::Unavailable(_))));
    }
}
