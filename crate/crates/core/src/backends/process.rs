//! Engine adapter speaking the [`wire`](super::wire) protocol to a child
//! process (or any byte stream pair).

use std::io::{Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use image::RgbImage;

use super::contract::{composite_through_mask, normalize_detections, pose_from_normalized, RawDetection};
use super::wire::{read_frame, write_frame, Fields, Op, Request, Response};
use super::{
    BackendError, BodyPoseResult, ControlInpainter, Detector, HandDetection, InpaintRequest,
    InstructionInpainter, PoseEstimator, PoseLandmark,
};
use crate::raster::{decode_rgb, encode_gray_png, encode_rgb_png};

pub struct EngineChannel {
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
    child: Option<Child>,
}

impl EngineChannel {
    pub fn from_streams(reader: impl Read + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self {
            reader: Box::new(reader),
            writer: Box::new(writer),
            next_id: 1,
            child: None,
        }
    }

    /// Starts `command[0]` with the remaining entries as arguments and talks
    /// to it over stdin/stdout.
    pub fn spawn(command: &[String]) -> Result<Self, BackendError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| BackendError::Config("empty engine command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Unavailable(format!("spawning `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut ch = Self::from_streams(stdout, stdin);
        ch.child = Some(child);
        Ok(ch)
    }

    pub fn call(&mut self, op: Op, seed: u64, fields: Fields) -> Result<Fields, BackendError> {
        let id = self.next_id;
        self.next_id += 1;
        let req = Request { id, op, seed, fields };
        let unavailable = |e: super::wire::WireError| BackendError::Unavailable(e.to_string());
        write_frame(&mut self.writer, &req.encode().map_err(unavailable)?).map_err(unavailable)?;
        let frame = read_frame(&mut self.reader).map_err(unavailable)?;
        let resp = Response::decode(&frame)
            .map_err(|e| BackendError::InferenceFailure(e.to_string()))?;
        if resp.id != id {
            return Err(BackendError::InferenceFailure(format!(
                "response id {} does not match request id {id}",
                resp.id
            )));
        }
        if resp.ok {
            Ok(resp.fields)
        } else {
            let class = resp.fields.get_text("class").unwrap_or("InferenceFailure");
            let message = resp.fields.get_text("message").unwrap_or("").to_string();
            Err(BackendError::from_class(class, message))
        }
    }
}

impl Drop for EngineChannel {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// One engine endpoint. The option bag is forwarded untouched as JSON.
pub struct ProcessBackend {
    name: String,
    reentrant: bool,
    options: serde_json::Value,
    channel: Mutex<EngineChannel>,
}

impl ProcessBackend {
    pub fn new(
        name: impl Into<String>,
        channel: EngineChannel,
        options: serde_json::Value,
        reentrant: bool,
    ) -> Self {
        Self {
            name: name.into(),
            reentrant,
            options,
            channel: Mutex::new(channel),
        }
    }

    fn call(&self, op: Op, seed: u64, fields: Fields) -> Result<Fields, BackendError> {
        let fields = if self.options.is_null() {
            fields
        } else {
            fields.text("options", self.options.to_string())
        };
        self.channel
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .call(op, seed, fields)
    }
}

fn png_of(img: &RgbImage) -> Result<Vec<u8>, BackendError> {
    encode_rgb_png(img).map_err(|e| BackendError::InvalidRequest(e.to_string()))
}

fn image_field(fields: &Fields) -> Result<RgbImage, BackendError> {
    let bytes = fields
        .get_png("image")
        .ok_or_else(|| BackendError::InferenceFailure("response lacks `image`".into()))?;
    decode_rgb(bytes).map_err(|e| BackendError::InferenceFailure(e.to_string()))
}

fn json_field<T: serde::de::DeserializeOwned>(fields: &Fields, name: &str) -> Result<T, BackendError> {
    let text = fields
        .get_text(name)
        .ok_or_else(|| BackendError::InferenceFailure(format!("response lacks `{name}`")))?;
    serde_json::from_str(text).map_err(|e| BackendError::InferenceFailure(format!("`{name}`: {e}")))
}

impl Detector for ProcessBackend {
    fn name(&self) -> &str {
        &self.name
    }
    fn reentrant(&self) -> bool {
        self.reentrant
    }
    fn detect(&self, image: &RgbImage) -> Result<Vec<HandDetection>, BackendError> {
        let out = self.call(Op::Detect, 0, Fields::default().png("image", png_of(image)?))?;
        let raw: Vec<RawDetection> = json_field(&out, "detections")?;
        normalize_detections(&raw, image.width(), image.height())
    }
}

impl PoseEstimator for ProcessBackend {
    fn name(&self) -> &str {
        &self.name
    }
    fn reentrant(&self) -> bool {
        self.reentrant
    }
    fn estimate(&self, image: &RgbImage) -> Result<BodyPoseResult, BackendError> {
        let out = self.call(Op::Pose, 0, Fields::default().png("image", png_of(image)?))?;
        let raw: Vec<PoseLandmark> = json_field(&out, "landmarks")?;
        pose_from_normalized(&raw, image.width(), image.height())
    }
}

impl ControlInpainter for ProcessBackend {
    fn name(&self) -> &str {
        &self.name
    }
    fn reentrant(&self) -> bool {
        self.reentrant
    }
    fn inpaint(&self, request: &InpaintRequest) -> Result<RgbImage, BackendError> {
        request.validate()?;
        let mask_png = encode_gray_png(&request.mask.to_gray())
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let mut fields = Fields::default()
            .png("image", png_of(&request.image)?)
            .png("mask", mask_png)
            .text("prompt", request.prompt.clone());
        if let Some(control) = &request.control {
            fields = fields.png("control", png_of(&control.0)?);
        }
        if let Some(neg) = &request.negative_prompt {
            fields = fields.text("negative_prompt", neg.clone());
        }
        let out = self.call(Op::ControlInpaint, request.seed, fields)?;
        composite_through_mask(&request.image, &image_field(&out)?, &request.mask)
    }
}

impl InstructionInpainter for ProcessBackend {
    fn name(&self) -> &str {
        &self.name
    }
    fn reentrant(&self) -> bool {
        self.reentrant
    }
    fn edit(&self, image: &RgbImage, instruction: &str, seed: u64) -> Result<RgbImage, BackendError> {
        let instruction = instruction.trim();
        if instruction.is_empty() {
            return Err(BackendError::InvalidRequest("instruction must be non-empty".into()));
        }
        let fields = Fields::default()
            .png("image", png_of(image)?)
            .text("instruction", instruction);
        let out = image_field(&self.call(Op::InstructionEdit, seed, fields)?)?;
        if out.dimensions() != image.dimensions() {
            return Err(BackendError::InferenceFailure(format!(
                "engine returned {:?} for a {:?} input",
                out.dimensions(),
                image.dimensions()
            )));
        }
        Ok(out)
    }
}
