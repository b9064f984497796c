//! Engine side of the wire protocol, answering requests with in-process
//! backends. Useful as a stand-in engine and for exercising adapters.

use std::io::{ErrorKind, Read, Write};

use image::RgbImage;

use super::contract::RawDetection;
use super::wire::{read_frame, write_frame, Fields, Op, Request, Response, WireError};
use super::{BackendError, Backends, InpaintRequest, PoseLandmark};
use crate::masking::{ControlImage, MaskLayer};
use crate::raster::{decode_gray, decode_rgb, encode_rgb_png};

/// Answers framed requests until the peer closes its end.
pub fn serve(reader: &mut impl Read, writer: &mut impl Write, backends: &Backends) -> Result<(), WireError> {
    loop {
        let frame = match read_frame(reader) {
            Ok(f) => f,
            Err(WireError::Io(e)) if e.kind() == ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        };
        let response = match Request::decode(&frame) {
            Ok(req) => match handle(&req, backends) {
                Ok(fields) => Response {
                    id: req.id,
                    ok: true,
                    fields,
                },
                Err(e) => Response::error(req.id, e.class(), &e.to_string()),
            },
            Err(e) => Response::error(0, "InvalidRequest", &e.to_string()),
        };
        write_frame(writer, &response.encode()?)?;
    }
}

fn invalid(e: impl ToString) -> BackendError {
    BackendError::InvalidRequest(e.to_string())
}

fn png_field(fields: &Fields, name: &str) -> Result<RgbImage, BackendError> {
    let bytes = fields
        .get_png(name)
        .ok_or_else(|| invalid(format!("missing `{name}`")))?;
    decode_rgb(bytes).map_err(invalid)
}

fn text_field<'a>(fields: &'a Fields, name: &str) -> Result<&'a str, BackendError> {
    fields
        .get_text(name)
        .ok_or_else(|| invalid(format!("missing `{name}`")))
}

fn handle(req: &Request, backends: &Backends) -> Result<Fields, BackendError> {
    let f = &req.fields;
    let image = png_field(f, "image")?;
    let (w, h) = (image.width() as f64, image.height() as f64);
    match req.op {
        Op::Detect => {
            let raw: Vec<RawDetection> = backends
                .detector
                .detect(&image)?
                .iter()
                .map(|d| RawDetection {
                    x1: d.bbox.x1,
                    y1: d.bbox.y1,
                    x2: d.bbox.x2,
                    y2: d.bbox.y2,
                    label: d.label.into(),
                    confidence: d.confidence,
                })
                .collect();
            Ok(Fields::default().text("detections", serde_json::to_string(&raw).map_err(invalid)?))
        }
        Op::Pose => {
            let pose = backends.pose.estimate(&image)?;
            if pose.landmarks.is_empty() {
                return Err(BackendError::NoPersonDetected);
            }
            let normalized: Vec<PoseLandmark> = pose
                .landmarks
                .iter()
                .map(|l| PoseLandmark {
                    x: l.x / w,
                    y: l.y / h,
                    visibility: l.visibility,
                })
                .collect();
            Ok(Fields::default().text("landmarks", serde_json::to_string(&normalized).map_err(invalid)?))
        }
        Op::ControlInpaint => {
            let mask_bytes = f.get_png("mask").ok_or_else(|| invalid("missing `mask`"))?;
            let mask = MaskLayer::from_gray(&decode_gray(mask_bytes).map_err(invalid)?).map_err(invalid)?;
            let control = match f.get_png("control") {
                Some(_) => Some(ControlImage(png_field(f, "control")?)),
                None => None,
            };
            let request = InpaintRequest {
                image,
                mask,
                control,
                prompt: text_field(f, "prompt")?.to_string(),
                negative_prompt: f.get_text("negative_prompt").map(str::to_string),
                seed: req.seed,
            };
            let out = backends.control.inpaint(&request)?;
            Ok(Fields::default().png("image", encode_rgb_png(&out).map_err(invalid)?))
        }
        Op::InstructionEdit => {
            let out = backends
                .instruction
                .edit(&image, text_field(f, "instruction")?, req.seed)?;
            Ok(Fields::default().png("image", encode_rgb_png(&out).map_err(invalid)?))
        }
    }
}
