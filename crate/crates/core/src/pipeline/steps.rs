use image::RgbImage;

use super::render;
use super::{
    sub_seed, ControlArtifact, DetectArtifact, EditArtifact, HandTarget, InpaintArtifact, Pipeline,
    PipelineError, PipelineSession, PlacementOutcome, PoseArtifact, StepName, StepStatus, Target,
    TargetPlacement, TargetSource,
};
use crate::backends::contract::detection_order;
use crate::backends::{BackendError, HandLabel, InpaintRequest, PoseHand};
use crate::geometry::{compute_chirality, solve_placement, Point2};
use crate::masking::{expand_box, rasterize_box, rasterize_template, union_masks, BoundingBox, ControlImage, MaskLayer};
use crate::raster::{encode_gray_png, encode_rgb_png};

pub(super) struct ArtifactFile {
    pub stem: &'static str,
    pub ext: &'static str,
    pub bytes: Vec<u8>,
}

#[derive(Default)]
pub(super) struct StepOutput {
    pub files: Vec<ArtifactFile>,
    pub warnings: Vec<String>,
    pub seed: Option<u64>,
}

impl StepOutput {
    fn json(&mut self, stem: &'static str, value: &impl serde::Serialize) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
        bytes.push(b'\n');
        self.files.push(ArtifactFile { stem, ext: "json", bytes });
    }

    fn text(&mut self, stem: &'static str, text: String) {
        self.files.push(ArtifactFile {
            stem,
            ext: "txt",
            bytes: text.into_bytes(),
        });
    }

    fn rgb(&mut self, stem: &'static str, img: &RgbImage) -> Result<(), PipelineError> {
        self.files.push(ArtifactFile {
            stem,
            ext: "png",
            bytes: encode_rgb_png(img)?,
        });
        Ok(())
    }

    fn mask(&mut self, stem: &'static str, mask: &MaskLayer) -> Result<(), PipelineError> {
        self.files.push(ArtifactFile {
            stem,
            ext: "png",
            bytes: encode_gray_png(&mask.to_gray())?,
        });
        Ok(())
    }
}

pub(super) enum StepFailure {
    Backend(BackendError),
    Placement(String),
}

impl StepFailure {
    pub fn into_status(self) -> StepStatus {
        match self {
            StepFailure::Backend(e) => StepStatus::Failed {
                class: e.class().to_string(),
                recoverable: e.is_recoverable(),
                reason: e.to_string(),
            },
            StepFailure::Placement(reason) => StepStatus::Failed {
                class: "PlacementFailure".into(),
                reason,
                recoverable: true,
            },
        }
    }
}

impl From<BackendError> for StepFailure {
    fn from(e: BackendError) -> Self {
        StepFailure::Backend(e)
    }
}

type StepResult = Result<Result<StepOutput, StepFailure>, PipelineError>;

pub(super) fn execute(p: &Pipeline, s: &PipelineSession, step: StepName) -> StepResult {
    match step {
        StepName::Detect => detect(p, s),
        StepName::Pose => pose(p, s),
        StepName::Control => control(p, s),
        StepName::ControlNet => control_inpaint(p, s),
        StepName::Ip2p => instruction_inpaint(p, s),
    }
}

fn detect(p: &Pipeline, s: &PipelineSession) -> StepResult {
    let img = s.input();
    let (w, h) = img.dimensions();
    let params = s.params();
    let mut detections = match p.backends().detector.detect(img) {
        Ok(d) => d,
        Err(e) => return Ok(Err(e.into())),
    };
    for d in &detections {
        if let Err(e) = d.validate() {
            return Ok(Err(StepFailure::Backend(BackendError::InferenceFailure(e.to_string()))));
        }
    }
    detections.sort_by(detection_order);

    let mut out = StepOutput::default();
    let mut targets = Vec::new();
    let mut mask = MaskLayer::new(w, h);
    for (i, d) in detections.iter().enumerate() {
        if d.label == HandLabel::Standard && !params.include_standard_hands {
            continue;
        }
        match expand_box(&d.bbox, params.bbox_expand_ratio, w, h) {
            Ok(expanded) => {
                mask = union_masks(&[mask, rasterize_box(&expanded, w, h)])?;
                targets.push(Target {
                    index: targets.len(),
                    source: TargetSource::Detector,
                    label: Some(d.label),
                    bbox: d.bbox,
                    expanded,
                });
            }
            Err(e) => out.warnings.push(format!("detection {i} dropped: {e}")),
        }
    }
    if targets.is_empty() {
        out.warnings.push("no restoration targets; later steps pass the input through".into());
    }
    out.json("detections", &DetectArtifact { detections: detections.clone(), targets });
    out.mask("bbox_mask", &mask)?;
    out.rgb("detections_vis", &render::draw_detections(img, &detections))?;
    Ok(Ok(out))
}

/// Pairs each box with at most one pose hand: the unclaimed hand whose wrist
/// lies in the box (nearest the box center first), else the unclaimed hand
/// whose wrist is nearest the center within one box diagonal. Boxes are
/// served in order.
pub fn associate_hands(boxes: &[BoundingBox], hands: &[PoseHand]) -> Vec<Option<usize>> {
    let mut claimed = vec![false; hands.len()];
    boxes
        .iter()
        .map(|b| {
            let center = b.center();
            let nearest = |admit: &dyn Fn(Point2) -> bool| {
                hands
                    .iter()
                    .enumerate()
                    .filter(|(i, h)| !claimed[*i] && admit(h.landmarks.a))
                    .min_by(|(i, x), (j, y)| {
                        x.landmarks
                            .a
                            .distance(center)
                            .total_cmp(&y.landmarks.a.distance(center))
                            .then(i.cmp(j))
                    })
                    .map(|(i, _)| i)
            };
            let pick = nearest(&|a| b.contains(a))
                .or_else(|| nearest(&|a| a.distance(center) <= b.diagonal()));
            if let Some(i) = pick {
                claimed[i] = true;
            }
            pick
        })
        .collect()
}

fn landmark_box(hand: &PoseHand) -> Option<BoundingBox> {
    let (lo, hi) = hand.landmarks.bounds();
    let pad = |lo: f64, hi: f64| if hi - lo < 1.0 { ((lo + hi) / 2.0 - 0.5, (lo + hi) / 2.0 + 0.5) } else { (lo, hi) };
    let (x1, x2) = pad(lo.x, hi.x);
    let (y1, y2) = pad(lo.y, hi.y);
    BoundingBox::new(x1, y1, x2, y2).ok()
}

fn pose(p: &Pipeline, s: &PipelineSession) -> StepResult {
    let img = s.input();
    let (w, h) = img.dimensions();
    let params = s.params();
    let det: DetectArtifact = s.load_json(StepName::Detect, "detections.json")?;
    let mut out = StepOutput::default();

    if det.targets.is_empty() && !params.include_undetected_hand {
        out.warnings.push("no restoration targets; pose estimation skipped".into());
        out.json("pose", &PoseArtifact { person: None, targets: Vec::new() });
        out.rgb("pose_vis", img)?;
        out.text("pose_keypoints", String::new());
        return Ok(Ok(out));
    }

    let person = match p.backends().pose.estimate(img) {
        Ok(person) => person,
        Err(e) => return Ok(Err(e.into())),
    };
    if let Err(e) = person.validate() {
        return Ok(Err(StepFailure::Backend(BackendError::InferenceFailure(e.to_string()))));
    }

    let boxes: Vec<BoundingBox> = det.targets.iter().map(|t| t.bbox).collect();
    let pairing = associate_hands(&boxes, &person.hands);
    let mut targets: Vec<HandTarget> = det
        .targets
        .iter()
        .zip(&pairing)
        .map(|(t, m)| match m {
            Some(i) => HandTarget {
                target: *t,
                hand: Some(person.hands[*i]),
                note: None,
            },
            None => {
                let note = "no pose hand near the box".to_string();
                out.warnings.push(format!("target {}: {note}", t.index));
                HandTarget {
                    target: *t,
                    hand: None,
                    note: Some(note),
                }
            }
        })
        .collect();

    if params.include_undetected_hand {
        for (i, hand) in person.hands.iter().enumerate() {
            if pairing.contains(&Some(i)) {
                continue;
            }
            let Some(tight) = landmark_box(hand) else { continue };
            let seen = det
                .detections
                .iter()
                .any(|d| d.bbox.contains(hand.landmarks.a) || d.bbox.overlaps(&tight));
            if seen {
                continue;
            }
            match expand_box(&tight, params.bbox_expand_ratio, w, h) {
                Ok(expanded) => targets.push(HandTarget {
                    target: Target {
                        index: targets.len(),
                        source: TargetSource::Pose,
                        label: None,
                        bbox: tight,
                        expanded,
                    },
                    hand: Some(*hand),
                    note: None,
                }),
                Err(e) => out.warnings.push(format!("{:?} hand outside the image: {e}", hand.side)),
            }
        }
    }

    out.text("pose_keypoints", person.keypoints_string());
    out.rgb("pose_vis", &render::skeleton_overlay(img, Some(&person)))?;
    out.json(
        "pose",
        &PoseArtifact {
            person: Some(person),
            targets,
        },
    );
    Ok(Ok(out))
}

fn control(p: &Pipeline, s: &PipelineSession) -> StepResult {
    let img = s.input();
    let (w, h) = img.dimensions();
    let params = s.params();
    let pose: PoseArtifact = s.load_json(StepName::Pose, "pose.json")?;
    let bbox_mask = s.load_mask(StepName::Detect, "bbox_mask.png")?;
    let Some(template) = p.templates().get(&params.template_name) else {
        return Ok(Err(StepFailure::Placement(format!(
            "template `{}` is not registered",
            params.template_name
        ))));
    };
    let frame = template.frame();
    let extra = 1.0 + params.template_expand_ratio;

    let mut out = StepOutput::default();
    let mut canvas = ControlImage::black(w, h);
    let mut template_mask = MaskLayer::new(w, h);
    let mut pose_boxes = MaskLayer::new(w, h);
    let mut placements = Vec::new();
    for ht in &pose.targets {
        let t = &ht.target;
        if t.source == TargetSource::Pose {
            pose_boxes = union_masks(&[pose_boxes, rasterize_box(&t.expanded, w, h)])?;
        }
        let outcome = match &ht.hand {
            None => Err(ht.note.clone().unwrap_or_else(|| "no pose hand".into())),
            Some(hand) => compute_chirality(&hand.landmarks)
                .and_then(|c| Ok((c, solve_placement(&hand.landmarks, c, &frame)?.with_extra_scale(extra))))
                .map_err(|e| e.to_string())
                .and_then(|(chirality, transform)| {
                    let (ctl, m) = rasterize_template(&template, &transform, w, h).map_err(|e| e.to_string())?;
                    canvas.overlay(&ctl, &m);
                    template_mask = union_masks(&[template_mask.clone(), m]).map_err(|e| e.to_string())?;
                    Ok(PlacementOutcome::Placed { chirality, transform })
                }),
        };
        let outcome = outcome.unwrap_or_else(|reason| {
            out.warnings.push(format!("target {} skipped: {reason}", t.index));
            PlacementOutcome::Skipped { reason }
        });
        placements.push(TargetPlacement {
            target: t.index,
            outcome,
        });
    }
    let placed = placements
        .iter()
        .filter(|p| matches!(p.outcome, PlacementOutcome::Placed { .. }))
        .count();
    if !placements.is_empty() && placed == 0 {
        return Ok(Err(StepFailure::Placement(format!(
            "all {} targets failed: {}",
            placements.len(),
            out.warnings.join("; ")
        ))));
    }
    let union = union_masks(&[bbox_mask.clone(), pose_boxes, template_mask.clone()])?;

    out.json(
        "placements",
        &ControlArtifact {
            template: params.template_name.clone(),
            template_expand_ratio: params.template_expand_ratio,
            placed,
            skipped: placements.len() - placed,
            placements,
        },
    );
    out.rgb("control", &canvas.0)?;
    out.mask("template_mask", &template_mask)?;
    out.mask("union_mask", &union)?;
    out.rgb(
        "control_vis",
        &render::control_composite(img, pose.person.as_ref(), &canvas, &template_mask, &bbox_mask, &union),
    )?;
    Ok(Ok(out))
}

fn control_inpaint(p: &Pipeline, s: &PipelineSession) -> StepResult {
    let img = s.input();
    let params = s.params();
    let union = s.load_mask(StepName::Control, "union_mask.png")?;
    let seed = sub_seed(params.seed, StepName::ControlNet, 0);
    let prompt = p.prompts().positive_for(&params.template_name);
    let negative = p.prompts().negative.clone();
    let mut out = StepOutput {
        seed: Some(seed),
        ..Default::default()
    };
    let invoked = !union.is_empty();
    let result = if invoked {
        let request = InpaintRequest {
            image: img.clone(),
            mask: union,
            control: Some(ControlImage(s.load_rgb(StepName::Control, "control.png")?)),
            prompt: prompt.clone(),
            negative_prompt: Some(negative.clone()),
            seed,
        };
        match p.backends().control.inpaint(&request) {
            Ok(r) if r.dimensions() == img.dimensions() => r,
            Ok(r) => {
                return Ok(Err(StepFailure::Backend(BackendError::InferenceFailure(format!(
                    "inpainter returned {:?} for a {:?} input",
                    r.dimensions(),
                    img.dimensions()
                )))))
            }
            Err(e) => return Ok(Err(e.into())),
        }
    } else {
        out.warnings.push("empty union mask; input passed through".into());
        img.clone()
    };
    out.rgb("controlnet_result", &result)?;
    out.json(
        "controlnet",
        &InpaintArtifact {
            prompt,
            negative_prompt: negative,
            seed,
            invoked,
        },
    );
    Ok(Ok(out))
}

fn instruction_inpaint(p: &Pipeline, s: &PipelineSession) -> StepResult {
    let params = s.params();
    let base = s.load_rgb(StepName::ControlNet, "controlnet_result.png")?;
    let union = s.load_mask(StepName::Control, "union_mask.png")?;
    let seed = sub_seed(params.seed, StepName::Ip2p, 0);
    let Some(instruction) = p.prompts().instruction_for(params.instruction_variant) else {
        return Ok(Err(StepFailure::Backend(BackendError::InvalidRequest(format!(
            "no instruction variant {:?}",
            params.instruction_variant
        )))));
    };
    let mut out = StepOutput {
        seed: Some(seed),
        ..Default::default()
    };
    let invoked = !union.is_empty();
    let result = if invoked {
        match p.backends().instruction.edit(&base, instruction, seed) {
            Ok(r) if r.dimensions() == base.dimensions() => r,
            Ok(r) => {
                return Ok(Err(StepFailure::Backend(BackendError::InferenceFailure(format!(
                    "editor returned {:?} for a {:?} input",
                    r.dimensions(),
                    base.dimensions()
                )))))
            }
            Err(e) => return Ok(Err(e.into())),
        }
    } else {
        out.warnings.push("nothing to restore; previous result passed through".into());
        base
    };
    out.rgb("final", &result)?;
    out.json(
        "ip2p",
        &EditArtifact {
            instruction: instruction.to_string(),
            seed,
            invoked,
        },
    );
    Ok(Ok(out))
}
