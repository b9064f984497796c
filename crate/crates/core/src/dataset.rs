//! Paired standard/non-standard dataset tooling: annotation files,
//! original↔redrawn pairing and the seeded train/test split.
//!
//! Annotation files hold one hand per line, `label cx cy w h [confidence]`,
//! in image-normalized center format. Label 0 is a standard hand, 1 a
//! non-standard one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{HandDetection, HandLabel};
use crate::evaluation::GroundTruth;
use crate::masking::BoundingBox;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("no pairs to split")]
    EmptyInput,
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("malformed pair index line {line}: {reason}")]
    PairIndex { line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandAnnotation {
    pub label: HandLabel,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// Present on detector output files only.
    pub confidence: Option<f64>,
}

impl HandAnnotation {
    /// Corner-format box in normalized units.
    pub fn normalized_box(&self) -> Option<BoundingBox> {
        BoundingBox::new(
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
        .ok()
    }

    pub fn to_ground_truth(&self) -> Option<GroundTruth> {
        Some(GroundTruth {
            label: self.label,
            bbox: self.normalized_box()?,
        })
    }

    /// Lines without a confidence are treated as certain.
    pub fn to_detection(&self) -> Option<HandDetection> {
        Some(HandDetection {
            bbox: self.normalized_box()?,
            label: self.label,
            confidence: self.confidence.unwrap_or(1.0),
        })
    }

    pub fn from_pixel_box(label: HandLabel, b: &BoundingBox, image_w: u32, image_h: u32) -> Self {
        let (w, h) = (image_w as f64, image_h as f64);
        Self {
            label,
            cx: b.center().x / w,
            cy: b.center().y / h,
            w: b.width() / w,
            h: b.height() / h,
            confidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub image_w: Option<u32>,
    pub image_h: Option<u32>,
    pub hands: Vec<HandAnnotation>,
}

impl AnnotationRecord {
    pub fn has_non_standard(&self) -> bool {
        self.hands.iter().any(|h| h.label == HandLabel::NonStandard)
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Parses annotation text. Blank lines are skipped.
pub fn parse_annotations(text: &str) -> Result<Vec<HandAnnotation>, ParseError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut tokens = Vec::new();
        let mut start = None;
        for (col, ch) in raw.chars().enumerate().chain(std::iter::once((raw.chars().count(), ' '))) {
            match (ch.is_whitespace(), start) {
                (false, None) => start = Some(col),
                (true, Some(s)) => {
                    let tok: String = raw.chars().skip(s).take(col - s).collect();
                    tokens.push((s + 1, tok));
                    start = None;
                }
                _ => {}
            }
        }
        if tokens.is_empty() {
            continue;
        }
        let err = |column: usize, reason: String| ParseError { line, column, reason };
        if tokens.len() != 5 && tokens.len() != 6 {
            let column = tokens.get(5).map_or(tokens.last().unwrap().0, |t| t.0);
            return Err(err(
                column,
                format!("expected 5 or 6 fields (label cx cy w h [confidence]), found {}", tokens.len()),
            ));
        }
        let (label_col, label_tok) = &tokens[0];
        let label = label_tok
            .parse::<u8>()
            .ok()
            .and_then(|v| HandLabel::try_from(v).ok())
            .ok_or_else(|| err(*label_col, format!("label must be 0 or 1, found `{label_tok}`")))?;
        let mut nums = [0.0f64; 5];
        for (i, (col, tok)) in tokens[1..].iter().enumerate() {
            let v: f64 = tok
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(*col, format!("`{tok}` is not a finite number")))?;
            let name = ["cx", "cy", "w", "h", "confidence"][i];
            if !(0.0..=1.0).contains(&v) {
                return Err(err(*col, format!("{name} = {v} lies outside [0, 1]")));
            }
            if (name == "w" || name == "h") && round6(v) <= 0.0 {
                return Err(err(*col, format!("{name} must be at least 0.000001, found {v}")));
            }
            nums[i] = v;
        }
        out.push(HandAnnotation {
            label,
            cx: nums[0],
            cy: nums[1],
            w: nums[2],
            h: nums[3],
            confidence: (tokens.len() == 6).then_some(nums[4]),
        });
    }
    Ok(out)
}

/// Canonical text: one line per hand, six decimals.
pub fn serialize_annotations(hands: &[HandAnnotation]) -> String {
    let mut out = String::new();
    for h in hands {
        let _ = write!(out, "{} {:.6} {:.6} {:.6} {:.6}", u8::from(h.label), h.cx, h.cy, h.w, h.h);
        if let Some(c) = h.confidence {
            let _ = write!(out, " {c:.6}");
        }
        out.push('\n');
    }
    out
}

fn file_stem(p: &Path) -> Option<String> {
    p.file_stem().and_then(|s| s.to_str()).map(str::to_string)
}

fn entries_with_ext(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>, DatasetError> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| exts.contains(&e.as_str())) {
            if let Some(stem) = file_stem(&path) {
                out.insert(stem, path);
            }
        }
    }
    Ok(out)
}

/// Reads every `<id>.txt` in `dir`, keyed by id.
pub fn load_annotation_dir(dir: &Path) -> Result<BTreeMap<String, AnnotationRecord>, DatasetError> {
    let mut out = BTreeMap::new();
    for (id, path) in entries_with_ext(dir, &["txt"])? {
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let hands = parse_annotations(&text).map_err(|source| DatasetError::Parse {
            path: path.clone(),
            source,
        })?;
        out.insert(
            id.clone(),
            AnnotationRecord {
                image_id: id,
                image_w: None,
                image_h: None,
                hands,
            },
        );
    }
    Ok(out)
}

pub fn write_annotation_file(path: &Path, hands: &[HandAnnotation]) -> Result<(), DatasetError> {
    std::fs::write(path, serialize_annotations(hands)).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImagePair {
    pub original_id: String,
    pub redrawn_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PairWarning {
    /// An original image with no redrawn counterpart.
    OrphanOriginal { id: String },
    /// A redrawn image whose original is missing.
    OrphanRedrawn { id: String },
    MissingAnnotation { id: String },
    /// The original already contains a non-standard hand.
    OriginalNotStandard { id: String },
}

impl std::fmt::Display for PairWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PairWarning::OrphanOriginal { id } => write!(f, "original `{id}` has no redrawn image"),
            PairWarning::OrphanRedrawn { id } => write!(f, "redrawn `{id}` has no original image"),
            PairWarning::MissingAnnotation { id } => write!(f, "image `{id}` has no annotation file"),
            PairWarning::OriginalNotStandard { id } => {
                write!(f, "original `{id}` is annotated with a non-standard hand")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingOutcome {
    pub pairs: Vec<ImagePair>,
    /// Originals whose redrawn counterpart has no non-standard hand.
    pub excluded: Vec<String>,
    pub warnings: Vec<PairWarning>,
}

const IMAGE_EXTS: &[&str] = &["png", "jpg", "jpeg"];

/// Pairs `<original_dir>/<id>.*` with `<redrawn_dir>/<id><suffix>.*`. Output
/// is sorted by original id.
pub fn build_pairs(
    original_dir: &Path,
    redrawn_dir: &Path,
    annotations: &BTreeMap<String, AnnotationRecord>,
    suffix: &str,
) -> Result<PairingOutcome, DatasetError> {
    let originals = entries_with_ext(original_dir, IMAGE_EXTS)?;
    let redrawn = entries_with_ext(redrawn_dir, IMAGE_EXTS)?;
    pair_ids(
        &originals.keys().cloned().collect(),
        &redrawn.keys().cloned().collect(),
        annotations,
        suffix,
    )
}

/// The pairing rule over id sets.
pub fn pair_ids(
    originals: &BTreeSet<String>,
    redrawn: &BTreeSet<String>,
    annotations: &BTreeMap<String, AnnotationRecord>,
    suffix: &str,
) -> Result<PairingOutcome, DatasetError> {
    let mut out = PairingOutcome::default();
    let mut claimed = BTreeSet::new();
    for id in originals {
        let redrawn_id = format!("{id}{suffix}");
        if !redrawn.contains(&redrawn_id) {
            out.warnings.push(PairWarning::OrphanOriginal { id: id.clone() });
            continue;
        }
        claimed.insert(redrawn_id.clone());
        let (Some(orig), Some(red)) = (annotations.get(id), annotations.get(&redrawn_id)) else {
            for missing in [id, &redrawn_id] {
                if !annotations.contains_key(missing) {
                    out.warnings.push(PairWarning::MissingAnnotation { id: missing.clone() });
                }
            }
            continue;
        };
        if orig.has_non_standard() {
            out.warnings.push(PairWarning::OriginalNotStandard { id: id.clone() });
            continue;
        }
        if !red.has_non_standard() {
            out.excluded.push(id.clone());
            continue;
        }
        out.pairs.push(ImagePair {
            original_id: id.clone(),
            redrawn_id,
        });
    }
    for id in redrawn {
        if !claimed.contains(id) && !originals.contains(id) {
            out.warnings.push(PairWarning::OrphanRedrawn { id: id.clone() });
        }
    }
    Ok(out)
}

/// Seeded shuffle then cut; `|train| = round(fraction × n)`. The input order
/// does not affect the result.
pub fn split_pairs(
    pairs: &[ImagePair],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<ImagePair>, Vec<ImagePair>), DatasetError> {
    if pairs.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    let mut shuffled = pairs.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * pairs.len() as f64).round() as usize;
    let test = shuffled.split_off(n_train);
    Ok((shuffled, test))
}

pub fn render_pair_index(pairs: &[ImagePair]) -> String {
    pairs
        .iter()
        .map(|p| format!("{}\t{}\n", p.original_id, p.redrawn_id))
        .collect()
}

pub fn parse_pair_index(text: &str) -> Result<Vec<ImagePair>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut parts = l.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(o), Some(r), None) if !o.is_empty() && !r.is_empty() => Ok(ImagePair {
                    original_id: o.to_string(),
                    redrawn_id: r.to_string(),
                }),
                _ => Err(DatasetError::PairIndex {
                    line: i + 1,
                    reason: "expected `original_id<TAB>redrawn_id`".into(),
                }),
            }
        })
        .collect()
}

pub fn write_pair_index(path: &Path, pairs: &[ImagePair]) -> Result<(), DatasetError> {
    std::fs::write(path, render_pair_index(pairs)).map_err(io_err(path))
}

pub fn read_pair_index(path: &Path) -> Result<Vec<ImagePair>, DatasetError> {
    parse_pair_index(&std::fs::read_to_string(path).map_err(io_err(path))?)
}

/// Writes `train.txt` and `test.txt` into `dir`.
pub fn write_split(dir: &Path, train: &[ImagePair], test: &[ImagePair]) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_pair_index(&dir.join("train.txt"), train)?;
    write_pair_index(&dir.join("test.txt"), test)
}
