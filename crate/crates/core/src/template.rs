//! Hand templates and the on-disk template registry.
//!
//! A registry directory holds one `<name>.png` RGB raster per template next
//! to a `<name>.meta` sidecar of `key = value` lines:
//!
//! ```text
//! name = opened-palm
//! chirality = CCW
//! a = 48 120
//! b = 24 86
//! c = 48 52
//! d = 70 60
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use thiserror::Error;

use crate::geometry::{
    Chirality, GeometryError, HandLandmarkSet, LandmarkSource, Point2, TemplateFrame,
};
use crate::raster::{self, RasterError};

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{0}`: name must be non-empty and free of path separators")]
    BadName(String),
    #[error("template `{name}`: landmark {which} at ({x}, {y}) lies outside the {w}x{h} raster")]
    LandmarkOutside {
        name: String,
        which: char,
        x: f64,
        y: f64,
        w: u32,
        h: u32,
    },
    #[error("template `{name}`: {source}")]
    Geometry {
        name: String,
        #[source]
        source: GeometryError,
    },
    #[error("{path}:{line}: {reason}")]
    Sidecar {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: missing key `{key}`")]
    MissingKey { path: String, key: &'static str },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("reading template directory {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSpec {
    pub name: String,
    pub raster: RgbImage,
    pub landmarks: HandLandmarkSet,
    pub chirality: Chirality,
}

impl TemplateSpec {
    pub fn new(
        name: impl Into<String>,
        raster: RgbImage,
        landmarks: HandLandmarkSet,
        chirality: Chirality,
    ) -> Result<Self, TemplateError> {
        let name = name.into();
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(TemplateError::BadName(name));
        }
        landmarks.validate().map_err(|source| TemplateError::Geometry {
            name: name.clone(),
            source,
        })?;
        let (w, h) = raster.dimensions();
        for (which, p) in ['a', 'b', 'c', 'd'].into_iter().zip(landmarks.points()) {
            if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= w as f64 && p.y <= h as f64) {
                return Err(TemplateError::LandmarkOutside {
                    name,
                    which,
                    x: p.x,
                    y: p.y,
                    w,
                    h,
                });
            }
        }
        Ok(Self {
            name,
            raster,
            landmarks: HandLandmarkSet {
                source: LandmarkSource::TemplateAnnotation,
                ..landmarks
            },
            chirality,
        })
    }

    pub fn frame(&self) -> TemplateFrame {
        TemplateFrame {
            landmarks: self.landmarks,
            chirality: self.chirality,
            width: self.raster.width() as f64,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    entries: BTreeMap<String, Arc<TemplateSpec>>,
}

impl TemplateRegistry {
    /// The two stock templates, `opened-palm` and `fist-back`, drawn procedurally.
    pub fn builtin() -> Self {
        let mut reg = Self::default();
        reg.insert(opened_palm());
        reg.insert(fist_back());
        reg
    }

    pub fn insert(&mut self, spec: TemplateSpec) {
        self.entries.insert(spec.name.clone(), Arc::new(spec));
    }

    pub fn get(&self, name: &str) -> Option<Arc<TemplateSpec>> {
        self.entries.get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Loads every `<name>.meta` + `<name>.png` pair found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let io = |source| TemplateError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut metas: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(io)?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "meta"))
            .collect();
        metas.sort();
        let mut reg = Self::default();
        for meta in metas {
            let text = std::fs::read_to_string(&meta).map_err(|source| TemplateError::Io {
                path: meta.display().to_string(),
                source,
            })?;
            let sidecar = parse_sidecar(&text, &meta.display().to_string())?;
            let raster = raster::read_rgb(&meta.with_extension("png"))?;
            reg.insert(TemplateSpec::new(
                sidecar.name,
                raster,
                sidecar.landmarks,
                sidecar.chirality,
            )?);
        }
        Ok(reg)
    }

    /// Writes the registry in the directory layout read by [`Self::load_dir`].
    pub fn save_dir(&self, dir: &Path) -> Result<(), TemplateError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| TemplateError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for spec in self.entries.values() {
            let png = dir.join(format!("{}.png", spec.name));
            std::fs::write(&png, raster::encode_rgb_png(&spec.raster)?).map_err(io(&png))?;
            let meta = dir.join(format!("{}.meta", spec.name));
            std::fs::write(&meta, render_sidecar(spec)).map_err(io(&meta))?;
        }
        Ok(())
    }
}

#[derive(Debug)]
struct Sidecar {
    name: String,
    chirality: Chirality,
    landmarks: HandLandmarkSet,
}

fn parse_sidecar(text: &str, path: &str) -> Result<Sidecar, TemplateError> {
    let err = |line: usize, reason: String| TemplateError::Sidecar {
        path: path.to_string(),
        line,
        reason,
    };
    let mut name = None;
    let mut chirality = None;
    let mut pts: [Option<Point2>; 4] = [None; 4];
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, "expected `key = value`".into()))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "name" => name = Some(value.to_string()),
            "chirality" => chirality = Some(value.parse().map_err(|e| err(line_no, e))?),
            "a" | "b" | "c" | "d" => {
                let nums: Vec<f64> = value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| err(line_no, format!("bad coordinate: {e}")))?;
                if nums.len() != 2 {
                    return Err(err(line_no, format!("expected two coordinates, got {}", nums.len())));
                }
                let slot = (key.as_bytes()[0] - b'a') as usize;
                pts[slot] = Some(Point2::new(nums[0], nums[1]));
            }
            other => return Err(err(line_no, format!("unknown key `{other}`"))),
        }
    }
    let missing = |key| TemplateError::MissingKey {
        path: path.to_string(),
        key,
    };
    let name = name.ok_or_else(|| missing("name"))?;
    let landmarks = HandLandmarkSet::new(
        pts[0].ok_or_else(|| missing("a"))?,
        pts[1].ok_or_else(|| missing("b"))?,
        pts[2].ok_or_else(|| missing("c"))?,
        pts[3].ok_or_else(|| missing("d"))?,
        LandmarkSource::TemplateAnnotation,
    )
    .map_err(|source| TemplateError::Geometry {
        name: name.clone(),
        source,
    })?;
    Ok(Sidecar {
        chirality: chirality.ok_or_else(|| missing("chirality"))?,
        name,
        landmarks,
    })
}

fn render_sidecar(spec: &TemplateSpec) -> String {
    let l = &spec.landmarks;
    format!(
        "name = {}\nchirality = {}\na = {} {}\nb = {} {}\nc = {} {}\nd = {} {}\n",
        spec.name,
        spec.chirality.as_str(),
        l.a.x,
        l.a.y,
        l.b.x,
        l.b.y,
        l.c.x,
        l.c.y,
        l.d.x,
        l.d.y
    )
}

const TEMPLATE_W: u32 = 96;
const TEMPLATE_H: u32 = 128;

fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b.sub(a);
    let t = (p.sub(a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    p.distance(a.add(ab.scale(t)))
}

/// Rasterizes a union of ellipses and capsules with a vertical shading ramp.
fn draw_hand(ellipses: &[(Point2, f64, f64)], capsules: &[(Point2, Point2, f64)]) -> RgbImage {
    RgbImage::from_fn(TEMPLATE_W, TEMPLATE_H, |x, y| {
        let p = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
        let inside = ellipses.iter().any(|(c, rx, ry)| {
            let d = p.sub(*c);
            (d.x / rx).powi(2) + (d.y / ry).powi(2) <= 1.0
        }) || capsules
            .iter()
            .any(|(a, b, r)| segment_distance(p, *a, *b) <= *r);
        if inside {
            let shade = 0.75 + 0.25 * (p.y / TEMPLATE_H as f64);
            Rgb([
                (232.0 * shade) as u8,
                (190.0 * shade) as u8,
                (160.0 * shade) as u8,
            ])
        } else {
            Rgb([0, 0, 0])
        }
    })
}

fn p(x: f64, y: f64) -> Point2 {
    Point2::new(x, y)
}

fn opened_palm() -> TemplateSpec {
    let raster = draw_hand(
        &[(p(48.0, 80.0), 26.0, 28.0)],
        &[
            (p(30.0, 60.0), p(26.0, 22.0), 5.0),
            (p(42.0, 56.0), p(41.0, 10.0), 5.0),
            (p(54.0, 56.0), p(56.0, 12.0), 5.0),
            (p(66.0, 62.0), p(71.0, 28.0), 4.5),
            (p(26.0, 88.0), p(9.0, 62.0), 6.0),
            (p(48.0, 100.0), p(48.0, 124.0), 13.0),
        ],
    );
    let landmarks = HandLandmarkSet::new(
        p(48.0, 120.0),
        p(26.0, 86.0),
        p(48.0, 52.0),
        p(70.0, 60.0),
        LandmarkSource::TemplateAnnotation,
    )
    .expect("stock landmarks are valid");
    TemplateSpec::new("opened-palm", raster, landmarks, Chirality::CounterClockwise)
        .expect("stock template is valid")
}

fn fist_back() -> TemplateSpec {
    let raster = draw_hand(
        &[(p(48.0, 76.0), 28.0, 26.0)],
        &[
            (p(28.0, 52.0), p(68.0, 52.0), 9.0),
            (p(70.0, 88.0), p(78.0, 66.0), 6.5),
            (p(48.0, 98.0), p(48.0, 124.0), 13.0),
        ],
    );
    let landmarks = HandLandmarkSet::new(
        p(48.0, 120.0),
        p(70.0, 86.0),
        p(48.0, 52.0),
        p(26.0, 60.0),
        LandmarkSource::TemplateAnnotation,
    )
    .expect("stock landmarks are valid");
    TemplateSpec::new("fist-back", raster, landmarks, Chirality::Clockwise)
        .expect("stock template is valid")
}
