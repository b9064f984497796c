//! PNG codec helpers and the few drawing primitives used for overlays.

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, GrayImage, ImageEncoder, Rgb, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("image encode failed: {0}")]
    Encode(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>, RasterError> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
        .map_err(|e| RasterError::Encode(e.to_string()))?;
    Ok(out)
}

pub fn encode_gray_png(img: &GrayImage) -> Result<Vec<u8>, RasterError> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)
        .map_err(|e| RasterError::Encode(e.to_string()))?;
    Ok(out)
}

/// Decodes PNG or JPEG bytes into 8-bit RGB.
pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage, RasterError> {
    let reader = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| RasterError::Decode(e.to_string()))?;
    let img = reader
        .decode()
        .map_err(|e| RasterError::Decode(e.to_string()))?;
    Ok(img.to_rgb8())
}

pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage, RasterError> {
    let img = image::load_from_memory(bytes).map_err(|e| RasterError::Decode(e.to_string()))?;
    Ok(img.to_luma8())
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, RasterError> {
    let bytes = std::fs::read(path).map_err(|source| RasterError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_rgb(&bytes)
}

pub fn put_checked(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// Bresenham line, clipped to the image.
pub fn draw_line(img: &mut RgbImage, from: (i64, i64), to: (i64, i64), color: Rgb<u8>) {
    let (mut x0, mut y0) = from;
    let (x1, y1) = to;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put_checked(img, x0, y0, color);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

pub fn draw_rect_outline(img: &mut RgbImage, x1: i64, y1: i64, x2: i64, y2: i64, color: Rgb<u8>) {
    draw_line(img, (x1, y1), (x2, y1), color);
    draw_line(img, (x2, y1), (x2, y2), color);
    draw_line(img, (x2, y2), (x1, y2), color);
    draw_line(img, (x1, y2), (x1, y1), color);
}

pub fn draw_dot(img: &mut RgbImage, cx: i64, cy: i64, radius: i64, color: Rgb<u8>) {
    for y in cy - radius..=cy + radius {
        for x in cx - radius..=cx + radius {
            if (x - cx).pow(2) + (y - cy).pow(2) <= radius * radius {
                put_checked(img, x, y, color);
            }
        }
    }
}

/// Integer alpha blend, `alpha` out of 255.
pub fn blend(under: Rgb<u8>, over: Rgb<u8>, alpha: u8) -> Rgb<u8> {
    let a = alpha as u32;
    let mix = |u: u8, o: u8| ((u as u32 * (255 - a) + o as u32 * a + 127) / 255) as u8;
    Rgb([
        mix(under[0], over[0]),
        mix(under[1], over[1]),
        mix(under[2], over[2]),
    ])
}
