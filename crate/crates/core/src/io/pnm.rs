//! ASCII portable anymaps: P2 graymaps for single channels, P3 pixmaps for composites.

use std::fmt::Write as _;
use std::path::Path;

use super::{write_file, IoError};
use crate::num::Real;
use crate::scan::{Image, RgbImage};

pub const PGM_MAXVAL: u32 = 65535;
pub const PPM_MAXVAL: u32 = 255;

const PGM_PER_LINE: usize = 11;
const PPM_PIXELS_PER_LINE: usize = 5;

fn check_size(width: usize, height: usize, len: usize) -> Result<(), IoError> {
    if width == 0 || height == 0 || len != width * height {
        return Err(IoError::Validation(format!(
            "image is {width}×{height} with {len} samples"
        )));
    }
    Ok(())
}

fn quantize<T: Real>(v: T, maxval: u32) -> u32 {
    let v = v.as_f64();
    if !(v > 0.0) {
        return 0;
    }
    (v.min(1.0) * maxval as f64).round() as u32
}

/// Writes `samples` right-aligned in `w` columns, `per_line` to a line, with
/// every image row of `row_len` samples starting on a fresh line.
fn push_rows(out: &mut String, row_len: usize, per_line: usize, samples: impl Iterator<Item = u32>, w: usize) {
    let mut col = 0;
    for (n, s) in samples.enumerate() {
        if col > 0 {
            out.push(' ');
        }
        write!(out, "{s:>w$}").expect("writing to a String");
        col += 1;
        if col == per_line || (n + 1) % row_len == 0 {
            out.push('\n');
            col = 0;
        }
    }
}

/// P2 text with samples scaled so the image maximum maps to 65535; negative
/// values clip to 0 and an all-nonpositive image is black.
pub fn format_pgm<T: Real>(image: &Image<T>) -> Result<String, IoError> {
    check_size(image.width, image.height, image.data.len())?;
    if image.data.iter().any(|v| !v.is_finite()) {
        return Err(IoError::Validation("image contains non-finite values".into()));
    }
    let peak = image.max();
    let mut out = format!("P2\n{} {}\n{PGM_MAXVAL}\n", image.width, image.height);
    push_rows(
        &mut out,
        image.width,
        PGM_PER_LINE,
        image
            .data
            .iter()
            .map(|&v| if peak > T::zero() { quantize(v / peak, PGM_MAXVAL) } else { 0 }),
        5,
    );
    Ok(out)
}

/// P3 text; channel values are taken in [0, 1].
pub fn format_ppm<T: Real>(image: &RgbImage<T>) -> Result<String, IoError> {
    check_size(image.width, image.height, image.data.len())?;
    if image.data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(IoError::Validation("image contains non-finite values".into()));
    }
    let mut out = format!("P3\n{} {}\n{PPM_MAXVAL}\n", image.width, image.height);
    push_rows(
        &mut out,
        3 * image.width,
        3 * PPM_PIXELS_PER_LINE,
        image.data.iter().flatten().map(|&v| quantize(v, PPM_MAXVAL)),
        3,
    );
    Ok(out)
}

pub fn write_pgm<T: Real>(path: impl AsRef<Path>, image: &Image<T>) -> Result<(), IoError> {
    write_file(path.as_ref(), &format_pgm(image)?)
}

pub fn write_ppm<T: Real>(path: impl AsRef<Path>, image: &RgbImage<T>) -> Result<(), IoError> {
    write_file(path.as_ref(), &format_ppm(image)?)
}
