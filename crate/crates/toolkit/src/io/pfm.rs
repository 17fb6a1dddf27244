//! Portable float maps: `PF` for RGB, `Pf` for one channel.
//!
//! Samples are 32-bit floats, little-endian (negative scale), stored bottom
//! row first. Writing narrows `f64` to `f32`, so a file read back and written
//! again is byte-identical, and an image holding `f32`-representable values
//! survives unchanged.

use std::io::{BufRead, Write};
use std::path::Path;

use surfelsplat_core::Image;

use crate::error::{Error, Result};

fn bad(reason: impl Into<String>) -> Error {
    Error::format("PFM", reason)
}

pub fn write_pfm<W: Write>(w: &mut W, img: &Image) -> std::io::Result<()> {
    let magic = match img.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("PFM needs 1 or 3 channels, got {c}"))),
    };
    write!(w, "{magic}\n{} {}\n-1.0\n", img.width(), img.height())?;
    let row = img.width() * img.channels();
    for y in (0..img.height()).rev() {
        for &v in &img.data()[y * row..(y + 1) * row] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_pfm(path: &Path, img: &Image) -> Result<()> {
    super::write_atomic(path, |w| write_pfm(w, img))
}

pub fn load_pfm(path: &Path) -> Result<Image> {
    read_pfm(&mut super::open(path)?)
}

fn token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut out = Vec::new();
    let mut byte = [0u8];
    loop {
        if r.read(&mut byte).map_err(|e| bad(e.to_string()))? == 0 {
            return Err(bad("truncated header"));
        }
        if byte[0].is_ascii_whitespace() {
            if out.is_empty() {
                continue;
            }
            // exactly one whitespace byte separates the header from the raster
            return String::from_utf8(out).map_err(|_| bad("non-ASCII header"));
        }
        out.push(byte[0]);
    }
}

pub fn read_pfm<R: BufRead>(r: &mut R) -> Result<Image> {
    let channels = match token(r)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        m => return Err(bad(format!("bad magic '{m}'"))),
    };
    let parse = |t: String| t.parse::<usize>().map_err(|_| bad(format!("bad dimension '{t}'")));
    let width = parse(token(r)?)?;
    let height = parse(token(r)?)?;
    if width == 0 || height == 0 {
        return Err(bad("empty image"));
    }
    let scale_tok = token(r)?;
    let scale: f64 = scale_tok.parse().map_err(|_| bad(format!("bad scale '{scale_tok}'")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be non-zero"));
    }
    let little = scale < 0.0;
    let row = width * channels;
    let mut raw = vec![0u8; row * height * 4];
    r.read_exact(&mut raw).map_err(|_| bad("truncated raster"))?;
    let mut data = vec![0.0; row * height];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (fy, x) = (i / row, i % row);
        data[(height - 1 - fy) * row + x] = v as f64;
    }
    Ok(Image::from_vec(width, height, channels, data))
}
