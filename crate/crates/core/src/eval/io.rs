use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::maps::{BitDepth, ContourPrediction};

/// Binary PGM (`P5`). 16-bit samples are big-endian.
pub fn write_pgm<W: Write>(mut w: W, pred: &ContourPrediction, depth: BitDepth) -> Result<()> {
    write!(w, "P5\n{} {}\n{}\n", pred.width(), pred.height(), depth.max_value())?;
    let samples = pred.to_samples(depth);
    let bytes: Vec<u8> = match depth {
        BitDepth::Eight => samples.iter().map(|&s| s as u8).collect(),
        BitDepth::Sixteen => samples.iter().flat_map(|s| s.to_be_bytes()).collect(),
    };
    w.write_all(&bytes)?;
    Ok(())
}

fn header_token(data: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && data[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&data[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("malformed PGM header".into()))
}

pub fn read_pgm<R: Read>(mut r: R) -> Result<ContourPrediction> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if !data.starts_with(b"P5") {
        return Err(Error::Format("not a binary PGM (P5)".into()));
    }
    let mut pos = 2;
    let width = header_token(&data, &mut pos)?;
    let height = header_token(&data, &mut pos)?;
    let maxval = header_token(&data, &mut pos)?;
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let depth = match maxval {
        255 => BitDepth::Eight,
        65535 => BitDepth::Sixteen,
        other => return Err(Error::Format(format!("unsupported PGM maxval {other}"))),
    };
    let raster = data.get(pos..).unwrap_or_default();
    let n = width * height;
    let samples: Vec<u16> = match depth {
        BitDepth::Eight if raster.len() == n => raster.iter().map(|&b| u16::from(b)).collect(),
        BitDepth::Sixteen if raster.len() == 2 * n => {
            raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        }
        _ => return Err(Error::Format(format!("PGM raster has {} bytes for {width}x{height}", raster.len()))),
    };
    ContourPrediction::from_samples(width, height, &samples, depth)
}

pub fn save_pgm(path: impl AsRef<Path>, pred: &ContourPrediction) -> Result<()> {
    let mut buf = Vec::new();
    write_pgm(&mut buf, pred, pred.bit_depth)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<ContourPrediction> {
    read_pgm(fs::File::open(path)?)
}

/// 16-bit grayscale PNG.
pub fn save_png16(path: impl AsRef<Path>, pred: &ContourPrediction) -> Result<()> {
    let samples = pred.to_samples(BitDepth::Sixteen);
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(pred.width() as u32, pred.height() as u32, samples).expect("sized buffer");
    img.save(path.as_ref())?;
    Ok(())
}

/// Reads 8- or 16-bit gray PNG predictions at their native depth.
pub fn load_png(path: impl AsRef<Path>) -> Result<ContourPrediction> {
    let img = image::open(path.as_ref())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            let s: Vec<u16> = g.into_raw().into_iter().map(u16::from).collect();
            ContourPrediction::from_samples(w, h, &s, BitDepth::Eight)
        }
        other => ContourPrediction::from_samples(w, h, &other.to_luma16().into_raw(), BitDepth::Sixteen),
    }
}

/// Dispatches on the extension (`.pgm` or `.png`).
pub fn load_prediction(path: impl AsRef<Path>) -> Result<ContourPrediction> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => load_pgm(path),
        Some("png") => load_png(path),
        _ => Err(Error::Format(format!("{}: expected .pgm or .png", path.display()))),
    }
}

pub fn save_prediction(path: impl AsRef<Path>, pred: &ContourPrediction) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => save_pgm(path, pred),
        Some("png") => save_png16(path, pred),
        _ => Err(Error::Format(format!("{}: expected .pgm or .png", path.display()))),
    }
}
