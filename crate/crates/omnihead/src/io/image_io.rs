//! `IMG1` float maps and PNG export.
//!
//! `IMG1` layout after the magic: u32 version (1), u32 width, u32 height,
//! u32 channels, f32 data row-major from the top-left, channel-interleaved.
//! Used for depth and opacity maps where 8-bit PNG would quantize away the
//! signal. PNGs are written with the `image` crate from [0, 1] floats.

use super::binfmt::*;
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"IMG1";

/// A float image, row-major from the top-left, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatMap {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        FloatMap {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }
}

pub fn save_float_map(path: &Path, map: &FloatMap) -> Result<()> {
    if map.data.len() != map.width * map.height * map.channels {
        return Err(Error::Dimension("float map data length mismatch".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_magic(&mut w, MAGIC)?;
    write_u32(&mut w, 1)?;
    write_u32(&mut w, map.width as u32)?;
    write_u32(&mut w, map.height as u32)?;
    write_u32(&mut w, map.channels as u32)?;
    write_f32_slice(&mut w, &map.data)?;
    w.flush()?;
    Ok(())
}

pub fn load_float_map(path: &Path) -> Result<FloatMap> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, MAGIC, path)?;
    let version = read_u32(&mut r)?;
    if version != 1 {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let width = checked_len(read_u32(&mut r)? as u64, 1 << 16, "width", path)?;
    let height = checked_len(read_u32(&mut r)? as u64, 1 << 16, "height", path)?;
    let channels = checked_len(read_u32(&mut r)? as u64, 16, "channel", path)?;
    let data = read_f32_vec(&mut r, width * height * channels)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err(path, "trailing bytes after image payload"));
    }
    Ok(FloatMap {
        width,
        height,
        channels,
        data,
    })
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a single-channel [0, 1] float map as an 8-bit grayscale PNG.
pub fn save_png_gray(path: &Path, map: &FloatMap) -> Result<()> {
    if map.channels != 1 {
        return Err(Error::Dimension(format!(
            "grayscale PNG needs 1 channel, got {}",
            map.channels
        )));
    }
    let buf: Vec<u8> = map.data.iter().map(|&v| to_u8(v)).collect();
    let img = image::GrayImage::from_raw(map.width as u32, map.height as u32, buf)
        .ok_or_else(|| Error::Dimension("image buffer size mismatch".into()))?;
    img.save(path)
        .map_err(|e| format_err(path, format!("png encode failed: {e}")))?;
    Ok(())
}

/// Writes a three-channel [0, 1] float map as an 8-bit RGB PNG.
pub fn save_png_rgb(path: &Path, map: &FloatMap) -> Result<()> {
    if map.channels != 3 {
        return Err(Error::Dimension(format!(
            "RGB PNG needs 3 channels, got {}",
            map.channels
        )));
    }
    let buf: Vec<u8> = map.data.iter().map(|&v| to_u8(v)).collect();
    let img = image::RgbImage::from_raw(map.width as u32, map.height as u32, buf)
        .ok_or_else(|| Error::Dimension("image buffer size mismatch".into()))?;
    img.save(path)
        .map_err(|e| format_err(path, format!("png encode failed: {e}")))?;
    Ok(())
}
