//! 16-bit grayscale depth PNGs: `depth_m = value / 256`, 0 means invalid.

use std::io::Cursor;

use crate::error::{Error, Result};
use crate::pseudo_lidar::DepthMap;

const SCALE: f32 = 256.0;

fn format_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("depth png: {e}"))
}

pub fn read_depth_png(bytes: &[u8]) -> Result<DepthMap> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(format_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err("image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(format_err)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(format_err(format!(
            "expected 16-bit grayscale, found {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let depth = buf[..info.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / SCALE)
        .collect();
    DepthMap::from_depths(w, h, depth)
}

/// Depths are rounded to 1/256 m and clamped to the representable range.
pub fn write_depth_png(d: &DepthMap) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(d.depth.len() * 2);
    for (z, valid) in d.depth.iter().zip(&d.valid) {
        let raw = if *valid {
            (z * SCALE).round().clamp(1.0, u16::MAX as f32) as u16
        } else {
            0
        };
        data.extend_from_slice(&raw.to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, d.width as u32, d.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(format_err)?;
        writer.write_image_data(&data).map_err(format_err)?;
    }
    Ok(out)
}
