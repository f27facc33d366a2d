//! PNG encoding and decoding for atlases, composites, masks, depth maps and
//! indexed label maps.

use std::io::Cursor;

use png::{BitDepth, ColorType, Transformations};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PngError {
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
}

fn encode(
    width: u32,
    height: u32,
    color: ColorType,
    depth: BitDepth,
    palette: Option<(Vec<u8>, Option<Vec<u8>>)>,
    data: &[u8],
) -> Result<Vec<u8>, PngError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(depth);
        if let Some((plte, trns)) = palette {
            enc.set_palette(plte);
            if let Some(trns) = trns {
                enc.set_trns(trns);
            }
        }
        let mut writer = enc.write_header()?;
        writer.write_image_data(data)?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn encode_rgba8(width: u32, height: u32, pixels: &[[u8; 4]]) -> Result<Vec<u8>, PngError> {
    encode(
        width,
        height,
        ColorType::Rgba,
        BitDepth::Eight,
        None,
        pixels.as_flattened(),
    )
}

pub fn encode_gray8(width: u32, height: u32, pixels: &[u8]) -> Result<Vec<u8>, PngError> {
    encode(
        width,
        height,
        ColorType::Grayscale,
        BitDepth::Eight,
        None,
        pixels,
    )
}

pub fn encode_gray16(width: u32, height: u32, pixels: &[u16]) -> Result<Vec<u8>, PngError> {
    let data: Vec<u8> = pixels.iter().flat_map(|v| v.to_be_bytes()).collect();
    encode(
        width,
        height,
        ColorType::Grayscale,
        BitDepth::Sixteen,
        None,
        &data,
    )
}

/// Palette-indexed 8-bit PNG. `transparent` marks palette entries that get
/// alpha 0 via tRNS.
pub fn encode_indexed(
    width: u32,
    height: u32,
    indices: &[u8],
    palette: &[[u8; 3]],
    transparent: &[u8],
) -> Result<Vec<u8>, PngError> {
    let plte: Vec<u8> = palette.iter().flatten().copied().collect();
    let trns = if transparent.is_empty() {
        None
    } else {
        let mut t = vec![255u8; palette.len()];
        for &i in transparent {
            if let Some(slot) = t.get_mut(i as usize) {
                *slot = 0;
            }
        }
        Some(t)
    };
    encode(
        width,
        height,
        ColorType::Indexed,
        BitDepth::Eight,
        Some((plte, trns)),
        indices,
    )
}

pub struct Decoded {
    pub width: u32,
    pub height: u32,
    pub color: ColorType,
    pub depth: BitDepth,
    pub data: Vec<u8>,
}

fn decode(bytes: &[u8], transform: Transformations) -> Result<Decoded, PngError> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(transform);
    let mut reader = dec.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| PngError::Unsupported("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width,
        height: info.height,
        color: info.color_type,
        depth: info.bit_depth,
        data: buf,
    })
}

/// Decodes any PNG to straight 8-bit RGBA.
pub fn decode_rgba8(bytes: &[u8]) -> Result<(u32, u32, Vec<[u8; 4]>), PngError> {
    let d = decode(bytes, Transformations::EXPAND | Transformations::STRIP_16)?;
    let px: Vec<[u8; 4]> = match d.color {
        ColorType::Rgba => d
            .data
            .chunks_exact(4)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect(),
        ColorType::Rgb => d
            .data
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2], 255])
            .collect(),
        ColorType::GrayscaleAlpha => d
            .data
            .chunks_exact(2)
            .map(|c| [c[0], c[0], c[0], c[1]])
            .collect(),
        ColorType::Grayscale => d.data.iter().map(|&g| [g, g, g, 255]).collect(),
        ColorType::Indexed => return Err(PngError::Unsupported("palette was not expanded".into())),
    };
    Ok((d.width, d.height, px))
}

/// Decodes an 8-bit indexed or grayscale PNG to its raw sample values.
pub fn decode_indices(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), PngError> {
    let d = decode(bytes, Transformations::IDENTITY)?;
    match (d.color, d.depth) {
        (ColorType::Indexed | ColorType::Grayscale, BitDepth::Eight) => {
            Ok((d.width, d.height, d.data))
        }
        (c, b) => Err(PngError::Unsupported(format!(
            "expected 8-bit indexed or grayscale, got {c:?} {b:?}"
        ))),
    }
}

pub fn decode_gray16(bytes: &[u8]) -> Result<(u32, u32, Vec<u16>), PngError> {
    let d = decode(bytes, Transformations::IDENTITY)?;
    match (d.color, d.depth) {
        (ColorType::Grayscale, BitDepth::Sixteen) => Ok((
            d.width,
            d.height,
            d.data
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect(),
        )),
        (c, b) => Err(PngError::Unsupported(format!(
            "expected 16-bit grayscale, got {c:?} {b:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgba_roundtrip() {
        let px = vec![[1, 2, 3, 4], [250, 0, 128, 255]];
        let bytes = encode_rgba8(2, 1, &px).unwrap();
        let (w, h, back) = decode_rgba8(&bytes).unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(back, px);
    }

    #[test]
    fn indexed_keeps_raw_indices() {
        let idx = vec![0, 1, 255, 1];
        let mut pal = vec![[0u8; 3]; 256];
        pal[1] = [255, 0, 0];
        let bytes = encode_indexed(2, 2, &idx, &pal, &[255]).unwrap();
        let (_, _, back) = decode_indices(&bytes).unwrap();
        assert_eq!(back, idx);
    }

    #[test]
    fn gray16_roundtrip() {
        let v = vec![0, 32768, 65535];
        let bytes = encode_gray16(3, 1, &v).unwrap();
        assert_eq!(decode_gray16(&bytes).unwrap().2, v);
    }
}
