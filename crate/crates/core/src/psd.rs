//! Layered Photoshop (PSD version 1) writer: 8-bit RGB with alpha,
//! every layer full-canvas, PackBits-compressed channels.

use std::io::{self, Write};

use thiserror::Error;

use crate::image::RgbaImage;
use crate::layers::{flatten, NamedLayer};

pub const MAX_LAYERS: usize = 999;
/// PSD version 1 limits both dimensions to 30000.
pub const MAX_DIMENSION: u32 = 30_000;

#[derive(Debug, Error)]
pub enum PsdError {
    #[error("no layers to export")]
    NoLayers,
    #[error("{0} layers exceed the limit of {MAX_LAYERS}")]
    TooManyLayers(usize),
    #[error("canvas {0}x{1} outside 1..={MAX_DIMENSION}")]
    BadDimensions(u32, u32),
    #[error("layer {0:?} does not match the canvas size")]
    LayerSize(String),
    #[error("write failed: {0}")]
    IoFailure(#[from] io::Error),
}

/// PackBits run-length encoding of one row.
pub fn packbits(row: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(row.len() + row.len() / 128 + 1);
    let mut i = 0;
    while i < row.len() {
        let mut run = 1;
        while i + run < row.len() && run < 128 && row[i + run] == row[i] {
            run += 1;
        }
        if run >= 2 {
            out.push((257 - run) as u8);
            out.push(row[i]);
            i += run;
            continue;
        }
        let start = i;
        while i < row.len() && i - start < 128 {
            if i + 1 < row.len() && row[i + 1] == row[i] {
                break;
            }
            i += 1;
        }
        if i == start {
            i += 1;
        }
        out.push((i - start - 1) as u8);
        out.extend_from_slice(&row[start..i]);
    }
    out
}

pub fn unpackbits(data: &[u8], expected: usize) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(expected);
    let mut i = 0;
    while i < data.len() {
        let h = data[i] as i8;
        i += 1;
        if h >= 0 {
            let n = h as usize + 1;
            out.extend_from_slice(data.get(i..i + n)?);
            i += n;
        } else if h != -128 {
            out.extend(std::iter::repeat_n(
                *data.get(i)?,
                (1 - h as isize) as usize,
            ));
            i += 1;
        }
    }
    (out.len() == expected).then_some(out)
}

/// Channel planes (R, G, B, A) of an image, 8-bit.
fn planes(image: &RgbaImage) -> [Vec<u8>; 4] {
    let px = image.to_rgba8();
    [0, 1, 2, 3].map(|c| px.iter().map(|p| p[c]).collect())
}

/// Re-encodes a packed row one byte longer by splitting its first literal
/// run of even length. Returns `None` when the row has no such run.
fn split_even_literal(packed: &[u8]) -> Option<Vec<u8>> {
    let mut i = 0;
    while i < packed.len() {
        let h = packed[i] as i8;
        if h >= 0 {
            let n = h as usize + 1;
            if n.is_multiple_of(2) {
                let mut out = packed[..i].to_vec();
                out.push((n - 2) as u8);
                out.extend_from_slice(&packed[i + 1..i + n]);
                out.push(0);
                out.push(packed[i + n]);
                out.extend_from_slice(&packed[i + 1 + n..]);
                return Some(out);
            }
            i += 1 + n;
        } else {
            i += 2;
        }
    }
    None
}

/// RLE block for one plane: row byte counts then row data. The data is
/// kept at even length (some readers assume channels end on even offsets);
/// an odd total always contains an even-length literal run to split.
fn rle_plane(plane: &[u8], width: usize) -> (Vec<u16>, Vec<u8>) {
    let mut rows: Vec<Vec<u8>> = plane.chunks(width).map(packbits).collect();
    if rows.iter().map(Vec::len).sum::<usize>() % 2 == 1 {
        let fixed = rows
            .iter()
            .enumerate()
            .find_map(|(i, r)| split_even_literal(r).map(|r| (i, r)))
            .expect("odd packbits output has an even literal run");
        rows[fixed.0] = fixed.1;
    }
    let counts = rows.iter().map(|r| r.len() as u16).collect();
    (counts, rows.concat())
}

fn pascal_name(name: &str) -> Vec<u8> {
    let mut bytes: Vec<u8> = name
        .chars()
        .map(|c| if c.is_ascii() { c as u8 } else { b'?' })
        .take(255)
        .collect();
    bytes.insert(0, (bytes.len()) as u8);
    while !bytes.len().is_multiple_of(4) {
        bytes.push(0);
    }
    bytes
}

/// Writes `stack` (bottom layer first) as a PSD. The composite image is the
/// plain back-to-front flatten of the stack.
pub fn export_psd<W: Write>(
    stack: &[NamedLayer],
    width: u32,
    height: u32,
    mut out: W,
) -> Result<(), PsdError> {
    if stack.is_empty() {
        return Err(PsdError::NoLayers);
    }
    if stack.len() > MAX_LAYERS {
        return Err(PsdError::TooManyLayers(stack.len()));
    }
    if width == 0 || height == 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(PsdError::BadDimensions(width, height));
    }
    if let Some(l) = stack
        .iter()
        .find(|l| l.image.width != width || l.image.height != height)
    {
        return Err(PsdError::LayerSize(l.name.clone()));
    }
    let w = width as usize;

    let mut buf = Vec::new();
    buf.extend_from_slice(b"8BPS");
    buf.extend_from_slice(&1u16.to_be_bytes());
    buf.extend_from_slice(&[0; 6]);
    buf.extend_from_slice(&4u16.to_be_bytes());
    buf.extend_from_slice(&height.to_be_bytes());
    buf.extend_from_slice(&width.to_be_bytes());
    buf.extend_from_slice(&8u16.to_be_bytes());
    buf.extend_from_slice(&3u16.to_be_bytes());
    buf.extend_from_slice(&0u32.to_be_bytes()); // color mode data
    buf.extend_from_slice(&0u32.to_be_bytes()); // image resources

    let mut records = Vec::new();
    let mut channel_data = Vec::new();
    for layer in stack {
        let [r, g, b, a] = planes(&layer.image);
        // R, G, B, then alpha (-1); some readers ignore the ids and assume this order
        let blocks: Vec<(i16, Vec<u8>)> = [(0i16, r), (1, g), (2, b), (-1, a)]
            .into_iter()
            .map(|(id, plane)| {
                let (counts, data) = rle_plane(&plane, w);
                let mut block = 1u16.to_be_bytes().to_vec();
                for c in counts {
                    block.extend_from_slice(&c.to_be_bytes());
                }
                block.extend_from_slice(&data);
                (id, block)
            })
            .collect();

        records.extend_from_slice(&0i32.to_be_bytes());
        records.extend_from_slice(&0i32.to_be_bytes());
        records.extend_from_slice(&(height as i32).to_be_bytes());
        records.extend_from_slice(&(width as i32).to_be_bytes());
        records.extend_from_slice(&4u16.to_be_bytes());
        for (id, block) in &blocks {
            records.extend_from_slice(&id.to_be_bytes());
            records.extend_from_slice(&(block.len() as u32).to_be_bytes());
        }
        records.extend_from_slice(b"8BIMnorm");
        records.push(255); // opacity
        records.push(0); // clipping: base
        records.push(0); // flags: visible
        records.push(0);
        let name = pascal_name(&layer.name);
        records.extend_from_slice(&(8 + name.len() as u32).to_be_bytes());
        records.extend_from_slice(&0u32.to_be_bytes()); // layer mask
        records.extend_from_slice(&0u32.to_be_bytes()); // blending ranges
        records.extend_from_slice(&name);
        for (_, block) in blocks {
            channel_data.extend_from_slice(&block);
        }
    }

    let mut layer_info = (stack.len() as i16).to_be_bytes().to_vec();
    layer_info.extend_from_slice(&records);
    layer_info.extend_from_slice(&channel_data);
    if !layer_info.len().is_multiple_of(2) {
        layer_info.push(0);
    }
    let section_len = 4 + layer_info.len() as u32 + 4;
    buf.extend_from_slice(&section_len.to_be_bytes());
    buf.extend_from_slice(&(layer_info.len() as u32).to_be_bytes());
    buf.extend_from_slice(&layer_info);
    buf.extend_from_slice(&0u32.to_be_bytes()); // global layer mask

    let merged = flatten(stack, width, height);
    let mut counts = Vec::new();
    let mut data = Vec::new();
    for plane in planes(&merged) {
        let (c, d) = rle_plane(&plane, w);
        counts.extend(c);
        data.extend(d);
    }
    buf.extend_from_slice(&1u16.to_be_bytes());
    for c in counts {
        buf.extend_from_slice(&c.to_be_bytes());
    }
    buf.extend_from_slice(&data);

    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packbits_roundtrip_edge_cases() {
        let cases: Vec<Vec<u8>> = vec![
            vec![],
            vec![7],
            vec![1, 2],
            vec![5, 5],
            vec![0; 300],
            (0..=255).collect(),
            vec![1, 1, 2, 3, 3, 3, 4, 5, 6, 6],
        ];
        for c in cases {
            let p = packbits(&c);
            assert_eq!(unpackbits(&p, c.len()).unwrap(), c);
        }
        assert_eq!(packbits(&[9; 4]), vec![253, 9]);
    }

    #[test]
    fn channel_data_is_even_and_decodes() {
        for row in [
            vec![1u8, 2],
            vec![1, 2, 3, 4, 4, 4, 5, 6],
            vec![7; 3],
            (0..=255).collect(),
        ] {
            let (counts, data) = rle_plane(&row, row.len());
            assert_eq!(data.len() % 2, 0);
            assert_eq!(counts, vec![data.len() as u16]);
            assert_eq!(unpackbits(&data, row.len()).unwrap(), row);
        }
        assert_eq!(split_even_literal(&[1, 8, 9]), Some(vec![0, 8, 0, 9]));
        assert_eq!(split_even_literal(&[253, 9]), None);
    }

    #[test]
    fn pascal_names_pad_to_four() {
        assert_eq!(pascal_name("Hair"), b"\x04Hair\0\0\0");
        assert_eq!(pascal_name("abc"), b"\x03abc");
        assert_eq!(pascal_name("").len(), 4);
    }

    #[test]
    fn rejects_empty_stack() {
        let mut sink = Vec::new();
        assert!(matches!(
            export_psd(&[], 4, 4, &mut sink),
            Err(PsdError::NoLayers)
        ));
    }
}
