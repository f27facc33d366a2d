//! Binary float tensors: 16-byte header (4-byte magic, then little-endian
//! u32 height, width, channels) followed by `H*W*N` little-endian f32 values,
//! row-major with channels innermost.

use thiserror::Error;

pub const SCORE_MAGIC: [u8; 4] = *b"SSTK";
pub const DEPTH_MAGIC: [u8; 4] = *b"DPTH";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("expected magic {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("tensor truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("tensor has {0} trailing bytes")]
    Trailing(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

pub fn encode(magic: [u8; 4], t: &Tensor) -> Vec<u8> {
    assert_eq!(
        t.data.len(),
        t.height as usize * t.width as usize * t.channels as usize,
        "tensor shape does not match data length"
    );
    let mut out = Vec::with_capacity(HEADER_LEN + t.data.len() * 4);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&t.height.to_le_bytes());
    out.extend_from_slice(&t.width.to_le_bytes());
    out.extend_from_slice(&t.channels.to_le_bytes());
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(magic: [u8; 4], bytes: &[u8]) -> Result<Tensor, TensorError> {
    if bytes.len() < HEADER_LEN {
        return Err(TensorError::Truncated {
            need: HEADER_LEN,
            have: bytes.len(),
        });
    }
    if bytes[..4] != magic {
        return Err(TensorError::BadMagic {
            expected: String::from_utf8_lossy(&magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let (height, width, channels) = (u32_at(4), u32_at(8), u32_at(12));
    let count = height as usize * width as usize * channels as usize;
    let need = HEADER_LEN + count * 4;
    if bytes.len() < need {
        return Err(TensorError::Truncated {
            need,
            have: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(TensorError::Trailing(bytes.len() - need));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor {
        height,
        width,
        channels,
        data,
    })
}
