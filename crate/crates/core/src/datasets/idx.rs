use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const UBYTE: u8 = 0x08;

/// Raw contents of an unsigned-byte IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX buffer: `00 00 <type> <ndim>`, big-endian u32 extents, data.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format("bad IDX magic".into()));
    }
    if bytes[2] != UBYTE {
        return Err(Error::Format(format!(
            "unsupported IDX element type 0x{:02x}",
            bytes[2]
        )));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Format("truncated IDX header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() < count {
        return Err(Error::Format(format!(
            "truncated IDX data: need {count} bytes, found {}",
            body.len()
        )));
    }
    Ok(IdxArray {
        dims,
        data: body[..count].to_vec(),
    })
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, array.dims.len() as u8];
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).with_context(path.display().to_string()))?;
    parse_idx(&bytes).map_err(|e| e.with_context(path.display().to_string()))
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    fs::write(path, encode_idx(array))?;
    Ok(())
}

/// Maps a byte in `[0, 255]` affinely onto `[−0.999, 0.999]`.
pub fn byte_to_activation(b: u8) -> f64 {
    -0.999 + 1.998 * f64::from(b) / 255.0
}

/// Loads an image file (3 dims) as `[N, H, W]` with scaled pixels.
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let a = read_idx(path)?;
    if a.dims.len() != 3 {
        return Err(Error::Format(format!(
            "{}: image file needs 3 dims, found {}",
            path.display(),
            a.dims.len()
        )));
    }
    Tensor::new(a.dims, a.data.iter().map(|&b| byte_to_activation(b)).collect())
}

/// Loads a label file (1 dim).
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let a = read_idx(path)?;
    if a.dims.len() != 1 {
        return Err(Error::Format(format!(
            "{}: label file needs 1 dim, found {}",
            path.display(),
            a.dims.len()
        )));
    }
    Ok(a.data)
}
