use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::idx::byte_to_activation;

/// 8-bit grayscale or RGB image, samples interleaved row-major as stored in
/// binary PGM/PPM files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

/// Inverse of the pixel scaling: `[−0.999, 0.999]` back to bytes, clamped.
pub fn activation_to_byte(v: f64) -> u8 {
    ((v + 0.999) / 1.998 * 255.0).round().clamp(0.0, 255.0) as u8
}

impl Image {
    /// `[c, h, w]` with samples scaled to `[−0.999, 0.999]`.
    pub fn to_tensor(&self) -> Tensor {
        let (c, h, w) = (self.channels, self.height, self.width);
        Tensor::from_fn(&[c, h, w], |i| {
            let (ch, p) = (i / (h * w), i % (h * w));
            byte_to_activation(self.data[p * c + ch])
        })
    }

    /// Accepts `[h, w]` (grayscale) or `[c, h, w]` with `c` of 1 or 3.
    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        let (c, h, w) = match *t.shape() {
            [h, w] => (1, h, w),
            [c, h, w] if c == 1 || c == 3 => (c, h, w),
            _ => {
                return Err(Error::Shape(format!(
                    "image tensor must be [h, w] or [1|3, h, w], got {:?}",
                    t.shape()
                )))
            }
        };
        let mut data = vec![0u8; c * h * w];
        for (i, &v) in t.data().iter().enumerate() {
            let (ch, p) = (i / (h * w), i % (h * w));
            data[p * c + ch] = activation_to_byte(v);
        }
        Ok(Image {
            channels: c,
            height: h,
            width: w,
            data,
        })
    }

    /// Channel-mean luminance as `[h, w]` in activation units.
    pub fn luminance(&self) -> Tensor {
        let c = self.channels;
        Tensor::from_fn(&[self.height, self.width], |p| {
            let s: f64 = (0..c).map(|ch| byte_to_activation(self.data[p * c + ch])).sum();
            s / c as f64
        })
    }
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PNM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format("non-ASCII PNM header".into()))
}

/// Parses binary PGM (`P5`) or PPM (`P6`) with maxval ≤ 255.
pub fn parse_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let channels = match header_token(bytes, &mut pos)? {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::Format(format!("unsupported PNM magic {m:?}"))),
    };
    let mut num = |what: &str| -> Result<usize> {
        header_token(bytes, &mut pos)?
            .parse()
            .map_err(|_| Error::Format(format!("bad PNM {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 255 || width == 0 || height == 0 {
        return Err(Error::Format(format!(
            "unsupported PNM geometry {width}×{height}, maxval {maxval}"
        )));
    }
    pos += 1;
    let n = channels * width * height;
    if bytes.len() < pos + n {
        return Err(Error::Format("truncated PNM data".into()));
    }
    let data = bytes[pos..pos + n]
        .iter()
        .map(|&b| ((b as usize * 255 + maxval / 2) / maxval) as u8)
        .collect();
    Ok(Image {
        channels,
        height,
        width,
        data,
    })
}

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_pnm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).with_context(path.display().to_string()))?;
    parse_pnm(&bytes).map_err(|e| e.with_context(path.display().to_string()))
}

pub fn write_pnm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_pnm(img)).map_err(|e| Error::from(e).with_context(path.display().to_string()))
}

/// Every `.pgm`/`.ppm` file in `dir`, sorted by file name.
pub fn load_image_folder(dir: &Path) -> Result<Vec<(PathBuf, Image)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::from(e).with_context(dir.display().to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension()
                    .and_then(|s| s.to_str())
                    .map(str::to_ascii_lowercase)
                    .as_deref(),
                Some("pgm" | "ppm")
            )
        })
        .collect();
    paths.sort();
    paths.into_iter().map(|p| read_pnm(&p).map(|img| (p, img))).collect()
}

/// Tiles `[c, h, w]` (or `[h, w]`) tensors into one image, one row of the
/// grid per inner vector, separated by 1-pixel dark borders.
pub fn tile_grid(rows: &[Vec<Tensor>]) -> Result<Image> {
    let first = rows
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty image grid".into()))?;
    let tile = Image::from_tensor(first)?;
    let (c, th, tw) = (tile.channels, tile.height, tile.width);
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let height = rows.len() * (th + 1) + 1;
    let width = cols * (tw + 1) + 1;
    let mut data = vec![0u8; height * width * c];
    for (r, row) in rows.iter().enumerate() {
        for (k, t) in row.iter().enumerate() {
            let img = Image::from_tensor(t)?;
            if (img.channels, img.height, img.width) != (c, th, tw) {
                return Err(Error::Shape("grid tiles differ in shape".into()));
            }
            let (oy, ox) = (1 + r * (th + 1), 1 + k * (tw + 1));
            for y in 0..th {
                let src = &img.data[y * tw * c..(y + 1) * tw * c];
                let dst = ((oy + y) * width + ox) * c;
                data[dst..dst + tw * c].copy_from_slice(src);
            }
        }
    }
    Ok(Image {
        channels: c,
        height,
        width,
        data,
    })
}
