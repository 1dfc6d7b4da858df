//! Portable graymap (P2/P5, 8 or 16 bit) and portable float map (`Pf`) I/O.
//!
//! Only single-channel images are handled. Float maps are stored bottom row
//! first on disk; [`FloatMap::data`] is always top row first.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major, top row first.
    pub samples: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FloatMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RasterImage {
    Gray(Graymap),
    Float(FloatMap),
}

impl RasterImage {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            RasterImage::Gray(g) => (g.height, g.width),
            RasterImage::Float(f) => (f.height, f.width),
        }
    }
}

/// Reads a graymap or float map, dispatching on the magic number.
pub fn read_image(path: &Path) -> Result<RasterImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<RasterImage> {
    let magic = bytes.get(..2).ok_or_else(|| Error::malformed(path, "file too short"))?;
    match magic {
        b"P2" | b"P5" => decode_pgm(bytes, path).map(RasterImage::Gray),
        b"Pf" => decode_pfm(bytes, path).map(RasterImage::Float),
        b"PF" => Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: "color float maps are not supported; expected single-channel `Pf`".into(),
        }),
        _ => Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: format!("unrecognized magic {:?}", String::from_utf8_lossy(magic)),
        }),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|c| !c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()
    }

    fn number<T: std::str::FromStr>(&mut self, path: &Path, what: &str) -> Result<T> {
        self.token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::malformed(path, format!("bad or missing {what}")))
    }
}

fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Graymap> {
    let ascii = &bytes[..2] == b"P2";
    let mut h = Header { bytes, pos: 2 };
    let width: usize = h.number(path, "width")?;
    let height: usize = h.number(path, "height")?;
    let maxval: u32 = h.number(path, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::malformed(path, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::malformed(path, format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width * height;
    let mut samples = Vec::with_capacity(n);
    if ascii {
        for _ in 0..n {
            let v: u32 = h.number(path, "sample")?;
            samples.push(v);
        }
    } else {
        // exactly one whitespace byte separates the header from the raster
        let start = h.pos + 1;
        let depth = if maxval < 256 { 1 } else { 2 };
        let raster = bytes
            .get(start..start + n * depth)
            .ok_or_else(|| Error::malformed(path, "truncated raster"))?;
        if depth == 1 {
            samples.extend(raster.iter().map(|&b| b as u32));
        } else {
            samples.extend(raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32));
        }
    }
    if let Some(v) = samples.iter().find(|&&v| v > maxval) {
        return Err(Error::malformed(path, format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok(Graymap {
        width,
        height,
        maxval: maxval as u16,
        samples: samples.into_iter().map(|v| v as u16).collect(),
    })
}

fn decode_pfm(bytes: &[u8], path: &Path) -> Result<FloatMap> {
    let mut h = Header { bytes, pos: 2 };
    let width: usize = h.number(path, "width")?;
    let height: usize = h.number(path, "height")?;
    let scale: f64 = h.number(path, "scale")?;
    if width == 0 || height == 0 {
        return Err(Error::malformed(path, "zero image dimension"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::malformed(path, "scale must be non-zero"));
    }
    let little = scale < 0.0;
    let start = h.pos + 1;
    let n = width * height;
    let raster = bytes
        .get(start..start + 4 * n)
        .ok_or_else(|| Error::malformed(path, "truncated raster"))?;
    let mut data = vec![0f32; n];
    for (idx, c) in raster.chunks_exact(4).enumerate() {
        let raw = [c[0], c[1], c[2], c[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // file rows run bottom to top
        let (file_row, col) = (idx / width, idx % width);
        data[(height - 1 - file_row) * width + col] = v;
    }
    Ok(FloatMap { width, height, data })
}

pub fn encode_pgm(img: &Graymap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval < 256 {
        out.extend(img.samples.iter().map(|&v| v as u8));
    } else {
        for &v in &img.samples {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

pub fn encode_pfm(img: &FloatMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    for row in (0..img.height).rev() {
        for v in &img.data[row * img.width..(row + 1) * img.width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_pgm(path: &Path, img: &Graymap) -> Result<()> {
    write_bytes(path, &encode_pgm(img))
}

pub fn write_pfm(path: &Path, img: &FloatMap) -> Result<()> {
    write_bytes(path, &encode_pfm(img))
}

/// Writes through a sibling temporary file and renames it into place, so a
/// failed write never leaves a truncated file at `path`.
pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".partial");
    let tmp = path.with_file_name(tmp_name);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes))
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}
