//! Little-endian binary containers for histogram cubes and reconstructed
//! volumes.
//!
//! ```text
//! magic    4 bytes   "SPH1" (u32 counts) or "SPR1" (f32 values)
//! height   u32
//! width    u32
//! n_bins   u32
//! payload  height·width·n_bins values, (i, j, k) row-major
//! ```
//!
//! Each file has a JSON sidecar next to it with the same stem and a `.json`
//! extension.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{HistogramCube, ScanConfig};
use crate::netpbm::write_bytes;
use crate::volume::{BinTiming, RdVolume};

pub const CUBE_MAGIC: &[u8; 4] = b"SPH1";
pub const VOLUME_MAGIC: &[u8; 4] = b"SPR1";
const HEADER_LEN: usize = 16;

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeSidecar {
    pub format: String,
    pub height: usize,
    pub width: usize,
    /// Acquisition settings; `n_bins` here is the cube's third dimension.
    #[serde(flatten)]
    pub scan: ScanConfig,
    pub background_per_bin: f64,
    pub seed: u64,
    pub alpha: f64,
    pub scan_step: usize,
    /// `[rows, cols, bins]` of the kernel implied by `scan`.
    pub kernel_size: [usize; 3],
    /// Free-form record of the settings that produced the file.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub effective_config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeSidecar {
    pub format: String,
    pub height: usize,
    pub width: usize,
    pub n_bins: usize,
    pub bin_width: f64,
    pub t0: f64,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub effective_config: serde_json::Value,
}

fn header(magic: &[u8; 4], shape: [usize; 3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(magic);
    for d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

fn parse_header(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<[usize; 3]> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::malformed(path, "shorter than header"));
    }
    if &bytes[..4] != magic {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&bytes[..4])
            ),
        });
    }
    let dim = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let shape = [dim(4), dim(8), dim(12)];
    let expected = HEADER_LEN + 4 * shape.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::malformed(
            path,
            format!("payload length {} does not match shape {shape:?}", bytes.len() - HEADER_LEN),
        ));
    }
    Ok(shape)
}

pub fn encode_cube(cube: &HistogramCube) -> Vec<u8> {
    let mut out = header(CUBE_MAGIC, cube.shape());
    out.reserve(4 * cube.counts.len());
    for &c in cube.counts.as_standard_layout().iter() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn decode_counts(bytes: &[u8], path: &Path) -> Result<Array3<u32>> {
    let shape = parse_header(bytes, CUBE_MAGIC, path)?;
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array3::from_shape_vec(shape, data).expect("length checked"))
}

pub fn cube_sidecar(cube: &HistogramCube, effective_config: serde_json::Value) -> CubeSidecar {
    let [height, width, n_bins] = cube.shape();
    let scan = ScanConfig {
        n_bins,
        ..cube.config.clone()
    };
    let kernel_size = crate::forward::make_kernel(&scan)
        .map(|k| k.shape())
        .unwrap_or([0, 0, 0]);
    CubeSidecar {
        format: "SPH1".into(),
        height,
        width,
        scan,
        background_per_bin: cube.background_per_bin,
        seed: cube.rng_seed,
        alpha: cube.scale,
        scan_step: cube.scan_step,
        kernel_size,
        effective_config,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    json.push(b'\n');
    write_bytes(path, &json)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

/// Writes the cube and its sidecar.
pub fn write_cube(path: &Path, cube: &HistogramCube, effective_config: serde_json::Value) -> Result<()> {
    write_bytes(path, &encode_cube(cube))?;
    write_json(&sidecar_path(path), &cube_sidecar(cube, effective_config))
}

pub fn read_cube(path: &Path) -> Result<HistogramCube> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let counts = decode_counts(&bytes, path)?;
    let side_path = sidecar_path(path);
    let side: CubeSidecar = read_json(&side_path)?;
    if [side.height, side.width, side.scan.n_bins] != {
        let (h, w, t) = counts.dim();
        [h, w, t]
    } {
        return Err(Error::malformed(side_path, "sidecar shape disagrees with cube"));
    }
    Ok(HistogramCube {
        counts,
        config: side.scan,
        background_per_bin: side.background_per_bin,
        rng_seed: side.seed,
        scale: side.alpha,
        scan_step: side.scan_step,
    })
}

pub fn encode_volume(volume: &RdVolume) -> Vec<u8> {
    let mut out = header(VOLUME_MAGIC, volume.shape());
    for &v in volume.data().as_standard_layout().iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_volume(path: &Path, volume: &RdVolume, effective_config: serde_json::Value) -> Result<()> {
    write_bytes(path, &encode_volume(volume))?;
    let [height, width, n_bins] = volume.shape();
    let side = VolumeSidecar {
        format: "SPR1".into(),
        height,
        width,
        n_bins,
        bin_width: volume.bin_width(),
        t0: volume.t0(),
        effective_config,
    };
    write_json(&sidecar_path(path), &side)
}

pub fn read_volume(path: &Path) -> Result<RdVolume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let shape = parse_header(&bytes, VOLUME_MAGIC, path)?;
    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let side: VolumeSidecar = read_json(&sidecar_path(path))?;
    RdVolume::new(
        Array3::from_shape_vec(shape, data).expect("length checked"),
        BinTiming::new(side.bin_width, side.t0)?,
    )
}

pub(crate) fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}

pub(crate) fn read_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let counts = Array3::from_shape_vec((1, 2, 2), vec![1u32, 2, 3, 0x0102_0304]).unwrap();
        let cube = HistogramCube::new(counts, ScanConfig::default(), 0.0, 0);
        let bytes = encode_cube(&cube);
        assert_eq!(&bytes[..4], b"SPH1");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &[1, 0, 0, 0]);
        assert_eq!(&bytes[28..32], &[4, 3, 2, 1]);
        assert_eq!(bytes.len(), 16 + 16);
    }

    #[test]
    fn cube_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.sph");
        let config = ScanConfig::default().with_n(2).with_bins(0.8e-9, 125);
        let counts = Array3::from_shape_fn((3, 4, 125), |(i, j, k)| (i * 7 + j * 3 + k) as u32 % 5);
        let mut cube = HistogramCube::new(counts, config, 0.04, 9);
        cube.scale = 2.5;
        write_cube(&path, &cube, serde_json::json!({"note": 1})).unwrap();
        assert_eq!(read_cube(&path).unwrap(), cube);
    }

    #[test]
    fn rejects_wrong_magic_and_length() {
        let p = Path::new("x");
        assert!(matches!(decode_counts(b"SPR1\x01\0\0\0\x01\0\0\0\x01\0\0\0\0\0\0\0", p), Err(Error::UnsupportedFormat { .. })));
        assert!(matches!(decode_counts(b"SPH1\x01\0\0\0\x01\0\0\0\x02\0\0\0\0\0\0\0", p), Err(Error::Malformed { .. })));
        assert!(decode_counts(b"SPH", p).is_err());
    }
}
