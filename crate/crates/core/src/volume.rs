use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-negative `height × width × n_bins` volume whose entry `(i, j, k)` is the
/// reflectivity found at pixel `(i, j)` in time bin `k`.
///
/// Bin `k` covers round-trip times starting at `t0 + k · bin_width`.
#[derive(Clone, Debug, PartialEq)]
pub struct RdVolume {
    data: Array3<f64>,
    timing: BinTiming,
}

/// Time axis of a histogram or RD volume.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinTiming {
    /// Seconds per bin.
    pub bin_width: f64,
    /// Time origin of bin 0, seconds.
    pub t0: f64,
}

impl BinTiming {
    pub fn new(bin_width: f64, t0: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::param("bin_width", format!("must be positive, got {bin_width}")));
        }
        if !t0.is_finite() {
            return Err(Error::param("t0", "must be finite"));
        }
        Ok(Self { bin_width, t0 })
    }

    /// Depth in meters at the start of bin `k`.
    pub fn bin_depth(&self, k: usize) -> f64 {
        crate::time_to_depth(self.t0 + k as f64 * self.bin_width)
    }

    /// Depth span of one bin, meters.
    pub fn bin_depth_width(&self) -> f64 {
        crate::time_to_depth(self.bin_width)
    }
}

impl RdVolume {
    /// Wraps `data`, rejecting negative or non-finite entries.
    pub fn new(data: Array3<f64>, timing: BinTiming) -> Result<Self> {
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::param(
                "rd volume",
                format!("entries must be finite and non-negative, found {bad}"),
            ));
        }
        Ok(Self { data, timing })
    }

    pub fn zeros(shape: [usize; 3], timing: BinTiming) -> Self {
        Self {
            data: Array3::zeros(shape),
            timing,
        }
    }

    pub fn data(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn timing(&self) -> BinTiming {
        self.timing
    }

    pub fn bin_width(&self) -> f64 {
        self.timing.bin_width
    }

    pub fn t0(&self) -> f64 {
        self.timing.t0
    }

    /// `[height, width, n_bins]`.
    pub fn shape(&self) -> [usize; 3] {
        let (h, w, t) = self.data.dim();
        [h, w, t]
    }
}
