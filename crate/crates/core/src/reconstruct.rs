//! One entry point for every reconstruction method.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{pixelwise_ml, reconstruct_no_scan};
use crate::error::{Error, Result};
use crate::forward::{make_kernel, HistogramCube};
use crate::maps::DepthMaps;
use crate::solver::{extract_depth_reflectivity, spiral_solve, SolveReport, SolverConfig};
use crate::volume::RdVolume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// TV-regularized Poisson deconvolution of the whole cube.
    Deconv3d,
    /// Per-pixel log-matched filter on every scan position.
    #[serde(alias = "lm")]
    Ml,
    /// Log-matched filter on a conventional scan with spacing `2n`.
    #[serde(alias = "no-scan")]
    Noscan,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Deconv3d, Method::Ml, Method::Noscan];

    pub fn name(self) -> &'static str {
        match self {
            Method::Deconv3d => "deconv3d",
            Method::Ml => "ml",
            Method::Noscan => "noscan",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deconv3d" => Ok(Method::Deconv3d),
            "ml" | "lm" => Ok(Method::Ml),
            "noscan" | "no-scan" => Ok(Method::Noscan),
            _ => Err(Error::param("method", format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructOptions {
    pub solver: SolverConfig,
    /// Background per bin. Defaults to the value stored with the cube, or an
    /// estimate from the data when that is zero.
    pub background: Option<f64>,
    /// Scan spacing of the no-scan baseline, defaults to `2n`.
    pub noscan_factor: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub maps: DepthMaps,
    pub volume: Option<RdVolume>,
    pub report: Option<SolveReport>,
    pub background: f64,
}

fn background_for(cube: &HistogramCube, opts: &ReconstructOptions) -> Result<f64> {
    let b = match opts.background {
        Some(b) => b,
        None if cube.background_per_bin > 0.0 => cube.background_per_bin,
        None => {
            let k = make_kernel(&cube.config)?;
            crate::baselines::estimate_background(
                cube.counts.view(),
                crate::baselines::background_exclusion(k.temporal_half_len()),
            )
        }
    };
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::param("background", format!("must be finite and >= 0, got {b}")));
    }
    Ok(b)
}

pub fn reconstruct(cube: &HistogramCube, method: Method, opts: &ReconstructOptions) -> Result<Reconstruction> {
    let b = background_for(cube, opts)?;
    match method {
        Method::Deconv3d => {
            if cube.scan_step != 1 {
                return Err(Error::param(
                    "cube",
                    format!("deconvolution needs the full sub-pixel scan, cube has step {}", cube.scan_step),
                ));
            }
            let kernel = make_kernel(&cube.config)?;
            let (volume, report) = spiral_solve(cube, &kernel, b, &opts.solver, None)?;
            let mut maps = extract_depth_reflectivity(&volume, kernel.temporal_half_len());
            maps.reflectivity.mapv_inplace(|r| r / cube.scale);
            Ok(Reconstruction {
                maps,
                volume: Some(volume),
                report: Some(report),
                background: b,
            })
        }
        Method::Ml => Ok(Reconstruction {
            maps: pixelwise_ml(cube, Some(b))?,
            volume: None,
            report: None,
            background: b,
        }),
        Method::Noscan => {
            let factor = opts.noscan_factor.unwrap_or(2 * cube.config.n).max(1);
            Ok(Reconstruction {
                maps: reconstruct_no_scan(cube, factor, Some(b))?,
                volume: None,
                report: None,
                background: b,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert_eq!("lm".parse::<Method>().unwrap(), Method::Ml);
        assert_eq!(serde_json::from_str::<Method>("\"lm\"").unwrap(), Method::Ml);
        assert!("fancy".parse::<Method>().is_err());
    }
}
