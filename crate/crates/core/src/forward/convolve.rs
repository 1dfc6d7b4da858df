//! "Same"-size, zero-padded 3D convolution with a separable kernel.
//!
//! Volumes are `height × width × n_bins` in standard layout, so each pixel's
//! histogram is a contiguous lane. Spatial passes accumulate whole lanes;
//! the temporal pass works within a lane. Rows are processed in parallel and
//! every output element is produced by a fixed sequence of operations.

use ndarray::{Array3, ArrayView1, ArrayView2, ArrayView3};
use rayon::prelude::*;

use super::Kernel;
use crate::error::{Error, Result};

/// `Λ = g ∗ volume + background`, spatial pass first, then temporal.
pub fn convolve3d(kernel: &Kernel, volume: ArrayView3<f64>, background: f64) -> Result<Array3<f64>> {
    let mut out = apply(kernel, volume, false)?;
    if background != 0.0 {
        out.par_mapv_inplace(|v| v + background);
    }
    Ok(out)
}

/// Adjoint of [`convolve3d`] without background: correlation with `g`, i.e.
/// convolution with `g` reversed along every axis.
pub fn correlate3d(kernel: &Kernel, volume: ArrayView3<f64>) -> Result<Array3<f64>> {
    apply(kernel, volume, true)
}

fn apply(kernel: &Kernel, volume: ArrayView3<f64>, flip: bool) -> Result<Array3<f64>> {
    let (h, w, t) = volume.dim();
    let [ks, _, kt] = kernel.shape();
    if ks > h || ks > w || kt > t {
        return Err(Error::KernelTooLarge {
            kernel: kernel.shape(),
            volume: [h, w, t],
        });
    }
    let input = volume.as_standard_layout();
    let src = input.as_slice().expect("standard layout");
    let dims = Dims { h, w, t };

    let spatial = match kernel.separable_factors() {
        Some((rows, cols)) if ks == 1 && rows[0] == 1.0 && cols[0] == 1.0 => src.to_vec(),
        Some((rows, cols)) => {
            let tmp = pass_rows(src, dims, &taps(rows, flip));
            pass_cols(&tmp, dims, &taps(cols, flip))
        }
        None => pass_2d(src, dims, kernel.spatial(), flip),
    };
    let temporal = taps(kernel.temporal(), flip);
    let data = if temporal.len() == 1 && temporal[0] == 1.0 {
        spatial
    } else {
        pass_time(&spatial, dims, &temporal)
    };
    Ok(Array3::from_shape_vec((h, w, t), data).expect("shape preserved"))
}

#[derive(Clone, Copy)]
struct Dims {
    h: usize,
    w: usize,
    t: usize,
}

fn taps(k: ArrayView1<f64>, flip: bool) -> Vec<f64> {
    if flip {
        k.iter().rev().cloned().collect()
    } else {
        k.to_vec()
    }
}

#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Source index `dst + half − c` for tap `c`, if it lies in `0..len`.
#[inline]
fn source(dst: usize, half: usize, c: usize, len: usize) -> Option<usize> {
    let s = (dst + half).checked_sub(c)?;
    (s < len).then_some(s)
}

/// Convolution along axis 0 (image rows).
fn pass_rows(src: &[f64], d: Dims, taps: &[f64]) -> Vec<f64> {
    let row = d.w * d.t;
    let half = taps.len() / 2;
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(row).enumerate().for_each(|(i, o)| {
        for (c, &g) in taps.iter().enumerate() {
            if let Some(si) = source(i, half, c, d.h) {
                axpy(o, g, &src[si * row..(si + 1) * row]);
            }
        }
    });
    out
}

/// Convolution along axis 1 (image columns).
fn pass_cols(src: &[f64], d: Dims, taps: &[f64]) -> Vec<f64> {
    let row = d.w * d.t;
    let half = taps.len() / 2;
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(row).enumerate().for_each(|(i, o)| {
        let s_row = &src[i * row..(i + 1) * row];
        for j in 0..d.w {
            let lane = &mut o[j * d.t..(j + 1) * d.t];
            for (c, &g) in taps.iter().enumerate() {
                if let Some(sj) = source(j, half, c, d.w) {
                    axpy(lane, g, &s_row[sj * d.t..(sj + 1) * d.t]);
                }
            }
        }
    });
    out
}

fn pass_2d(src: &[f64], d: Dims, spatial: ArrayView2<f64>, flip: bool) -> Vec<f64> {
    let row = d.w * d.t;
    let side = spatial.nrows();
    let half = side / 2;
    let tap = |a: usize, b: usize| {
        if flip {
            spatial[[side - 1 - a, side - 1 - b]]
        } else {
            spatial[[a, b]]
        }
    };
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(row).enumerate().for_each(|(i, o)| {
        for a in 0..side {
            let Some(si) = source(i, half, a, d.h) else { continue };
            let s_row = &src[si * row..(si + 1) * row];
            for j in 0..d.w {
                let lane = &mut o[j * d.t..(j + 1) * d.t];
                for b in 0..side {
                    if let Some(sj) = source(j, half, b, d.w) {
                        let g = tap(a, b);
                        if g != 0.0 {
                            axpy(lane, g, &s_row[sj * d.t..(sj + 1) * d.t]);
                        }
                    }
                }
            }
        }
    });
    out
}

/// Convolution along the time axis within each lane.
fn pass_time(src: &[f64], d: Dims, taps: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(d.t)
        .zip(src.par_chunks(d.t))
        .for_each(|(o, x)| {
            for (k, ok) in o.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (c, &g) in taps.iter().enumerate() {
                    if let Some(s) = source(k, half, c, d.t) {
                        acc += g * x[s];
                    }
                }
                *ok = acc;
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{make_kernel, ScanConfig};
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(shape, |_| rng.random::<f64>())
    }

    fn random_kernel(rng: &mut ChaCha8Rng, side: usize, len: usize) -> Kernel {
        Kernel::new(
            Array2::from_shape_fn((side, side), |_| rng.random::<f64>()),
            Array1::from_shape_fn(len, |_| rng.random::<f64>()),
        )
        .unwrap()
    }

    /// Direct triple-loop "same" convolution used as the oracle.
    fn brute_force(kernel: &Kernel, x: ArrayView3<f64>) -> Array3<f64> {
        let (h, w, t) = x.dim();
        let s = kernel.spatial();
        let g = kernel.temporal();
        let (hs, ht) = ((s.nrows() / 2) as isize, (g.len() / 2) as isize);
        let mut out = Array3::zeros((h, w, t));
        for i in 0..h as isize {
            for j in 0..w as isize {
                for k in 0..t as isize {
                    let mut acc = 0.0;
                    for a in -hs..=hs {
                        for b in -hs..=hs {
                            for c in -ht..=ht {
                                let (si, sj, sk) = (i - a, j - b, k - c);
                                if si < 0 || sj < 0 || sk < 0 || si >= h as isize || sj >= w as isize || sk >= t as isize {
                                    continue;
                                }
                                acc += s[[(a + hs) as usize, (b + hs) as usize]]
                                    * g[(c + ht) as usize]
                                    * x[[si as usize, sj as usize, sk as usize]];
                            }
                        }
                    }
                    out[[i as usize, j as usize, k as usize]] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_volume(&mut rng, (4, 5, 6));
        assert_eq!(convolve3d(&Kernel::delta(), x.view(), 0.0).unwrap(), x);
    }

    #[test]
    fn zero_volume_gives_background() {
        let k = make_kernel(&ScanConfig::default().with_n(1)).unwrap();
        let out = convolve3d(&k, Array3::zeros((5, 5, 40)).view(), 0.25).unwrap();
        assert!(out.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn unit_voxel_reproduces_kernel() {
        let cfg = ScanConfig {
            bin_width: 0.2e-9,
            ..ScanConfig::default()
        };
        let k = make_kernel(&cfg).unwrap();
        assert_eq!(k.shape()[0], 9);
        let mut x = Array3::zeros((9, 9, 31));
        x[[4, 4, 15]] = 1.0;
        let fast = convolve3d(&k, x.view(), 0.0).unwrap();
        let oracle = brute_force(&k, x.view());
        let ht = k.temporal_half_len();
        for ((i, j, t), &v) in fast.indexed_iter() {
            assert!((v - oracle[[i, j, t]]).abs() < 1e-15);
            let expect = if t + ht >= 15 && t <= 15 + ht {
                k.spatial()[[i, j]] * k.temporal()[t + ht - 15]
            } else {
                0.0
            };
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_brute_force_for_non_separable_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = random_kernel(&mut rng, 3, 5);
        assert!(k.separable_factors().is_none());
        let x = random_volume(&mut rng, (5, 6, 9));
        let fast = convolve3d(&k, x.view(), 0.0).unwrap();
        let slow = brute_force(&k, x.view());
        let err = (&fast - &slow).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-13);
    }

    #[test]
    fn rejects_oversized_kernel() {
        let k = make_kernel(&ScanConfig::default()).unwrap();
        assert!(matches!(
            convolve3d(&k, Array3::zeros((5, 20, 40)).view(), 0.0),
            Err(Error::KernelTooLarge { .. })
        ));
    }

    #[test]
    fn adjoint_identity_on_random_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let k = random_kernel(&mut rng, 3, 5);
            let u = random_volume(&mut rng, (6, 7, 11));
            let v = random_volume(&mut rng, (6, 7, 11));
            let lhs: f64 = (&convolve3d(&k, u.view(), 0.0).unwrap() * &v).sum();
            let rhs: f64 = (&u * &correlate3d(&k, v.view()).unwrap()).sum();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs());
        }
    }

    #[test]
    fn mass_is_conserved_for_interior_signal() {
        let k = make_kernel(&ScanConfig::default().with_n(2)).unwrap();
        let mut x = Array3::zeros((20, 20, 60));
        x[[10, 9, 30]] = 3.0;
        x[[8, 12, 25]] = 1.5;
        let y = convolve3d(&k, x.view(), 0.0).unwrap();
        assert!((y.sum() - x.sum()).abs() <= 1e-10 * x.sum());
    }
}
