//! Anisotropic total variation and its non-negative proximal map.
//!
//! By default differences are taken along the two spatial axes only, so each
//! time slice is regularized independently. The temporal axis can be switched
//! on, in which case the slices couple.
//!
//! The prox solves
//!
//! ```text
//! argmin_{x ≥ 0}  ½‖x − v‖² + w · TV(x)
//! ```
//!
//! through its dual, `x(p) = P₊(v − w Dᵀp)` with `|p| ≤ 1` componentwise,
//! using accelerated projected gradient steps on `p` (the fast gradient
//! projection scheme of Beck and Teboulle).

use ndarray::{Array3, ArrayView3};
use rayon::prelude::*;

#[derive(Clone, Copy)]
struct Dims {
    h: usize,
    w: usize,
    t: usize,
}

impl Dims {
    fn of(v: &ArrayView3<f64>) -> Self {
        let (h, w, t) = v.dim();
        Self { h, w, t }
    }

    fn row(&self) -> usize {
        self.w * self.t
    }
}

/// Spatial anisotropic TV: `Σ |x[i+1,j,k] − x[i,j,k]| + |x[i,j+1,k] − x[i,j,k]|`.
pub fn tv_penalty(x: ArrayView3<f64>) -> f64 {
    tv_penalty_with(x, false)
}

/// TV with optional differences along the time axis as well.
pub fn tv_penalty_with(x: ArrayView3<f64>, temporal: bool) -> f64 {
    let d = Dims::of(&x);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    slice_tv(xs, d, temporal).iter().sum()
}

/// Per-row partials of TV, folded in row order into one value per time bin.
fn slice_tv(x: &[f64], d: Dims, temporal: bool) -> Vec<f64> {
    let row = d.row();
    let rows: Vec<Vec<f64>> = (0..d.h)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; d.t];
            let cur = &x[i * row..(i + 1) * row];
            if i + 1 < d.h {
                let next = &x[(i + 1) * row..(i + 2) * row];
                for (n, (a, b)) in cur.iter().zip(next).enumerate() {
                    acc[n % d.t] += (b - a).abs();
                }
            }
            for j in 0..d.w.saturating_sub(1) {
                let a = &cur[j * d.t..(j + 1) * d.t];
                let b = &cur[(j + 1) * d.t..(j + 2) * d.t];
                for k in 0..d.t {
                    acc[k] += (b[k] - a[k]).abs();
                }
            }
            if temporal {
                for lane in cur.chunks_exact(d.t) {
                    for k in 0..d.t - 1 {
                        acc[k] += (lane[k + 1] - lane[k]).abs();
                    }
                }
            }
            acc
        })
        .collect();
    fold_rows(rows, d.t)
}

fn fold_rows(rows: Vec<Vec<f64>>, t: usize) -> Vec<f64> {
    let mut out = vec![0.0; t];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out
}

/// Per-bin `½‖x − v‖²`.
fn slice_fidelity(x: &[f64], v: &[f64], d: Dims) -> Vec<f64> {
    let row = d.row();
    let rows: Vec<Vec<f64>> = x
        .par_chunks(row)
        .zip(v.par_chunks(row))
        .map(|(xr, vr)| {
            let mut acc = vec![0.0; d.t];
            for (n, (a, b)) in xr.iter().zip(vr).enumerate() {
                acc[n % d.t] += 0.5 * (a - b) * (a - b);
            }
            acc
        })
        .collect();
    fold_rows(rows, d.t)
}

/// Approximate `argmin_{x ≥ 0} ½‖x − v‖² + weight · TV_xy(x)` with
/// `inner_iters` dual iterations.
///
/// The result is never worse on the prox objective than `max(v, 0)`: any
/// time slice where the truncated iteration has not yet improved on it falls
/// back to it.
pub fn prox_tv_nonneg(v: ArrayView3<f64>, weight: f64, inner_iters: usize) -> Array3<f64> {
    prox_tv_nonneg_with(v, weight, inner_iters, false)
}

pub fn prox_tv_nonneg_with(v: ArrayView3<f64>, weight: f64, inner_iters: usize, temporal: bool) -> Array3<f64> {
    TvProx::new(temporal).apply(v, weight, inner_iters)
}

/// TV prox that keeps its dual variables between calls.
///
/// Successive calls on nearby inputs (as in an outer proximal gradient loop)
/// start from the previous dual solution, so a fixed inner budget goes much
/// further than from a cold start. The output depends only on the sequence
/// of calls.
#[derive(Clone, Debug, Default)]
pub struct TvProx {
    temporal: bool,
    dual: Option<Dual>,
}

impl TvProx {
    pub fn new(temporal: bool) -> Self {
        Self { temporal, dual: None }
    }

    pub fn apply(&mut self, v: ArrayView3<f64>, weight: f64, inner_iters: usize) -> Array3<f64> {
        let d = Dims::of(&v);
        let shape = (d.h, d.w, d.t);
        if !(weight > 0.0) || inner_iters == 0 || d.h * d.w * d.t == 0 {
            return v.mapv(|a| a.max(0.0));
        }
        let n = d.h * d.w * d.t;
        if self.dual.as_ref().is_some_and(|p| p.rows.len() != n) {
            self.dual = None;
        }
        let dual = self.dual.get_or_insert_with(|| Dual::zeros(n, self.temporal));
        let x = if self.temporal {
            let v = v.as_standard_layout();
            prox_volume(v.as_slice().expect("standard layout"), weight, inner_iters, d, dual)
        } else {
            let planes = to_planes(&v);
            let xp = prox_planes(&planes, weight, inner_iters, d, dual);
            from_planes(&xp, d)
        };
        Array3::from_shape_vec(shape, x).expect("shape")
    }
}

/// Dual variables, one per forward difference; entries at the far boundary of
/// each axis stay zero. Spatial-only duals are stored plane by plane
/// (`t × h × w`), coupled duals in volume order (`h × w × t`).
#[derive(Clone, Debug)]
pub struct Dual {
    rows: Vec<f64>,
    cols: Vec<f64>,
    bins: Option<Vec<f64>>,
}

impl Dual {
    fn zeros(n: usize, temporal: bool) -> Self {
        Self {
            rows: vec![0.0; n],
            cols: vec![0.0; n],
            bins: temporal.then(|| vec![0.0; n]),
        }
    }
}

/// `(h, w, t)` volume to `t` contiguous `h × w` planes.
fn to_planes(v: &ArrayView3<f64>) -> Vec<f64> {
    let (h, w, t) = v.dim();
    let mut out = vec![0.0; h * w * t];
    let v = v.as_standard_layout();
    let src = v.as_slice().expect("standard layout");
    out.par_chunks_mut(h * w).enumerate().for_each(|(k, plane)| {
        for (p, lane) in plane.iter_mut().zip(src.chunks_exact(t)) {
            *p = lane[k];
        }
    });
    out
}

fn from_planes(planes: &[f64], d: Dims) -> Vec<f64> {
    let hw = d.h * d.w;
    let mut out = vec![0.0; planes.len()];
    out.par_chunks_mut(d.w * d.t).enumerate().for_each(|(i, row)| {
        for (j, lane) in row.chunks_exact_mut(d.t).enumerate() {
            for (k, o) in lane.iter_mut().enumerate() {
                *o = planes[k * hw + i * d.w + j];
            }
        }
    });
    out
}

fn prox_planes(planes: &[f64], weight: f64, iters: usize, d: Dims, dual: &mut Dual) -> Vec<f64> {
    let hw = d.h * d.w;
    let mut x = vec![0.0; planes.len()];
    x.par_chunks_mut(hw)
        .zip(planes.par_chunks(hw))
        .zip(dual.rows.par_chunks_mut(hw).zip(dual.cols.par_chunks_mut(hw)))
        .for_each(|((xp, vp), (pr, pc))| prox_plane(xp, vp, pr, pc, weight, iters, d.h, d.w));
    x
}

/// FGP on one `h × w` plane, warm-started from `(pr, pc)` and leaving the
/// final dual iterate there.
#[allow(clippy::too_many_arguments)]
fn prox_plane(x: &mut [f64], v: &[f64], pr: &mut [f64], pc: &mut [f64], weight: f64, iters: usize, h: usize, w: usize) {
    if v.iter().all(|&a| a <= 0.0) {
        // x = 0 has zero TV and the least fidelity under the constraint
        x.fill(0.0);
        return;
    }
    let step = 1.0 / (8.0 * weight);
    let mut rr = pr.to_vec();
    let mut rc = pc.to_vec();
    let mut t = 1.0f64;
    for _ in 0..iters {
        plane_primal(x, v, &rr, &rc, weight, h, w);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let m = (t - 1.0) / t_next;
        t = t_next;
        let update = |r: &mut f64, s: &mut f64, g: f64| {
            let new = (*r + step * g).clamp(-1.0, 1.0);
            *r = new + m * (new - *s);
            *s = new;
        };
        for i in 0..h.saturating_sub(1) {
            let (cur, next) = (&x[i * w..(i + 1) * w], &x[(i + 1) * w..(i + 2) * w]);
            let (r, s) = (&mut rr[i * w..(i + 1) * w], &mut pr[i * w..(i + 1) * w]);
            for j in 0..w {
                update(&mut r[j], &mut s[j], next[j] - cur[j]);
            }
        }
        for i in 0..h {
            let row = &x[i * w..(i + 1) * w];
            let (r, s) = (&mut rc[i * w..(i + 1) * w], &mut pc[i * w..(i + 1) * w]);
            for j in 0..w - 1 {
                update(&mut r[j], &mut s[j], row[j + 1] - row[j]);
            }
        }
    }
    plane_primal(x, v, pr, pc, weight, h, w);

    let objective = |z: &[f64]| {
        let mut acc = 0.0;
        for i in 0..h {
            let row = &z[i * w..(i + 1) * w];
            for j in 0..w {
                let e = row[j] - v[i * w + j];
                acc += 0.5 * e * e;
                if j + 1 < w {
                    acc += weight * (row[j + 1] - row[j]).abs();
                }
                if i + 1 < h {
                    acc += weight * (z[(i + 1) * w + j] - row[j]).abs();
                }
            }
        }
        acc
    };
    let clipped: Vec<f64> = v.iter().map(|&a| a.max(0.0)).collect();
    if objective(x) > objective(&clipped) {
        x.copy_from_slice(&clipped);
    }
}

/// `x = max(v − w · Dᵀp, 0)` on one plane, `(Dᵀp)[i] = p[i−1] − p[i]`.
fn plane_primal(x: &mut [f64], v: &[f64], pr: &[f64], pc: &[f64], weight: f64, h: usize, w: usize) {
    for i in 0..h {
        let o = i * w;
        let (xr, vr) = (&mut x[o..o + w], &v[o..o + w]);
        let (prr, pcr) = (&pr[o..o + w], &pc[o..o + w]);
        for j in 0..w {
            xr[j] = -prr[j] - pcr[j];
        }
        if i > 0 {
            let above = &pr[o - w..o];
            for j in 0..w {
                xr[j] += above[j];
            }
        }
        for j in 1..w {
            xr[j] += pcr[j - 1];
        }
        for j in 0..w {
            xr[j] = (vr[j] - weight * xr[j]).max(0.0);
        }
    }
}

/// Coupled prox over the whole volume, used when the time axis is penalized.
fn prox_volume(vs: &[f64], weight: f64, inner_iters: usize, d: Dims, dual: &mut Dual) -> Vec<f64> {
    let n = vs.len();
    let step = 1.0 / (12.0 * weight);
    let mut r = dual.clone();
    let mut x = vec![0.0; n];
    let mut momentum_t = 1.0f64;
    for _ in 0..inner_iters {
        primal_from_dual(&mut x, vs, &r, weight, d);
        let t_next = (1.0 + (1.0 + 4.0 * momentum_t * momentum_t).sqrt()) / 2.0;
        let m = (momentum_t - 1.0) / t_next;
        dual_step(&mut r, dual, &x, step, m, d);
        momentum_t = t_next;
    }
    primal_from_dual(&mut x, vs, dual, weight, d);

    let obj = |z: &[f64]| -> f64 {
        let fid: f64 = slice_fidelity(z, vs, d).iter().sum();
        let tv: f64 = slice_tv(z, d, true).iter().sum();
        fid + weight * tv
    };
    let clipped: Vec<f64> = vs.par_iter().map(|&a| a.max(0.0)).collect();
    if obj(&x) > obj(&clipped) {
        x = clipped;
    }
    x
}

fn primal_from_dual(x: &mut [f64], v: &[f64], p: &Dual, weight: f64, d: Dims) {
    let row = d.row();
    x.par_chunks_mut(row).enumerate().for_each(|(i, xr)| {
        let base = i * row;
        for (off, xo) in xr.iter_mut().enumerate() {
            let idx = base + off;
            let (j, k) = (off / d.t, off % d.t);
            let mut dt = -p.rows[idx] - p.cols[idx];
            if i > 0 {
                dt += p.rows[idx - row];
            }
            if j > 0 {
                dt += p.cols[idx - d.t];
            }
            if let Some(b) = &p.bins {
                dt -= b[idx];
                if k > 0 {
                    dt += b[idx - 1];
                }
            }
            *xo = (v[idx] - weight * dt).max(0.0);
        }
    });
}

/// Projected ascent on the dual followed by the momentum extrapolation:
/// `s' = clip(r + step · Dx)`, `r = s' + m (s' − s)`, `s = s'`.
fn dual_step(r: &mut Dual, s: &mut Dual, x: &[f64], step: f64, m: f64, d: Dims) {
    let row = d.row();
    let update = |rv: &mut f64, sv: &mut f64, grad: f64| {
        let new = (*rv + step * grad).clamp(-1.0, 1.0);
        *rv = new + m * (new - *sv);
        *sv = new;
    };
    r.rows
        .par_chunks_mut(row)
        .zip(s.rows.par_chunks_mut(row))
        .enumerate()
        .for_each(|(i, (rr, sr))| {
            if i + 1 >= d.h {
                return;
            }
            let cur = &x[i * row..(i + 1) * row];
            let next = &x[(i + 1) * row..(i + 2) * row];
            for off in 0..row {
                update(&mut rr[off], &mut sr[off], next[off] - cur[off]);
            }
        });
    r.cols
        .par_chunks_mut(row)
        .zip(s.cols.par_chunks_mut(row))
        .enumerate()
        .for_each(|(i, (rr, sr))| {
            let cur = &x[i * row..(i + 1) * row];
            for off in 0..row.saturating_sub(d.t) {
                update(&mut rr[off], &mut sr[off], cur[off + d.t] - cur[off]);
            }
        });
    if let (Some(rb), Some(sb)) = (r.bins.as_mut(), s.bins.as_mut()) {
        rb.par_chunks_mut(d.t)
            .zip(sb.par_chunks_mut(d.t))
            .zip(x.par_chunks(d.t))
            .for_each(|((rl, sl), xl)| {
                for k in 0..d.t - 1 {
                    update(&mut rl[k], &mut sl[k], xl[k + 1] - xl[k]);
                }
            });
    }
}
