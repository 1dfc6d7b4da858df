use ndarray::{s, Array1, Array2, Array3};
use proptest::prelude::*;

use photonsr::eval::rmse;
use photonsr::forward::convolve3d;
use photonsr::scene::scene_to_rd;
use photonsr::solver::{extract_depth_reflectivity, prox_tv_nonneg, solve_counts, tv_penalty};
use photonsr::volume::BinTiming;
use photonsr::{Kernel, RdVolume, Scene, SolverConfig};

fn timing() -> BinTiming {
    BinTiming::new(0.8e-9, 0.0).unwrap()
}

fn positive(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, len)
}

fn prox_objective(x: &Array3<f64>, v: &Array3<f64>, w: f64) -> f64 {
    0.5 * (x - v).mapv(|d| d * d).sum() + w * tv_penalty(x.view())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Noiseless data of a scene shifted one pixel along the columns
    /// reconstructs to the shifted volume away from the image border.
    #[test]
    fn solver_is_shift_equivariant(
        spatial in positive(9),
        temporal in positive(3),
        content in prop::collection::vec(0.0f64..40.0, 4 * 4 * 6),
        beta in 0.0f64..0.05,
    ) {
        let kernel = Kernel::new(Array2::from_shape_vec((3, 3), spatial).unwrap(), Array1::from(temporal)).unwrap();
        let (h, w, t) = (12, 14, 10);
        let truth = Array3::from_shape_vec((4, 4, 6), content).unwrap();
        let place = |dx: usize| {
            let mut x = Array3::zeros((h, w, t));
            x.slice_mut(s![4..8, 4 + dx..8 + dx, 2..8]).assign(&truth);
            convolve3d(&kernel, x.view(), 0.0).unwrap().mapv(|v| v.round() as u32)
        };
        let config = SolverConfig { beta, max_iters: 25, rel_tol: 0.0, ..SolverConfig::default() };
        let (a, _) = solve_counts(place(0).view(), &kernel, 0.0, &config, None, timing()).unwrap();
        let (b, _) = solve_counts(place(1).view(), &kernel, 0.0, &config, None, timing()).unwrap();
        let scale = a.data().iter().cloned().fold(1.0, f64::max);
        for i in 2..h - 2 {
            for j in 2..w - 3 {
                for k in 0..t {
                    let d = (a.data()[[i, j, k]] - b.data()[[i, j + 1, k]]).abs();
                    prop_assert!(d <= 1e-6 * scale, "({i},{j},{k}) differs by {d}");
                }
            }
        }
    }

    #[test]
    fn depth_is_invariant_to_positive_scaling(
        data in prop::collection::vec(0.0f64..5.0, 3 * 4 * 9),
        c in 1e-3f64..1e3,
        half in 0usize..3,
    ) {
        let x = Array3::from_shape_vec((3, 4, 9), data).unwrap();
        let a = extract_depth_reflectivity(&RdVolume::new(x.clone(), timing()).unwrap(), half);
        let b = extract_depth_reflectivity(&RdVolume::new(x * c, timing()).unwrap(), half);
        prop_assert_eq!(&a.depth, &b.depth);
        prop_assert_eq!(&a.valid, &b.valid);
        for (ra, rb) in a.reflectivity.iter().zip(&b.reflectivity) {
            prop_assert!((ra * c - rb).abs() <= 1e-12 * rb.abs().max(1e-300));
        }
    }

    #[test]
    fn rmse_is_symmetric_and_zero_on_identity(
        a in prop::collection::vec(-10.0f64..10.0, 24),
        b in prop::collection::vec(-10.0f64..10.0, 24),
        mask in prop::collection::vec(any::<bool>(), 24),
    ) {
        prop_assume!(mask.iter().any(|&m| m));
        let a = Array2::from_shape_vec((4, 6), a).unwrap();
        let b = Array2::from_shape_vec((4, 6), b).unwrap();
        let m = Array2::from_shape_vec((4, 6), mask).unwrap();
        let ab = rmse(a.view(), b.view(), m.view()).unwrap();
        prop_assert_eq!(ab, rmse(b.view(), a.view(), m.view()).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(rmse(a.view(), a.view(), m.view()).unwrap(), 0.0);
    }

    #[test]
    fn prox_is_nonnegative_and_improves_on_clipping(
        data in prop::collection::vec(-1.0f64..2.0, 5 * 6 * 3),
        w in 0.0f64..0.5,
    ) {
        let v = Array3::from_shape_vec((5, 6, 3), data).unwrap();
        let x = prox_tv_nonneg(v.view(), w, 50);
        prop_assert!(x.iter().all(|&e| e >= 0.0));
        let clipped = v.mapv(|e| e.max(0.0));
        prop_assert!(prox_objective(&x, &v, w) <= prox_objective(&clipped, &v, w) + 1e-12);
        if w == 0.0 {
            prop_assert_eq!(x, clipped);
        }
    }

    #[test]
    fn on_grid_scenes_round_trip_exactly(
        bins in prop::collection::vec(0usize..40, 30),
        refl in prop::collection::vec(0.0f64..1.0, 30),
    ) {
        let t = timing();
        let depth = Array2::from_shape_vec((5, 6), bins.iter().map(|&k| t.bin_depth(k)).collect()).unwrap();
        let refl = Array2::from_shape_vec((5, 6), refl).unwrap();
        let scene = Scene::new(refl.clone(), depth.clone()).unwrap();
        let maps = extract_depth_reflectivity(&scene_to_rd(&scene, 0.8e-9, 40, 0.0).unwrap(), 0);
        prop_assert_eq!(&maps.reflectivity, &refl);
        for ((e, d), r) in maps.depth.iter().zip(&depth).zip(&refl) {
            prop_assert!(*r == 0.0 || e == d);
        }
    }
}
