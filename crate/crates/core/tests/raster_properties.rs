use proptest::prelude::*;
use s2fuse_core::degradation::{gaussian_kernel, harmonize, BlurSpec};
use s2fuse_core::raster::io::{read_raster, write_raster};
use s2fuse_core::raster::{
    boxcar_downsample, conv2d_reflect, pixel_fold, pixel_unfold, reflect_index, resample_bicubic, resample_bilinear,
    upsample_nearest,
};
use s2fuse_core::{BandSpec, Kernel2D, Raster, SeededRng};

fn raster_strategy(max_c: usize, mult: usize, max_k: usize) -> impl Strategy<Value = Raster> {
    (1..=max_c, 1..=max_k, 1..=max_k).prop_flat_map(move |(c, hk, wk)| {
        let (h, w) = (hk * mult, wk * mult);
        prop::collection::vec(-500.0f64..500.0, c * h * w)
            .prop_map(move |data| Raster::from_vec(c, h, w, data).unwrap())
    })
}

fn random_raster(c: usize, h: usize, w: usize, rng: &mut SeededRng) -> Raster {
    Raster::from_vec(c, h, w, (0..c * h * w).map(|_| rng.uniform_range(-1e3, 1e3)).collect()).unwrap()
}

#[test]
fn fold_round_trip_is_bit_exact_on_100_rasters() {
    let mut rng = SeededRng::new(11);
    for i in 0..100 {
        let r = if i % 2 == 0 { 2 } else { 4 };
        let (c, hk, wk) = (1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6));
        let x = random_raster(c, hk * r, wk * r, &mut rng);
        let back = pixel_unfold(&pixel_fold(&x, r).unwrap(), r).unwrap();
        assert_eq!(back.shape(), x.shape());
        assert!(back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn boxcar_matches_block_mean_oracle() {
    let mut rng = SeededRng::new(5);
    let x = random_raster(1, 8, 8, &mut rng);
    let out = boxcar_downsample(&x, 4).unwrap();
    for by in 0..2 {
        for bx in 0..2 {
            // Column-major summation order, independent of the implementation.
            let mut s = 0.0;
            for dx in 0..4 {
                for dy in 0..4 {
                    s += x.get(0, by * 4 + dy, bx * 4 + dx);
                }
            }
            assert!((out.get(0, by, bx) - s / 16.0).abs() < 1e-9);
        }
    }
}

#[test]
fn file_round_trip_keeps_f32_precision_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene");
    let meta = vec![
        BandSpec::new("B4", 10.0).with_gnyq(0.29),
        BandSpec::new("B8", 10.0).with_range(0.0, 4095.0),
    ];
    let mut rng = SeededRng::new(8);
    let img = random_raster(2, 5, 7, &mut rng).with_band_meta(meta).unwrap();
    write_raster(&path, &img).unwrap();
    let back = read_raster(&path).unwrap();
    assert_eq!(back.band_meta(), img.band_meta());
    for (a, b) in back.data().iter().zip(img.data()) {
        assert_eq!(*a, *b as f32 as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_then_unfold_is_identity(x in raster_strategy(3, 4, 4), r in prop::sample::select(vec![1usize, 2, 4])) {
        let f = pixel_fold(&x, r).unwrap();
        prop_assert_eq!(f.bands(), x.bands() * r * r);
        prop_assert_eq!(pixel_unfold(&f, r).unwrap(), x);
    }

    #[test]
    fn harmonize_is_inverted_by_reciprocal_gamma(
        vals in prop::collection::vec(0.0f64..255.0, 12),
        gamma in 0.3f64..3.0,
    ) {
        let img = Raster::from_vec(1, 3, 4, vals).unwrap();
        let there = harmonize(&img, &[gamma], 255.0).unwrap();
        let back = harmonize(&there, &[1.0 / gamma], 255.0).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            prop_assert!((a - b).abs() < 1e-9 * 255.0);
        }
    }

    #[test]
    fn normalized_convolution_stays_in_the_convex_hull(
        x in raster_strategy(2, 3, 3),
        sigma in 0.3f64..3.0,
    ) {
        let k = gaussian_kernel(&BlurSpec::isotropic(sigma).with_size(5)).unwrap();
        let y = conv2d_reflect(&x, &k).unwrap();
        let (lo, hi) = x.min_max();
        let tol = 1e-9 * (1.0 + hi.abs().max(lo.abs()));
        prop_assert!(y.data().iter().all(|v| *v >= lo - tol && *v <= hi + tol));
    }

    #[test]
    fn boxcar_preserves_the_global_mean(x in raster_strategy(2, 4, 4), r in prop::sample::select(vec![1usize, 2, 4])) {
        let y = boxcar_downsample(&x, r).unwrap();
        let m = |img: &Raster| img.data().iter().sum::<f64>() / img.data().len() as f64;
        prop_assert!((m(&x) - m(&y)).abs() < 1e-9);
    }

    #[test]
    fn resamplers_preserve_constants(
        c in -300.0f64..300.0,
        h in 2usize..9,
        w in 2usize..9,
        scale in prop::sample::select(vec![0.5, 2.0, 3.0]),
    ) {
        let (h, w) = (h * 2, w * 2);
        let x = Raster::filled(1, h, w, c);
        for y in [
            resample_bicubic(&x, scale).unwrap(),
            resample_bilinear(&x, scale).unwrap(),
            upsample_nearest(&x, 3).unwrap(),
            conv2d_reflect(&x, &Kernel2D::box_filter(3).unwrap()).unwrap(),
        ] {
            prop_assert!(y.data().iter().all(|v| (v - c).abs() < 1e-9 * (1.0 + c.abs())));
        }
    }

    #[test]
    fn reflection_stays_in_bounds(i in -40isize..40, n in 1usize..12) {
        prop_assert!(reflect_index(i, n) < n);
    }
}
