use s2fuse_core::metrics::{ergas, ncc, phase_correlation_shift, psnr, r2, sad, ssim};
use s2fuse_core::{Raster, SeededRng};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300)
}

fn random_pair(rng: &mut SeededRng, c: usize, n: usize) -> (Raster, Raster) {
    let a: Vec<f64> = (0..c * n * n).map(|_| rng.uniform_range(10.0, 240.0)).collect();
    let b: Vec<f64> = a.iter().map(|v| v + rng.uniform_range(-30.0, 30.0)).collect();
    (Raster::from_vec(c, n, n, a).unwrap(), Raster::from_vec(c, n, n, b).unwrap())
}

fn oracle_ergas(a: &Raster, b: &Raster, ratio: f64) -> f64 {
    let mut acc = 0.0;
    for c in 0..a.bands() {
        let (mut se, mut s) = (0.0, 0.0);
        for y in 0..a.height() {
            for x in 0..a.width() {
                let d = a.get(c, y, x) - b.get(c, y, x);
                se += d * d;
                s += a.get(c, y, x);
            }
        }
        let n = (a.height() * a.width()) as f64;
        let rmse = (se / n).sqrt();
        acc += (rmse / (s / n)).powi(2);
    }
    100.0 / ratio * (acc / a.bands() as f64).sqrt()
}

fn oracle_psnr(a: &Raster, b: &Raster, peak: f64) -> f64 {
    let n = a.data().len() as f64;
    let mut se = 0.0;
    for i in 0..a.data().len() {
        se += (a.data()[i] - b.data()[i]).powi(2);
    }
    20.0 * peak.log10() - 10.0 * (se / n).log10()
}

/// Direct 2-D Gaussian-window SSIM over every valid 11×11 window.
fn oracle_ssim(a: &Raster, b: &Raster, peak: f64) -> f64 {
    let mut w2 = [[0.0; 11]; 11];
    let mut s = 0.0;
    for (i, row) in w2.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            s += *v;
        }
    }
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let mut per_band = 0.0;
    for c in 0..a.bands() {
        let (mut total, mut count) = (0.0, 0);
        for y0 in 0..=a.height() - 11 {
            for x0 in 0..=a.width() - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let w = w2[i][j] / s;
                        let (u, v) = (a.get(c, y0 + i, x0 + j), b.get(c, y0 + i, x0 + j));
                        ma += w * u;
                        mb += w * v;
                        saa += w * u * u;
                        sbb += w * v * v;
                        sab += w * u * v;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        per_band += total / count as f64;
    }
    per_band / a.bands() as f64
}

fn oracle_sad(a: &Raster, b: &Raster) -> f64 {
    let mut total = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let u: Vec<f64> = (0..a.bands()).map(|c| a.get(c, y, x)).collect();
            let v: Vec<f64> = (0..a.bands()).map(|c| b.get(c, y, x)).collect();
            let dot: f64 = u.iter().zip(&v).map(|(p, q)| p * q).sum();
            let nu = u.iter().map(|p| p * p).sum::<f64>().sqrt();
            let nv = v.iter().map(|p| p * p).sum::<f64>().sqrt();
            total += (dot / nu / nv).min(1.0).acos() * 180.0 / std::f64::consts::PI;
        }
    }
    total / (a.height() * a.width()) as f64
}

fn oracle_r2_ncc(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let ss_tot: f64 = a.iter().map(|v| (v - ma).powi(2)).sum();
    let ss_res: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let sbb: f64 = b.iter().map(|v| (v - mb).powi(2)).sum();
    (1.0 - ss_res / ss_tot, cov / (ss_tot * sbb).sqrt())
}

#[test]
fn metrics_match_brute_force_on_50_rasters() {
    let mut rng = SeededRng::new(2024);
    for i in 0..50 {
        let (c, n) = (1 + i % 4, 11 + i % 6);
        let (a, b) = random_pair(&mut rng, c, n);
        assert!(close(ergas(&a, &b, 4.0).unwrap(), oracle_ergas(&a, &b, 4.0)), "ergas {i}");
        assert!(close(psnr(&a, &b, 255.0).unwrap(), oracle_psnr(&a, &b, 255.0)), "psnr {i}");
        assert!(close(ssim(&a, &b, 255.0).unwrap(), oracle_ssim(&a, &b, 255.0)), "ssim {i}");
        if c > 1 {
            assert!(close(sad(&a, &b).unwrap(), oracle_sad(&a, &b)), "sad {i}");
        }
        let (r2o, ncco) = oracle_r2_ncc(a.data(), b.data());
        assert!(close(r2(&a, &b).unwrap(), r2o), "r2 {i}");
        assert!(close(ncc(&a, &b).unwrap(), ncco), "ncc {i}");
    }
}

fn circular_shift(a: &Raster, dy: isize, dx: isize) -> Raster {
    let (h, w) = (a.height() as isize, a.width() as isize);
    let mut out = a.clone();
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = ((y - dy).rem_euclid(h), (x - dx).rem_euclid(w));
            out.set(0, y as usize, x as usize, a.get(0, sy as usize, sx as usize));
        }
    }
    out
}

#[test]
fn phase_correlation_recovers_100_constructed_shifts() {
    let mut rng = SeededRng::new(77);
    let n = 32;
    let a = Raster::from_vec(1, n, n, (0..n * n).map(|_| rng.uniform_range(0.0, 255.0)).collect()).unwrap();
    let mut hits = 0;
    for _ in 0..100 {
        let dy = rng.below(n) as isize - (n / 2 - 1) as isize;
        let dx = rng.below(n) as isize - (n / 2 - 1) as isize;
        if phase_correlation_shift(&a, &circular_shift(&a, dy, dx)).unwrap() == (dy, dx) {
            hits += 1;
        }
    }
    assert_eq!(hits, 100);
}

#[test]
fn phase_correlation_tolerates_20db_noise() {
    let mut rng = SeededRng::new(78);
    let n = 32;
    let a = Raster::from_vec(1, n, n, (0..n * n).map(|_| rng.uniform_range(0.0, 255.0)).collect()).unwrap();
    let sd = (a.data().iter().map(|v| v * v).sum::<f64>() / (n * n) as f64).sqrt() / 10.0;
    let mut b = circular_shift(&a, 3, 5);
    b.data_mut().iter_mut().for_each(|v| *v += sd * rng.normal());
    assert_eq!(phase_correlation_shift(&a, &b).unwrap(), (3, 5));
    assert_eq!(phase_correlation_shift(&a, &a).unwrap(), (0, 0));
}
