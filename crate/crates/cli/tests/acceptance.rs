//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use s2fuse_core::classic::{
    gs_pansharpen, ihs_pansharpen, match_mean_std, mtf_glp_pansharpen, mtf_glp_with_sigmas, pca_pansharpen,
    principal_components, Injection,
};
use s2fuse_core::degradation::{gaussian_taps, BlurMode};
use s2fuse_core::diffusion::*;
use s2fuse_core::fusion::*;
use s2fuse_core::metrics::{ergas, ncc, phase_correlation_shift, psnr, r2, sad, ssim};
use s2fuse_core::nn::gradcheck::layer_suite;
use s2fuse_core::raster::{boxcar_downsample, pixel_fold, pixel_unfold};
use s2fuse_core::scene::{gen_scene, smooth, SceneContent, SceneSpec};
use s2fuse_core::{Raster, SeededRng};

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn l1(a: &Raster, b: &Raster) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64
}

/// RGB guide plus `group` bands on the native grid, from one mixture scene.
fn wald_scene(group: BandGroup, size: usize, seed: u64, blur: Option<f64>) -> (Raster, Raster) {
    let c = group.bands().len();
    let mut sc = gen_scene(&SceneSpec::new(size, 3 + c, SceneContent::Mixture, seed)).unwrap();
    if let Some(s) = blur {
        sc = smooth(&sc, s).unwrap();
    }
    let rgb = sc.select_bands(&[0, 1, 2]).unwrap();
    let idx: Vec<usize> = (3..3 + c).collect();
    let ms = sc.select_bands(&idx).unwrap().with_band_meta(group.band_specs()).unwrap();
    (ms, rgb)
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let suite = layer_suite(11, 5).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let (worst, err) = suite
        .iter()
        .map(|(n, r)| (*n, r.max_rel_error))
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    verdict(
        err < 1e-4 && elapsed < Duration::from_secs(60),
        format!("{} layers, worst {worst} rel err {err:.2e}, {:.1}s", suite.len(), elapsed.as_secs_f64()),
    )
}

fn diffusion_chain() -> Outcome {
    let sched = cosine_schedule(64, DEFAULT_OFFSET).map_err(|e| e.to_string())?;
    let mut rng = SeededRng::new(17);
    let n = 10_000;
    let x0 = Raster::from_vec(1, 100, 100, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
    let mut x = x0.clone();
    for t in 1..=64 {
        x = forward_step(&x, t, &sched, &mut rng).unwrap();
    }
    let ab = sched.alpha_bar(64);
    let resid: Vec<f64> = x.data().iter().zip(x0.data()).map(|(a, b)| a - ab.sqrt() * b).collect();
    let nf = n as f64;
    let m = resid.iter().sum::<f64>() / nf;
    let v = resid.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (nf - 1.0);
    let var = 1.0 - ab;
    let mean_ok = m.abs() < 3.0 * (var / nf).sqrt();
    let var_ok = (v - var).abs() < 3.0 * var * (2.0 / (nf - 1.0)).sqrt();

    let small = cosine_schedule(4, DEFAULT_OFFSET).unwrap();
    let x0 = Raster::from_vec(1, 4, 4, (0..16).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
    let oracle = |_: &Raster, _: usize, _: &Conditioning| Ok(x0.clone());
    let out = sample(&oracle, &Conditioning::default(), &small, &mut rng, (1, 4, 4)).unwrap();
    let err = l1(&out, &x0);
    let bound = (1.0 - small.alpha_bar(1)).sqrt() * 1.5;
    verdict(
        mean_ok && var_ok && err < bound,
        format!("T=64 residual mean {m:.4} var {v:.4} (want {var:.4}); oracle chain l1 {err:.4} < {bound:.4}"),
    )
}

fn folding() -> Outcome {
    let mut rng = SeededRng::new(11);
    let mut exact = 0;
    for i in 0..100 {
        let r = if i % 2 == 0 { 2 } else { 4 };
        let (c, hk, wk) = (1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6));
        let data = (0..c * hk * r * wk * r).map(|_| rng.uniform_range(-1e3, 1e3)).collect();
        let x = Raster::from_vec(c, hk * r, wk * r, data).unwrap();
        let back = pixel_unfold(&pixel_fold(&x, r).unwrap(), r).unwrap();
        if back.shape() == x.shape() && back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            exact += 1;
        }
    }
    verdict(exact == 100, format!("{exact}/100 bit-exact round trips"))
}

fn zero_init_is_glp() -> Outcome {
    let mut rng = SeededRng::new(40);
    let mut exact = 0;
    for i in 0..20 {
        let group = [BandGroup::M10, BandGroup::M20][i % 2];
        let r = group.ratio();
        let (ms_native, rgb) = wald_scene(group, 4 * r, 500 + i as u64, None);
        let ms = boxcar_downsample(&ms_native, r).unwrap().with_band_meta(group.band_specs()).unwrap();
        let p = FusionParams::new(&group.band_specs(), r, FusionConfig::default(), rng.next_u64()).unwrap();
        let fused = fuse(&ms, &rgb, &p).unwrap();
        let pan = mix_pan(&rgb, &p.mixer_logits()).unwrap();
        let (glp, _) = mtf_glp_with_sigmas(&ms, &pan, r, p.mtf_sigmas(), Injection::Unit).unwrap();
        if fused.shape() == glp.shape() && fused.data().iter().zip(glp.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        {
            exact += 1;
        }
    }
    verdict(exact == 20, format!("{exact}/20 scenes bit-identical to unit-gain GLP"))
}

fn training_beats_baselines() -> Outcome {
    let t0 = Instant::now();
    let samples: Vec<FusionSample> = (0..64)
        .map(|i| {
            let (ms, rgb) = wald_scene(BandGroup::M10, 32, 100 + i, None);
            FusionSample::wald(&ms, &rgb, 4).unwrap()
        })
        .collect();
    let (train, val) = samples.split_at(48);
    let (mut bic, mut glp) = (0.0, 0.0);
    for s in val {
        let t = s.target.as_ref().unwrap();
        bic += ergas(t, &upsample(&s.ms_lr, 4).unwrap(), 4.0).unwrap();
        let pan = mix_pan(&s.guide, &[0.0; 3]).unwrap();
        glp += ergas(t, &mtf_glp_pansharpen(&s.ms_lr, &pan, 4, &[0.3; 4]).unwrap().0, 4.0).unwrap();
    }
    let (bic, glp) = (bic / val.len() as f64, glp / val.len() as f64);
    let p = FusionParams::new(&BandGroup::M10.band_specs(), 4, FusionConfig::default(), 1).unwrap();
    let cfg = TrainConfig { steps: 2000, lr: 1e-3, eval_every: 400, crop: Some(16), seed: 3, ..Default::default() };
    let rep = train_fusion(train, val, p, &cfg).map_err(|e| e.to_string())?;
    let nn = evaluate_ergas(val, &rep.params).unwrap();
    let elapsed = t0.elapsed();
    let (gain_bic, gain_glp) = (1.0 - nn / bic, 1.0 - nn / glp);
    verdict(
        gain_bic >= 0.25 && gain_glp >= 0.10 && elapsed < Duration::from_secs(15 * 60),
        format!(
            "held-out ERGAS {nn:.3} vs bicubic {bic:.3} ({:.0}% better), GLP {glp:.3} ({:.0}% better), {:.0}s",
            100.0 * gain_bic,
            100.0 * gain_glp,
            elapsed.as_secs_f64()
        ),
    )
}

fn wald_consistency() -> Outcome {
    let mut worst: f64 = 0.0;
    for (group, size) in [(BandGroup::M10, 32), (BandGroup::M20, 64), (BandGroup::M60, 96)] {
        let r = group.ratio();
        for seed in 0..3 {
            let (ms_native, rgb) = wald_scene(group, size, 900 + seed, Some(r as f64 / 2.0));
            let s = FusionSample::wald(&ms_native, &rgb, r).unwrap();
            let p = FusionParams::new(&group.band_specs(), r, FusionConfig::default(), seed).unwrap();
            let down = boxcar_downsample(&fuse(&s.ms_lr, &s.guide, &p).unwrap(), r).unwrap();
            for b in 0..s.ms_lr.bands() {
                let band = s.ms_lr.select_bands(&[b]).unwrap();
                let range = band.band_meta()[0].dynamic_range();
                worst = worst.max(l1(&down.select_bands(&[b]).unwrap(), &band) / range);
            }
        }
    }
    verdict(worst <= 0.02, format!("worst band l1 {:.2}% of dynamic range over ratios 4, 8, 24", 100.0 * worst))
}

fn blind_beats_fixed() -> Outcome {
    let mut rng = SeededRng::new(99);
    let test: Vec<ToyPair> = (0..32).map(|_| toy_pair(1, 32, 2, BlurMode::Train, 0.0, &mut rng).unwrap()).collect();
    let mut errs = Vec::new();
    for mode in [BlurMode::Train, BlurMode::Fixed(3.0)] {
        let mut m = ToyModel::new(ToyConfig::default(), 1).unwrap();
        let cfg = ToyTrainConfig {
            steps: 300,
            patch: 32,
            blur: mode,
            objective: ToyObjective::Consistency,
            seed: 5,
            ..Default::default()
        };
        train_toy(&mut m, &cfg).map_err(|e| e.to_string())?;
        errs.push(test.iter().map(|p| l1(&m.super_resolve(&p.lr).unwrap(), &p.hr)).sum::<f64>() / 32.0);
    }
    let gain = 1.0 - errs[0] / errs[1];
    verdict(
        gain >= 0.10,
        format!("blind l1 {:.4} vs fixed sigma=3 l1 {:.4} ({:.0}% better)", errs[0], errs[1], 100.0 * gain),
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300)
}

fn oracle_ergas(a: &Raster, b: &Raster, ratio: f64) -> f64 {
    let n = (a.height() * a.width()) as f64;
    let mut acc = 0.0;
    for c in 0..a.bands() {
        let (mut se, mut s) = (0.0, 0.0);
        for (x, y) in a.band(c).iter().zip(b.band(c)) {
            se += (x - y) * (x - y);
            s += x;
        }
        acc += ((se / n).sqrt() / (s / n)).powi(2);
    }
    100.0 / ratio * (acc / a.bands() as f64).sqrt()
}

fn oracle_psnr(a: &Raster, b: &Raster, peak: f64) -> f64 {
    let se: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    20.0 * peak.log10() - 10.0 * (se / a.data().len() as f64).log10()
}

/// Direct Gaussian-window SSIM over every valid 11×11 window.
fn oracle_ssim(a: &Raster, b: &Raster, peak: f64) -> f64 {
    let mut w2 = [[0.0; 11]; 11];
    let mut s = 0.0;
    for (i, row) in w2.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
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
                for (i, row) in w2.iter().enumerate() {
                    for (j, w) in row.iter().enumerate() {
                        let w = w / s;
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
    for p in 0..a.plane_len() {
        let u: Vec<f64> = (0..a.bands()).map(|c| a.band(c)[p]).collect();
        let v: Vec<f64> = (0..a.bands()).map(|c| b.band(c)[p]).collect();
        let dot: f64 = u.iter().zip(&v).map(|(p, q)| p * q).sum();
        let nu = u.iter().map(|p| p * p).sum::<f64>().sqrt();
        let nv = v.iter().map(|p| p * p).sum::<f64>().sqrt();
        total += (dot / nu / nv).min(1.0).acos().to_degrees();
    }
    total / a.plane_len() as f64
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

fn metrics() -> Outcome {
    let mut rng = SeededRng::new(2024);
    let mut agree = 0;
    for i in 0..50 {
        let (c, n) = (2 + i % 3, 11 + i % 6);
        let a: Vec<f64> = (0..c * n * n).map(|_| rng.uniform_range(10.0, 240.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + rng.uniform_range(-30.0, 30.0)).collect();
        let (a, b) = (Raster::from_vec(c, n, n, a).unwrap(), Raster::from_vec(c, n, n, b).unwrap());
        let (r2o, ncco) = oracle_r2_ncc(a.data(), b.data());
        let ok = close(ergas(&a, &b, 4.0).unwrap(), oracle_ergas(&a, &b, 4.0))
            && close(psnr(&a, &b, 255.0).unwrap(), oracle_psnr(&a, &b, 255.0))
            && close(ssim(&a, &b, 255.0).unwrap(), oracle_ssim(&a, &b, 255.0))
            && close(sad(&a, &b).unwrap(), oracle_sad(&a, &b))
            && close(r2(&a, &b).unwrap(), r2o)
            && close(ncc(&a, &b).unwrap(), ncco);
        agree += ok as usize;
    }
    let n = 32;
    let a = Raster::from_vec(1, n, n, (0..n * n).map(|_| rng.uniform_range(0.0, 255.0)).collect()).unwrap();
    let mut hits = 0;
    for _ in 0..100 {
        let dy = rng.below(n) as isize - (n / 2 - 1) as isize;
        let dx = rng.below(n) as isize - (n / 2 - 1) as isize;
        hits += (phase_correlation_shift(&a, &circular_shift(&a, dy, dx)).unwrap() == (dy, dx)) as usize;
    }
    verdict(agree == 50 && hits == 100, format!("{agree}/50 rasters match oracles to 1e-9, {hits}/100 shifts"))
}

fn classic_identities() -> Outcome {
    let scene = |bands, size, seed| gen_scene(&SceneSpec::new(size, bands, SceneContent::Mixture, seed)).unwrap();
    let ms = scene(4, 8, 1);
    let pan = scene(1, 32, 2);
    let out = ihs_pansharpen(&ms, &pan, 4).unwrap();
    let i = upsample(&ms, 4).unwrap().band_mean().into_data();
    let pan_hm = match_mean_std(pan.data(), &i);
    let ihs = out.band_mean().data().iter().zip(&pan_hm).all(|(a, b)| (a - b).abs() < 1e-9);

    let max_dev = |a: &Raster, b: &Raster| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let ms = scene(4, 8, 3);
    let xt = upsample(&ms, 4).unwrap();
    let intensity = xt.band_mean();
    let gs_id = max_dev(&gs_pansharpen(&ms, &intensity, 4).unwrap(), &xt) < 1e-9;
    let ihs_id = max_dev(&ihs_pansharpen(&ms, &intensity, 4).unwrap(), &xt) < 1e-9;
    let (means, _, vecs) = principal_components(&xt).unwrap();
    let pc1: Vec<f64> = (0..xt.plane_len())
        .map(|p| (0..xt.bands()).map(|b| (xt.band(b)[p] - means[b]) * vecs[(b, 0)]).sum())
        .collect();
    let pc1 = Raster::from_vec(1, 32, 32, pc1).unwrap();
    let pca_id = max_dev(&pca_pansharpen(&ms, &pc1, 4).unwrap(), &xt) < 1e-6;
    let flat_ms = Raster::filled(3, 8, 8, 120.0);
    let gs_flat = gs_pansharpen(&flat_ms, &scene(1, 32, 4), 4).unwrap().data().iter().all(|v| (v - 120.0).abs() < 1e-9);

    let ms = scene(2, 6, 7);
    let flat = Raster::filled(1, 24, 24, 90.0);
    let (out, _) = mtf_glp_with_sigmas(&ms, &flat, 4, &[1.9, 1.9], Injection::Unit).unwrap();
    let up = upsample(&ms, 4).unwrap();
    let glp = out.data().iter().zip(up.data()).all(|(a, b)| (a - b).abs() < 1e-9);

    let mut worst: f64 = 0.0;
    for ratio in [2usize, 4, 8, 24] {
        for gnyq in [0.2, 0.25, 0.3, 0.36, 0.45] {
            let taps = gaussian_taps(mtf_sigma(gnyq, ratio).unwrap(), 1001);
            let half = (taps.len() / 2) as f64;
            let f = 0.5 / ratio as f64;
            let h: f64 = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * (2.0 * std::f64::consts::PI * f * (k as f64 - half)).cos())
                .sum();
            worst = worst.max((h - gnyq).abs());
        }
    }
    let identities = [ihs, ihs_id, gs_id, gs_flat, pca_id, glp];
    let held = identities.iter().filter(|&&b| b).count();
    verdict(
        held == identities.len() && worst < 0.05,
        format!(
            "{held}/{} identity cases (IHS mean {ihs}, IHS pan=I {ihs_id}, GS pan=I {gs_id}, GS flat MS {gs_flat}, \
             PCA pan=PC1 {pca_id}, GLP flat pan {glp}), worst Nyquist transfer error {worst:.4}",
            identities.len()
        ),
    )
}

fn s2fuse(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_s2fuse"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn snapshot(dir: &Path, prefix: &Path, into: &mut BTreeMap<String, Vec<u8>>) {
    for e in std::fs::read_dir(dir).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            snapshot(&p, prefix, into);
        } else if p.extension().is_none_or(|x| x != "cfg") {
            into.insert(p.strip_prefix(prefix).unwrap().display().to_string(), std::fs::read(&p).unwrap());
        }
    }
}

const RUN_CONFIG: &str = "output.dir = run\nscene.size = 32\nscene.seed = 4\ndegrade.seed = 5\n\
                          degrade.blur = train\ndegrade.noise = 1\nguide.method = diffusion\n\
                          guide.ckpt = toy/m\nguide.seed = 6\nfuse.ckpt = ck/m\n";

fn session(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let steps: &[&[&str]] = &[
        &["--seed", "1", "gen-scene", "--size", "32", "--group", "10m", "--out", "s0"],
        &["--seed", "2", "gen-scene", "--size", "32", "--group", "10m", "--out", "s1"],
        &["make-wald", "--in", "s0/ms", "--guide", "s0/rgb", "--ratio", "4", "--out", "data/a"],
        &["make-wald", "--in", "s1/ms", "--guide", "s1/rgb", "--ratio", "4", "--out", "data/b"],
        &["--seed", "3", "train-fusion", "--group", "10m", "--data", "data", "--steps", "6", "--lr", "1e-3",
          "--val-fraction", "0.5", "--out", "ck/m"],
        &["fuse", "--ms", "data/a/ms", "--guide", "data/a/guide", "--ckpt", "ck/m", "--out", "fused"],
        &["eval", "--ref", "data/a/target", "--pred", "fused", "--ratio", "4", "--out", "eval.txt"],
        &["--seed", "7", "degrade", "--in", "s0/rgb", "--out", "rgb_lr", "--scale", "4", "--blur", "train",
          "--noise", "2"],
        &["--seed", "8", "diffuse-toy", "train", "--T", "8", "--patch", "16", "--steps", "20", "--scale", "4",
          "--out", "toy/m"],
        &["--seed", "9", "diffuse-toy", "sample", "--ckpt", "toy/m", "--patch", "16", "--out", "toy/s"],
        &["run", "--config", "run.cfg"],
    ];
    std::fs::write(dir.join("run.cfg"), RUN_CONFIG).map_err(|e| e.to_string())?;
    for args in steps {
        s2fuse(dir, args)?;
    }
    let mut files = BTreeMap::new();
    snapshot(dir, dir, &mut files);
    Ok(files)
}

fn cli_reruns() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = session(a.path())?;
    let second = session(b.path())?;
    let differing: Vec<&String> =
        first.keys().filter(|k| second.get(*k) != first.get(*k)).chain(second.keys().filter(|k| !first.contains_key(*k))).collect();
    verdict(
        differing.is_empty() && !first.is_empty(),
        if differing.is_empty() {
            format!("{} output files byte-identical across two runs", first.len())
        } else {
            format!("differing outputs: {differing:?}")
        },
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient checks", gradients),
        ("diffusion forward and reverse chain", diffusion_chain),
        ("pixel fold/unfold round trip", folding),
        ("zero-initialized fusion equals unit-gain GLP", zero_init_is_glp),
        ("trained fusion beats bicubic and GLP", training_beats_baselines),
        ("Wald consistency", wald_consistency),
        ("blind SR beats fixed-blur SR", blind_beats_fixed),
        ("metric oracles and phase correlation", metrics),
        ("classical identities and MTF transfer", classic_identities),
        ("bit-identical CLI reruns", cli_reruns),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
