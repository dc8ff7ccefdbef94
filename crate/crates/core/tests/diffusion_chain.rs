use s2fuse_core::degradation::BlurMode;
use s2fuse_core::diffusion::*;
use s2fuse_core::metrics::psnr;
use s2fuse_core::nn::{Graph, ParamStore, Tensor};
use s2fuse_core::raster::resample_bicubic;
use s2fuse_core::{Raster, SeededRng};

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn composed_steps_match_the_closed_form_marginal() {
    let sched = cosine_schedule(64, DEFAULT_OFFSET).unwrap();
    let mut rng = SeededRng::new(17);
    let x0 = Raster::from_vec(1, 100, 100, (0..10_000).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
    let mut x = x0.clone();
    let n = 10_000.0;
    for t in 1..=64 {
        x = forward_step(&x, t, &sched, &mut rng).unwrap();
        if [1, 8, 32, 64].contains(&t) {
            let ab = sched.alpha_bar(t);
            let resid: Vec<f64> = x.data().iter().zip(x0.data()).map(|(a, b)| a - ab.sqrt() * b).collect();
            let (m, v) = mean_var(&resid);
            let var = 1.0 - ab;
            assert!(m.abs() < 3.0 * (var / n).sqrt(), "t={t} mean {m}");
            assert!((v - var).abs() < 3.0 * var * (2.0 / (n - 1.0)).sqrt(), "t={t} var {v} vs {var}");
        }
    }
}

#[test]
fn oracle_denoiser_recovers_x0() {
    let sched = cosine_schedule(4, DEFAULT_OFFSET).unwrap();
    let mut rng = SeededRng::new(3);
    let x0 = Raster::from_vec(1, 4, 4, (0..16).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
    let oracle = |_: &Raster, _: usize, _: &Conditioning| Ok(x0.clone());
    let out = sample(&oracle, &Conditioning::default(), &sched, &mut rng, (1, 4, 4)).unwrap();
    let l1 = out.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 16.0;
    assert!(l1 < (1.0 - sched.alpha_bar(1)).sqrt() * 1.5, "{l1}");
}

#[test]
fn identity_denoiser_matches_the_two_step_contraction() {
    let sched = cosine_schedule(2, DEFAULT_OFFSET).unwrap();
    let ident = |x: &Raster, _: usize, _: &Conditioning| Ok(x.clone());
    let out = sample(&ident, &Conditioning::default(), &sched, &mut SeededRng::new(8), (1, 3, 3)).unwrap();
    let mut rng = SeededRng::new(8);
    let z = rng.normals(9);
    let (c0, ct) = sched.posterior_coefficients(2);
    let s = sched.posterior_variance(2).sqrt();
    let (d0, dt) = sched.posterior_coefficients(1);
    for (i, &zi) in z.iter().enumerate() {
        let x1 = (c0 + ct) * zi + s * rng.normal();
        let expected = (d0 + dt) * x1;
        assert!((out.data()[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn sampling_is_deterministic_under_a_seed() {
    let sched = cosine_schedule(8, DEFAULT_OFFSET).unwrap();
    let half = |x: &Raster, _: usize, _: &Conditioning| Ok(x.map(|v| 0.5 * v));
    let a = sample(&half, &Conditioning::default(), &sched, &mut SeededRng::new(1), (2, 4, 4)).unwrap();
    let b = sample(&half, &Conditioning::default(), &sched, &mut SeededRng::new(1), (2, 4, 4)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn total_loss_is_the_sum_of_its_terms() {
    let mut rng = SeededRng::new(6);
    let mut draw = |n: usize| Tensor::vector((0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect());
    let (x0, pred, coarse) = (draw(12), draw(12), draw(12));
    let (q, p, neg) = (draw(4), draw(4), draw(4));
    let l1 = |a: &Tensor, b: &Tensor| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / 12.0;
    let cos = |a: &Tensor, b: &Tensor| {
        let d: f64 = a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum();
        d / (a.data.iter().map(|x| x * x).sum::<f64>().sqrt() * b.data.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let tau = 0.5;
    let (sp, sn) = ((cos(&q, &p) / tau).exp(), (cos(&q, &neg) / tau).exp());
    let contrast = -(sp / (sp + sn)).ln();
    let expected = l1(&pred, &x0) + l1(&coarse, &x0) + 0.01 * contrast;

    let mut g = Graph::new();
    let vars: Vec<_> = [&x0, &pred, &coarse, &q, &p, &neg].iter().map(|t| g.constant((*t).clone())).collect();
    let c = g.infonce(vars[3], vars[4], &[vars[5]], tau).unwrap();
    let loss = total_loss(&mut g, vars[0], vars[1], Some(vars[2]), Some(c), DEFAULT_LAMBDA_CONTRAST).unwrap();
    assert!((g.value(loss).item() - expected).abs() < 1e-12);
}

#[test]
fn encoder_ignores_crop_offset_on_constant_input() {
    let mut rng = SeededRng::new(2);
    let mut store = ParamStore::new();
    let enc = DegradationEncoder::new(&mut store, "enc", 1, 8, 16, &mut rng);
    let img = Raster::filled(1, 12, 12, 0.3);
    let crop = |y: usize, x: usize| {
        let data: Vec<f64> = (0..6).flat_map(|r| img.band(0)[(y + r) * 12 + x..(y + r) * 12 + x + 6].to_vec()).collect();
        Raster::from_vec(1, 6, 6, data).unwrap()
    };
    let a = degradation_encode(&crop(0, 0), &enc, &store).unwrap();
    let b = degradation_encode(&crop(5, 3), &enc, &store).unwrap();
    assert_eq!(a, b);
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

#[test]
fn contrastive_training_separates_degradations() {
    let mut model = ToyModel::new(ToyConfig::default(), 4).unwrap();
    let cfg = ToyTrainConfig {
        steps: 150,
        lambda_contrast: 1.0,
        objective: ToyObjective::Consistency,
        seed: 6,
        ..Default::default()
    };
    train_toy(&mut model, &cfg).unwrap();
    let mut rng = SeededRng::new(60);
    let half = |img: &Raster, y: usize, x: usize| {
        let data: Vec<f64> = (0..8).flat_map(|r| img.band(0)[(y + r) * 16 + x..(y + r) * 16 + x + 8].to_vec()).collect();
        Raster::from_vec(1, 8, 8, data).unwrap()
    };
    let (mut same, mut diff) = (0.0, 0.0);
    for _ in 0..20 {
        let a = toy_pair(1, 32, 2, BlurMode::Train, 0.0, &mut rng).unwrap().lr;
        let b = toy_pair(1, 32, 2, BlurMode::Train, 0.0, &mut rng).unwrap().lr;
        let q = degradation_encode(&half(&a, 0, 0), &model.encoder, &model.store).unwrap();
        let p = degradation_encode(&half(&a, 8, 8), &model.encoder, &model.store).unwrap();
        let n = degradation_encode(&half(&b, 4, 4), &model.encoder, &model.store).unwrap();
        same += cosine(&q, &p);
        diff += cosine(&q, &n);
    }
    assert!(same > diff, "same {same} vs different {diff}");
}

#[test]
fn trained_toy_sampler_beats_bicubic() {
    let mut model = ToyModel::new(ToyConfig::default(), 1).unwrap();
    let cfg = ToyTrainConfig { steps: 1200, blur: BlurMode::Fixed(1.0), seed: 2, ..Default::default() };
    let rep = train_toy(&mut model, &cfg).unwrap();
    assert!(rep.losses.iter().all(|l| l.is_finite()));
    let sched = cosine_schedule(cfg.schedule_steps, DEFAULT_OFFSET).unwrap();
    let mut rng = SeededRng::new(21);
    let (mut p_model, mut p_bic) = (0.0, 0.0);
    for _ in 0..8 {
        let pair = toy_pair(1, 32, 2, BlurMode::Fixed(1.0), 0.0, &mut rng).unwrap();
        let out = model.sample(&pair.lr, &sched, &mut rng).unwrap();
        let bic = resample_bicubic(&pair.lr, 2.0).unwrap();
        p_model += psnr(&pair.hr, &out, 2.0).unwrap();
        p_bic += psnr(&pair.hr, &bic, 2.0).unwrap();
    }
    assert!(p_model > p_bic, "model {} dB vs bicubic {} dB", p_model / 8.0, p_bic / 8.0);
}

#[test]
fn toy_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy");
    let mut model = ToyModel::new(ToyConfig { width: 8, rrdb_blocks: 1, ..Default::default() }, 3).unwrap();
    train_toy(&mut model, &ToyTrainConfig { steps: 2, patch: 16, seed: 1, ..Default::default() }).unwrap();
    model.save(&path, &Default::default()).unwrap();
    let (loaded, meta) = ToyModel::load(&path).unwrap();
    assert_eq!(meta.get("kind").map(String::as_str), Some("diffusion-toy"));
    assert_eq!(loaded.config, model.config);
    for (a, b) in loaded.store.iter().zip(model.store.iter()) {
        assert!(a.value.iter().zip(&b.value).all(|(x, y)| *x == *y as f32 as f64));
    }
}
