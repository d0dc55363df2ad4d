//! Image generator, critic and loss contracts.

use panodream::grid::Grid;
use panodream::imggen::*;
use panodream::seed;
use panodream::tinynn::*;
use panodream::Error;
use rand::Rng;

fn tiny_config() -> ImageConfig {
    ImageConfig {
        class_count: 3,
        width: 32,
        height: 16,
        base_width: 4,
        block_widths: vec![4, 4, 3],
        spade_hidden: 3,
        guide_channels: 2,
        ..ImageConfig::default()
    }
}

fn random_sample(cfg: &ImageConfig, rng: &mut impl Rng, valid_p: f64) -> ImageSample {
    let (w, h) = (cfg.width, cfg.height);
    let sem = Grid::from_fn(w, h, |x, y| ((x / 5 + y / 4) % cfg.class_count) as u8);
    let depth = Grid::from_fn(w, h, |x, y| 1.0 + ((x * 7 + y * 3) % 11) as f64 * 0.5);
    let real = Grid::from_fn(w, h, |x, y| {
        let c = *sem.get(x, y) as usize;
        [(60 + 70 * c) as u8, (200 - 15 * c) as u8, ((x * 4 + y * 2) % 256) as u8]
    });
    let guide_mask = Grid::from_fn(w, h, |_, _| rng.random_bool(valid_p));
    ImageSample {
        sem,
        depth,
        guide_rgb: real.clone(),
        guide_mask,
        real,
    }
}

fn perturb(gen: &mut ImageGenerator, rng: &mut impl Rng) {
    for p in gen.params_mut().params_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
}

#[test]
fn output_range_and_determinism() {
    let cfg = ImageConfig::default();
    let mut gen = ImageGenerator::new(cfg.clone()).unwrap();
    let mut rng = seed::rng(1);
    perturb(&mut gen, &mut rng);
    let s = random_sample(&cfg, &mut rng, 0.4);
    let (inp, _) = image_batch(&gen, &[&s]).unwrap();
    let a = gen.forward(&inp).unwrap();
    assert_eq!(a.shape(), [1, 3, 64, 128]);
    assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert_eq!(a, gen.forward(&inp).unwrap());
    let img = gen.generate_rgb(&s.sem, &s.depth, &s.guide_rgb, &s.guide_mask).unwrap();
    assert_eq!(img, tensor_to_rgb(&a, 0).unwrap());
    assert_eq!(gen.blocks().len(), 4);
}

#[test]
fn geometry_mismatch_is_shape_error() {
    let cfg = tiny_config();
    let gen = ImageGenerator::new(cfg.clone()).unwrap();
    let s = random_sample(&ImageConfig { width: 64, ..cfg }, &mut seed::rng(0), 0.5);
    let r = gen.generate_rgb(&s.sem, &s.depth, &s.guide_rgb, &s.guide_mask);
    assert!(matches!(r, Err(Error::Shape(_))));
}

#[test]
fn ablated_rgb_site_ignores_guidance() {
    let cfg = tiny_config();
    let mut gen = ImageGenerator::new(cfg.clone()).unwrap();
    let mut rng = seed::rng(2);
    perturb(&mut gen, &mut rng);
    let a = random_sample(&cfg, &mut rng, 0.5);
    let mut b = a.clone();
    b.guide_rgb = Grid::from_fn(cfg.width, cfg.height, |x, _| [x as u8 * 3, 9, 200]);
    b.guide_mask = Grid::from_fn(cfg.width, cfg.height, |x, y| (x + y) % 3 == 0);
    let run = |g: &ImageGenerator, s: &ImageSample| g.generate_rgb(&s.sem, &s.depth, &s.guide_rgb, &s.guide_mask).unwrap();
    let (ia, ib) = (image_batch(&gen, &[&a]).unwrap().0, image_batch(&gen, &[&b]).unwrap().0);
    assert_ne!(gen.forward(&ia).unwrap(), gen.forward(&ib).unwrap());
    gen.ablate_rgb_guidance();
    assert_eq!(gen.forward(&ia).unwrap(), gen.forward(&ib).unwrap());
    assert_eq!(run(&gen, &a), run(&gen, &b));
}

/// Scores each patch by `2 * mean(rgb) - 1` over channels, no features.
struct MeanCritic;

impl Critic for MeanCritic {
    fn evaluate(&self, rgb: &Tensor4, _cond: &Tensor4) -> panodream::Result<CriticOutput> {
        let [n, c, h, w] = rgb.shape();
        let score = Tensor4::from_fn([n, 1, h, w], |[b, _, y, x]| {
            2.0 * (0..c).map(|k| rgb.at(b, k, y, x)).sum::<f64>() / c as f64 - 1.0
        });
        Ok(CriticOutput { features: vec![rgb.clone()], score })
    }

    fn input_grad(&self, rgb: &Tensor4, _c: &Tensor4, df: &[Tensor4], ds: &Tensor4) -> panodream::Result<Tensor4> {
        let c = rgb.c() as f64;
        let mut g = Tensor4::from_fn(rgb.shape(), |[b, _, y, x]| 2.0 * ds.at(b, 0, y, x) / c);
        if let Some(f) = df.first() {
            g.add_assign(f)?;
        }
        Ok(g)
    }
}

#[test]
fn discriminator_hinge_hand_cases() {
    let cond = Tensor4::zeros([1, 4, 4, 8]);
    let ones = Tensor4::filled([1, 3, 4, 8], 1.0);
    let zeros = Tensor4::zeros([1, 3, 4, 8]);
    assert_eq!(discriminator_loss(&MeanCritic, &ones, &zeros, &cond).unwrap(), 0.0);
    assert_eq!(discriminator_loss(&ConstantCritic(0.0), &ones, &zeros, &cond).unwrap(), 2.0);
    let mut rng = seed::rng(3);
    for _ in 0..200 {
        let k = rng.random_range(-3.0..3.0);
        let a = Tensor4::from_fn([1, 3, 4, 8], |_| rng.random_range(-2.0..2.0));
        assert!(discriminator_loss(&ConstantCritic(k), &a, &a, &cond).unwrap() >= 0.0);
        assert!(discriminator_loss(&MeanCritic, &a, &ones, &cond).unwrap() >= 0.0);
    }
}

#[test]
fn generator_loss_identities() {
    let cfg = tiny_config();
    let fx = FeatureExtractor::new(5).unwrap();
    let disc = Discriminator::new(cfg.cond_channels(), [4, 5], 6).unwrap();
    let mut rng = seed::rng(4);
    let real = Tensor4::from_fn([2, 3, 16, 32], |_| rng.random_range(0.0..1.0));
    let cond = Tensor4::from_fn([2, cfg.cond_channels(), 16, 32], |_| rng.random_range(0.0..1.0));
    let w = LossWeights::default();
    let same = generator_loss(&real, &real, &cond, &disc, &fx, &w).unwrap();
    assert_eq!(same.vgg, 0.0);
    assert_eq!(same.fm, 0.0);
    let fake = Tensor4::from_fn([2, 3, 16, 32], |_| rng.random_range(0.0..1.0));
    let c = generator_loss(&fake, &real, &cond, &ConstantCritic(0.5), &fx, &w).unwrap();
    assert_eq!(c.gan, -0.5);
    assert_eq!(c.fm, 0.0);
    assert!(c.vgg > 0.0);
}

fn naive_l1(a: &Tensor4, b: &Tensor4) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a.data()[i] - b.data()[i]).abs();
    }
    s / a.len() as f64
}

#[test]
fn generator_loss_matches_component_sum_oracle() {
    let cfg = tiny_config();
    let fx = FeatureExtractor::new(8).unwrap();
    let mut rng = seed::rng(9);
    for case in 0..5 {
        let disc = Discriminator::new(cfg.cond_channels(), [4, 5], case).unwrap();
        let real = Tensor4::from_fn([2, 3, 16, 32], |_| rng.random_range(0.0..1.0));
        let fake = Tensor4::from_fn([2, 3, 16, 32], |_| rng.random_range(0.0..1.0));
        let cond = Tensor4::from_fn([2, cfg.cond_channels(), 16, 32], |_| rng.random_range(0.0..1.0));
        let w = LossWeights { gan: rng.random_range(0.5..2.0), vgg: 10.0, fm: 10.0 };
        let l = generator_loss(&fake, &real, &cond, &disc, &fx, &w).unwrap();
        let (df, dr) = (disc.evaluate(&fake, &cond).unwrap(), disc.evaluate(&real, &cond).unwrap());
        let gan = -w.gan * df.score.data().iter().sum::<f64>() / df.score.len() as f64;
        let (pf, pr) = (fx.features(&fake).unwrap(), fx.features(&real).unwrap());
        let vgg = w.vgg * pf.iter().zip(&pr).map(|(a, b)| naive_l1(a, b)).sum::<f64>() / pf.len() as f64;
        let fm = w.fm * df.features.iter().zip(&dr.features).map(|(a, b)| naive_l1(a, b)).sum::<f64>() / 2.0;
        assert!((l.gan - gan).abs() < 1e-10);
        assert!((l.vgg - vgg).abs() < 1e-10);
        assert!((l.fm - fm).abs() < 1e-10);
        assert!((l.total - (gan + vgg + fm)).abs() < 1e-10);
    }
}

#[test]
fn feature_extractor_is_seeded() {
    let x = Tensor4::from_fn([1, 3, 8, 16], |[_, c, y, x]| ((c + y * x) % 5) as f64 / 5.0);
    let a = FeatureExtractor::new(1).unwrap().features(&x).unwrap();
    assert_eq!(a, FeatureExtractor::new(1).unwrap().features(&x).unwrap());
    assert_ne!(a, FeatureExtractor::new(2).unwrap().features(&x).unwrap());
    let shapes: Vec<_> = a.iter().map(|f| f.shape()).collect();
    assert_eq!(shapes, vec![[1, 8, 8, 16], [1, 16, 4, 8], [1, 32, 2, 4]]);
}

/// The composed losses have many ReLU and L1 kinks, so the step is kept
/// small; biases ahead of an instance norm have an exactly zero gradient,
/// which the floor keeps from being compared against rounding noise.
fn end_to_end_opts() -> GradCheckOptions {
    GradCheckOptions { samples_per_tensor: 4, rel_step: 1e-6, floor: 1e-3, ..Default::default() }
}

fn gen_gradient_check(critic: &dyn Critic, seed_: u64) -> f64 {
    let cfg = tiny_config();
    let mut gen = ImageGenerator::new(cfg.clone()).unwrap();
    let mut rng = seed::rng(seed_);
    perturb(&mut gen, &mut rng);
    let fx = FeatureExtractor::new(3).unwrap();
    let s = [random_sample(&cfg, &mut rng, 0.5), random_sample(&cfg, &mut rng, 0.3)];
    let (inp, real) = image_batch(&gen, &[&s[0], &s[1]]).unwrap();
    let w = LossWeights::default();
    let (fake, cache) = gen.forward_with(gen.params(), &inp).unwrap();
    let (_, dfake) = generator_loss_and_grad(&fake, &real, &inp.cond, critic, &fx, &w).unwrap();
    let mut grads = Grads::zeros_like(gen.params());
    gen.backward(gen.params(), &mut grads, &inp, &cache, &dfake).unwrap();
    let loss = |p: &ParamStore| {
        let f = gen.forward_with(p, &inp)?.0;
        Ok(generator_loss(&f, &real, &inp.cond, critic, &fx, &w)?.total)
    };
    let r = grad_check(gen.params(), &grads, loss, &end_to_end_opts()).unwrap();
    assert!(r.per_param.len() > 40);
    eprintln!("worst {:?}", r.worst());
    r.max_rel_error()
}

#[test]
fn generator_gradients_through_discriminator() {
    let disc = Discriminator::new(tiny_config().cond_channels(), [4, 5], 11).unwrap();
    assert!(gen_gradient_check(&disc, 12) < 1e-5);
}

#[test]
fn generator_gradients_through_stub_critic() {
    assert!(gen_gradient_check(&MeanCritic, 13) < 1e-5);
}

#[test]
fn discriminator_gradients() {
    let cfg = tiny_config();
    let mut disc = Discriminator::new(cfg.cond_channels(), [4, 5], 14).unwrap();
    let mut rng = seed::rng(15);
    for p in disc.params_mut().params_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let real = Tensor4::from_fn([2, 3, 16, 32], |_| rng.random_range(0.0..1.0));
    let fake = Tensor4::from_fn([2, 3, 16, 32], |_| rng.random_range(0.0..1.0));
    let cond = Tensor4::from_fn([2, cfg.cond_channels(), 16, 32], |_| rng.random_range(0.0..1.0));
    let (_, g) = disc.loss_and_grads(&real, &fake, &cond).unwrap();
    let r = grad_check(disc.params(), &g, |s| disc.loss_with(s, &real, &fake, &cond), &GradCheckOptions::default()).unwrap();
    assert!(r.max_rel_error() < 1e-5, "{:?}", r.worst());
    // Input gradient through features and score.
    let df: Vec<Tensor4> = disc
        .evaluate(&fake, &cond)
        .unwrap()
        .features
        .iter()
        .map(|f| Tensor4::from_fn(f.shape(), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let out = disc.evaluate(&fake, &cond).unwrap();
    let ds = Tensor4::from_fn(out.score.shape(), |_| rng.random_range(-1.0..1.0));
    let dx = disc.input_grad(&fake, &cond, &df, &ds).unwrap();
    let f = |x: &Tensor4| {
        let o = disc.evaluate(x, &cond)?;
        let mut s = o.score.dot(&ds)?;
        for (a, b) in o.features.iter().zip(&df) {
            s += a.dot(b)?;
        }
        Ok(s)
    };
    let err = check_input_grad(&fake, &dx, f, &GradCheckOptions { samples_per_tensor: 64, ..Default::default() }).unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn feature_extractor_input_gradient() {
    let fx = FeatureExtractor::new(4).unwrap();
    let mut rng = seed::rng(16);
    let x = Tensor4::from_fn([1, 3, 8, 16], |_| rng.random_range(0.0..1.0));
    let t = fx.trace(&x).unwrap();
    let up: Vec<Tensor4> = t.features.iter().map(|f| Tensor4::from_fn(f.shape(), |_| rng.random_range(-1.0..1.0))).collect();
    let dx = fx.backward(&t, &up).unwrap();
    let f = |x: &Tensor4| {
        let mut s = 0.0;
        for (a, b) in fx.features(x)?.iter().zip(&up) {
            s += a.dot(b)?;
        }
        Ok(s)
    };
    assert!(check_input_grad(&x, &dx, f, &GradCheckOptions::default()).unwrap() < 1e-5);
}

#[test]
fn zero_gan_weight_decreases_monotonically() {
    let cfg = tiny_config();
    let mut gen = ImageGenerator::new(cfg.clone()).unwrap();
    let mut disc = Discriminator::new(cfg.cond_channels(), [8, 8], 1).unwrap();
    let mut rng = seed::rng(17);
    let samples = vec![random_sample(&cfg, &mut rng, 0.5), random_sample(&cfg, &mut rng, 0.5)];
    let tc = ImageTrainConfig {
        steps: 51,
        batch: 2,
        weights: LossWeights { gan: 0.0, ..Default::default() },
        ..Default::default()
    };
    let curve = train_image_generator(&mut gen, &mut disc, &samples, &tc, |_| {}).unwrap();
    for w in curve.windows(2) {
        assert!(w[1].g_total < w[0].g_total, "{} -> {}", w[0].g_total, w[1].g_total);
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny_config();
    let mut rng = seed::rng(18);
    let samples: Vec<_> = (0..3).map(|_| random_sample(&cfg, &mut rng, 0.5)).collect();
    let run = || {
        let mut gen = ImageGenerator::new(cfg.clone()).unwrap();
        let mut disc = Discriminator::new(cfg.cond_channels(), [8, 8], 1).unwrap();
        let tc = ImageTrainConfig { steps: 5, ..Default::default() };
        let curve = train_image_generator(&mut gen, &mut disc, &samples, &tc, |_| {}).unwrap();
        (gen.params().checksum(), disc.params().checksum(), curve)
    };
    assert_eq!(run(), run());
}

fn overfit_l1(cfg: &ImageConfig, sample: &ImageSample, steps: usize) -> f64 {
    let mut gen = ImageGenerator::new(cfg.clone()).unwrap();
    let mut disc = Discriminator::new(cfg.cond_channels(), [16, 32], 1).unwrap();
    let tc = ImageTrainConfig { steps, batch: 1, lr_g: 2e-3, lr_d: 2e-4, ..Default::default() };
    train_image_generator(&mut gen, &mut disc, std::slice::from_ref(sample), &tc, |_| {}).unwrap();
    let (inp, real) = image_batch(&gen, &[sample]).unwrap();
    l1_mean(&gen.forward(&inp).unwrap(), &real).unwrap().0
}

#[test]
fn guidance_helps_when_it_matches_the_target() {
    let cfg = ImageConfig { width: 64, height: 32, ..ImageConfig::default() };
    let mut rng = seed::rng(19);
    let guided = random_sample(&cfg, &mut rng, 1.0);
    let mut unguided = guided.clone();
    unguided.guide_mask = Grid::filled(cfg.width, cfg.height, false);
    let (a, b) = (overfit_l1(&cfg, &guided, 150), overfit_l1(&cfg, &unguided, 150));
    assert!(a < b, "guided {a} vs unguided {b}");
}
