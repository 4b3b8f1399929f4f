use adar::net::{adaptive_conv, Discriminator, ModelKind, NetConfig, PoseRenderer};
use adar::params::{ParamKind, ParamSet};
use adar::{NormMode, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn randn(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f32>>();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn posemaps(b: usize, res: usize, seed: u64) -> Tensor<f32> {
    randn(&[b, 1, res, res], seed).map(|v| if v > 1.0 { 1.0 } else { -1.0 })
}

fn images(b: usize, res: usize, seed: u64) -> Tensor<f32> {
    randn(&[b, 3, res, res], seed).map(|v| v.tanh())
}

fn tiny(res: usize) -> NetConfig {
    NetConfig {
        resolution: res,
        encoder_channels: vec![4, 6, 8],
        kernel_size: 3,
        fcn_channels: vec![4, 4, 6],
        disc_channels: vec![4, 6],
    }
}

fn renderer(cfg: &NetConfig, kind: ModelKind, seed: u64) -> PoseRenderer<f32> {
    PoseRenderer::new(cfg, kind, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn zero_trainable(p: &mut ParamSet<f32>) {
    for e in p.entries_mut() {
        if e.kind == ParamKind::Trainable {
            e.value.data_mut().fill(0.0);
        }
    }
}

#[test]
fn default_geometry_shapes() {
    let cfg = NetConfig::for_resolution(64);
    let mut r = renderer(&cfg, ModelKind::Adaptive, 1);
    let mut t = Tape::new();
    let rb = r.bind(&mut t, false);
    let pose = t.constant(posemaps(2, 64, 2));
    let app = t.constant(images(2, 64, 3));
    let f = r.generator.encode(&mut t, &rb.generator, pose, NormMode::Eval).unwrap();
    assert_eq!(t.shape(f), &[2, 256, 4, 4]);
    let k = r.fcn.as_mut().unwrap().filters(&mut t, rb.fcn.as_ref().unwrap(), app, NormMode::Eval).unwrap();
    assert_eq!(t.shape(k), &[2, 256, 256, 3, 3]);
    let out = r.generator.decode(&mut t, &rb.generator, f, NormMode::Eval).unwrap();
    assert_eq!(t.shape(out), &[2, 3, 64, 64]);
    assert!(t.value(out).data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn five_block_encoder_at_128() {
    let cfg = NetConfig::for_resolution(128);
    assert_eq!(cfg.encoder_channels.len(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = adar::net::Generator::<f32>::new(&cfg, ModelKind::Adaptive, &mut rng);
    let mut t = Tape::new();
    let b = g.params.bind(&mut t, false);
    let pose = t.constant(posemaps(1, 128, 1));
    let f = g.encode(&mut t, &b, pose, NormMode::Eval).unwrap();
    assert_eq!(t.shape(f), &[1, 512, 4, 4]);
}

#[test]
fn wrong_resolution_is_rejected() {
    let mut r = renderer(&tiny(32), ModelKind::Adaptive, 0);
    let err = r.render(&posemaps(1, 16, 0), &images(1, 16, 0)).unwrap_err();
    assert!(matches!(err, adar::Error::Resolution(_)), "{err}");
}

#[test]
fn black_posemaps_encode_identically() {
    let mut r = renderer(&tiny(32), ModelKind::Adaptive, 4);
    let mut t = Tape::new();
    let rb = r.bind(&mut t, false);
    let pose = t.constant(Tensor::full([3, 1, 32, 32], -1.0));
    let f = r.generator.encode(&mut t, &rb.generator, pose, NormMode::Eval).unwrap();
    let f = t.value(f);
    let first = f.sample(0).unwrap();
    for b in 1..3 {
        assert_eq!(f.sample(b).unwrap(), first);
    }
}

fn kernels(r: &mut PoseRenderer<f32>, app: &Tensor<f32>) -> Tensor<f32> {
    let mut t = Tape::new();
    let rb = r.bind(&mut t, false);
    let a = t.constant(app.clone());
    let k = r.fcn.as_mut().unwrap().filters(&mut t, rb.fcn.as_ref().unwrap(), a, NormMode::Eval).unwrap();
    t.value(k).clone()
}

#[test]
fn filters_are_deterministic_and_appearance_sensitive() {
    let mut r = renderer(&tiny(32), ModelKind::Adaptive, 5);
    let app = images(2, 32, 6);
    let k1 = kernels(&mut r, &app);
    assert_eq!(k1.shape(), &[2, 8, 8, 3, 3]);
    assert_eq!(kernels(&mut r, &app), k1);
    for seed in 0..5 {
        let noise = randn(&[2, 3, 32, 32], 100 + seed);
        let bumped = Tensor::new(
            app.shape().to_vec(),
            app.data().iter().zip(noise.data()).map(|(a, n)| a + 0.01 * n.signum()).collect(),
        )
        .unwrap();
        assert_ne!(kernels(&mut r, &bumped), k1);
    }
}

#[test]
fn zeroed_fcn_emits_zero_kernels() {
    let mut r = renderer(&tiny(32), ModelKind::Adaptive, 7);
    zero_trainable(&mut r.fcn.as_mut().unwrap().params);
    let k = kernels(&mut r, &images(3, 32, 8));
    assert!(k.data().iter().all(|&v| v == 0.0));
}

#[test]
fn adaptive_conv_identity_and_zero_kernels() {
    let mut t = Tape::<f32>::new();
    let f = randn(&[2, 4, 5, 5], 9);
    let mut eye = Tensor::zeros([2, 4, 4, 1, 1]);
    for b in 0..2 {
        for c in 0..4 {
            eye.data_mut()[(b * 4 + c) * 4 + c] = 1.0;
        }
    }
    let fv = t.constant(f.clone());
    let kv = t.constant(eye);
    let out = adaptive_conv(&mut t, fv, kv).unwrap();
    assert_eq!(t.value(out), &f);

    let z = t.constant(Tensor::zeros([2, 4, 4, 3, 3]));
    let out = adaptive_conv(&mut t, fv, z).unwrap();
    assert_eq!(t.shape(out), &[2, 4, 5, 5]);
    assert!(t.value(out).data().iter().all(|&v| v == 0.0));

    let wrong = t.constant(Tensor::zeros([3, 4, 4, 3, 3]));
    assert!(adaptive_conv(&mut t, fv, wrong).is_err());
}

#[test]
fn adaptive_conv_equals_per_sample_conv_loop() {
    for (b, c, s, k, seed) in [(3, 4, 6, 3, 10), (2, 8, 4, 3, 11), (4, 5, 7, 1, 12), (2, 3, 9, 5, 13)] {
        let f = randn(&[b, c, s, s], seed);
        let kb = randn(&[b, c, c, k, k], seed + 50);
        let mut t = Tape::<f32>::new();
        let (fv, kv) = (t.constant(f.clone()), t.constant(kb.clone()));
        let batched = adaptive_conv(&mut t, fv, kv).unwrap();
        let batched = t.value(batched).clone();
        for i in 0..b {
            let x = t.constant(f.sample(i).unwrap());
            let w = t.constant(kb.sample(i).unwrap().reshape([c, c, k, k]).unwrap());
            let y = t.conv2d(x, w, None, 1, (k - 1) / 2).unwrap();
            assert_eq!(t.value(y), &batched.sample(i).unwrap(), "sample {i} of {b}x{c}x{s}x{s}, k={k}");
        }
    }
}

#[test]
fn forward_is_the_composition_of_its_stages() {
    let mut r = renderer(&tiny(32), ModelKind::Adaptive, 14);
    let (pose, app) = (posemaps(2, 32, 15), images(2, 32, 16));
    let whole = r.render(&pose, &app).unwrap();

    let mut t = Tape::new();
    let rb = r.bind(&mut t, false);
    let (p, a) = (t.constant(pose), t.constant(app));
    let f = r.generator.encode(&mut t, &rb.generator, p, NormMode::Eval).unwrap();
    let k = r.fcn.as_mut().unwrap().filters(&mut t, rb.fcn.as_ref().unwrap(), a, NormMode::Eval).unwrap();
    let fbar = adaptive_conv(&mut t, f, k).unwrap();
    let out = r.generator.decode(&mut t, &rb.generator, fbar, NormMode::Eval).unwrap();
    assert_eq!(t.value(out), &whole);
    assert_eq!(whole.shape(), &[2, 3, 32, 32]);
}

#[test]
fn zero_features_and_biases_decode_to_zero() {
    let cfg = tiny(32);
    let mut r = renderer(&cfg, ModelKind::Adaptive, 17);
    for e in r.generator.params.entries_mut() {
        if e.name.ends_with(".bias") || e.name.ends_with(".beta") {
            e.value.data_mut().fill(0.0);
        }
    }
    let mut t = Tape::new();
    let rb = r.bind(&mut t, false);
    let s = cfg.bottleneck_size();
    let z = t.constant(Tensor::zeros([2, cfg.bottleneck_channels(), s, s]));
    let out = r.generator.decode(&mut t, &rb.generator, z, NormMode::Train).unwrap();
    assert!(t.value(out).data().iter().all(|&v| v == 0.0));
}

fn assert_all_reached(set: &ParamSet<f32>, grads: &[Tensor<f32>], what: &str) {
    for (e, g) in set.trainable().zip(grads) {
        assert!(g.all_finite(), "{what}: {} has a non-finite gradient", e.name);
        assert!(g.data().iter().any(|&v| v != 0.0), "{what}: {} received no gradient", e.name);
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let cfg = tiny(32);
    for kind in [ModelKind::Adaptive, ModelKind::Concat] {
        let mut r = renderer(&cfg, kind, 18);
        let mut d = Discriminator::<f32>::new(&cfg, &mut ChaCha8Rng::seed_from_u64(19));
        let mut t = Tape::new();
        let rb = r.bind(&mut t, true);
        let db = d.params.bind(&mut t, true);
        let (p, a) = (t.constant(posemaps(3, 32, 20)), t.constant(images(3, 32, 21)));
        let gen = r.forward(&mut t, &rb, p, a, NormMode::Train).unwrap();
        let scores = d.scores(&mut t, &db, gen, a, NormMode::Train).unwrap();
        let sq = t.square(gen);
        let pix = t.mean(sq);
        let sc = t.mean(scores);
        let loss = t.add(pix, sc).unwrap();
        t.backward(loss).unwrap();
        let g = r.generator.params.gradients(&mut t, &rb.generator);
        assert_all_reached(&r.generator.params, &g, "generator");
        if let (Some(f), Some(fb)) = (&r.fcn, &rb.fcn) {
            let g = f.params.gradients(&mut t, fb);
            assert_all_reached(&f.params, &g, "fcn");
        }
        let g = d.params.gradients(&mut t, &db);
        assert_all_reached(&d.params, &g, "discriminator");
    }
}

#[test]
fn concat_baseline_has_no_fcn() {
    let cfg = tiny(32);
    let mut ada = renderer(&cfg, ModelKind::Adaptive, 22);
    let mut cat = renderer(&cfg, ModelKind::Concat, 22);
    assert!(cat.fcn.is_none());
    assert!(cat.param_sets().iter().all(|p| p.entries().iter().all(|e| !e.name.starts_with("fcn"))));
    assert_eq!(cat.parameter_count(), cat.generator.params.parameter_count());
    assert_eq!(
        ada.parameter_count(),
        ada.generator.params.parameter_count() + ada.fcn.as_ref().unwrap().params.parameter_count()
    );
    let (p, a) = (posemaps(2, 32, 23), images(2, 32, 24));
    assert_eq!(ada.render(&p, &a).unwrap().shape(), cat.render(&p, &a).unwrap().shape());
}

#[test]
fn discriminator_patch_grid_and_range() {
    let cfg = NetConfig::for_resolution(64);
    let mut d = Discriminator::<f32>::new(&cfg, &mut ChaCha8Rng::seed_from_u64(25));
    let mut t = Tape::new();
    let db = d.params.bind(&mut t, false);
    let (x, c) = (t.constant(images(2, 64, 26)), t.constant(images(2, 64, 27)));
    let s = d.scores(&mut t, &db, x, c, NormMode::Train).unwrap();
    assert_eq!(t.shape(s), &[2, 1, 6, 6]);
    assert!(t.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));

    let head = d.head_weight();
    d.params.get_mut(head).data_mut().fill(0.0);
    for e in d.params.entries_mut() {
        if e.name == "disc.head.bias" {
            e.value.data_mut().fill(0.0);
        }
    }
    let mut t = Tape::new();
    let db = d.params.bind(&mut t, false);
    let (x, c) = (t.constant(images(2, 64, 28)), t.constant(images(2, 64, 29)));
    let s = d.scores(&mut t, &db, x, c, NormMode::Eval).unwrap();
    assert!(t.value(s).data().iter().all(|&v| v == 0.5));

    let small = t.constant(images(2, 32, 30));
    assert!(d.scores(&mut t, &db, x, small, NormMode::Eval).is_err());
}

#[test]
fn renders_are_independent_per_sample_in_eval_mode() {
    let mut r = renderer(&tiny(32), ModelKind::Adaptive, 31);
    let (pose, app) = (posemaps(3, 32, 32), images(3, 32, 33));
    let batch = r.render(&pose, &app).unwrap();
    for i in 0..3 {
        let one = r.render(&pose.sample(i).unwrap(), &app.sample(i).unwrap()).unwrap();
        let diff = one
            .data()
            .iter()
            .zip(batch.sample(i).unwrap().data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff < 1e-5, "sample {i}: {diff}");
    }
}
