//! The appearance FCN predicts a different kernel bank per reference image,
//! and the batched adaptive convolution applies each bank to its own
//! sample's bottleneck features.
//!
//!     cargo run --example adaptive_filters

use adar::net::{adaptive_conv, ModelKind, NetConfig, PoseRenderer};
use adar::posemap::{default_radius, normalize_image, rasterize_posemap};
use adar::sprites::{render_sprite, PoseParams, SpriteAppearance};
use adar::{NormMode, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> adar::Result<()> {
    let res = 64;
    let cfg = NetConfig::compact(res);
    let mut model = PoseRenderer::<f32>::new(&cfg, ModelKind::Adaptive, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("{} parameters, bottleneck {}x{}x{}", model.parameter_count(), cfg.bottleneck_channels(), cfg.bottleneck_size(), cfg.bottleneck_size());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pose = PoseParams::sample(&mut rng).keypoints(res);
    let mut apps = Vec::new();
    for _ in 0..3 {
        let img = normalize_image(&render_sprite(&SpriteAppearance::sample(&mut rng), &pose, res, res))?;
        apps.push(img.reshape([1, 3, res, res])?);
    }
    let apps = Tensor::stack(&apps)?;
    let posemap = rasterize_posemap(&pose, res, res, default_radius(res)).reshape([1, 1, res, res])?;
    let poses = Tensor::stack(&[posemap.clone(), posemap.clone(), posemap])?;

    // batch statistics: an untrained model's running statistics are the
    // defaults, and with N(0, 0.02) weights they shrink every activation
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let app = tape.constant(apps);
    let pose_v = tape.constant(poses);
    let fcn = model.fcn.as_mut().expect("adaptive model");
    let kernels = fcn.filters(&mut tape, bound.fcn.as_ref().unwrap(), app, NormMode::Train)?;
    println!("kernel bank shape {:?}", tape.shape(kernels));

    let banks: Vec<Tensor<f32>> = (0..3).map(|i| tape.value(kernels).sample(i)).collect::<Result<_, _>>()?;
    for i in 0..3 {
        for j in i + 1..3 {
            let d = banks[i].data().iter().zip(banks[j].data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            println!("max |K{i} - K{j}| = {d:.3e}");
        }
    }

    // same pose for all three samples, so the features match and only the
    // kernels make the outputs differ
    let features = model.generator.encode(&mut tape, &bound.generator, pose_v, NormMode::Train)?;
    let mixed = adaptive_conv(&mut tape, features, kernels)?;
    let out = tape.value(mixed);
    for i in 0..3 {
        let s = out.sample(i)?;
        let norm = s.data().iter().map(|v| v * v).sum::<f32>().sqrt();
        println!("sample {i}: |adapted features| = {norm:.3e}");
    }
    Ok(())
}
