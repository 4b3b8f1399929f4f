//! Re-poses one appearance image with a trained checkpoint: each row shows
//! the target posemap, the generated image, and the ground-truth render.
//!
//!     cargo run --example train_and_evaluate -- runs/demo
//!     cargo run --example generate_poses -- runs/demo/checkpoints/latest.ckpt poses.png

use adar::imageio::{grid, save_png};
use adar::posemap::{default_radius, denormalize_image, normalize_image, rasterize_posemap};
use adar::sprites::{render_sprite, PoseParams, SpriteAppearance};
use adar::trainer::Trainer;
use adar::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> adar::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().unwrap_or_else(|| "runs/demo/checkpoints/latest.ckpt".into());
    let out = args.next().unwrap_or_else(|| "poses.png".into());

    let mut renderer = Trainer::load_checkpoint(&ckpt)?.renderer;
    let res = renderer.config().resolution;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let look = SpriteAppearance::sample(&mut rng);
    let app = normalize_image(&render_sprite(&look, &PoseParams::sample(&mut rng).keypoints(res), res, res))?;

    let mut tiles = vec![Tensor::full([3, res, res], 1.0), denormalize_image(&app), Tensor::full([3, res, res], 1.0)];
    let app_batch = app.clone().reshape([1, 3, res, res])?;
    for _ in 0..6 {
        let kp = PoseParams::sample(&mut rng).keypoints(res);
        let pose = rasterize_posemap(&kp, res, res, default_radius(res));
        let gen = renderer.render(&pose.clone().reshape([1, 1, res, res])?, &app_batch)?;
        tiles.push(denormalize_image(&pose));
        tiles.push(denormalize_image(&gen.reshape([3, res, res])?));
        tiles.push(render_sprite(&look, &kp, res, res));
    }
    save_png(&out, &grid(&tiles, 3)?)?;
    println!("wrote {out} (first row: the appearance reference)");
    Ok(())
}
