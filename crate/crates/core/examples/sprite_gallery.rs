//! Renders a grid of random sprites (one identity per row, several poses)
//! together with the posemap of each pose.
//!
//!     cargo run --example sprite_gallery -- out.png

use adar::imageio::{grid, save_png};
use adar::posemap::{default_radius, denormalize_image, rasterize_posemap};
use adar::sprites::{render_sprite, PoseParams, SpriteAppearance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> adar::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "sprite_gallery.png".into());
    let res = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tiles = Vec::new();
    for _ in 0..6 {
        let app = SpriteAppearance::sample(&mut rng);
        for _ in 0..4 {
            let kp = PoseParams::sample(&mut rng).keypoints(res);
            tiles.push(render_sprite(&app, &kp, res, res));
            tiles.push(denormalize_image(&rasterize_posemap(&kp, res, res, default_radius(res))));
        }
    }
    save_png(&out, &grid(&tiles, 8)?)?;
    println!("wrote {out}");
    Ok(())
}
