//! Scores images against target poses with the analysis-by-synthesis sprite
//! detector: exact renders score zero, shifted renders score the shift over
//! the image diagonal, blank images score one.
//!
//!     cargo run --example pose_score

use adar::detector::SpriteDetector;
use adar::metrics::{diagonal, perceptual_pose_score, pose_score};
use adar::posemap::normalize_image;
use adar::sprites::{render_sprite, PoseParams, SpriteAppearance};
use adar::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> adar::Result<()> {
    let res = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let look = SpriteAppearance::sample(&mut rng);
    let pose = PoseParams::sample(&mut rng);
    let kp = pose.keypoints(res);
    let img = normalize_image(&render_sprite(&look, &kp, res, res))?;

    let det = SpriteDetector;
    let found = det.fit(&img).expect("sprite is visible");
    println!("detector recovers the pose exactly: {}", found == pose);
    println!("exact render        {:.6}", perceptual_pose_score(&img, &kp, &det)?.score);

    let other = PoseParams::sample(&mut rng).keypoints(res);
    println!("unrelated pose      {:.6}", perceptual_pose_score(&img, &other, &det)?.score);
    for (dx, dy) in [(1.0, 0.0), (3.0, 4.0), (8.0, -6.0)] {
        let s = pose_score(&kp.translated(dx, dy), &kp, diagonal(res, res))?;
        println!("{:<20}{:.6}", format!("shift ({dx:+}, {dy:+})"), s.score);
    }
    let blank = perceptual_pose_score(&Tensor::full([3, res, res], -1.0), &kp, &det)?;
    println!("blank image         {:.6} (all joints missed: {})", blank.score, blank.all_missed);
    Ok(())
}
