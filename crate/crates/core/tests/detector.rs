use adar::detector::{JointDetector, SpriteDetector};
use adar::posemap::normalize_image;
use adar::sprites::{render_sprite, PoseParams, SpriteAppearance};
use adar::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn exact_on_clean_renders() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let det = SpriteDetector;
    for res in [64, 128] {
        let n = if res == 64 { 500 } else { 40 };
        for i in 0..n {
            let app = SpriteAppearance::sample(&mut rng);
            let pose = PoseParams::sample(&mut rng);
            let img = normalize_image(&render_sprite(&app, &pose.keypoints(res), res, res)).unwrap();
            let fit = det.fit(&img);
            assert_eq!(fit, Some(pose), "res {res}, sample {i}");
            let kp = det.detect(&img);
            let gt = pose.keypoints(res);
            let worst = kp.joints.iter().zip(&gt.joints).map(|(a, b)| a.distance(b)).fold(0.0, f64::max);
            assert!(worst < 0.5);
        }
    }
}

#[test]
fn blank_image_misses_every_joint() {
    let kp = SpriteDetector.detect(&Tensor::full([3, 64, 64], -1.0));
    assert_eq!(kp.len(), 13);
    assert!(kp.joints.iter().all(|j| !j.visible));
}
