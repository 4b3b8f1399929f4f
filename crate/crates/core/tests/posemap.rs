use adar::posemap::{default_radius, denormalize_image, normalize_image, rasterize_posemap, Joint, Keypoints};
use adar::Tensor;
use proptest::prelude::*;

fn joints() -> impl Strategy<Value = Vec<(i32, i32, bool)>> {
    prop::collection::vec((-4i32..36, -4i32..36, prop::bool::weighted(0.85)), 1..14)
}

fn keypoints(js: &[(i32, i32, bool)], dx: i32, dy: i32) -> Keypoints {
    Keypoints::new(
        js.iter()
            .map(|&(x, y, visible)| Joint { x: (x + dx) as f64, y: (y + dy) as f64, visible })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn integer_shift_moves_the_white_set(js in joints(), dx in -6i32..7, dy in -6i32..7, r in prop::sample::select(vec![0.0, 1.0, 1.5, 2.0, 3.0])) {
        let (h, w) = (32usize, 32usize);
        let a = rasterize_posemap(&keypoints(&js, 0, 0), h, w, r);
        let b = rasterize_posemap(&keypoints(&js, dx, dy), h, w, r);
        for row in 0..h as i32 {
            for col in 0..w as i32 {
                let (sr, sc) = (row - dy, col - dx);
                if (0..h as i32).contains(&sr) && (0..w as i32).contains(&sc) {
                    let (x, y) = (b.data()[row as usize * w + col as usize], a.data()[sr as usize * w + sc as usize]);
                    prop_assert_eq!(x, y, "pixel ({}, {})", row, col);
                }
            }
        }
    }

    #[test]
    fn white_count_is_the_disc_union_area(js in joints(), r in 0.0f64..4.0) {
        let kp = keypoints(&js, 0, 0);
        let m = rasterize_posemap(&kp, 32, 32, r);
        prop_assert!(m.data().iter().all(|&v| v == 1.0 || v == -1.0));
        let mut want = 0;
        for row in 0..32 {
            for col in 0..32 {
                let hit = kp.joints.iter().any(|j| j.visible && (col as f64 - j.x).powi(2) + (row as f64 - j.y).powi(2) <= r * r);
                want += hit as usize;
            }
        }
        prop_assert_eq!(m.data().iter().filter(|&&v| v == 1.0).count(), want);
    }

    #[test]
    fn normalization_inverts(levels in prop::collection::vec(0u8..=255, 1..64)) {
        let x = Tensor::new([levels.len()], levels.iter().map(|&v| v as f32 / 255.0).collect()).unwrap();
        let n = normalize_image(&x).unwrap();
        prop_assert!(n.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = denormalize_image(&n);
        for (a, b) in back.data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() <= f32::EPSILON);
        }
    }
}

#[test]
fn default_radius_scales_with_resolution() {
    assert_eq!(default_radius(64), 2.0);
    assert_eq!(default_radius(128), 4.0);
}

#[test]
fn invisible_joints_are_skipped() {
    let kp = Keypoints::new(vec![Joint::new(5.0, 5.0), Joint { x: 20.0, y: 20.0, visible: false }]);
    let only = rasterize_posemap(&Keypoints::new(vec![Joint::new(5.0, 5.0)]), 32, 32, 2.0);
    assert_eq!(rasterize_posemap(&kp, 32, 32, 2.0), only);
}

#[test]
fn keypoint_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let kp = Keypoints::new(vec![Joint::new(1.25, 7.0), Joint { x: 3.0, y: -2.0, visible: false }]);
    let path = dir.path().join("pose.json");
    kp.save(&path).unwrap();
    assert_eq!(Keypoints::load(&path).unwrap(), kp);
    std::fs::write(&path, "{\"joints\": [[1, 2]]}").unwrap();
    assert!(Keypoints::load(&path).is_err());
}
