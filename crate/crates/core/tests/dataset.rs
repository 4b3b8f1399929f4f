use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use adar::posemap::{default_radius, rasterize_posemap};
use adar::sprites::{
    build_dataset, part_map, render_sprite, sample_pose, DatasetConfig, Part, PoseParams, Split, SpriteAppearance,
    SpriteDataset, HEAD, HEAD_RADIUS, LIMBS,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small() -> DatasetConfig {
    DatasetConfig {
        identities: 8,
        poses_per_identity: 3,
        resolution: 64,
        train_fraction: 0.75,
    }
}

#[test]
fn default_config_pair_counts() {
    let d = SpriteDataset::generate(&DatasetConfig::default(), 0).unwrap();
    let m = d.manifest();
    assert_eq!(m.sample_count, 400);
    assert_eq!(m.pair_count, 1200);
    assert_eq!((m.train_pairs, m.test_pairs), (840, 360));
    assert_eq!(d.pairs(Split::Train).len(), 840);
    assert_eq!(d.pairs(Split::Test).len(), 360);
}

#[test]
fn splits_are_identity_disjoint() {
    for seed in 0..5 {
        let d = SpriteDataset::generate(&small(), seed).unwrap();
        let train: HashSet<_> = d.pairs(Split::Train).iter().map(|p| p.identity).collect();
        let test: HashSet<_> = d.pairs(Split::Test).iter().map(|p| p.identity).collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), 8);
        assert!(d.pairs(Split::Train).iter().all(|p| p.reference != p.target));
    }
}

#[test]
fn bad_configs_are_rejected() {
    let bad = [
        DatasetConfig { identities: 1, ..small() },
        DatasetConfig { poses_per_identity: 1, ..small() },
        DatasetConfig { resolution: 60, ..small() },
        DatasetConfig { train_fraction: 1.0, ..small() },
        DatasetConfig { train_fraction: 0.01, ..small() },
    ];
    for c in bad {
        assert!(matches!(SpriteDataset::generate(&c, 0), Err(adar::Error::Config(_))), "{c:?}");
    }
}

#[test]
fn same_seed_writes_identical_directories() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_dataset(&small(), 42, a.path()).unwrap();
    build_dataset(&small(), 42, b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 8 * 3 * 2 + 1);
    assert_eq!(fa, fb);

    let c = tempfile::tempdir().unwrap();
    build_dataset(&small(), 43, c.path()).unwrap();
    assert_ne!(fa, files(c.path()));
}

#[test]
fn written_dataset_reloads_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let d = SpriteDataset::generate(&small(), 5).unwrap();
    d.write(dir.path()).unwrap();
    let back = SpriteDataset::load(dir.path()).unwrap();
    assert_eq!(back, d);
    for pair in back.pairs(Split::Test) {
        let s = back.sample(pair).unwrap();
        assert_eq!(s.posemap, rasterize_posemap(&s.target_pose, 64, 64, default_radius(64)));
    }
}

#[test]
fn corrupt_dataset_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    build_dataset(&small(), 1, dir.path()).unwrap();
    std::fs::write(dir.path().join("id0000/pose00.png"), b"nope").unwrap();
    assert!(matches!(SpriteDataset::load(dir.path()), Err(adar::Error::Image { .. })));
    assert!(matches!(SpriteDataset::load(dir.path().join("missing")), Err(adar::Error::Io { .. })));
}

#[test]
fn ten_thousand_poses_stay_on_canvas() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let head_r = HEAD_RADIUS * 1.2;
    for _ in 0..10_000 {
        let kp = sample_pose(&mut rng, 64);
        for j in &kp.joints {
            assert!(j.visible && (0.0..=63.0).contains(&j.x) && (0.0..=63.0).contains(&j.y), "{j:?}");
        }
        let h = &kp.joints[HEAD];
        assert!(h.x - head_r >= 0.0 && h.x + head_r <= 63.0 && h.y - head_r >= 0.0);
    }
    let again = sample_pose(&mut ChaCha8Rng::seed_from_u64(2024), 64);
    assert_eq!(again, sample_pose(&mut ChaCha8Rng::seed_from_u64(2024), 64));
}

#[test]
fn renders_are_deterministic_flat_fills() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let app = SpriteAppearance::sample(&mut rng);
        let kp = PoseParams::sample(&mut rng).keypoints(64);
        let img = render_sprite(&app, &kp, 64, 64);
        assert_eq!(img, render_sprite(&app, &kp, 64, 64));
        let j = &kp.joints;
        // midpoint between the shoulders' and hips' centroids
        let cx = (j[2].x + j[3].x + j[8].x + j[9].x) / 4.0;
        let cy = (j[2].y + j[3].y + j[8].y + j[9].y) / 4.0;
        let (x, y) = (cx.round() as usize, cy.round() as usize);
        if part_map(&app, &kp, 64, 64)[y * 64 + x] == Part::Torso {
            for c in 0..3 {
                assert_eq!(img.data()[c * 4096 + y * 64 + x], app.torso_color[c] as f32);
            }
        }
    }
}

fn near_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64), r: f64) -> bool {
    // exact on integer coordinates: compare squared distances without sqrt
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (px, py) = (p.0 - a.0, p.1 - a.1);
    let dot = px * dx + py * dy;
    let len2 = dx * dx + dy * dy;
    let r2 = r * r;
    if dot <= 0.0 {
        px * px + py * py <= r2
    } else if dot >= len2 {
        (p.0 - b.0).powi(2) + (p.1 - b.1).powi(2) <= r2
    } else {
        let cross = px * dy - py * dx;
        cross * cross <= r2 * len2
    }
}

#[test]
fn limb_color_change_touches_only_limb_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..40 {
        let app = SpriteAppearance::sample(&mut rng);
        let mut other = app;
        other.limb_color = app.limb_color.map(|c| if c > 0.5 { c - 0.25 } else { c + 0.25 });
        let kp = PoseParams::sample(&mut rng).keypoints(64);
        let (a, b) = (render_sprite(&app, &kp, 64, 64), render_sprite(&other, &kp, 64, 64));

        let (j, r) = (&kp.joints, app.limb_width / 2.0);
        let head_r = HEAD_RADIUS * app.body_scale;
        for y in 0..64 {
            for x in 0..64 {
                let p = (x as f64, y as f64);
                let on_limb = LIMBS.iter().any(|&(s, e)| near_segment(p, (j[s].x, j[s].y), (j[e].x, j[e].y), r));
                let on_head = (p.0 - j[HEAD].x).hypot(p.1 - j[HEAD].y) <= head_r;
                let differs = (0..3).any(|c| a.data()[c * 4096 + y * 64 + x] != b.data()[c * 4096 + y * 64 + x]);
                assert_eq!(differs, on_limb && !on_head, "pixel ({x}, {y})");
            }
        }
    }
}
