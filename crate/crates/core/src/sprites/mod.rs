//! Procedural stick-figure sprites: a rigid 13-joint skeleton with discrete
//! limb directions, flat-color rendering, and an on-disk pair dataset.
//!
//! Geometry is specified on a 64x64 reference canvas and scaled linearly
//! to the target resolution. "Left" joints sit on the image's right side
//! (the figure faces the viewer).

mod dataset;
pub(crate) mod render;

pub use dataset::{
    build_dataset, DatasetConfig, DatasetManifest, Identity, ManifestIdentity, PairRef, Split, SpriteDataset, SpriteSample,
    MANIFEST_VERSION,
};
pub use render::{part_map, render_sprite, Part};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::posemap::{Joint, Keypoints};

pub const JOINT_COUNT: usize = 13;
pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "head",
    "neck",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "pelvis",
];

pub const HEAD: usize = 0;
pub const NECK: usize = 1;
pub const SHOULDERS: [usize; 2] = [2, 3];
pub const ELBOWS: [usize; 2] = [4, 5];
pub const WRISTS: [usize; 2] = [6, 7];
pub const HIPS: [usize; 2] = [8, 9];
pub const KNEES: [usize; 2] = [10, 11];
pub const PELVIS: usize = 12;

/// Bone segments drawn as capsules, as `(from, to)` joint indices.
pub const LIMBS: [(usize, usize); 6] = [(2, 4), (4, 6), (3, 5), (5, 7), (8, 10), (9, 11)];

/// Upper arm and forearm directions (length 10, integer coordinates).
pub const ARM_DIRS: [(i32, i32); 12] = [
    (10, 0),
    (8, 6),
    (6, 8),
    (0, 10),
    (-6, 8),
    (-8, 6),
    (-10, 0),
    (-8, -6),
    (-6, -8),
    (0, -10),
    (6, -8),
    (8, -6),
];

/// Thigh directions (length 15, always pointing down).
pub const LEG_DIRS: [(i32, i32); 5] = [(0, 15), (9, 12), (-9, 12), (12, 9), (-12, 9)];

/// Offsets from the neck on the reference canvas.
pub const HEAD_OFFSET: (i32, i32) = (0, -7);
pub const SHOULDER_OFFSETS: [(i32, i32); 2] = [(7, 2), (-7, 2)];
pub const PELVIS_OFFSET: (i32, i32) = (0, 16);
pub const HIP_OFFSETS: [(i32, i32); 2] = [(4, 16), (-4, 16)];

/// Head radius before `body_scale`, in reference pixels.
pub const HEAD_RADIUS: f64 = 4.5;

pub const ROOT_X: std::ops::RangeInclusive<i32> = 20..=43;
pub const ROOT_Y: std::ops::RangeInclusive<i32> = 14..=30;

/// Minimum centerline distance between capsules of different limbs.
const LIMB_CLEARANCE: f64 = 6.0;
/// Minimum distance from an arm centerline to the head center.
const HEAD_CLEARANCE: f64 = 9.0;
const CANVAS_MARGIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpriteAppearance {
    pub torso_color: [f64; 3],
    pub limb_color: [f64; 3],
    pub head_color: [f64; 3],
    /// Capsule diameter in reference (64x64) pixels.
    pub limb_width: f64,
    /// Scales the head radius.
    pub body_scale: f64,
}

impl SpriteAppearance {
    /// Colors quantized to `k / 255`, each clearly brighter than the
    /// background and pairwise well separated.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> SpriteAppearance {
        let color = |rng: &mut R| loop {
            let c = [0; 3].map(|_: i32| rng.gen_range(0u8..=255) as f64 / 255.0);
            if c.iter().cloned().fold(0.0, f64::max) >= 120.0 / 255.0 {
                return c;
            }
        };
        let dist = |a: &[f64; 3], b: &[f64; 3]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        loop {
            let (t, l, h) = (color(rng), color(rng), color(rng));
            if dist(&t, &l) >= 0.4 && dist(&t, &h) >= 0.4 && dist(&l, &h) >= 0.4 {
                return SpriteAppearance {
                    torso_color: t,
                    limb_color: l,
                    head_color: h,
                    limb_width: if rng.gen_bool(0.5) { 3.0 } else { 4.0 },
                    body_scale: rng.gen_range(0.8..=1.2),
                };
            }
        }
    }
}

/// Discrete pose parameters: neck position and a direction index per bone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoseParams {
    pub root: (i32, i32),
    /// `(upper, fore)` indices into [`ARM_DIRS`], left arm first.
    pub arms: [(usize, usize); 2],
    /// Indices into [`LEG_DIRS`], left leg first.
    pub legs: [usize; 2],
}

impl PoseParams {
    /// Joint positions on the reference canvas, in [`JOINT_NAMES`] order.
    pub fn reference_joints(&self) -> [(i32, i32); JOINT_COUNT] {
        let add = |a: (i32, i32), b: (i32, i32)| (a.0 + b.0, a.1 + b.1);
        let n = self.root;
        let mut j = [(0, 0); JOINT_COUNT];
        j[HEAD] = add(n, HEAD_OFFSET);
        j[NECK] = n;
        j[PELVIS] = add(n, PELVIS_OFFSET);
        for side in 0..2 {
            let sh = add(n, SHOULDER_OFFSETS[side]);
            let el = add(sh, ARM_DIRS[self.arms[side].0]);
            j[SHOULDERS[side]] = sh;
            j[ELBOWS[side]] = el;
            j[WRISTS[side]] = add(el, ARM_DIRS[self.arms[side].1]);
            let hip = add(n, HIP_OFFSETS[side]);
            j[HIPS[side]] = hip;
            j[KNEES[side]] = add(hip, LEG_DIRS[self.legs[side]]);
        }
        j
    }

    pub fn keypoints(&self, resolution: usize) -> Keypoints {
        let s = scale(resolution);
        Keypoints::new(
            self.reference_joints()
                .iter()
                .map(|&(x, y)| Joint::new(x as f64 * s, y as f64 * s))
                .collect(),
        )
    }

    /// Canvas containment and limb clearance on the reference canvas, for
    /// the largest head the appearance sampler can produce.
    pub fn is_valid(&self) -> bool {
        let j = self.reference_joints();
        let p = |i: usize| (j[i].0 as f64, j[i].1 as f64);
        let lo = CANVAS_MARGIN;
        let hi = 63.0 - CANVAS_MARGIN;
        if j.iter().any(|&(x, y)| (x as f64) < lo || (x as f64) > hi || (y as f64) < lo || (y as f64) > hi) {
            return false;
        }
        let head_r = HEAD_RADIUS * 1.2;
        let (hx, hy) = p(HEAD);
        if hx - head_r < 0.0 || hy - head_r < 0.0 || hx + head_r > 63.0 {
            return false;
        }
        // limb id per LIMBS entry: two arm segments each, then the thighs
        let owner = [0, 0, 1, 1, 2, 3];
        for a in 0..LIMBS.len() {
            for b in a + 1..LIMBS.len() {
                if owner[a] != owner[b] {
                    let (sa, sb) = (LIMBS[a], LIMBS[b]);
                    if segment_distance(p(sa.0), p(sa.1), p(sb.0), p(sb.1)) < LIMB_CLEARANCE {
                        return false;
                    }
                }
            }
        }
        for side in 0..2 {
            let (sh, el, wr) = (p(SHOULDERS[side]), p(ELBOWS[side]), p(WRISTS[side]));
            if point_segment_distance(wr, sh, el) < LIMB_CLEARANCE || point_segment_distance(sh, el, wr) < LIMB_CLEARANCE {
                return false;
            }
            if point_segment_distance(p(HEAD), sh, el) < HEAD_CLEARANCE
                || point_segment_distance(p(HEAD), el, wr) < HEAD_CLEARANCE
            {
                return false;
            }
        }
        true
    }

    /// Uniform over the valid discrete poses (rejection sampling).
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> PoseParams {
        loop {
            let mut arm = || (rng.gen_range(0..ARM_DIRS.len()), rng.gen_range(0..ARM_DIRS.len()));
            let arms = [arm(), arm()];
            let p = PoseParams {
                root: (rng.gen_range(ROOT_X), rng.gen_range(ROOT_Y)),
                arms,
                legs: [rng.gen_range(0..LEG_DIRS.len()), rng.gen_range(0..LEG_DIRS.len())],
            };
            if p.is_valid() {
                return p;
            }
        }
    }
}

/// Draws a valid pose and returns its keypoints at `resolution`.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, resolution: usize) -> Keypoints {
    PoseParams::sample(rng).keypoints(resolution)
}

/// Pixels per reference pixel.
pub fn scale(resolution: usize) -> f64 {
    resolution as f64 / 64.0
}

pub(crate) fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// `dist(p, segment a-b) <= r`, decided on squared quantities so that
/// pixels exactly on the capsule boundary are not lost to rounding.
pub(crate) fn within_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64), r: f64) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (px, py) = (p.0 - a.0, p.1 - a.1);
    let dot = px * dx + py * dy;
    let len2 = dx * dx + dy * dy;
    if dot <= 0.0 {
        px * px + py * py <= r * r
    } else if dot >= len2 {
        let (qx, qy) = (p.0 - b.0, p.1 - b.1);
        qx * qx + qy * qy <= r * r
    } else {
        let cross = px * dy - py * dx;
        cross * cross <= r * r * len2
    }
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let cross = |o: (f64, f64), p: (f64, f64), q: (f64, f64)| (p.0 - o.0) * (q.1 - o.1) - (p.1 - o.1) * (q.0 - o.0);
    let (d1, d2) = (cross(c, d, a), cross(c, d, b));
    let (d3, d4) = (cross(a, b, c), cross(a, b, d));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

pub(crate) fn segment_distance(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bone_lengths_are_rigid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let kp = sample_pose(&mut rng, 64);
            let d = |a: usize, b: usize| kp.joints[a].distance(&kp.joints[b]);
            for side in 0..2 {
                assert_eq!(d(SHOULDERS[side], ELBOWS[side]), 10.0);
                assert_eq!(d(ELBOWS[side], WRISTS[side]), 10.0);
                assert_eq!(d(HIPS[side], KNEES[side]), 15.0);
            }
            assert_eq!(d(NECK, PELVIS), 16.0);
        }
    }

    #[test]
    fn segment_distance_basics() {
        assert_eq!(segment_distance((0.0, 0.0), (2.0, 0.0), (1.0, -1.0), (1.0, 1.0)), 0.0);
        assert_eq!(segment_distance((0.0, 0.0), (1.0, 0.0), (3.0, 0.0), (3.0, 4.0)), 2.0);
        assert_eq!(point_segment_distance((0.0, 5.0), (-1.0, 0.0), (1.0, 0.0)), 5.0);
        assert!(point_segment_distance((18.0, 54.0), (23.0, 44.0), (14.0, 56.0)) > 2.0);
        assert!(within_segment((18.0, 54.0), (23.0, 44.0), (14.0, 56.0), 2.0));
        assert!(!within_segment((18.0, 54.0), (23.0, 44.0), (14.0, 56.0), 1.999));
        assert!(within_segment((0.0, 3.0), (0.0, 0.0), (0.0, 0.0), 3.0));
    }

    #[test]
    fn appearance_colors_are_quantized_and_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = SpriteAppearance::sample(&mut rng);
            for c in [a.torso_color, a.limb_color, a.head_color] {
                for v in c {
                    assert_eq!((v * 255.0).round() / 255.0, v);
                }
            }
            assert!(a.limb_width >= 1.0);
        }
    }
}
