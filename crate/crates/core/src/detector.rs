//! Joint detection for sprite images.
//!
//! [`SpriteDetector`] fits the discrete sprite skeleton to an image: the
//! neck position and thigh directions are chosen to cover the most
//! foreground with the torso, a minimal head disc and thin thigh
//! capsules; arm directions are then chosen to cover the most pixels whose
//! color is closer to the (median) limb color than to torso or head. On
//! clean renders every covered pixel agrees with the true pose and any
//! other pose strays onto background or wrong-colored pixels, so the fit
//! is exact.

use adar_tensor::Tensor;

use crate::posemap::{pixel_span, Keypoints};
use crate::sprites::render::{inside_convex, torso_quad};
use crate::sprites::{
    point_segment_distance, scale, within_segment, PoseParams, ARM_DIRS, HEAD, HEAD_RADIUS, JOINT_COUNT, LEG_DIRS, ROOT_X, ROOT_Y,
    HIPS, KNEES, SHOULDERS,
};
use crate::posemap::Joint;

pub trait JointDetector {
    fn joint_count(&self) -> usize;
    /// Keypoints for a `[3, H, W]` image in `[-1, 1]`; missed joints are
    /// returned with `visible = false`.
    fn detect(&self, image: &Tensor<f32>) -> Keypoints;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SpriteDetector;

/// Brightness ramp separating figure from the black background.
const FG_LO: f32 = 0.1;
const FG_HI: f32 = 0.3;
/// Thin capsule radius (reference pixels) used to probe limbs.
const PROBE_RADIUS: f64 = 1.0;
/// Smallest head radius the appearance sampler produces.
const MIN_HEAD_RADIUS: f64 = HEAD_RADIUS * 0.8;
/// Legs are masked out of the arm search within this radius.
const LEG_GUARD: f64 = 2.5;
/// Squared RGB distance below which two colors count as the same part.
const SAME_COLOR: f32 = 0.04;
/// Fewer foreground pixels than this (reference units) means nothing to fit.
const MIN_FOREGROUND: f64 = 40.0;

struct Canvas {
    w: usize,
    h: usize,
    s: f64,
    rgb: Vec<[f32; 3]>,
    fg: Vec<f32>,
}

impl Canvas {
    fn new(image: &Tensor<f32>) -> Option<Canvas> {
        let (h, w) = match *image.shape() {
            [3, h, w] => (h, w),
            _ => return None,
        };
        let hw = h * w;
        let d = image.data();
        let rgb: Vec<[f32; 3]> = (0..hw)
            .map(|i| [0, 1, 2].map(|c| ((d[c * hw + i] + 1.0) * 0.5).clamp(0.0, 1.0)))
            .collect();
        let fg = rgb
            .iter()
            .map(|c| ((c[0].max(c[1]).max(c[2]) - FG_LO) / (FG_HI - FG_LO)).clamp(0.0, 1.0))
            .collect();
        Some(Canvas { w, h, s: scale(w), rgb, fg })
    }

    /// Visits in-canvas pixels within `r` of segment `a`-`b` (pixel units).
    fn capsule(&self, a: (f64, f64), b: (f64, f64), r: f64, mut f: impl FnMut(usize)) {
        let (cx, cy) = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
        let (c0, c1) = pixel_span(cx, (a.0 - b.0).abs() / 2.0 + r, self.w);
        let (r0, r1) = pixel_span(cy, (a.1 - b.1).abs() / 2.0 + r, self.h);
        for row in r0..r1 {
            for col in c0..c1 {
                if within_segment((col as f64, row as f64), a, b, r) {
                    f(row * self.w + col);
                }
            }
        }
    }

    fn disc(&self, c: (f64, f64), r: f64, mut f: impl FnMut(usize)) {
        self.capsule(c, c, r, &mut f)
    }

    fn quad(&self, q: &[(f64, f64); 4], mut f: impl FnMut(usize)) {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in q {
            x0 = x0.min(p.0);
            x1 = x1.max(p.0);
            y0 = y0.min(p.1);
            y1 = y1.max(p.1);
        }
        let (c0, c1) = pixel_span((x0 + x1) / 2.0, (x1 - x0) / 2.0, self.w);
        let (r0, r1) = pixel_span((y0 + y1) / 2.0, (y1 - y0) / 2.0, self.h);
        for row in r0..r1 {
            for col in c0..c1 {
                if inside_convex((col as f64, row as f64), q) {
                    f(row * self.w + col);
                }
            }
        }
    }
}

fn joint_xy(kp: &Keypoints, i: usize) -> (f64, f64) {
    (kp.joints[i].x, kp.joints[i].y)
}

fn median(values: &mut [f32]) -> f32 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f32::total_cmp);
    values[values.len() / 2]
}

fn median_color(canvas: &Canvas, pixels: &[usize]) -> [f32; 3] {
    [0, 1, 2].map(|c| median(&mut pixels.iter().map(|&p| canvas.rgb[p][c]).collect::<Vec<_>>()))
}

fn color_dist(a: [f32; 3], b: [f32; 3]) -> f32 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum()
}

impl SpriteDetector {
    /// Best-fitting discrete pose, or `None` for an (almost) empty image.
    pub fn fit(&self, image: &Tensor<f32>) -> Option<PoseParams> {
        let canvas = Canvas::new(image)?;
        let s = canvas.s;
        if (canvas.fg.iter().sum::<f32>() as f64) < MIN_FOREGROUND * s * s {
            return None;
        }
        let signed = |p: usize| 2.0 * canvas.fg[p] - 1.0;
        let probe = PROBE_RADIUS * s;

        // Neck position and thighs.
        let mut best: Option<(f32, PoseParams)> = None;
        for y in ROOT_Y {
            for x in ROOT_X {
                let mut pose = PoseParams {
                    root: (x, y),
                    arms: [(3, 3); 2],
                    legs: [0; 2],
                };
                let kp = pose.keypoints(canvas.w);
                let mut score = 0.0f32;
                canvas.quad(&torso_quad(&kp), |p| score += signed(p));
                canvas.disc(joint_xy(&kp, HEAD), MIN_HEAD_RADIUS * s, |p| score += signed(p));
                for side in 0..2 {
                    let hip = joint_xy(&kp, HIPS[side]);
                    let (mut leg_best, mut leg_arg) = (f32::MIN, 0);
                    for (d, &(dx, dy)) in LEG_DIRS.iter().enumerate() {
                        let knee = (hip.0 + dx as f64 * s, hip.1 + dy as f64 * s);
                        let mut ls = 0.0f32;
                        canvas.capsule(hip, knee, probe, |p| ls += signed(p));
                        if ls > leg_best {
                            (leg_best, leg_arg) = (ls, d);
                        }
                    }
                    score += leg_best;
                    pose.legs[side] = leg_arg;
                }
                if best.map_or(true, |(b, _)| score > b) {
                    best = Some((score, pose));
                }
            }
        }
        let (_, mut pose) = best?;
        let kp = pose.keypoints(canvas.w);

        // Part colors.
        let quad = torso_quad(&kp);
        let mut torso_px = Vec::new();
        canvas.quad(&quad, |p| torso_px.push(p));
        let mut head_px = Vec::new();
        canvas.disc(joint_xy(&kp, HEAD), MIN_HEAD_RADIUS * s, |p| head_px.push(p));
        let mut leg_px = Vec::new();
        let mut near_leg = vec![false; canvas.w * canvas.h];
        for side in 0..2 {
            let (hip, knee) = (joint_xy(&kp, HIPS[side]), joint_xy(&kp, KNEES[side]));
            canvas.capsule(hip, knee, probe, |p| {
                let (col, row) = ((p % canvas.w) as f64, (p / canvas.w) as f64);
                if !inside_convex((col, row), &quad) {
                    leg_px.push(p);
                }
            });
            canvas.capsule(hip, knee, LEG_GUARD * s, |p| near_leg[p] = true);
        }
        // Thighs never touch the arms, so they give a clean limb color; arms
        // may cover much of the torso, so its estimate skips limb-colored pixels.
        let limb_c = median_color(&canvas, &leg_px);
        let torso_only: Vec<usize> = torso_px
            .iter()
            .copied()
            .filter(|&p| color_dist(canvas.rgb[p], limb_c) > SAME_COLOR)
            .collect();
        let torso_c = median_color(&canvas, if torso_only.is_empty() { &torso_px } else { &torso_only });
        let head_c = median_color(&canvas, &head_px);
        let arm_weight: Vec<f32> = (0..canvas.rgb.len())
            .map(|p| {
                if near_leg[p] {
                    return -1.0;
                }
                let c = canvas.rgb[p];
                let dl = color_dist(c, limb_c);
                let limb_like = dl < color_dist(c, torso_c) && dl < color_dist(c, head_c);
                let fg = canvas.fg[p];
                if limb_like {
                    2.0 * fg - 1.0
                } else {
                    -1.0
                }
            })
            .collect();

        // Arms, one side at a time, over unfolded configurations.
        let mut mark = vec![u32::MAX; arm_weight.len()];
        let mut stamp = 0u32;
        for side in 0..2 {
            let sh = joint_xy(&kp, SHOULDERS[side]);
            let (mut arm_best, mut arm_arg) = (f32::MIN, (0, 0));
            for (u, &(ux, uy)) in ARM_DIRS.iter().enumerate() {
                let el = (sh.0 + ux as f64 * s, sh.1 + uy as f64 * s);
                for (f, &(fx, fy)) in ARM_DIRS.iter().enumerate() {
                    let wr = (el.0 + fx as f64 * s, el.1 + fy as f64 * s);
                    if point_segment_distance(wr, sh, el) < 6.0 * s {
                        continue;
                    }
                    stamp += 1;
                    let mut score = 0.0f32;
                    let mut visit = |p: usize| {
                        if mark[p] != stamp {
                            mark[p] = stamp;
                            score += arm_weight[p];
                        }
                    };
                    canvas.capsule(sh, el, probe, &mut visit);
                    canvas.capsule(el, wr, probe, &mut visit);
                    if score > arm_best {
                        (arm_best, arm_arg) = (score, (u, f));
                    }
                }
            }
            pose.arms[side] = arm_arg;
        }
        Some(pose)
    }
}

impl JointDetector for SpriteDetector {
    fn joint_count(&self) -> usize {
        JOINT_COUNT
    }

    fn detect(&self, image: &Tensor<f32>) -> Keypoints {
        match self.fit(image) {
            Some(pose) => pose.keypoints(image.shape()[2]),
            None => Keypoints::new(vec![
                Joint {
                    x: 0.0,
                    y: 0.0,
                    visible: false
                };
                JOINT_COUNT
            ]),
        }
    }
}

