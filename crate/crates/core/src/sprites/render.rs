use adar_tensor::Tensor;

use super::{scale, within_segment, SpriteAppearance, HEAD, HEAD_RADIUS, HIPS, JOINT_COUNT, LIMBS, SHOULDERS};
use crate::posemap::{pixel_span, Keypoints};

/// Which body part paints a pixel (later parts cover earlier ones:
/// torso, limbs, head).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Background,
    Torso,
    Limb,
    Head,
}

pub(crate) fn inside_convex(p: (f64, f64), quad: &[(f64, f64); 4]) -> bool {
    let (mut pos, mut neg) = (false, false);
    for i in 0..4 {
        let (a, b) = (quad[i], quad[(i + 1) % 4]);
        let c = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        pos |= c > 1e-9;
        neg |= c < -1e-9;
    }
    !(pos && neg)
}

pub(crate) fn torso_quad(kp: &Keypoints) -> [(f64, f64); 4] {
    let p = |i: usize| (kp.joints[i].x, kp.joints[i].y);
    [p(SHOULDERS[1]), p(SHOULDERS[0]), p(HIPS[0]), p(HIPS[1])]
}

/// Per-pixel part labels, row-major `H x W`.
pub fn part_map(app: &SpriteAppearance, kp: &Keypoints, height: usize, width: usize) -> Vec<Part> {
    assert_eq!(kp.len(), JOINT_COUNT, "sprite skeletons have {JOINT_COUNT} joints");
    let s = scale(width);
    let mut parts = vec![Part::Background; height * width];
    let j = &kp.joints;

    if [SHOULDERS[0], SHOULDERS[1], HIPS[0], HIPS[1]].iter().all(|&i| j[i].visible) {
        let quad = torso_quad(kp);
        let xs = quad.iter().map(|p| p.0);
        let ys = quad.iter().map(|p| p.1);
        let (x0, x1) = (xs.clone().fold(f64::MAX, f64::min), xs.fold(f64::MIN, f64::max));
        let (y0, y1) = (ys.clone().fold(f64::MAX, f64::min), ys.fold(f64::MIN, f64::max));
        let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        let (ra, rb) = ((x1 - x0) / 2.0, (y1 - y0) / 2.0);
        let (c0, c1) = pixel_span(cx, ra, width);
        for row in pixel_span(cy, rb, height).0..pixel_span(cy, rb, height).1 {
            for col in c0..c1 {
                if inside_convex((col as f64, row as f64), &quad) {
                    parts[row * width + col] = Part::Torso;
                }
            }
        }
    }

    let r = app.limb_width * s / 2.0;
    for &(a, b) in &LIMBS {
        if !(j[a].visible && j[b].visible) {
            continue;
        }
        let (pa, pb) = ((j[a].x, j[a].y), (j[b].x, j[b].y));
        let (cx, cy) = ((pa.0 + pb.0) / 2.0, (pa.1 + pb.1) / 2.0);
        let hx = (pa.0 - pb.0).abs() / 2.0 + r;
        let hy = (pa.1 - pb.1).abs() / 2.0 + r;
        let (c0, c1) = pixel_span(cx, hx, width);
        let (r0, r1) = pixel_span(cy, hy, height);
        for row in r0..r1 {
            for col in c0..c1 {
                if within_segment((col as f64, row as f64), pa, pb, r) {
                    parts[row * width + col] = Part::Limb;
                }
            }
        }
    }

    if j[HEAD].visible {
        let hr = HEAD_RADIUS * app.body_scale * s;
        let (hx, hy) = (j[HEAD].x, j[HEAD].y);
        let (c0, c1) = pixel_span(hx, hr, width);
        let (r0, r1) = pixel_span(hy, hr, height);
        for row in r0..r1 {
            for col in c0..c1 {
                if (col as f64 - hx).hypot(row as f64 - hy) <= hr {
                    parts[row * width + col] = Part::Head;
                }
            }
        }
    }
    parts
}

/// Flat-color raster on black, `[3, H, W]` with values in `[0, 1]`.
pub fn render_sprite(app: &SpriteAppearance, kp: &Keypoints, height: usize, width: usize) -> Tensor<f32> {
    let parts = part_map(app, kp, height, width);
    let hw = height * width;
    let mut data = vec![0.0f32; 3 * hw];
    for (i, part) in parts.iter().enumerate() {
        let color = match part {
            Part::Background => continue,
            Part::Torso => app.torso_color,
            Part::Limb => app.limb_color,
            Part::Head => app.head_color,
        };
        for c in 0..3 {
            data[c * hw + i] = color[c] as f32;
        }
    }
    Tensor::new([3, height, width], data).expect("length matches shape")
}
