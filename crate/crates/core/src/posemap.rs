//! Keypoints and binary posemaps, plus the `[0, 1] <-> [-1, 1]` image mapping.

use adar_tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::{Error, Result};

/// One body joint in pixel coordinates. Pixel `(col, row)` has its center
/// at `x = col, y = row`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Joint {
    pub fn new(x: f64, y: f64) -> Self {
        Joint { x, y, visible: true }
    }

    pub fn distance(&self, other: &Joint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Ordered joint list. Serialized as `{"joints": [[x, y, visible], ...]}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Keypoints {
    pub joints: Vec<Joint>,
}

#[derive(Serialize, Deserialize)]
struct KeypointsFile {
    joints: Vec<(f64, f64, bool)>,
}

impl Serialize for Keypoints {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KeypointsFile {
            joints: self.joints.iter().map(|j| (j.x, j.y, j.visible)).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Keypoints {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = KeypointsFile::deserialize(d)?;
        Ok(Keypoints {
            joints: f.joints.into_iter().map(|(x, y, visible)| Joint { x, y, visible }).collect(),
        })
    }
}

impl Keypoints {
    pub fn new(joints: Vec<Joint>) -> Self {
        Keypoints { joints }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Keypoints {
        Keypoints {
            joints: self.joints.iter().map(|j| Joint { x: j.x + dx, y: j.y + dy, ..*j }).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("keypoints always serialize")
    }

    pub fn from_json(text: &str) -> Result<Keypoints> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Keypoints> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Keypoints::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Default joint radius: 2 px at 64x64, scaled with resolution.
pub fn default_radius(resolution: usize) -> f64 {
    2.0 * resolution as f64 / 64.0
}

/// Hard white discs (`+1`) on a black (`-1`) canvas, shape `[1, H, W]`.
pub fn rasterize_posemap(kp: &Keypoints, height: usize, width: usize, radius: f64) -> Tensor<f32> {
    let mut data = vec![-1.0f32; height * width];
    let r2 = radius * radius;
    for j in kp.joints.iter().filter(|j| j.visible) {
        let (y0, y1) = pixel_span(j.y, radius, height);
        let (x0, x1) = pixel_span(j.x, radius, width);
        for row in y0..y1 {
            for col in x0..x1 {
                let (dx, dy) = (col as f64 - j.x, row as f64 - j.y);
                if dx * dx + dy * dy <= r2 {
                    data[row * width + col] = 1.0;
                }
            }
        }
    }
    Tensor::new([1, height, width], data).expect("length matches shape")
}

/// Integer pixel range `[lo, hi)` whose centers can lie within `radius` of `c`.
pub(crate) fn pixel_span(c: f64, radius: f64, len: usize) -> (usize, usize) {
    if !c.is_finite() {
        return (0, 0);
    }
    let lo = (c - radius).ceil().max(0.0);
    let hi = ((c + radius).floor() + 1.0).min(len as f64);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

const RANGE_SLACK: f32 = 1e-6;

/// `x -> 2x - 1`. Rejects values outside `[0, 1]` (with a 1e-6 slack).
pub fn normalize_image(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    if let Some(&bad) = img
        .data()
        .iter()
        .find(|&&v| !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&v))
    {
        return Err(Error::Invalid(format!("normalize_image: value {bad} outside [0, 1]")));
    }
    Ok(img.map(|v| 2.0 * v - 1.0))
}

/// `x -> (x + 1) / 2`, clamped to `[0, 1]`.
pub fn denormalize_image(img: &Tensor<f32>) -> Tensor<f32> {
    img.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn white(t: &Tensor<f32>) -> Vec<usize> {
        t.data().iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect()
    }

    #[test]
    fn no_visible_joints_is_all_black() {
        let kp = Keypoints::new(vec![Joint { x: 3.0, y: 3.0, visible: false }]);
        let m = rasterize_posemap(&kp, 8, 8, 2.0);
        assert!(m.data().iter().all(|&v| v == -1.0));
        assert_eq!(m.shape(), &[1, 8, 8]);
    }

    #[test]
    fn radius_zero_marks_single_pixel() {
        let m = rasterize_posemap(&Keypoints::new(vec![Joint::new(3.0, 3.0)]), 8, 8, 0.0);
        assert_eq!(white(&m), vec![3 * 8 + 3]);
    }

    #[test]
    fn far_outside_joint_is_clipped() {
        let m = rasterize_posemap(&Keypoints::new(vec![Joint::new(-50.0, -50.0)]), 8, 8, 2.0);
        assert!(white(&m).is_empty());
    }

    #[test]
    fn radius_two_disc_has_thirteen_pixels() {
        let m = rasterize_posemap(&Keypoints::new(vec![Joint::new(4.0, 4.0)]), 9, 9, 2.0);
        assert_eq!(white(&m).len(), 13);
    }

    #[test]
    fn normalization_round_trip() {
        let x = Tensor::new([3], vec![0.0f32, 1.0, 0.5]).unwrap();
        let n = normalize_image(&x).unwrap();
        assert_eq!(n.data(), &[-1.0, 1.0, 0.0]);
        assert_eq!(denormalize_image(&n), x);
        let over = Tensor::new([1], vec![1.0f32 + 1e-6]).unwrap();
        assert_eq!(denormalize_image(&over).data(), &[1.0]);
    }

    #[test]
    fn normalize_rejects_out_of_range_and_reports_value() {
        let x = Tensor::new([2], vec![0.5f32, 1.5]).unwrap();
        let err = normalize_image(&x).unwrap_err().to_string();
        assert!(err.contains("1.5"), "{err}");
    }

    #[test]
    fn keypoint_json_format() {
        let kp = Keypoints::new(vec![Joint::new(1.5, 2.0), Joint { x: -3.0, y: 4.0, visible: false }]);
        let text = kp.to_json();
        assert_eq!(text, r#"{"joints":[[1.5,2.0,true],[-3.0,4.0,false]]}"#);
        assert_eq!(Keypoints::from_json(&text).unwrap(), kp);
    }
}
