//! MSE, PSNR, SSIM and the detector-based pose score, plus dataset reports.

use adar_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::batch::{Batch, PairSet};
use crate::detector::JointDetector;
use crate::net::PoseRenderer;
use crate::posemap::Keypoints;
use crate::sprites::{Split, SpriteDataset};
use crate::{Error, Result};

/// Peak-to-peak range of `[-1, 1]` images.
pub const PEAK: f64 = 2.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Score charged for a joint the detector did not find.
pub const MISSED_JOINT_PENALTY: f64 = 1.0;

fn same_shape(a: &Tensor<f32>, b: &Tensor<f32>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Invalid(format!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared difference, accumulated in `f64`.
pub fn mse(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_shape(a, b, "mse")?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(s / a.numel().max(1) as f64)
}

/// `10 log10(peak^2 / mse)`; `+inf` for identical images.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: SSIM_WINDOW,
            sigma: SSIM_SIGMA,
            k1: SSIM_K1,
            k2: SSIM_K2,
            dynamic_range: PEAK,
        }
    }
}

/// Valid-window Gaussian filtering of one `h x w` plane (separable).
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..k).map(|i| g[i] * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..k).map(|i| g[i] * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid windows of every channel. Accepts `[C, H, W]`
/// or `[N, C, H, W]` (planes are treated independently).
pub fn ssim_with(a: &Tensor<f32>, b: &Tensor<f32>, p: SsimParams) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let shape = a.shape();
    if shape.len() < 2 {
        return Err(Error::Invalid(format!("ssim: need at least 2 dims, got {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h < p.window || w < p.window {
        return Err(Error::Invalid(format!("ssim: image {h}x{w} smaller than the {} window", p.window)));
    }
    let g = gaussian_window(p.window, p.sigma);
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let hw = h * w;
    let planes = a.numel() / hw;
    let (mut total, mut count) = (0.0, 0usize);
    for plane in 0..planes {
        let xa: Vec<f64> = a.data()[plane * hw..(plane + 1) * hw].iter().map(|&v| v as f64).collect();
        let xb: Vec<f64> = b.data()[plane * hw..(plane + 1) * hw].iter().map(|&v| v as f64).collect();
        let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).collect::<Vec<f64>>();
        let mu_a = filter_valid(&xa, h, w, &g);
        let mu_b = filter_valid(&xb, h, w, &g);
        let e_aa = filter_valid(&prod(&xa, &xa), h, w, &g);
        let e_bb = filter_valid(&prod(&xb, &xb), h, w, &g);
        let e_ab = filter_valid(&prod(&xa, &xb), h, w, &g);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    ssim_with(a, b, SsimParams::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseScore {
    pub score: f64,
    /// The detector found none of the joints.
    pub all_missed: bool,
}

/// Mean over ground-truth-visible joints of `|detected - gt| / normalizer`,
/// charging [`MISSED_JOINT_PENALTY`] for joints the detector missed.
pub fn pose_score(detected: &Keypoints, gt: &Keypoints, normalizer: f64) -> Result<PoseScore> {
    if detected.len() != gt.len() {
        return Err(Error::Invalid(format!(
            "pose score: detector returned {} joints, ground truth has {}",
            detected.len(),
            gt.len()
        )));
    }
    let (mut total, mut n, mut found) = (0.0, 0usize, 0usize);
    for (d, g) in detected.joints.iter().zip(&gt.joints).filter(|(_, g)| g.visible) {
        n += 1;
        if d.visible {
            found += 1;
            total += d.distance(g) / normalizer;
        } else {
            total += MISSED_JOINT_PENALTY;
        }
    }
    if found == 0 {
        return Ok(PoseScore {
            score: MISSED_JOINT_PENALTY,
            all_missed: true,
        });
    }
    Ok(PoseScore {
        score: total / n as f64,
        all_missed: false,
    })
}

/// Image diagonal in pixels, the pose-score normalizer.
pub fn diagonal(height: usize, width: usize) -> f64 {
    (height as f64).hypot(width as f64)
}

/// Detects joints on `image` (`[3, H, W]` in `[-1, 1]`) and scores them.
pub fn perceptual_pose_score(image: &Tensor<f32>, gt: &Keypoints, det: &dyn JointDetector) -> Result<PoseScore> {
    let (h, w) = match *image.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(Error::Invalid(format!("pose score: expected [3, H, W], got {s:?}"))),
    };
    pose_score(&det.detect(image), gt, diagonal(h, w))
}

/// PSNR serialized as a number, or the string `"inf"` for identical images.
mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad psnr `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub mse: f64,
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub ssim: f64,
    pub pose_score: f64,
    pub pose_missed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub count: usize,
    pub mse: f64,
    /// Mean of per-image PSNR (headline).
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    /// PSNR of the mean MSE.
    #[serde(with = "psnr_serde")]
    pub psnr_of_mean_mse: f64,
    pub ssim: f64,
    pub pose_score: f64,
}

impl MetricsSummary {
    pub fn from_samples(samples: &[SampleMetrics]) -> MetricsSummary {
        let n = samples.len();
        let mean = |f: &dyn Fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / n.max(1) as f64;
        let mse = mean(&|s| s.mse);
        MetricsSummary {
            count: n,
            mse,
            psnr: mean(&|s| s.psnr),
            psnr_of_mean_mse: psnr_from_mse(mse, PEAK),
            ssim: mean(&|s| s.ssim),
            pose_score: mean(&|s| s.pose_score),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub psnr_peak: f64,
    pub pose_normalizer: String,
    /// Effective configuration of the run that produced the report.
    pub config: serde_json::Value,
    pub samples: Vec<SampleMetrics>,
    pub summary: MetricsSummary,
}

impl MetricsReport {
    pub fn new(model: &str, config: serde_json::Value, mut samples: Vec<SampleMetrics>) -> Self {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        let summary = MetricsSummary::from_samples(&samples);
        MetricsReport {
            model: model.to_string(),
            psnr_peak: PEAK,
            pose_normalizer: "image diagonal".into(),
            config,
            samples,
            summary,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Header plus one row per report: `model,MSE,PSNR,SSIM,Perceptual`.
    pub fn csv_table(reports: &[&MetricsReport]) -> String {
        let mut out = String::from("model,MSE,PSNR,PSNR_of_mean_MSE,SSIM,Perceptual\n");
        for r in reports {
            let s = &r.summary;
            out.push_str(&format!(
                "{},{:.6},{:.4},{:.4},{:.6},{:.6}\n",
                r.model, s.mse, s.psnr, s.psnr_of_mean_mse, s.ssim, s.pose_score
            ));
        }
        out
    }

    /// Side-by-side plain-text table.
    pub fn text_table(reports: &[&MetricsReport]) -> String {
        let mut out = format!("{:<12}", "");
        for r in reports {
            out.push_str(&format!("{:>14}", r.model));
        }
        out.push('\n');
        let rows: [(&str, fn(&MetricsSummary) -> f64); 5] = [
            ("MSE", |s| s.mse),
            ("PSNR", |s| s.psnr),
            ("PSNR(mean)", |s| s.psnr_of_mean_mse),
            ("SSIM", |s| s.ssim),
            ("Perceptual", |s| s.pose_score),
        ];
        for (name, f) in rows {
            out.push_str(&format!("{name:<12}"));
            for r in reports {
                out.push_str(&format!("{:>14.4}", f(&r.summary)));
            }
            out.push('\n');
        }
        out
    }
}

/// Anything that turns a batch into generated images.
pub trait ImageModel {
    fn name(&self) -> String;
    /// `[B, 3, H, W]` images in `[-1, 1]`.
    fn generate(&mut self, batch: &Batch) -> Result<Tensor<f32>>;
}

impl ImageModel for PoseRenderer<f32> {
    fn name(&self) -> String {
        match self.kind() {
            crate::net::ModelKind::Adaptive => "ada-r".into(),
            crate::net::ModelKind::Concat => "concat".into(),
        }
    }

    fn generate(&mut self, batch: &Batch) -> Result<Tensor<f32>> {
        self.render(&batch.pose, &batch.reference)
    }
}

/// Debug model that returns the ground-truth target.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityModel;

impl ImageModel for IdentityModel {
    fn name(&self) -> String {
        "identity".into()
    }

    fn generate(&mut self, batch: &Batch) -> Result<Tensor<f32>> {
        Ok(batch.target.clone())
    }
}

/// Baseline that returns the appearance reference unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoReference;

impl ImageModel for EchoReference {
    fn name(&self) -> String {
        "echo".into()
    }

    fn generate(&mut self, batch: &Batch) -> Result<Tensor<f32>> {
        Ok(batch.reference.clone())
    }
}

/// Per-sample metrics for one batch of generated images.
pub fn score_batch(batch: &Batch, generated: &Tensor<f32>, det: &dyn JointDetector) -> Result<Vec<SampleMetrics>> {
    if generated.shape() != batch.target.shape() {
        return Err(Error::Resolution(format!(
            "generated {:?} vs target {:?}",
            generated.shape(),
            batch.target.shape()
        )));
    }
    let mut out = Vec::with_capacity(batch.len());
    for (i, pair) in batch.pairs.iter().enumerate() {
        let g = generated.sample(i)?.reshape(batch.target.shape()[1..].to_vec())?;
        let t = batch.target.sample(i)?.reshape(batch.target.shape()[1..].to_vec())?;
        let m = mse(&g, &t)?;
        let pose = perceptual_pose_score(&g, &batch.target_keypoints[i], det)?;
        out.push(SampleMetrics {
            id: format!("id{:04}-r{}-t{}", pair.identity, pair.reference, pair.target),
            mse: m,
            psnr: psnr_from_mse(m, PEAK),
            ssim: ssim(&g, &t)?,
            pose_score: pose.score,
            pose_missed: pose.all_missed,
        });
    }
    Ok(out)
}

/// Runs `model` over every pair of `split` and scores the results.
pub fn evaluate_dataset(
    model: &mut dyn ImageModel,
    dataset: &SpriteDataset,
    split: Split,
    det: &dyn JointDetector,
    batch_size: usize,
    config: serde_json::Value,
) -> Result<MetricsReport> {
    let pairs = PairSet::new(dataset, split)?;
    let mut samples = Vec::with_capacity(pairs.len());
    for batch in pairs.chunks(batch_size) {
        let batch = batch?;
        let generated = model.generate(&batch)?;
        samples.extend(score_batch(&batch, &generated, det)?);
    }
    Ok(MetricsReport::new(&model.name(), config, samples))
}
