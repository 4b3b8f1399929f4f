//! Frozen convolutional feature extractor for the content and style losses.
//!
//! The bundled extractor is a seeded random-weight network of five blocks
//! whose outputs are tapped as `relu1-2` .. `relu5-2`. Real VGG-style
//! weights can be supplied through the same file format: an 8-byte magic,
//! a little-endian `u64` header length, a JSON [`FeatureHeader`], then each
//! layer's weight and bias as little-endian `f32`.

use adar_tensor::{Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::params::Fnv;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"ADARFEAT";
/// Tap name that resolves to the (transformed) input image.
pub const INPUT_TAP: &str = "input";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// 2x2 max pooling applied to this layer's input.
    #[serde(default)]
    pub pool_before: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub layers: Vec<FeatureLayer>,
    pub content_taps: Vec<String>,
    pub style_taps: Vec<String>,
    /// Optional per-channel `x * scale + shift` applied to `[-1, 1]` inputs,
    /// for weights trained on other input statistics.
    #[serde(default)]
    pub input_scale: Option<Vec<f64>>,
    #[serde(default)]
    pub input_shift: Option<Vec<f64>>,
}

/// Where the extractor weights come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Block widths of the random extractor.
    pub channels: Vec<usize>,
    pub seed: u64,
    /// Weights file; overrides `channels` and `seed` when set.
    #[serde(default)]
    pub file: Option<PathBuf>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            channels: vec![32, 64, 64, 128, 128],
            seed: 0x5eed_f00d,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor<T> {
    header: FeatureHeader,
    weights: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(header: FeatureHeader, weights: Vec<Tensor<T>>, biases: Vec<Tensor<T>>) -> Result<Self> {
        if weights.len() != header.layers.len() || biases.len() != header.layers.len() {
            return Err(Error::Invalid(format!(
                "feature extractor: {} layers but {} weights / {} biases",
                header.layers.len(),
                weights.len(),
                biases.len()
            )));
        }
        let mut c = 3;
        for ((l, w), b) in header.layers.iter().zip(&weights).zip(&biases) {
            let want = [l.out_channels, l.in_channels, l.kernel, l.kernel];
            if l.in_channels != c || w.shape() != want || b.shape() != [l.out_channels] || l.stride == 0 {
                return Err(Error::Invalid(format!(
                    "feature layer {}: weight {:?} / bias {:?} do not match {:?} with {} input channels",
                    l.name,
                    w.shape(),
                    b.shape(),
                    want,
                    c
                )));
            }
            c = l.out_channels;
        }
        for tap in header.content_taps.iter().chain(&header.style_taps) {
            if tap != INPUT_TAP && !header.layers.iter().any(|l| &l.name == tap) {
                return Err(Error::Invalid(format!("feature tap `{tap}` names no layer")));
            }
        }
        for coeffs in [&header.input_scale, &header.input_shift].into_iter().flatten() {
            if coeffs.len() != 3 {
                return Err(Error::Invalid("input transform needs 3 coefficients".into()));
            }
        }
        Ok(FeatureExtractor { header, weights, biases })
    }

    /// Five 3x3 conv+relu blocks (stride 1, then stride 2) with He-normal
    /// weights drawn from `seed`.
    pub fn random(channels: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let (mut weights, mut biases) = (Vec::new(), Vec::new());
        let mut c = 3;
        for (i, &co) in channels.iter().enumerate() {
            let fan_in = (c * 9) as f64;
            weights.push(Tensor::randn([co, c, 3, 3], 0.0, (2.0 / fan_in).sqrt(), &mut rng));
            biases.push(Tensor::zeros([co]));
            layers.push(FeatureLayer {
                name: format!("relu{}-2", i + 1),
                in_channels: c,
                out_channels: co,
                kernel: 3,
                stride: if i == 0 { 1 } else { 2 },
                padding: 1,
                pool_before: false,
            });
            c = co;
        }
        let names: Vec<String> = layers.iter().map(|l| l.name.clone()).collect();
        let content = names.get(3).or(names.last()).cloned().into_iter().collect();
        let header = FeatureHeader {
            layers,
            content_taps: content,
            style_taps: names,
            input_scale: None,
            input_shift: None,
        };
        Self::new(header, weights, biases)
    }

    /// No layers; the single tap is the image itself.
    pub fn identity() -> Self {
        let header = FeatureHeader {
            layers: Vec::new(),
            content_taps: vec![INPUT_TAP.into()],
            style_taps: vec![INPUT_TAP.into()],
            input_scale: None,
            input_shift: None,
        };
        Self::new(header, Vec::new(), Vec::new()).expect("identity extractor is valid")
    }

    pub fn from_config(config: &FeatureConfig) -> Result<Self> {
        match &config.file {
            Some(path) => Self::load(path),
            None => Self::random(&config.channels, config.seed),
        }
    }

    pub fn header(&self) -> &FeatureHeader {
        &self.header
    }

    pub fn content_taps(&self) -> &[String] {
        &self.header.content_taps
    }

    pub fn style_taps(&self) -> &[String] {
        &self.header.style_taps
    }

    pub fn with_taps(mut self, content: Vec<String>, style: Vec<String>) -> Result<Self> {
        self.header.content_taps = content;
        self.header.style_taps = style;
        Self::new(self.header, self.weights, self.biases)
    }

    /// Feature maps at `taps`, in the order requested. Weights enter the
    /// tape as constants, so nothing here ever receives a gradient.
    pub fn features(&self, tape: &mut Tape<T>, image: Var, taps: &[String]) -> Result<Vec<Var>> {
        let mut found: Vec<Option<Var>> = vec![None; taps.len()];
        let mut x = image;
        if let (Some(s), Some(b)) = (&self.header.input_scale, &self.header.input_shift) {
            let s: Vec<T> = s.iter().map(|&v| T::lit(v)).collect();
            let b: Vec<T> = b.iter().map(|&v| T::lit(v)).collect();
            x = tape.channel_affine(x, &s, &b)?;
        }
        let record = |name: &str, v: Var, found: &mut [Option<Var>]| {
            for (slot, t) in found.iter_mut().zip(taps) {
                if t == name {
                    *slot = Some(v);
                }
            }
        };
        record(INPUT_TAP, x, &mut found);
        for (i, layer) in self.header.layers.iter().enumerate() {
            if found.iter().all(Option::is_some) {
                break;
            }
            if layer.pool_before {
                x = tape.max_pool2(x)?;
            }
            let w = tape.constant(self.weights[i].clone());
            let b = tape.constant(self.biases[i].clone());
            x = tape.conv2d(x, w, Some(b), layer.stride, layer.padding)?;
            x = tape.relu(x);
            record(&layer.name, x, &mut found);
        }
        found
            .into_iter()
            .zip(taps)
            .map(|(v, t)| v.ok_or_else(|| Error::Invalid(format!("feature tap `{t}` names no layer"))))
            .collect()
    }

    /// Hash over the header and all weight bits.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::new();
        h.write(serde_json::to_string(&self.header).expect("header serializes").as_bytes());
        for t in self.weights.iter().chain(&self.biases) {
            for &v in t.data() {
                h.write(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn cast<U: Scalar>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            header: self.header.clone(),
            weights: self.weights.iter().map(Tensor::cast).collect(),
            biases: self.biases.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for &v in w.data().iter().chain(b.data()) {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("feature weights: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
        if body.len() < len {
            return Err(bad("truncated header"));
        }
        let header: FeatureHeader = serde_json::from_slice(&body[..len])?;
        let mut floats = body[len..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut take = |shape: Vec<usize>| -> Result<Tensor<T>> {
            let n: usize = shape.iter().product();
            let data: Vec<T> = floats.by_ref().take(n).map(|v| T::lit(v as f64)).collect();
            if data.len() != n {
                return Err(bad("truncated weights"));
            }
            Ok(Tensor::new(shape, data)?)
        };
        let (mut weights, mut biases) = (Vec::new(), Vec::new());
        for l in &header.layers {
            weights.push(take(vec![l.out_channels, l.in_channels, l.kernel, l.kernel])?);
            biases.push(take(vec![l.out_channels])?);
        }
        if (body.len() - len) % 4 != 0 || floats.next().is_some() {
            return Err(bad("trailing bytes"));
        }
        Self::new(header, weights, biases)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
