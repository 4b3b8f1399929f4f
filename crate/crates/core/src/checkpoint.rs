//! Binary training checkpoints.
//!
//! Layout: the 8-byte magic `ADARCKPT`, a little-endian `u64` header length,
//! a JSON header, then every tensor listed in the header as little-endian
//! `f32` values in header order. The header carries an FNV-1a checksum of the
//! tensor section.

use std::path::Path;

use adar_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{parse_pairs, RunConfig};
use crate::optim::AdamState;
use crate::params::{Fnv, ParamSet};
use crate::trainer::{Counters, TrainConfig, Trainer};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ADARCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint truncated: need {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("{0} unexpected bytes after the tensor section")]
    TrailingBytes(usize),
    #[error("tensor section checksum mismatch (file is corrupt)")]
    Checksum,
    #[error("tensor `{name}`: {message}")]
    Tensor { name: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Position of the batch-sampling generator as seven 64-bit words: the
/// 32-byte ChaCha seed (four little-endian words), the stream id, and the
/// 128-bit word position (low word first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub words: Vec<u64>,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed = rng.get_seed();
        let mut words: Vec<u64> = seed
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let pos = rng.get_word_pos();
        words.extend([rng.get_stream(), pos as u64, (pos >> 64) as u64]);
        RngState { words }
    }

    pub fn restore(&self) -> std::result::Result<ChaCha8Rng, CheckpointError> {
        let w = &self.words;
        if w.len() != 7 {
            return Err(CheckpointError::Header(format!("rng state has {} words, expected 7", w.len())));
        }
        let mut seed = [0u8; 32];
        for (i, word) in w[..4].iter().enumerate() {
            seed[8 * i..8 * i + 8].copy_from_slice(&word.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(w[4]);
        rng.set_word_pos(w[5] as u128 | (w[6] as u128) << 64);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: TrainConfig,
    pub counters: Counters,
    /// Adam step count per optimizer: generator, [fcn,] discriminator.
    pub optimizer_steps: Vec<u64>,
    pub rng: RngState,
    pub content_taps: Vec<String>,
    pub style_taps: Vec<String>,
    /// Checksum of the feature extractor the run was trained against.
    pub feature_checksum: String,
    pub tensors: Vec<TensorRecord>,
    pub data_checksum: String,
    /// Effective `key = value` run configuration; empty when the checkpoint
    /// was written outside a CLI run.
    #[serde(default)]
    pub config_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<Tensor<f32>>,
}

fn checksum(data: &[u8]) -> String {
    let mut h = Fnv::new();
    h.write(data);
    format!("{:016x}", h.finish())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut data = Vec::with_capacity(4 * self.tensors.iter().map(|t| t.numel()).sum::<usize>());
        for t in &self.tensors {
            for v in t.data() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut header = self.header.clone();
        header.data_checksum = checksum(&data);
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        let need = |needed: usize| {
            if bytes.len() < needed {
                Err(CheckpointError::Truncated {
                    needed,
                    found: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        need(16)?;
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| CheckpointError::Header("header length overflows".into()))?;
        let header_end = 16usize
            .checked_add(len)
            .ok_or_else(|| CheckpointError::Header("header length overflows".into()))?;
        need(header_end)?;
        let value: serde_json::Value =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let found = value.get("format_version").and_then(|v| v.as_u64());
        match found {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(CheckpointError::Version { found: v as u32 }),
            None => return Err(CheckpointError::Header("missing format_version".into())),
        }
        let header: CheckpointHeader =
            serde_json::from_value(value).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut total = 0usize;
        for r in &header.tensors {
            let n = r.shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            total = n
                .and_then(|n| n.checked_mul(4))
                .and_then(|n| total.checked_add(n))
                .ok_or_else(|| CheckpointError::Tensor {
                    name: r.name.clone(),
                    message: format!("shape {:?} overflows", r.shape),
                })?;
        }
        let end = header_end + total;
        need(end)?;
        if bytes.len() > end {
            return Err(CheckpointError::TrailingBytes(bytes.len() - end));
        }
        if checksum(&bytes[header_end..end]) != header.data_checksum {
            return Err(CheckpointError::Checksum);
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut at = header_end;
        for r in &header.tensors {
            let n: usize = r.shape.iter().product();
            let data = bytes[at..at + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            at += 4 * n;
            tensors.push(Tensor::new(r.shape.clone(), data).map_err(|e| CheckpointError::Tensor {
                name: r.name.clone(),
                message: e.to_string(),
            })?);
        }
        Ok(Checkpoint { header, tensors })
    }

    /// The run configuration echoed in the header, or one built from the
    /// training configuration with default output intervals.
    pub fn run_config(&self) -> Result<RunConfig> {
        if self.header.config_text.is_empty() {
            let mut run = RunConfig::default();
            run.train = self.header.config.clone();
            return Ok(run);
        }
        RunConfig::resolve(&parse_pairs(&self.header.config_text)?)
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

/// Named tensors of one parameter set and its optimizer state, in a fixed order.
fn collect(prefix: &str, params: &ParamSet<f32>, adam: &AdamState<f32>, out: &mut Vec<(String, Tensor<f32>)>) {
    for e in params.entries() {
        out.push((format!("{prefix}/{}", e.name), e.value.clone()));
    }
    for (e, (m, v)) in params.trainable().zip(adam.m.iter().zip(&adam.v)) {
        out.push((format!("{prefix}/adam.m/{}", e.name), m.clone()));
        out.push((format!("{prefix}/adam.v/{}", e.name), v.clone()));
    }
}

/// Overwrites `params` and `adam` from `source` after checking that every
/// name and shape matches.
fn restore(
    prefix: &str,
    params: &mut ParamSet<f32>,
    adam: &mut AdamState<f32>,
    source: &mut impl Iterator<Item = (TensorRecord, Tensor<f32>)>,
) -> std::result::Result<(), CheckpointError> {
    let mut expected = Vec::new();
    let fresh = AdamState::new(params);
    collect(prefix, params, &fresh, &mut expected);
    let mut got = Vec::with_capacity(expected.len());
    for (name, want) in &expected {
        let (rec, t) = source.next().ok_or_else(|| CheckpointError::Tensor {
            name: name.clone(),
            message: "missing".into(),
        })?;
        if &rec.name != name || t.shape() != want.shape() {
            return Err(CheckpointError::Tensor {
                name: name.clone(),
                message: format!("found `{}` with shape {:?}, expected shape {:?}", rec.name, t.shape(), want.shape()),
            });
        }
        got.push(t);
    }
    let mut it = got.into_iter();
    for e in params.entries_mut() {
        e.value = it.next().expect("counted above");
    }
    for (m, v) in adam.m.iter_mut().zip(adam.v.iter_mut()) {
        *m = it.next().expect("counted above");
        *v = it.next().expect("counted above");
    }
    Ok(())
}

impl Trainer {
    fn named_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::new();
        collect("generator", &self.renderer.generator.params, &self.opt_renderer[0], &mut out);
        if let Some(f) = &self.renderer.fcn {
            collect("fcn", &f.params, &self.opt_renderer[1], &mut out);
        }
        collect("discriminator", &self.discriminator.params, &self.opt_disc, &mut out);
        out
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (records, tensors): (Vec<_>, Vec<_>) = self
            .named_tensors()
            .into_iter()
            .map(|(name, t)| {
                (
                    TensorRecord {
                        name,
                        shape: t.shape().to_vec(),
                    },
                    t,
                )
            })
            .unzip();
        let mut steps: Vec<u64> = self.opt_renderer.iter().map(|s| s.step).collect();
        steps.push(self.opt_disc.step);
        Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                config: self.config().clone(),
                counters: self.counters,
                optimizer_steps: steps,
                rng: RngState::capture(&self.rng),
                content_taps: self.features().content_taps().to_vec(),
                style_taps: self.features().style_taps().to_vec(),
                feature_checksum: format!("{:016x}", self.features().checksum()),
                tensors: records,
                data_checksum: String::new(),
                config_text: String::new(),
            },
            tensors,
        }
    }

    /// Rebuilds a trainer from `ck`. Nothing is constructed unless the whole
    /// checkpoint is consistent with its own configuration.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Trainer> {
        let h = &ck.header;
        let mut t = Trainer::new(h.config.clone())?;
        let fx = format!("{:016x}", t.features().checksum());
        if fx != h.feature_checksum {
            return Err(Error::Invalid(format!(
                "feature extractor checksum {fx} differs from the checkpoint's {}",
                h.feature_checksum
            )));
        }
        if h.content_taps != t.features().content_taps() || h.style_taps != t.features().style_taps() {
            return Err(CheckpointError::Header("feature taps differ from the configured extractor".into()).into());
        }
        let expected_steps = t.opt_renderer.len() + 1;
        if h.optimizer_steps.len() != expected_steps {
            return Err(CheckpointError::Header(format!(
                "{} optimizer step counts for {expected_steps} optimizers",
                h.optimizer_steps.len()
            ))
            .into());
        }
        if h.tensors.len() != ck.tensors.len() {
            return Err(CheckpointError::Header("tensor list does not match tensor data".into()).into());
        }
        let rng = h.rng.restore()?;
        let mut source = h.tensors.iter().cloned().zip(ck.tensors.iter().cloned());
        restore("generator", &mut t.renderer.generator.params, &mut t.opt_renderer[0], &mut source)?;
        if let Some(f) = t.renderer.fcn.as_mut() {
            restore("fcn", &mut f.params, &mut t.opt_renderer[1], &mut source)?;
        }
        restore("discriminator", &mut t.discriminator.params, &mut t.opt_disc, &mut source)?;
        if let Some((rec, _)) = source.next() {
            return Err(CheckpointError::Tensor {
                name: rec.name,
                message: "not part of this model".into(),
            }
            .into());
        }
        for (s, &n) in t.opt_renderer.iter_mut().chain(std::iter::once(&mut t.opt_disc)).zip(&h.optimizer_steps) {
            s.step = n;
        }
        t.counters = h.counters;
        t.rng = rng;
        Ok(t)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
        Trainer::from_checkpoint(&Checkpoint::load(path)?)
    }
}
