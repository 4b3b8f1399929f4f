use adar_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::{render_sprite, PoseParams, SpriteAppearance, JOINT_COUNT};
use crate::imageio::{load_png, save_png};
use crate::posemap::{default_radius, normalize_image, rasterize_posemap, Keypoints};
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub identities: usize,
    pub poses_per_identity: usize,
    pub resolution: usize,
    /// Fraction of identities (rounded) assigned to the training split.
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            identities: 100,
            poses_per_identity: 4,
            resolution: 64,
            train_fraction: 0.7,
        }
    }
}

impl DatasetConfig {
    pub fn train_identities(&self) -> usize {
        (self.train_fraction * self.identities as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.identities < 2 {
            return bad(format!("need at least 2 identities for a train/test split, got {}", self.identities));
        }
        if self.poses_per_identity < 2 {
            return bad(format!("need at least 2 poses per identity to form pairs, got {}", self.poses_per_identity));
        }
        if self.resolution < 32 || self.resolution % 8 != 0 {
            return bad(format!("resolution {} must be a multiple of 8, at least 32", self.resolution));
        }
        let n = self.train_identities();
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) || n == 0 || n >= self.identities {
            return bad(format!(
                "train fraction {} leaves an empty split with {} identities",
                self.train_fraction, self.identities
            ));
        }
        Ok(())
    }

    /// Ordered `(reference, target)` pairs per identity times identities.
    pub fn pair_count(&self, identities: usize) -> usize {
        identities * self.poses_per_identity * (self.poses_per_identity - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    pub id: usize,
    pub split: Split,
    pub appearance: SpriteAppearance,
    pub keypoints: Vec<Keypoints>,
    /// `[3, H, W]` renders in `[0, 1]`, one per pose.
    pub images: Vec<Tensor<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairRef {
    pub identity: usize,
    pub reference: usize,
    pub target: usize,
}

/// One training record; images and posemap are in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpriteSample {
    pub appearance: SpriteAppearance,
    pub ref_pose: Keypoints,
    pub target_pose: Keypoints,
    pub ref_image: Tensor<f32>,
    pub target_image: Tensor<f32>,
    pub posemap: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpriteDataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub identities: Vec<Identity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestIdentity {
    pub id: usize,
    pub split: Split,
    pub appearance: SpriteAppearance,
    pub images: Vec<String>,
    pub keypoints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub resolution: usize,
    pub seed: u64,
    pub config: DatasetConfig,
    /// Number of rendered (identity, pose) images.
    pub sample_count: usize,
    pub pair_count: usize,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub identities: Vec<ManifestIdentity>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl SpriteDataset {
    /// Identity `i` draws from its own stream `(seed, i + 1)`; stream 0
    /// shuffles identities into the split.
    pub fn generate(config: &DatasetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut order: Vec<usize> = (0..config.identities).collect();
        order.shuffle(&mut stream_rng(seed, 0));
        let mut split = vec![Split::Test; config.identities];
        for &i in &order[..config.train_identities()] {
            split[i] = Split::Train;
        }
        let res = config.resolution;
        let identities = (0..config.identities)
            .map(|id| {
                let mut rng = stream_rng(seed, id as u64 + 1);
                let appearance = SpriteAppearance::sample(&mut rng);
                let keypoints: Vec<Keypoints> = (0..config.poses_per_identity)
                    .map(|_| PoseParams::sample(&mut rng).keypoints(res))
                    .collect();
                let images = keypoints.iter().map(|kp| render_sprite(&appearance, kp, res, res)).collect();
                Identity {
                    id,
                    split: split[id],
                    appearance,
                    keypoints,
                    images,
                }
            })
            .collect();
        Ok(SpriteDataset {
            config: config.clone(),
            seed,
            identities,
        })
    }

    pub fn resolution(&self) -> usize {
        self.config.resolution
    }

    pub fn identity_ids(&self, split: Split) -> Vec<usize> {
        self.identities.iter().filter(|i| i.split == split).map(|i| i.id).collect()
    }

    /// All ordered `(reference, target)` pose pairs with `reference != target`.
    pub fn pairs(&self, split: Split) -> Vec<PairRef> {
        let mut out = Vec::new();
        for ident in self.identities.iter().filter(|i| i.split == split) {
            let m = ident.keypoints.len();
            for reference in 0..m {
                for target in (0..m).filter(|&t| t != reference) {
                    out.push(PairRef {
                        identity: ident.id,
                        reference,
                        target,
                    });
                }
            }
        }
        out
    }

    pub fn sample(&self, pair: PairRef) -> Result<SpriteSample> {
        let ident = &self.identities[pair.identity];
        let res = self.resolution();
        let target_pose = ident.keypoints[pair.target].clone();
        Ok(SpriteSample {
            appearance: ident.appearance,
            ref_pose: ident.keypoints[pair.reference].clone(),
            posemap: rasterize_posemap(&target_pose, res, res, default_radius(res)),
            target_pose,
            ref_image: normalize_image(&ident.images[pair.reference])?,
            target_image: normalize_image(&ident.images[pair.target])?,
        })
    }

    pub fn manifest(&self) -> DatasetManifest {
        let identities: Vec<ManifestIdentity> = self
            .identities
            .iter()
            .map(|ident| {
                let files = |ext: &str| {
                    (0..ident.keypoints.len())
                        .map(|p| format!("id{:04}/pose{:02}.{ext}", ident.id, p))
                        .collect()
                };
                ManifestIdentity {
                    id: ident.id,
                    split: ident.split,
                    appearance: ident.appearance,
                    images: files("png"),
                    keypoints: files("json"),
                }
            })
            .collect();
        let n_train = self.identity_ids(Split::Train).len();
        let c = &self.config;
        DatasetManifest {
            version: MANIFEST_VERSION,
            resolution: c.resolution,
            seed: self.seed,
            config: c.clone(),
            sample_count: c.identities * c.poses_per_identity,
            pair_count: c.pair_count(c.identities),
            train_pairs: c.pair_count(n_train),
            test_pairs: c.pair_count(c.identities - n_train),
            identities,
        }
    }

    /// Writes PNGs, keypoint JSON files and `manifest.json` under `out_dir`.
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
        let out_dir = out_dir.as_ref();
        let manifest = self.manifest();
        for (ident, entry) in self.identities.iter().zip(&manifest.identities) {
            let dir = out_dir.join(format!("id{:04}", ident.id));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (p, (img, kp)) in ident.images.iter().zip(&ident.keypoints).enumerate() {
                save_png(out_dir.join(&entry.images[p]), img)?;
                kp.save(out_dir.join(&entry.keypoints[p]))?;
            }
        }
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    /// Reads a dataset written by [`SpriteDataset::write`]. `path` may be the
    /// manifest file or its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest_path: PathBuf = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Invalid(format!(
                "dataset manifest version {} (expected {MANIFEST_VERSION})",
                manifest.version
            )));
        }
        let res = manifest.resolution;
        let mut identities = Vec::with_capacity(manifest.identities.len());
        for entry in &manifest.identities {
            let mut images = Vec::new();
            for f in &entry.images {
                let img = load_png(root.join(f))?;
                if img.shape() != [3, res, res] {
                    return Err(Error::Resolution(format!("{f}: {:?}, expected {res}x{res}", img.shape())));
                }
                images.push(img);
            }
            let keypoints = entry
                .keypoints
                .iter()
                .map(|f| {
                    let kp = Keypoints::load(root.join(f))?;
                    if kp.len() != JOINT_COUNT {
                        return Err(Error::Invalid(format!("{f}: {} joints, expected {JOINT_COUNT}", kp.len())));
                    }
                    Ok(kp)
                })
                .collect::<Result<_>>()?;
            identities.push(Identity {
                id: entry.id,
                split: entry.split,
                appearance: entry.appearance,
                keypoints,
                images,
            });
        }
        Ok(SpriteDataset {
            config: manifest.config,
            seed: manifest.seed,
            identities,
        })
    }
}

/// Generates the dataset for `(config, seed)` and writes it to `out_dir`.
pub fn build_dataset(config: &DatasetConfig, seed: u64, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    SpriteDataset::generate(config, seed)?.write(out_dir)
}
