//! Stacked training/evaluation batches drawn from a sprite dataset split.

use adar_tensor::Tensor;

use crate::posemap::{default_radius, normalize_image, rasterize_posemap, Keypoints};
use crate::sprites::{PairRef, Split, SpriteDataset};
use crate::{Error, Result};

/// Tensors are `[B, C, H, W]` in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub pairs: Vec<PairRef>,
    pub pose: Tensor<f32>,
    pub reference: Tensor<f32>,
    pub target: Tensor<f32>,
    pub target_keypoints: Vec<Keypoints>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Precomputed normalized images and posemaps for one split.
#[derive(Debug, Clone)]
pub struct PairSet {
    resolution: usize,
    pairs: Vec<PairRef>,
    /// Indexed by `[identity][pose]`, each with a leading batch axis of 1;
    /// empty for identities of the other split.
    images: Vec<Vec<Tensor<f32>>>,
    posemaps: Vec<Vec<Tensor<f32>>>,
    keypoints: Vec<Vec<Keypoints>>,
}

impl PairSet {
    pub fn new(dataset: &SpriteDataset, split: Split) -> Result<Self> {
        let res = dataset.resolution();
        let pairs = dataset.pairs(split);
        if pairs.is_empty() {
            return Err(Error::Invalid(format!("{split:?} split has no pairs")));
        }
        let (mut images, mut posemaps, mut keypoints) = (Vec::new(), Vec::new(), Vec::new());
        for ident in &dataset.identities {
            if ident.split == split {
                images.push(
                    ident
                        .images
                        .iter()
                        .map(|img| Ok(normalize_image(img)?.reshape([1, 3, res, res])?))
                        .collect::<Result<Vec<_>>>()?,
                );
                posemaps.push(
                    ident
                        .keypoints
                        .iter()
                        .map(|kp| Ok(rasterize_posemap(kp, res, res, default_radius(res)).reshape([1, 1, res, res])?))
                        .collect::<Result<Vec<_>>>()?,
                );
                keypoints.push(ident.keypoints.clone());
            } else {
                images.push(Vec::new());
                posemaps.push(Vec::new());
                keypoints.push(Vec::new());
            }
        }
        Ok(PairSet {
            resolution: res,
            pairs,
            images,
            posemaps,
            keypoints,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[PairRef] {
        &self.pairs
    }

    /// Batch of the pairs at the given positions of [`PairSet::pairs`].
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let pairs: Vec<PairRef> = indices.iter().map(|&i| self.pairs[i]).collect();
        let pose: Vec<_> = pairs.iter().map(|p| self.posemaps[p.identity][p.target].clone()).collect();
        let reference: Vec<_> = pairs.iter().map(|p| self.images[p.identity][p.reference].clone()).collect();
        let target: Vec<_> = pairs.iter().map(|p| self.images[p.identity][p.target].clone()).collect();
        let target_keypoints = pairs.iter().map(|p| self.keypoints[p.identity][p.target].clone()).collect();
        Ok(Batch {
            pose: Tensor::stack(&pose)?,
            reference: Tensor::stack(&reference)?,
            target: Tensor::stack(&target)?,
            target_keypoints,
            pairs,
        })
    }

    /// Consecutive batches covering every pair once, in order.
    pub fn chunks(&self, batch_size: usize) -> impl Iterator<Item = Result<Batch>> + '_ {
        let n = self.len();
        (0..n).step_by(batch_size.max(1)).map(move |start| {
            let idx: Vec<usize> = (start..(start + batch_size.max(1)).min(n)).collect();
            self.batch(&idx)
        })
    }
}
