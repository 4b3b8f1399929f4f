use adar_tensor::{Activation, NormMode, Scalar, Tape, Var};
use rand::Rng;

use super::{check_input, NetConfig};
use crate::layers::{Conv, ConvBlock, ConvSpec};
use crate::params::{Bound, ParamSet};
use crate::Result;

const LEAK: f64 = 0.2;

/// Patch discriminator on `concat(image, I_app)`; the first block has no
/// batchnorm, the head is a 3x3 valid convolution.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    pub params: ParamSet<T>,
    resolution: usize,
    blocks: Vec<ConvBlock>,
    head: Conv,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: &NetConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let mut c = 6;
        let mut blocks = Vec::new();
        for (i, &co) in config.disc_channels.iter().enumerate() {
            blocks.push(ConvBlock::new(
                &mut params,
                &format!("disc.{i}"),
                ConvSpec::down(c, co),
                i > 0,
                Some(Activation::LeakyRelu(LEAK)),
                rng,
            ));
            c = co;
        }
        let head = Conv::new(
            &mut params,
            "disc.head",
            ConvSpec {
                c_in: c,
                c_out: 1,
                kernel: 3,
                stride: 1,
                padding: 0,
                bias: true,
                transpose: false,
            },
            rng,
        );
        Discriminator {
            params,
            resolution: config.resolution,
            blocks,
            head,
        }
    }

    /// Pre-sigmoid patch logits `[B, 1, p, p]`.
    pub fn logits(&mut self, tape: &mut Tape<T>, bound: &Bound, image: Var, condition: Var, mode: NormMode) -> Result<Var> {
        check_input(tape, image, 3, self.resolution, "discriminator image")?;
        check_input(tape, condition, 3, self.resolution, "discriminator condition")?;
        let mut x = tape.concat_channels(&[image, condition])?;
        for block in &self.blocks {
            x = block.forward(tape, bound, &mut self.params, x, mode)?;
        }
        self.head.forward(tape, bound, x)
    }

    /// Patch scores in (0, 1).
    pub fn scores(&mut self, tape: &mut Tape<T>, bound: &Bound, image: Var, condition: Var, mode: NormMode) -> Result<Var> {
        let l = self.logits(tape, bound, image, condition, mode)?;
        Ok(tape.sigmoid(l))
    }

    pub fn head_weight(&self) -> crate::params::ParamId {
        self.head.weight
    }

    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        Discriminator {
            params: self.params.cast(),
            resolution: self.resolution,
            blocks: self.blocks.clone(),
            head: self.head.clone(),
        }
    }
}
