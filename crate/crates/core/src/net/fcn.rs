use adar_tensor::{Activation, NormMode, Scalar, Tape, Var};
use rand::Rng;

use super::{check_input, NetConfig};
use crate::layers::{Conv, ConvBlock, ConvSpec};
use crate::params::{Bound, ParamSet};
use crate::Result;

const LEAK: f64 = 0.2;

/// Appearance branch: stride-2 conv blocks, global average pooling and a
/// 1x1 head that emits one `C_out x C_in x k x k` kernel set per sample.
#[derive(Debug, Clone)]
pub struct AppearanceFcn<T> {
    pub params: ParamSet<T>,
    config: NetConfig,
    blocks: Vec<ConvBlock>,
    head: Conv,
}

impl<T: Scalar> AppearanceFcn<T> {
    pub fn new<R: Rng + ?Sized>(config: &NetConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let mut c = 3;
        let blocks = config
            .fcn_channels
            .iter()
            .enumerate()
            .map(|(i, &co)| {
                let b = ConvBlock::new(
                    &mut params,
                    &format!("fcn.{i}"),
                    ConvSpec::down(c, co),
                    true,
                    Some(Activation::LeakyRelu(LEAK)),
                    rng,
                );
                c = co;
                b
            })
            .collect();
        let ch = config.bottleneck_channels();
        let k = config.kernel_size;
        let head = Conv::new(
            &mut params,
            "fcn.head",
            ConvSpec {
                c_in: c,
                c_out: k * k * ch * ch,
                kernel: 1,
                stride: 1,
                padding: 0,
                bias: true,
                transpose: false,
            },
            rng,
        );
        AppearanceFcn {
            params,
            config: config.clone(),
            blocks,
            head,
        }
    }

    /// `K = FCN(I_app)`: `[B, 3, H, W]` -> `[B, C, C, k, k]`, scaled by
    /// `1 / sqrt(k * k * C)`.
    pub fn filters(&mut self, tape: &mut Tape<T>, bound: &Bound, app: Var, mode: NormMode) -> Result<Var> {
        let b = check_input(tape, app, 3, self.config.resolution, "appearance")?;
        let mut x = app;
        for block in &self.blocks {
            x = block.forward(tape, bound, &mut self.params, x, mode)?;
        }
        let pooled = tape.global_avg_pool(x)?;
        let raw = self.head.forward(tape, bound, pooled)?;
        let (c, k) = (self.config.bottleneck_channels(), self.config.kernel_size);
        let scaled = tape.scale(raw, T::lit(1.0 / ((k * k * c) as f64).sqrt()));
        Ok(tape.reshape(scaled, [b, c, c, k, k])?)
    }

    pub fn cast<U: Scalar>(&self) -> AppearanceFcn<U> {
        AppearanceFcn {
            params: self.params.cast(),
            config: self.config.clone(),
            blocks: self.blocks.clone(),
            head: self.head.clone(),
        }
    }
}

/// `F_bar[b] = conv2d(F[b], K[b])`, stride 1, shape-preserving padding.
pub fn adaptive_conv<T: Scalar>(tape: &mut Tape<T>, features: Var, kernels: Var) -> Result<Var> {
    let k = tape.shape(kernels).get(3).copied().unwrap_or(1);
    Ok(tape.batched_conv2d(features, kernels, 1, k.saturating_sub(1) / 2)?)
}
