use adar_tensor::{Activation, NormMode, Scalar, Tape, Var};
use rand::Rng;

use super::{check_input, ModelKind, NetConfig};
use crate::layers::{Conv, ConvBlock, ConvSpec};
use crate::params::{Bound, ParamSet};
use crate::{Error, Result};

/// Stride-2 encoder, bottleneck, transposed-conv decoder with tanh output.
/// No skip connections: all pose information passes the bottleneck.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    pub params: ParamSet<T>,
    kind: ModelKind,
    config: NetConfig,
    encoder: Vec<ConvBlock>,
    /// Learned fixed bottleneck filter; only the concat baseline has one.
    bottleneck: Option<Conv>,
    decoder: Vec<ConvBlock>,
}

impl<T: Scalar> Generator<T> {
    pub fn new<R: Rng + ?Sized>(config: &NetConfig, kind: ModelKind, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let in_channels = match kind {
            ModelKind::Adaptive => 1,
            ModelKind::Concat => 4,
        };
        let enc = &config.encoder_channels;
        let mut encoder = Vec::with_capacity(enc.len());
        let mut c = in_channels;
        for (i, &co) in enc.iter().enumerate() {
            encoder.push(ConvBlock::new(
                &mut params,
                &format!("encoder.{i}"),
                ConvSpec::down(c, co),
                i > 0,
                Some(Activation::Relu),
                rng,
            ));
            c = co;
        }
        let bottleneck = (kind == ModelKind::Concat).then(|| {
            let k = config.kernel_size;
            let spec = ConvSpec {
                c_in: c,
                c_out: c,
                kernel: k,
                stride: 1,
                padding: (k - 1) / 2,
                bias: false,
                transpose: false,
            };
            Conv::new(&mut params, "bottleneck", spec, rng)
        });
        let mut decoder = Vec::with_capacity(enc.len());
        for i in (0..enc.len()).rev() {
            let name = format!("decoder.{}", enc.len() - 1 - i);
            let block = if i == 0 {
                ConvBlock::new(&mut params, &name, ConvSpec::up(c, 3).with_bias(), false, Some(Activation::Tanh), rng)
            } else {
                let co = enc[i - 1];
                ConvBlock::new(&mut params, &name, ConvSpec::up(c, co), true, Some(Activation::Relu), rng)
            };
            decoder.push(block);
            if i > 0 {
                c = enc[i - 1];
            }
        }
        Generator {
            params,
            kind,
            config: config.clone(),
            encoder,
            bottleneck,
            decoder,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    fn input_channels(&self) -> usize {
        match self.kind {
            ModelKind::Adaptive => 1,
            ModelKind::Concat => 4,
        }
    }

    /// `F = E(input)`: `[B, 1, H, W]` posemaps (or 4-channel concat input for
    /// the baseline) to `[B, C, H / 2^n, W / 2^n]`.
    pub fn encode(&mut self, tape: &mut Tape<T>, bound: &Bound, input: Var, mode: NormMode) -> Result<Var> {
        check_input(tape, input, self.input_channels(), self.config.resolution, "encode")?;
        let mut x = input;
        for block in &self.encoder {
            x = block.forward(tape, bound, &mut self.params, x, mode)?;
        }
        Ok(x)
    }

    /// `I_gen = D(F_bar)`.
    pub fn decode(&mut self, tape: &mut Tape<T>, bound: &Bound, fbar: Var, mode: NormMode) -> Result<Var> {
        let s = self.config.bottleneck_size();
        check_input(tape, fbar, self.config.bottleneck_channels(), s, "decode")?;
        let mut x = fbar;
        for block in &self.decoder {
            x = block.forward(tape, bound, &mut self.params, x, mode)?;
        }
        Ok(x)
    }

    /// Baseline path: concat `(pose, app)` at the input, fixed bottleneck conv.
    pub fn concat_forward(&mut self, tape: &mut Tape<T>, bound: &Bound, pose: Var, app: Var, mode: NormMode) -> Result<Var> {
        let bottleneck = self
            .bottleneck
            .clone()
            .ok_or_else(|| Error::Invalid("concat_forward on an adaptive generator".into()))?;
        check_input(tape, pose, 1, self.config.resolution, "pose")?;
        check_input(tape, app, 3, self.config.resolution, "appearance")?;
        let x = tape.concat_channels(&[pose, app])?;
        let f = self.encode(tape, bound, x, mode)?;
        let fbar = bottleneck.forward(tape, bound, f)?;
        self.decode(tape, bound, fbar, mode)
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            params: self.params.cast(),
            kind: self.kind,
            config: self.config.clone(),
            encoder: self.encoder.clone(),
            bottleneck: self.bottleneck.clone(),
            decoder: self.decoder.clone(),
        }
    }
}
