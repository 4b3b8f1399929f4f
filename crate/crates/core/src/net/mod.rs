//! Generator, appearance FCN, discriminator and the concat-input baseline.

mod discriminator;
mod fcn;
mod generator;

pub use discriminator::Discriminator;
pub use fcn::{adaptive_conv, AppearanceFcn};
pub use generator::Generator;

use adar_tensor::{NormMode, Scalar, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{Bound, ParamSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Pose-only encoder with FCN-predicted bottleneck filters.
    Adaptive,
    /// Posemap and appearance concatenated at the input; one learned
    /// bottleneck convolution, no FCN.
    Concat,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(ModelKind::Adaptive),
            "concat" => Ok(ModelKind::Concat),
            _ => Err(Error::Config(format!("unknown model kind `{s}` (adaptive|concat)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub resolution: usize,
    /// Output channels of each stride-2 encoder block; the last entry is the
    /// bottleneck width `C_in = C_out`.
    pub encoder_channels: Vec<usize>,
    /// Spatial size `k` of the adaptive filters.
    pub kernel_size: usize,
    /// Output channels of each stride-2 FCN block.
    pub fcn_channels: Vec<usize>,
    /// Output channels of each stride-2 discriminator block.
    pub disc_channels: Vec<usize>,
}

impl NetConfig {
    /// Default geometry: four encoder blocks at 64x64, one more at 128x128.
    pub fn for_resolution(resolution: usize) -> NetConfig {
        let encoder_channels = if resolution >= 128 {
            vec![64, 128, 256, 256, 512]
        } else {
            vec![64, 128, 256, 256]
        };
        NetConfig {
            resolution,
            encoder_channels,
            kernel_size: 3,
            fcn_channels: vec![32, 64, 128, 128, 32],
            disc_channels: vec![64, 128, 256],
        }
    }

    /// Narrow geometry for single-core experiments and tests.
    pub fn compact(resolution: usize) -> NetConfig {
        NetConfig {
            resolution,
            encoder_channels: vec![32, 64, 64, 64],
            kernel_size: 3,
            fcn_channels: vec![16, 32, 32, 32, 32],
            disc_channels: vec![16, 32, 64],
        }
    }

    pub fn bottleneck_channels(&self) -> usize {
        *self.encoder_channels.last().expect("validated non-empty")
    }

    pub fn bottleneck_size(&self) -> usize {
        self.resolution >> self.encoder_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.encoder_channels.is_empty() || self.fcn_channels.is_empty() || self.disc_channels.is_empty() {
            return bad("channel lists must be non-empty".into());
        }
        if [&self.encoder_channels, &self.fcn_channels, &self.disc_channels]
            .iter()
            .any(|c| c.contains(&0))
        {
            return bad("channel counts must be positive".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size {} must be odd", self.kernel_size));
        }
        let divisible = |blocks: usize| blocks < usize::BITS as usize && self.resolution % (1 << blocks) == 0;
        if self.resolution == 0 || !divisible(self.encoder_channels.len()) {
            return bad(format!(
                "resolution {} is not divisible by 2^{} encoder blocks",
                self.resolution,
                self.encoder_channels.len()
            ));
        }
        if self.resolution >> self.fcn_channels.len() == 0 {
            return bad(format!("resolution {} too small for {} FCN blocks", self.resolution, self.fcn_channels.len()));
        }
        if self.resolution >> self.disc_channels.len() < 3 {
            return bad(format!(
                "resolution {} too small for {} discriminator blocks",
                self.resolution,
                self.disc_channels.len()
            ));
        }
        Ok(())
    }
}

/// The image generator under training: Ada-R (generator + FCN) or the
/// concat baseline (generator only).
#[derive(Debug, Clone)]
pub struct PoseRenderer<T> {
    pub generator: Generator<T>,
    pub fcn: Option<AppearanceFcn<T>>,
}

#[derive(Debug, Clone)]
pub struct RendererBound {
    pub generator: Bound,
    pub fcn: Option<Bound>,
}

impl<T: Scalar> PoseRenderer<T> {
    pub fn new<R: Rng + ?Sized>(config: &NetConfig, kind: ModelKind, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config, kind, rng);
        let fcn = match kind {
            ModelKind::Adaptive => Some(AppearanceFcn::new(config, rng)),
            ModelKind::Concat => None,
        };
        Ok(PoseRenderer { generator, fcn })
    }

    pub fn kind(&self) -> ModelKind {
        self.generator.kind()
    }

    pub fn config(&self) -> &NetConfig {
        self.generator.config()
    }

    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> RendererBound {
        RendererBound {
            generator: self.generator.params.bind(tape, requires_grad),
            fcn: self.fcn.as_ref().map(|f| f.params.bind(tape, requires_grad)),
        }
    }

    /// `pose: [B, 1, H, W]`, `app: [B, 3, H, W]` -> `[B, 3, H, W]` in (-1, 1).
    pub fn forward(&mut self, tape: &mut Tape<T>, bound: &RendererBound, pose: Var, app: Var, mode: NormMode) -> Result<Var> {
        match (&mut self.fcn, &bound.fcn) {
            (Some(fcn), Some(fb)) => {
                let f = self.generator.encode(tape, &bound.generator, pose, mode)?;
                let k = fcn.filters(tape, fb, app, mode)?;
                let fbar = adaptive_conv(tape, f, k)?;
                self.generator.decode(tape, &bound.generator, fbar, mode)
            }
            _ => self.generator.concat_forward(tape, &bound.generator, pose, app, mode),
        }
    }

    pub fn param_sets(&self) -> Vec<&ParamSet<T>> {
        let mut v = vec![&self.generator.params];
        v.extend(self.fcn.as_ref().map(|f| &f.params));
        v
    }

    pub fn param_sets_mut(&mut self) -> Vec<&mut ParamSet<T>> {
        let mut v = vec![&mut self.generator.params];
        v.extend(self.fcn.as_mut().map(|f| &mut f.params));
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.param_sets().iter().map(|p| p.parameter_count()).sum()
    }

    /// Eval-mode inference without gradients.
    pub fn render(&mut self, pose: &adar_tensor::Tensor<T>, app: &adar_tensor::Tensor<T>) -> Result<adar_tensor::Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let (p, a) = (tape.constant(pose.clone()), tape.constant(app.clone()));
        let out = self.forward(&mut tape, &bound, p, a, NormMode::Eval)?;
        Ok(tape.value(out).clone())
    }

    pub fn cast<U: Scalar>(&self) -> PoseRenderer<U> {
        PoseRenderer {
            generator: self.generator.cast(),
            fcn: self.fcn.as_ref().map(|f| f.cast()),
        }
    }
}

pub(crate) fn check_input<T: Scalar>(tape: &Tape<T>, x: Var, channels: usize, resolution: usize, what: &str) -> Result<usize> {
    match *tape.shape(x) {
        [b, c, h, w] if c == channels && h == resolution && w == resolution => Ok(b),
        ref other => Err(Error::Resolution(format!(
            "{what}: expected [B, {channels}, {resolution}, {resolution}], got {other:?}"
        ))),
    }
}
