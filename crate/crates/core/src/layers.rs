//! Conv / transposed-conv / batchnorm building blocks over a `ParamSet`.

use adar_tensor::{Activation, NormMode, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::params::{Bound, ParamId, ParamKind, ParamSet};
use crate::Result;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
    pub transpose: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
    pub transpose: bool,
}

impl ConvSpec {
    /// 4x4 kernel, stride 2, padding 1: halves (or, transposed, doubles) the resolution.
    pub fn down(c_in: usize, c_out: usize) -> Self {
        ConvSpec {
            c_in,
            c_out,
            kernel: 4,
            stride: 2,
            padding: 1,
            bias: false,
            transpose: false,
        }
    }

    pub fn up(c_in: usize, c_out: usize) -> Self {
        ConvSpec {
            transpose: true,
            ..Self::down(c_in, c_out)
        }
    }

    pub fn with_bias(self) -> Self {
        ConvSpec { bias: true, ..self }
    }
}

impl Conv {
    pub fn new<T: Scalar, R: Rng + ?Sized>(params: &mut ParamSet<T>, name: &str, spec: ConvSpec, rng: &mut R) -> Self {
        let k = spec.kernel;
        let shape = if spec.transpose {
            [spec.c_in, spec.c_out, k, k]
        } else {
            [spec.c_out, spec.c_in, k, k]
        };
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::randn(shape, 0.0, INIT_STD, rng),
            ParamKind::Trainable,
        );
        let bias = spec
            .bias
            .then(|| params.add(format!("{name}.bias"), Tensor::zeros([spec.c_out]), ParamKind::Trainable));
        Conv {
            weight,
            bias,
            stride: spec.stride,
            padding: spec.padding,
            transpose: spec.transpose,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let w = bound.var(self.weight);
        let b = self.bias.map(|b| bound.var(b));
        Ok(if self.transpose {
            tape.conv_transpose2d(x, w, b, self.stride, self.padding)?
        } else {
            tape.conv2d(x, w, b, self.stride, self.padding)?
        })
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running: ParamId,
}

impl BatchNorm {
    pub fn new<T: Scalar, R: Rng + ?Sized>(params: &mut ParamSet<T>, name: &str, channels: usize, rng: &mut R) -> Self {
        let gamma = params.add(
            format!("{name}.gamma"),
            Tensor::randn([channels], 1.0, INIT_STD, rng),
            ParamKind::Trainable,
        );
        let beta = params.add(format!("{name}.beta"), Tensor::zeros([channels]), ParamKind::Trainable);
        let mut stats = vec![T::zero(); 2 * channels];
        stats[channels..].iter_mut().for_each(|v| *v = T::one());
        let running = params.add(
            format!("{name}.running"),
            Tensor::new([2, channels], stats).expect("length matches"),
            ParamKind::Buffer,
        );
        BatchNorm { gamma, beta, running }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        params: &mut ParamSet<T>,
        x: Var,
        mode: NormMode,
    ) -> Result<Var> {
        let (g, b) = (bound.var(self.gamma), bound.var(self.beta));
        Ok(tape.batchnorm2d(x, g, b, params.get_mut(self.running), mode)?)
    }
}

/// Convolution, optional batchnorm, optional activation.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv,
    pub norm: Option<BatchNorm>,
    pub act: Option<Activation>,
}

impl ConvBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        spec: ConvSpec,
        norm: bool,
        act: Option<Activation>,
        rng: &mut R,
    ) -> Self {
        let conv = Conv::new(params, &format!("{name}.conv"), spec, rng);
        let norm = norm.then(|| BatchNorm::new(params, &format!("{name}.bn"), spec.c_out, rng));
        ConvBlock { conv, norm, act }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        params: &mut ParamSet<T>,
        x: Var,
        mode: NormMode,
    ) -> Result<Var> {
        let mut y = self.conv.forward(tape, bound, x)?;
        if let Some(bn) = &self.norm {
            y = bn.forward(tape, bound, params, y, mode)?;
        }
        if let Some(act) = self.act {
            y = tape.activation(y, act);
        }
        Ok(y)
    }
}
