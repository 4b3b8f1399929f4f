use crate::tape::Op;
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// Subgradient at zero is taken as zero.
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu(slope) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::lit(slope)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => super::sigmoid(x),
        }
    }
}

impl<T: Scalar> Tape<T> {
    fn unary(&mut self, input: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(input).map(f);
        self.push(value, op, &[input])
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.check_same_shape(bv, name)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        self.unary(input, Op::Activation { input, kind }, |x| kind.apply(x))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        self.activation(input, Activation::LeakyRelu(slope))
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        self.unary(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), super::softplus)
    }

    /// `y[:, c] = x[:, c] * scale[c] + shift[c]` with constant coefficients.
    pub fn channel_affine(&mut self, input: Var, scale: &[T], shift: &[T]) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("channel_affine")?;
        if scale.len() != c || shift.len() != c {
            return Err(TensorError::Invalid(format!(
                "channel_affine: {} scale / {} shift coefficients for {c} channels",
                scale.len(),
                shift.len()
            )));
        }
        let hw = h * w;
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let o = (b * c + ch) * hw;
                for k in o..o + hw {
                    out[k] = x[k] * scale[ch] + shift[ch];
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, h, w], out);
        Ok(self.push(
            value,
            Op::ChannelAffine {
                input,
                scale: scale.to_vec(),
            },
            &[input],
        ))
    }

    pub(crate) fn activation_backward(
        &self,
        input: Var,
        kind: Activation,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let x = self.value(input).data();
        let Some(dx) = self.slot(grads, input) else { return };
        let gd = g.data();
        match kind {
            Activation::Relu => {
                for k in 0..dx.len() {
                    if x[k] > T::zero() {
                        dx[k] += gd[k];
                    }
                }
            }
            Activation::LeakyRelu(slope) => {
                let s = T::lit(slope);
                for k in 0..dx.len() {
                    dx[k] += if x[k] > T::zero() { gd[k] } else { gd[k] * s };
                }
            }
            Activation::Tanh => {
                for (k, &y) in out.data().iter().enumerate() {
                    dx[k] += gd[k] * (T::one() - y * y);
                }
            }
            Activation::Sigmoid => {
                for (k, &y) in out.data().iter().enumerate() {
                    dx[k] += gd[k] * y * (T::one() - y);
                }
            }
        }
    }
}
