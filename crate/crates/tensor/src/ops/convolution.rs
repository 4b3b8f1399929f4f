use crate::conv::{conv_backward_input, conv_backward_weight, conv_forward, ConvGeom, Workspace};
use crate::tape::{add_into, Fault, Op};
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

impl<T: Scalar> Tape<T> {
    fn check_bias(&self, op: &'static str, bias: Option<Var>, c_out: usize) -> Result<()> {
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: vec![c_out],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Strided, zero-padded cross-correlation.
    /// `input: [N, C_in, H, W]`, `weight: [C_out, C_in, kh, kw]`, `bias: [C_out]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        let [co, ci, kh, kw] = self.value(weight).dims4(OP)?;
        if ci != c {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: self.shape(input).to_vec(),
                rhs: self.shape(weight).to_vec(),
            });
        }
        self.check_bias(OP, bias, co)?;
        let geom = ConvGeom::new(OP, c, h, w, co, kh, kw, stride, padding)?;
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let mut out = vec![T::zero(); n * geom.out_len()];
        conv_forward(&geom, n, x, wt, &mut Workspace::new(), &mut out);
        if let Some(bias) = bias {
            for os in out.chunks_mut(geom.out_len()) {
                add_channel_bias(os, self.value(bias).data(), geom.positions());
            }
        }
        let value = Tensor::from_parts(vec![n, co, geom.out_h, geom.out_w], out);
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &inputs,
        ))
    }

    /// Fractionally strided convolution, the adjoint of [`Tape::conv2d`].
    /// `input: [N, C_in, H, W]`, `weight: [C_in, C_out, kh, kw]`, output
    /// spatial size `(H - 1) * stride - 2 * padding + kh`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        let [ci, co, kh, kw] = self.value(weight).dims4(OP)?;
        if ci != c {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: self.shape(input).to_vec(),
                rhs: self.shape(weight).to_vec(),
            });
        }
        self.check_bias(OP, bias, co)?;
        // `geom` describes the forward convolution from the output space back
        // to the input space.
        let geom = ConvGeom::transposed(OP, c, h, w, co, kh, kw, stride, padding)?;
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let mut out = vec![T::zero(); n * geom.in_len()];
        conv_backward_input(&geom, n, x, wt, &mut Workspace::new(), &mut out);
        if let Some(bias) = bias {
            for os in out.chunks_mut(geom.in_len()) {
                add_channel_bias(os, self.value(bias).data(), geom.h * geom.w);
            }
        }
        let value = Tensor::from_parts(vec![n, co, geom.h, geom.w], out);
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            },
            &inputs,
        ))
    }

    /// Convolution with a separate kernel set per sample.
    /// `input: [B, C_in, H, W]`, `kernels: [B, C_out, C_in, kh, kw]`.
    /// Sample `b` of the result is exactly `conv2d(input[b], kernels[b])`.
    pub fn batched_conv2d(&mut self, input: Var, kernels: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "batched_conv2d";
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        let (kb, co, ci, kh, kw) = match self.shape(kernels) {
            &[kb, co, ci, kh, kw] => (kb, co, ci, kh, kw),
            other => {
                return Err(TensorError::Rank {
                    op: OP,
                    expected: 5,
                    shape: other.to_vec(),
                })
            }
        };
        if kb != n || ci != c {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: self.shape(input).to_vec(),
                rhs: self.shape(kernels).to_vec(),
            });
        }
        let geom = ConvGeom::new(OP, c, h, w, co, kh, kw, stride, padding)?;
        let x = self.value(input).data();
        let k = self.value(kernels).data();
        let wl = geom.weight_len();
        let mut out = vec![T::zero(); n * geom.out_len()];
        let mut ws = Workspace::new();
        for b in 0..n {
            conv_forward(
                &geom,
                1,
                &x[b * geom.in_len()..(b + 1) * geom.in_len()],
                &k[b * wl..(b + 1) * wl],
                &mut ws,
                &mut out[b * geom.out_len()..(b + 1) * geom.out_len()],
            );
        }
        let value = Tensor::from_parts(vec![n, co, geom.out_h, geom.out_w], out);
        Ok(self.push(value, Op::BatchedConv2d { input, kernels, geom }, &[input, kernels]))
    }

    pub(crate) fn conv2d_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: &ConvGeom,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let n = self.shape(input)[0];
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let gd = g.data();
        let mut ws = Workspace::new();
        if let Some(dx) = self.slot(grads, input) {
            conv_backward_input(geom, n, gd, wt, &mut ws, dx);
            if self.fault == Some(Fault::Conv2dBackward) {
                dx.iter_mut().for_each(|v| *v *= T::lit(1.01));
            }
        }
        if let Some(dw) = self.slot(grads, weight) {
            conv_backward_weight(geom, n, x, gd, &mut ws, T::one(), dw);
        }
        if let Some(bias) = bias {
            if let Some(db) = self.slot(grads, bias) {
                channel_sums_into(gd, n, geom.c_out, geom.positions(), db);
            }
        }
    }

    pub(crate) fn conv_transpose2d_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: &ConvGeom,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let n = self.shape(input)[0];
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let gd = g.data();
        let mut ws = Workspace::new();
        if let Some(dx) = self.slot(grads, input) {
            let mut tmp = vec![T::zero(); n * geom.out_len()];
            conv_forward(geom, n, gd, wt, &mut ws, &mut tmp);
            add_into(dx, &tmp);
        }
        if let Some(dw) = self.slot(grads, weight) {
            conv_backward_weight(geom, n, gd, x, &mut ws, T::one(), dw);
        }
        if let Some(bias) = bias {
            if let Some(db) = self.slot(grads, bias) {
                channel_sums_into(gd, n, geom.c_in, geom.h * geom.w, db);
            }
        }
    }

    pub(crate) fn batched_conv2d_backward(
        &self,
        input: Var,
        kernels: Var,
        geom: &ConvGeom,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let n = self.shape(input)[0];
        let x = self.value(input).data();
        let k = self.value(kernels).data();
        let wl = geom.weight_len();
        let gd = g.data();
        let mut ws = Workspace::new();
        if let Some(dx) = self.slot(grads, input) {
            for b in 0..n {
                conv_backward_input(
                    geom,
                    1,
                    &gd[b * geom.out_len()..(b + 1) * geom.out_len()],
                    &k[b * wl..(b + 1) * wl],
                    &mut ws,
                    &mut dx[b * geom.in_len()..(b + 1) * geom.in_len()],
                );
            }
        }
        if let Some(dk) = self.slot(grads, kernels) {
            for b in 0..n {
                conv_backward_weight(
                    geom,
                    1,
                    &x[b * geom.in_len()..(b + 1) * geom.in_len()],
                    &gd[b * geom.out_len()..(b + 1) * geom.out_len()],
                    &mut ws,
                    T::one(),
                    &mut dk[b * wl..(b + 1) * wl],
                );
            }
        }
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        out[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
}

fn channel_sums_into<T: Scalar>(g: &[T], n: usize, c: usize, plane: usize, db: &mut [T]) {
    for b in 0..n {
        for ch in 0..c {
            let o = (b * c + ch) * plane;
            db[ch] += g[o..o + plane].iter().copied().sum::<T>();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_preserves_input() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones([1, 1, 4, 4]));
        let w = tape.constant(Tensor::ones([1, 1, 1, 1]));
        let b = tape.constant(Tensor::zeros([1]));
        let y = tape.conv2d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(tape.value(y), &Tensor::ones([1, 1, 4, 4]));
    }

    #[test]
    fn conv_shapes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([1, 1, 128, 128]));
        let w = tape.constant(Tensor::zeros([64, 1, 4, 4]));
        let y = tape.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 64, 64, 64]);

        let x = tape.constant(Tensor::zeros([1, 512, 8, 8]));
        let w = tape.constant(Tensor::zeros([512, 256, 4, 4]));
        let y = tape.conv_transpose2d(x, w, None, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 256, 16, 16]);
    }

    #[test]
    fn transpose_of_scalar_is_product() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full([1, 1, 1, 1], 3.0));
        let w = tape.constant(Tensor::full([1, 1, 1, 1], -2.5));
        let y = tape.conv_transpose2d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[-7.5]);
    }

    #[test]
    fn mismatched_channels_name_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([1, 3, 8, 8]));
        let w = tape.constant(Tensor::zeros([4, 2, 3, 3]));
        let err = tape.conv2d(x, w, None, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3, 8, 8]") && msg.contains("[4, 2, 3, 3]"), "{msg}");
        let w = tape.constant(Tensor::zeros([4, 3, 3, 3]));
        assert!(matches!(tape.conv2d(x, w, None, 0, 1), Err(TensorError::ZeroStride { .. })));
    }

    #[test]
    fn batched_conv_rejects_batch_mismatch() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([2, 3, 4, 4]));
        let k = tape.constant(Tensor::zeros([3, 3, 3, 1, 1]));
        assert!(matches!(tape.batched_conv2d(x, k, 1, 0), Err(TensorError::ShapeMismatch { .. })));
    }
}
