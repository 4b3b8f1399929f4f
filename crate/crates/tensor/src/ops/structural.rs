use crate::tape::Op;
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

impl<T: Scalar> Tape<T> {
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Tensor::scalar(v.sum() / T::lit(v.numel() as f64));
        self.push(value, Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Invalid(format!("{OP}: no inputs")))?;
        let [n, _, h, w] = self.value(first).dims4(OP)?;
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4(OP)?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for (&p, &c) in parts.iter().zip(&channels) {
                out.extend_from_slice(&self.value(p).data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let value = Tensor::from_parts(vec![n, total, h, w], out);
        Ok(self.push(value, Op::ConcatChannels(parts.to_vec()), parts))
    }

    /// Mean over the spatial axes: `[N, C, H, W] -> [N, C, 1, 1]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(a).dims4("global_avg_pool")?;
        let hw = h * w;
        let inv = T::one() / T::lit(hw as f64);
        let x = self.value(a).data();
        let out = (0..n * c)
            .map(|k| x[k * hw..(k + 1) * hw].iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::from_parts(vec![n, c, 1, 1], out);
        Ok(self.push(value, Op::GlobalAvgPool(a), &[a]))
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    /// Ties go to the first element in row-major order.
    pub fn max_pool2(&mut self, a: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(a).dims4("max_pool2")?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(TensorError::Invalid(format!("max_pool2: input {h}x{w} too small")));
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let k = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[k] > x[best] {
                            best = k;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, oh, ow], out);
        Ok(self.push(value, Op::MaxPool2 { input: a, argmax }, &[a]))
    }

    /// Per-sample Gram matrix `G[b] = F[b] F[b]^T / (C * H * W)` with `F[b]`
    /// viewed as `C x (H * W)`. Output `[N, C, C]`.
    pub fn gram(&mut self, a: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(a).dims4("gram")?;
        let hw = h * w;
        if hw == 0 {
            return Err(TensorError::Invalid("gram: empty spatial extent".into()));
        }
        let scale = T::one() / T::lit((c * hw) as f64);
        let x = self.value(a).data();
        let mut out = vec![T::zero(); n * c * c];
        for b in 0..n {
            let f = &x[b * c * hw..(b + 1) * c * hw];
            T::gemm(c, hw, c, scale, f, false, f, true, T::zero(), &mut out[b * c * c..(b + 1) * c * c]);
            // gemm may round (i, j) and (j, i) differently; mirror the upper triangle.
            let g = &mut out[b * c * c..(b + 1) * c * c];
            for i in 0..c {
                for j in 0..i {
                    g[i * c + j] = g[j * c + i];
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, c], out);
        Ok(self.push(value, Op::Gram { input: a, scale }, &[a]))
    }

    pub(crate) fn concat_backward(&self, parts: &[Var], g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let [n, total, h, w] = g.dims4("concat_channels").expect("rank checked at record time");
        let hw = h * w;
        let mut offset = 0;
        for &p in parts {
            let c = self.shape(p)[1];
            if let Some(d) = self.slot(grads, p) {
                for b in 0..n {
                    let src = &g.data()[(b * total + offset) * hw..(b * total + offset + c) * hw];
                    for (d, &s) in d[b * c * hw..(b + 1) * c * hw].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            offset += c;
        }
    }

    pub(crate) fn global_avg_pool_backward(&self, a: Var, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let [_, _, h, w] = self.value(a).dims4("global_avg_pool").expect("rank checked at record time");
        let hw = h * w;
        let inv = T::one() / T::lit(hw as f64);
        if let Some(d) = self.slot(grads, a) {
            for (k, &gy) in g.data().iter().enumerate() {
                d[k * hw..(k + 1) * hw].iter_mut().for_each(|v| *v += gy * inv);
            }
        }
    }

    pub(crate) fn gram_backward(&self, a: Var, scale: T, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let [n, c, h, w] = self.value(a).dims4("gram").expect("rank checked at record time");
        let hw = h * w;
        let x = self.value(a).data();
        let Some(d) = self.slot(grads, a) else { return };
        let mut sym = vec![T::zero(); c * c];
        for b in 0..n {
            let gb = &g.data()[b * c * c..(b + 1) * c * c];
            for i in 0..c {
                for j in 0..c {
                    sym[i * c + j] = gb[i * c + j] + gb[j * c + i];
                }
            }
            T::gemm(
                c,
                c,
                hw,
                scale,
                &sym,
                false,
                &x[b * c * hw..(b + 1) * c * hw],
                false,
                T::one(),
                &mut d[b * c * hw..(b + 1) * c * hw],
            );
        }
    }
}
