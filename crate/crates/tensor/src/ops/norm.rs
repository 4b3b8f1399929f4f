use crate::tape::Op;
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// How a batch-norm layer treats its statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics and fold them into the running ones.
    Train,
    /// Normalize with batch statistics, leave the running ones untouched.
    /// Used when a network is evaluated inside another network's update.
    TrainFrozen,
    /// Normalize with the running statistics.
    Eval,
}

impl<T: Scalar> Tape<T> {
    /// Per-channel batch normalization over `[N, C, H, W]`.
    ///
    /// `running` is a `[2, C]` tensor: row 0 holds the running mean, row 1
    /// the running (unbiased) variance.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &mut Tensor<T>,
        mode: NormMode,
    ) -> Result<Var> {
        const OP: &str = "batchnorm2d";
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        for v in [gamma, beta] {
            if self.shape(v) != [c] {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    lhs: self.shape(input).to_vec(),
                    rhs: self.shape(v).to_vec(),
                });
            }
        }
        if running.shape() != [2, c] {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: vec![2, c],
                rhs: running.shape().to_vec(),
            });
        }
        let hw = h * w;
        let count = n * hw;
        let train = mode != NormMode::Eval;
        if count == 0 || (train && count < 2) {
            return Err(TensorError::SingleElementChannel);
        }
        let eps = T::lit(BN_EPS);
        let x = self.value(input).data();
        let (mean, var) = if train {
            let m = T::lit(count as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    let o = (b * c + ch) * hw;
                    s += x[o..o + hw].iter().copied().sum::<T>();
                }
                let mu = s / m;
                let mut ss = T::zero();
                for b in 0..n {
                    let o = (b * c + ch) * hw;
                    ss += x[o..o + hw].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
                mean[ch] = mu;
                var[ch] = ss / m;
            }
            (mean, var)
        } else {
            let r = running.data();
            (r[..c].to_vec(), r[c..].to_vec())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let o = (b * c + ch) * hw;
                for k in o..o + hw {
                    xhat[k] = (x[k] - mean[ch]) * inv_std[ch];
                    out[k] = gv[ch] * xhat[k] + bv[ch];
                }
            }
        }
        if mode == NormMode::Train {
            let mom = T::lit(BN_MOMENTUM);
            let unbias = T::lit(count as f64 / (count - 1) as f64);
            let r = running.data_mut();
            for ch in 0..c {
                r[ch] = (T::one() - mom) * r[ch] + mom * mean[ch];
                r[c + ch] = (T::one() - mom) * r[c + ch] + mom * var[ch] * unbias;
            }
        }
        let value = Tensor::from_parts(vec![n, c, h, w], out);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[input, gamma, beta],
        ))
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn batchnorm_backward(
        &self,
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: &[T],
        inv_std: &[T],
        train: bool,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let [n, c, h, w] = self.value(input).dims4("batchnorm2d").expect("rank checked at record time");
        let hw = h * w;
        let gd = g.data();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let o = (b * c + ch) * hw;
                for k in o..o + hw {
                    sum_g[ch] += gd[k];
                    sum_gx[ch] += gd[k] * xhat[k];
                }
            }
        }
        if let Some(dg) = self.slot(grads, gamma) {
            for ch in 0..c {
                dg[ch] += sum_gx[ch];
            }
        }
        if let Some(db) = self.slot(grads, beta) {
            for ch in 0..c {
                db[ch] += sum_g[ch];
            }
        }
        let gv = self.value(gamma).data().to_vec();
        if let Some(dx) = self.slot(grads, input) {
            let m = T::lit((n * hw) as f64);
            for b in 0..n {
                for ch in 0..c {
                    let o = (b * c + ch) * hw;
                    let k0 = gv[ch] * inv_std[ch];
                    for k in o..o + hw {
                        dx[k] += if train {
                            k0 * (gd[k] - sum_g[ch] / m - xhat[k] * sum_gx[ch] / m)
                        } else {
                            k0 * gd[k]
                        };
                    }
                }
            }
        }
    }
}
