//! Adversarial, L1, content and style losses. All reductions are means.

use adar_tensor::{Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::features::FeatureExtractor;
use crate::{Error, Result};

/// Multipliers of the transfer loss `alpha * L1 + beta * L_C + gamma * L_S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub const FASHION: LossWeights = LossWeights {
        alpha: 100.0,
        beta: 1e-4,
        gamma: 1e-14,
    };
    pub const VOLLEYBALL: LossWeights = LossWeights {
        alpha: 100.0,
        beta: 0.1,
        gamma: 1e-12,
    };

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = LossWeights { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// `G[b] = F[b] F[b]^T / (C h w)`, `[B, C, h, w] -> [B, C, C]`.
pub fn gram_matrix<T: Scalar>(tape: &mut Tape<T>, feat: Var) -> Result<Var> {
    Ok(tape.gram(feat)?)
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d = tape.abs(d);
    Ok(tape.mean(d))
}

/// Mean squared difference.
pub fn mse_loss<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d = tape.square(d);
    Ok(tape.mean(d))
}

fn sum_terms<T: Scalar>(tape: &mut Tape<T>, terms: Vec<Var>) -> Result<Var> {
    let mut it = terms.into_iter();
    let mut acc = match it.next() {
        Some(v) => v,
        None => tape.constant(Tensor::scalar(T::zero())),
    };
    for t in it {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

fn check_pair<T: Scalar>(tape: &Tape<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Invalid(format!(
            "{what}: shapes {:?} and {:?} differ",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

fn content_from<T: Scalar>(tape: &mut Tape<T>, gen: &[Var], goal: &[Var]) -> Result<Var> {
    let terms = gen.iter().zip(goal).map(|(&g, &t)| mse_loss(tape, g, t)).collect::<Result<_>>()?;
    sum_terms(tape, terms)
}

fn style_from<T: Scalar>(tape: &mut Tape<T>, gen: &[Var], app: &[Var]) -> Result<Var> {
    let mut terms = Vec::with_capacity(gen.len());
    for (&g, &a) in gen.iter().zip(app) {
        let (gg, ga) = (tape.gram(g)?, tape.gram(a)?);
        terms.push(mse_loss(tape, gg, ga)?);
    }
    sum_terms(tape, terms)
}

/// Sum over content taps of the mean squared feature difference.
pub fn content_loss<T: Scalar>(tape: &mut Tape<T>, gen: Var, goal: Var, fx: &FeatureExtractor<T>) -> Result<Var> {
    check_pair(tape, gen, goal, "content_loss")?;
    let taps = fx.content_taps().to_vec();
    let fg = fx.features(tape, gen, &taps)?;
    let ft = fx.features(tape, goal, &taps)?;
    content_from(tape, &fg, &ft)
}

/// Sum over style taps of the mean squared Gram difference against the
/// appearance image.
pub fn style_loss<T: Scalar>(tape: &mut Tape<T>, gen: Var, app: Var, fx: &FeatureExtractor<T>) -> Result<Var> {
    check_pair(tape, gen, app, "style_loss")?;
    let taps = fx.style_taps().to_vec();
    let fg = fx.features(tape, gen, &taps)?;
    let fa = fx.features(tape, app, &taps)?;
    style_from(tape, &fg, &fa)
}

/// Weighted total plus the unweighted terms.
#[derive(Debug, Clone, Copy)]
pub struct TransferLoss {
    pub total: Var,
    pub l1: Var,
    pub content: Var,
    pub style: Var,
}

/// `alpha * L1(gen, goal) + beta * L_C(gen, goal) + gamma * L_S(gen, app)`.
///
/// A term whose weight is zero is still evaluated for logging, but on a
/// detached copy of `gen` so it adds no backward work.
pub fn transfer_loss<T: Scalar>(
    tape: &mut Tape<T>,
    gen: Var,
    goal: Var,
    app: Var,
    w: LossWeights,
    fx: &FeatureExtractor<T>,
) -> Result<TransferLoss> {
    w.validate()?;
    check_pair(tape, gen, goal, "transfer_loss")?;
    check_pair(tape, gen, app, "transfer_loss")?;
    let l1 = l1_loss(tape, gen, goal)?;
    let detached = tape.detach(gen);
    let gen_for = |weight: f64| if weight == 0.0 { detached } else { gen };

    let (content_taps, style_taps) = (fx.content_taps().to_vec(), fx.style_taps().to_vec());
    let mut taps = content_taps.clone();
    taps.extend(style_taps.iter().filter(|t| !content_taps.contains(t)).cloned());
    let index = |t: &String| taps.iter().position(|x| x == t).expect("tap collected above");

    let pick = |feats: &[Var], wanted: &[String]| wanted.iter().map(|t| feats[index(t)]).collect::<Vec<_>>();
    let goal_feats = fx.features(tape, goal, &content_taps)?;
    let app_feats = fx.features(tape, app, &style_taps)?;
    let (gc, gs) = (gen_for(w.beta), gen_for(w.gamma));
    let (content, style) = if gc == gs {
        let f = fx.features(tape, gc, &taps)?;
        let c = content_from(tape, &pick(&f, &content_taps), &goal_feats)?;
        let s = style_from(tape, &pick(&f, &style_taps), &app_feats)?;
        (c, s)
    } else {
        let fc = fx.features(tape, gc, &content_taps)?;
        let fs = fx.features(tape, gs, &style_taps)?;
        (content_from(tape, &fc, &goal_feats)?, style_from(tape, &fs, &app_feats)?)
    };

    let a = tape.scale(l1, T::lit(w.alpha));
    let b = tape.scale(content, T::lit(w.beta));
    let c = tape.scale(style, T::lit(w.gamma));
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok(TransferLoss { total, l1, content, style })
}

/// Discriminator loss `-mean log D(real) - mean log(1 - D(fake))` from
/// pre-sigmoid logits, via `-log sigmoid(x) = softplus(-x)`.
pub fn discriminator_loss<T: Scalar>(tape: &mut Tape<T>, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let neg = tape.scale(real_logits, -T::one());
    let r = tape.softplus(neg);
    let r = tape.mean(r);
    let f = tape.softplus(fake_logits);
    let f = tape.mean(f);
    Ok(tape.add(r, f)?)
}

/// Non-saturating generator loss `-mean log D(fake)` from logits.
pub fn generator_adversarial_loss<T: Scalar>(tape: &mut Tape<T>, fake_logits: Var) -> Var {
    let neg = tape.scale(fake_logits, -T::one());
    let l = tape.softplus(neg);
    tape.mean(l)
}

const SCORE_FLOOR: f64 = 1e-12;

/// `(loss_D, loss_G)` evaluated on sigmoid scores in (0, 1), with every
/// log argument clamped at 1e-12.
pub fn cgan_losses(d_real: &[f64], d_fake: &[f64]) -> (f64, f64) {
    let nlog = |p: f64| -p.max(SCORE_FLOOR).ln();
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&p| f(p)).sum::<f64>() / v.len().max(1) as f64;
    let loss_d = mean(d_real, &nlog) + mean(d_fake, &|p| nlog(1.0 - p));
    let loss_g = mean(d_fake, &nlog);
    (loss_d, loss_g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        assert_eq!(LossWeights::FASHION.gamma, 1e-14);
        assert_eq!(LossWeights::VOLLEYBALL.beta, 0.1);
        assert!(LossWeights::new(1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn cgan_at_half() {
        let (d, g) = cgan_losses(&[0.5; 4], &[0.5; 4]);
        assert!((d - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g - std::f64::consts::LN_2).abs() < 1e-15);
        let (d, _) = cgan_losses(&[1.0 - 1e-15], &[1e-15]);
        assert!(d < 1e-12);
        let (_, g) = cgan_losses(&[0.5], &[0.0]);
        assert!((g - 1e-12f64.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn logit_losses_match_score_losses() {
        let logits = [-2.0, 0.3, 1.7];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let scores: Vec<f64> = logits.iter().map(|&x| sig(x)).collect();
        let fake: Vec<f64> = logits.iter().map(|&x| sig(-x)).collect();
        let (d, g) = cgan_losses(&scores, &fake);
        let mut tape = Tape::<f64>::new();
        let r = tape.constant(Tensor::new([3], logits.to_vec()).unwrap());
        let f = tape.constant(Tensor::new([3], logits.iter().map(|x| -x).collect()).unwrap());
        let ld = discriminator_loss(&mut tape, r, f).unwrap();
        let lg = generator_adversarial_loss(&mut tape, f);
        assert!((tape.value(ld).item() - d).abs() < 1e-12);
        assert!((tape.value(lg).item() - g).abs() < 1e-12);
    }
}
