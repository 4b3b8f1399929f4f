//! Finite-difference audit of every differentiable operation, each loss, and
//! the composed training objectives, all in 64-bit.

use std::time::Instant;

use adar_tensor::{finite_difference_check_ladder_with_fault, finite_difference_check_with_fault, Fault, NormMode, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::FeatureExtractor;
use crate::losses::{
    content_loss, discriminator_loss, generator_adversarial_loss, gram_matrix, l1_loss, mse_loss, style_loss,
    transfer_loss, LossWeights,
};
use crate::net::{adaptive_conv, Discriminator, ModelKind, NetConfig, PoseRenderer};
use crate::params::ParamSet;
use crate::{Error, Result};

/// Bound for single operations and losses.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Bound for objectives composed through whole networks.
pub const COMPOSED_TOLERANCE: f64 = 1e-3;
const STEP: f64 = 1e-6;
/// Step ladder for whole-network parameter checks; see
/// [`adar_tensor::finite_difference_check_ladder`].
const LADDER: [f64; 3] = [1e-5, 1e-6, 1e-7];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Micro,
    Small,
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Scale::Micro),
            "small" => Ok(Scale::Small),
            _ => Err(Error::Config(format!("unknown scale `{s}` (micro|small)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    /// `op/argument`, e.g. `conv2d/weight`.
    pub name: String,
    pub max_relative_error: f64,
    pub tolerance: f64,
    /// For parameter-set checks, the entry attaining the maximum.
    pub worst: Option<String>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub analytic: f64,
    pub numeric: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<40} max rel err {:.3e} (tol {:.0e}; analytic {:.6e}, numeric {:.6e}){}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_relative_error,
            self.tolerance,
            self.analytic,
            self.numeric,
            self.worst.as_ref().map(|w| format!(" worst: {w}")).unwrap_or_default()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub outcomes: Vec<CheckOutcome>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(CheckOutcome::passed)
    }

    pub fn failures(&self) -> Vec<&CheckOutcome> {
        self.outcomes.iter().filter(|o| !o.passed()).collect()
    }
}

type Objective<'a> = Box<dyn Fn(&mut Tape<f64>, Var) -> adar_tensor::Result<Var> + 'a>;

struct Runner {
    fault: Option<Fault>,
    outcomes: Vec<CheckOutcome>,
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Keeps samples out of `(-0.05, 0.05)` so kinks at zero are not straddled.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    randn(shape, seed).map(|v| if v.abs() < 0.05 { v + 0.05 * v.signum() } else { v })
}

/// `sum(y * r)` for a fixed random `r`, so every output coordinate matters.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> adar_tensor::Result<Var> {
    let r = tape.constant(randn(tape.shape(y), seed));
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn lift(e: Error) -> adar_tensor::TensorError {
    match e {
        Error::Tensor(t) => t,
        other => adar_tensor::TensorError::Invalid(other.to_string()),
    }
}

impl Runner {
    fn check(&mut self, name: &str, tolerance: f64, x: &Tensor<f64>, f: Objective<'_>) -> Result<()> {
        let r = finite_difference_check_with_fault(f, x, STEP, self.fault)?;
        self.outcomes.push(CheckOutcome {
            name: name.to_string(),
            max_relative_error: r.max_relative_error,
            tolerance,
            worst: None,
            analytic: r.analytic,
            numeric: r.numeric,
        });
        Ok(())
    }

    /// Checks every trainable entry of `params`; `f` receives the tape, the
    /// id of the entry under test and the leaf standing in for it.
    fn check_params(
        &mut self,
        name: &str,
        params: &ParamSet<f64>,
        f: &dyn Fn(&mut Tape<f64>, crate::params::ParamId, Var) -> Result<Var>,
    ) -> Result<()> {
        let mut worst: Option<(adar_tensor::GradCheck, String)> = None;
        for e in params.trainable() {
            let id = params.id_of(&e.name).expect("entry exists");
            let g = |t: &mut Tape<f64>, v: Var| f(t, id, v).map_err(lift);
            let r = finite_difference_check_ladder_with_fault(g, &e.value, &LADDER, self.fault)?;
            if worst.as_ref().map_or(true, |(w, _)| r.max_relative_error >= w.max_relative_error) {
                worst = Some((r, e.name.clone()));
            }
        }
        let (r, entry) = worst.ok_or_else(|| Error::Invalid(format!("{name}: no trainable parameters")))?;
        self.outcomes.push(CheckOutcome {
            name: name.to_string(),
            max_relative_error: r.max_relative_error,
            tolerance: COMPOSED_TOLERANCE,
            worst: Some(format!("{entry}[{}]", r.worst_index)),
            analytic: r.analytic,
            numeric: r.numeric,
        });
        Ok(())
    }
}

struct Dims {
    n: usize,
    c: usize,
    hw: usize,
    image: usize,
    net: NetConfig,
    features: Vec<usize>,
}

fn dims(scale: Scale) -> Dims {
    match scale {
        Scale::Micro => Dims {
            n: 2,
            c: 2,
            hw: 5,
            image: 8,
            net: NetConfig {
                resolution: 16,
                encoder_channels: vec![3, 4],
                kernel_size: 3,
                fcn_channels: vec![3, 3],
                disc_channels: vec![3, 4],
            },
            features: vec![3, 4, 4],
        },
        Scale::Small => Dims {
            n: 3,
            c: 3,
            hw: 7,
            image: 12,
            net: NetConfig {
                resolution: 16,
                encoder_channels: vec![4, 6],
                kernel_size: 3,
                fcn_channels: vec![4, 4],
                disc_channels: vec![4, 6],
            },
            features: vec![4, 6, 6, 8],
        },
    }
}

/// Runs the whole suite. With `fault` set, the named adjoint is corrupted on
/// every analytic pass and the affected checks are expected to fail.
pub fn run_suite(scale: Scale, fault: Option<Fault>) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut r = Runner {
        fault,
        outcomes: Vec::new(),
    };
    let d = dims(scale);
    let (n, c, hw) = (d.n, d.c, d.hw);
    let x = randn(&[n, c, hw, hw], 1);
    let xz = away_from_zero(&[n, c, hw, hw], 2);
    let tol = OP_TOLERANCE;

    // Convolutions.
    let w = randn(&[c + 1, c, 3, 3], 3);
    let b = randn(&[c + 1], 4);
    let (wc, bc) = (w.clone(), b.clone());
    r.check("conv2d/input", tol, &x, Box::new(move |t, v| {
        let (w, b) = (t.constant(wc.clone()), t.constant(bc.clone()));
        let y = t.conv2d(v, w, Some(b), 2, 1)?;
        project(t, y, 10)
    }))?;
    let (xc, bc) = (x.clone(), b.clone());
    r.check("conv2d/weight", tol, &w, Box::new(move |t, v| {
        let (x, b) = (t.constant(xc.clone()), t.constant(bc.clone()));
        let y = t.conv2d(x, v, Some(b), 2, 1)?;
        project(t, y, 10)
    }))?;
    let (xc, wc) = (x.clone(), w.clone());
    r.check("conv2d/bias", tol, &b, Box::new(move |t, v| {
        let (x, w) = (t.constant(xc.clone()), t.constant(wc.clone()));
        let y = t.conv2d(x, w, Some(v), 2, 1)?;
        project(t, y, 10)
    }))?;

    let tw = randn(&[c, c + 1, 4, 4], 5);
    let (twc, bc) = (tw.clone(), b.clone());
    r.check("conv_transpose2d/input", tol, &x, Box::new(move |t, v| {
        let (w, b) = (t.constant(twc.clone()), t.constant(bc.clone()));
        let y = t.conv_transpose2d(v, w, Some(b), 2, 1)?;
        project(t, y, 11)
    }))?;
    let (xc, bc) = (x.clone(), b.clone());
    r.check("conv_transpose2d/weight", tol, &tw, Box::new(move |t, v| {
        let (x, b) = (t.constant(xc.clone()), t.constant(bc.clone()));
        let y = t.conv_transpose2d(x, v, Some(b), 2, 1)?;
        project(t, y, 11)
    }))?;
    let (xc, twc) = (x.clone(), tw.clone());
    r.check("conv_transpose2d/bias", tol, &b, Box::new(move |t, v| {
        let (x, w) = (t.constant(xc.clone()), t.constant(twc.clone()));
        let y = t.conv_transpose2d(x, w, Some(v), 2, 1)?;
        project(t, y, 11)
    }))?;

    let filters = randn(&[n, c, c, 3, 3], 6);
    let fc = filters.clone();
    r.check("adaptive_conv/input", tol, &x, Box::new(move |t, v| {
        let f = t.constant(fc.clone());
        let y = adaptive_conv(t, v, f).map_err(lift)?;
        project(t, y, 12)
    }))?;
    let xc = x.clone();
    r.check("adaptive_conv/filters", tol, &filters, Box::new(move |t, v| {
        let x = t.constant(xc.clone());
        let y = adaptive_conv(t, x, v).map_err(lift)?;
        project(t, y, 12)
    }))?;

    // Batch normalization in each mode.
    let gamma = randn(&[c], 7).map(|v| 1.0 + 0.2 * v);
    let beta = randn(&[c], 8);
    let running = Tensor::from_fn([2, c], |i| if i < c { 0.1 * i as f64 } else { 0.5 + i as f64 });
    for (mode, tag) in [(NormMode::Train, "train"), (NormMode::TrainFrozen, "frozen"), (NormMode::Eval, "eval")] {
        let (g, bt, run) = (gamma.clone(), beta.clone(), running.clone());
        r.check(&format!("batchnorm2d[{tag}]/input"), tol, &x, Box::new(move |t, v| {
            let (g, b) = (t.constant(g.clone()), t.constant(bt.clone()));
            let y = t.batchnorm2d(v, g, b, &mut run.clone(), mode)?;
            project(t, y, 13)
        }))?;
        let (xc, bt, run) = (x.clone(), beta.clone(), running.clone());
        r.check(&format!("batchnorm2d[{tag}]/gamma"), tol, &gamma, Box::new(move |t, v| {
            let (x, b) = (t.constant(xc.clone()), t.constant(bt.clone()));
            let y = t.batchnorm2d(x, v, b, &mut run.clone(), mode)?;
            project(t, y, 13)
        }))?;
        let (xc, g, run) = (x.clone(), gamma.clone(), running.clone());
        r.check(&format!("batchnorm2d[{tag}]/beta"), tol, &beta, Box::new(move |t, v| {
            let (x, g) = (t.constant(xc.clone()), t.constant(g.clone()));
            let y = t.batchnorm2d(x, g, v, &mut run.clone(), mode)?;
            project(t, y, 13)
        }))?;
    }

    // Pointwise operations.
    type Unary = fn(&mut Tape<f64>, Var) -> Var;
    let unary: [(&str, Unary); 7] = [
        ("relu", |t, v| t.relu(v)),
        ("leaky_relu", |t, v| t.leaky_relu(v, 0.2)),
        ("tanh", |t, v| t.tanh(v)),
        ("sigmoid", |t, v| t.sigmoid(v)),
        ("softplus", |t, v| t.softplus(v)),
        ("abs", |t, v| t.abs(v)),
        ("square", |t, v| t.square(v)),
    ];
    for (name, op) in unary {
        r.check(name, tol, &xz, Box::new(move |t, v| {
            let y = op(t, v);
            project(t, y, 14)
        }))?;
    }
    r.check("scale", tol, &x, Box::new(|t, v| {
        let y = t.scale(v, -1.5);
        project(t, y, 14)
    }))?;
    let shift: Vec<f64> = (0..c).map(|i| 0.1 * i as f64).collect();
    let mult: Vec<f64> = (0..c).map(|i| 1.0 - 0.7 * i as f64).collect();
    r.check("channel_affine", tol, &x, Box::new(move |t, v| {
        let y = t.channel_affine(v, &mult, &shift)?;
        project(t, y, 14)
    }))?;
    let other = randn(&[n, c, hw, hw], 15);
    for name in ["add", "sub", "mul"] {
        let o = other.clone();
        r.check(name, tol, &x, Box::new(move |t, v| {
            let o = t.constant(o.clone());
            let y = match name {
                "add" => t.add(v, o)?,
                "sub" => t.sub(o, v)?,
                _ => t.mul(v, o)?,
            };
            let y = t.mul(y, v)?;
            project(t, y, 16)
        }))?;
    }
    r.check("sum", tol, &x, Box::new(|t, v| {
        let y = t.square(v);
        Ok(t.sum(y))
    }))?;
    r.check("mean", tol, &x, Box::new(|t, v| {
        let y = t.square(v);
        Ok(t.mean(y))
    }))?;

    // Structural operations.
    r.check("reshape", tol, &x, Box::new(move |t, v| {
        let y = t.reshape(v, [n * c, hw * hw])?;
        let y = t.tanh(y);
        project(t, y, 17)
    }))?;
    let o = randn(&[n, 1, hw, hw], 18);
    r.check("concat_channels", tol, &x, Box::new(move |t, v| {
        let o = t.constant(o.clone());
        let y = t.concat_channels(&[o, v, o])?;
        let y = t.square(y);
        project(t, y, 19)
    }))?;
    r.check("global_avg_pool", tol, &x, Box::new(|t, v| {
        let y = t.global_avg_pool(v)?;
        project(t, y, 20)
    }))?;
    r.check("max_pool2", tol, &x, Box::new(|t, v| {
        let y = t.max_pool2(v)?;
        project(t, y, 21)
    }))?;
    r.check("gram_matrix", tol, &x, Box::new(|t, v| {
        let y = gram_matrix(t, v).map_err(lift)?;
        project(t, y, 22)
    }))?;

    // Losses against fixed targets.
    let s = d.image;
    let gen = randn(&[n, 3, s, s], 30).map(|v| 0.5 * v.tanh());
    let goal = randn(&[n, 3, s, s], 31).map(|v| 0.5 * v.tanh());
    let app = randn(&[n, 3, s, s], 32).map(|v| 0.5 * v.tanh());
    let fx = FeatureExtractor::<f64>::random(&d.features, 33)?;
    // L1 has a kink where gen == goal; keep the pair apart.
    let far: Vec<f64> = goal
        .data()
        .iter()
        .zip(gen.data())
        .map(|(&g, &x)| if (g - x).abs() < 0.05 { g + 0.1 } else { g })
        .collect();
    let goal_far = Tensor::new(goal.shape().to_vec(), far)?;
    let gc = goal_far.clone();
    r.check("l1_loss", tol, &gen, Box::new(move |t, v| {
        let g = t.constant(gc.clone());
        l1_loss(t, v, g).map_err(lift)
    }))?;
    let gc = goal.clone();
    r.check("mse_loss", tol, &gen, Box::new(move |t, v| {
        let g = t.constant(gc.clone());
        mse_loss(t, v, g).map_err(lift)
    }))?;
    let (gc, fxc) = (goal.clone(), fx.clone());
    r.check("content_loss", tol, &gen, Box::new(move |t, v| {
        let g = t.constant(gc.clone());
        content_loss(t, v, g, &fxc).map_err(lift)
    }))?;
    let (ac, fxc) = (app.clone(), fx.clone());
    r.check("style_loss", tol, &gen, Box::new(move |t, v| {
        let a = t.constant(ac.clone());
        style_loss(t, v, a, &fxc).map_err(lift)
    }))?;
    let (gc, ac, fxc) = (goal_far.clone(), app.clone(), fx.clone());
    r.check("transfer_loss", tol, &gen, Box::new(move |t, v| {
        let (g, a) = (t.constant(gc.clone()), t.constant(ac.clone()));
        let w = LossWeights::new(1.0, 1.0, 1.0).map_err(lift)?;
        Ok(transfer_loss(t, v, g, a, w, &fxc).map_err(lift)?.total)
    }))?;
    let logits = randn(&[n, 1, 3, 3], 34);
    let fake = randn(&[n, 1, 3, 3], 35);
    let fk = fake.clone();
    r.check("discriminator_loss/real", tol, &logits, Box::new(move |t, v| {
        let f = t.constant(fk.clone());
        discriminator_loss(t, v, f).map_err(lift)
    }))?;
    let lc = logits.clone();
    r.check("discriminator_loss/fake", tol, &fake, Box::new(move |t, v| {
        let l = t.constant(lc.clone());
        discriminator_loss(t, l, v).map_err(lift)
    }))?;
    r.check("generator_adversarial_loss", tol, &fake, Box::new(|t, v| Ok(generator_adversarial_loss(t, v))))?;

    composed(&mut r, &d)?;

    Ok(SuiteReport {
        outcomes: r.outcomes,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// The generator objective `loss_G + L_T` through the Ada-R renderer and a
/// frozen discriminator, and `loss_D` through the discriminator, checked
/// against every trainable tensor.
fn composed(r: &mut Runner, d: &Dims) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let renderer = PoseRenderer::<f64>::new(&d.net, ModelKind::Adaptive, &mut rng)?;
    let disc = Discriminator::<f64>::new(&d.net, &mut rng);
    let fx = FeatureExtractor::<f64>::random(&d.features, 41)?;
    let s = d.net.resolution;
    let n = d.n;
    let pose = randn(&[n, 1, s, s], 42).map(|v| if v > 0.8 { 1.0 } else { -1.0 });
    let app = randn(&[n, 3, s, s], 43).map(|v| 0.8 * v.tanh());
    let goal = randn(&[n, 3, s, s], 44).map(|v| 0.8 * v.tanh());
    let w = LossWeights::new(1.0, 1.0, 1.0)?;

    let objective = |t: &mut Tape<f64>, rend: &mut PoseRenderer<f64>, rb: &crate::net::RendererBound| -> Result<Var> {
        let mut disc = disc.clone();
        let db = disc.params.bind(t, false);
        let (p, a, g) = (t.constant(pose.clone()), t.constant(app.clone()), t.constant(goal.clone()));
        let gen = rend.forward(t, rb, p, a, NormMode::Train)?;
        let logits = disc.logits(t, &db, gen, a, NormMode::TrainFrozen)?;
        let adv = generator_adversarial_loss(t, logits);
        let tl = transfer_loss(t, gen, g, a, w, &fx)?;
        Ok(t.add(adv, tl.total)?)
    };

    r.check_params("objective/generator", &renderer.generator.params, &|t, id, v| {
        let mut rend = renderer.clone();
        let mut rb = rend.bind(t, false);
        rb.generator.replace(id, v);
        objective(t, &mut rend, &rb)
    })?;
    let fcn = renderer.fcn.as_ref().expect("adaptive renderer has an FCN");
    r.check_params("objective/fcn", &fcn.params, &|t, id, v| {
        let mut rend = renderer.clone();
        let mut rb = rend.bind(t, false);
        rb.fcn.as_mut().expect("adaptive").replace(id, v);
        objective(t, &mut rend, &rb)
    })?;
    r.check_params("discriminator_objective/discriminator", &disc.params, &|t, id, v| {
        let mut rend = renderer.clone();
        let rb = rend.bind(t, false);
        let mut dd = disc.clone();
        let mut db = dd.params.bind(t, false);
        db.replace(id, v);
        let (p, a, g) = (t.constant(pose.clone()), t.constant(app.clone()), t.constant(goal.clone()));
        let fake = rend.forward(t, &rb, p, a, NormMode::TrainFrozen)?;
        let real_logits = dd.logits(t, &db, g, a, NormMode::Train)?;
        let fake_logits = dd.logits(t, &db, fake, a, NormMode::Train)?;
        discriminator_loss(t, real_logits, fake_logits)
    })?;
    Ok(())
}
