//! Alternating generator/discriminator training.

use adar_tensor::{NormMode, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{Batch, PairSet};
use crate::features::{FeatureConfig, FeatureExtractor};
use crate::losses::{discriminator_loss, generator_adversarial_loss, transfer_loss, LossWeights};
use crate::net::{Discriminator, ModelKind, NetConfig, PoseRenderer};
use crate::optim::{clip_global_norm, optimizer_step, AdamConfig, AdamState};
use crate::params::ParamSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// alpha = 100, beta = 1e-4, gamma = 1e-14; three generator updates per
    /// discriminator update.
    Fashion,
    /// alpha = 100, beta = 0.1, gamma = 1e-12; two generator updates per
    /// discriminator update.
    Volleyball,
    Custom,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fashion" => Ok(Preset::Fashion),
            "volleyball" => Ok(Preset::Volleyball),
            "custom" => Ok(Preset::Custom),
            _ => Err(Error::Config(format!("unknown preset `{s}` (fashion|volleyball|custom)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: Preset,
    pub learning_rate: f64,
    pub loss_weights: LossWeights,
    pub g_steps_per_cycle: usize,
    pub d_steps_per_cycle: usize,
    pub batch_size: usize,
    pub total_cycles: usize,
    pub seed: u64,
    pub resolution: usize,
    /// Global gradient-norm bound per parameter set; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub model: ModelKind,
    pub net: NetConfig,
    pub features: FeatureConfig,
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> TrainConfig {
        let (loss_weights, g_steps) = match preset {
            Preset::Fashion | Preset::Custom => (LossWeights::FASHION, 3),
            Preset::Volleyball => (LossWeights::VOLLEYBALL, 2),
        };
        TrainConfig {
            preset,
            learning_rate: 1e-3,
            loss_weights,
            g_steps_per_cycle: g_steps,
            d_steps_per_cycle: 1,
            batch_size: 16,
            total_cycles: 2000,
            seed: 0,
            resolution: 64,
            grad_clip: Some(10.0),
            model: ModelKind::Adaptive,
            net: NetConfig::for_resolution(64),
            features: FeatureConfig::default(),
        }
    }

    /// Switches to `preset`, resetting the loss weights and schedule it fixes.
    pub fn apply_preset(&mut self, preset: Preset) {
        let p = TrainConfig::preset(preset);
        self.preset = preset;
        if preset != Preset::Custom {
            self.loss_weights = p.loss_weights;
            self.g_steps_per_cycle = p.g_steps_per_cycle;
            self.d_steps_per_cycle = p.d_steps_per_cycle;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.g_steps_per_cycle == 0 || self.d_steps_per_cycle == 0 {
            return bad("g_steps_per_cycle and d_steps_per_cycle must be >= 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size {} must be >= 2 for batch statistics", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip {c} must be positive"));
            }
        }
        if self.net.resolution != self.resolution {
            return bad(format!(
                "net resolution {} differs from resolution {}",
                self.net.resolution, self.resolution
            ));
        }
        self.loss_weights.validate()?;
        self.net.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub cycle: u64,
    pub g_steps: u64,
    pub d_steps: u64,
}

/// Unweighted loss terms of one generator update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLosses {
    pub adversarial: f64,
    pub l1: f64,
    pub content: f64,
    pub style: f64,
    /// `adversarial + alpha L1 + beta L_C + gamma L_S`.
    pub total: f64,
}

/// Per-term means over the sub-steps of one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub cycle: u64,
    pub loss_g: f64,
    pub loss_d: f64,
    pub l1: f64,
    pub content: f64,
    pub style: f64,
}

impl CycleMetrics {
    pub const CSV_HEADER: &'static str = "cycle,loss_G,loss_D,L1,L_C,L_S";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            self.cycle, self.loss_g, self.loss_d, self.l1, self.content, self.style
        )
    }
}

pub struct Trainer {
    config: TrainConfig,
    pub renderer: PoseRenderer<f32>,
    pub discriminator: Discriminator<f32>,
    features: FeatureExtractor<f32>,
    pub(crate) opt_renderer: Vec<AdamState<f32>>,
    pub(crate) opt_disc: AdamState<f32>,
    pub(crate) counters: Counters,
    pub(crate) rng: ChaCha8Rng,
}

fn finite(term: &str, v: f64, c: &Counters) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            term: term.to_string(),
            g_step: c.g_steps,
            d_step: c.d_steps,
        })
    }
}

impl Trainer {
    /// Parameters are drawn from stream 0 of `seed` (renderer, then
    /// discriminator); batches from stream 1.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let features = FeatureExtractor::from_config(&config.features)?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let renderer = PoseRenderer::new(&config.net, config.model, &mut init)?;
        let discriminator = Discriminator::new(&config.net, &mut init);
        let opt_renderer = renderer.param_sets().into_iter().map(AdamState::new).collect();
        let opt_disc = AdamState::new(&discriminator.params);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            config,
            renderer,
            discriminator,
            features,
            opt_renderer,
            opt_disc,
            counters: Counters::default(),
            rng,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Changes the run length (e.g. when resuming with a new target).
    pub fn set_total_cycles(&mut self, total: usize) {
        self.config.total_cycles = total;
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn features(&self) -> &FeatureExtractor<f32> {
        &self.features
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.config.learning_rate)
    }

    /// Uniformly drawn pairs (with replacement) from the batch stream.
    pub fn sample_batch(&mut self, data: &PairSet) -> Result<Batch> {
        if data.resolution() != self.config.resolution {
            return Err(Error::Resolution(format!(
                "dataset is {0}x{0}, model expects {1}x{1}",
                data.resolution(),
                self.config.resolution
            )));
        }
        let idx: Vec<usize> = (0..self.config.batch_size).map(|_| self.rng.gen_range(0..data.len())).collect();
        data.batch(&idx)
    }

    fn apply(
        params: &mut ParamSet<f32>,
        mut grads: Vec<Tensor<f32>>,
        state: &mut AdamState<f32>,
        clip: Option<f64>,
        adam: &AdamConfig,
    ) -> Result<()> {
        if let Some(c) = clip {
            clip_global_norm(&mut grads, c);
        }
        optimizer_step(params, &grads, state, adam)
    }

    /// One generator (and FCN) update minimizing `loss_G + L_T`. The
    /// discriminator is evaluated with frozen batchnorm statistics and its
    /// parameters enter the tape as constants.
    pub fn generator_step(&mut self, batch: &Batch) -> Result<GeneratorLosses> {
        let mut tape = Tape::new();
        let rb = self.renderer.bind(&mut tape, true);
        let db = self.discriminator.params.bind(&mut tape, false);
        let pose = tape.constant(batch.pose.clone());
        let app = tape.constant(batch.reference.clone());
        let goal = tape.constant(batch.target.clone());
        let gen = self.renderer.forward(&mut tape, &rb, pose, app, NormMode::Train)?;
        let logits = self.discriminator.logits(&mut tape, &db, gen, app, NormMode::TrainFrozen)?;
        let adv = generator_adversarial_loss(&mut tape, logits);
        let tl = transfer_loss(&mut tape, gen, goal, app, self.config.loss_weights, &self.features)?;
        let total = tape.add(adv, tl.total)?;
        let item = |v: Var| tape.value(v).item() as f64;
        let c = &self.counters;
        let losses = GeneratorLosses {
            adversarial: finite("loss_G", item(adv), c)?,
            l1: finite("L1", item(tl.l1), c)?,
            content: finite("L_C", item(tl.content), c)?,
            style: finite("L_S", item(tl.style), c)?,
            total: finite("total generator loss", item(total), c)?,
        };
        tape.backward(total)?;
        let adam = self.adam();
        let clip = self.config.grad_clip;
        let gen_grads = self.renderer.generator.params.gradients(&mut tape, &rb.generator);
        let fcn_grads = match (&self.renderer.fcn, &rb.fcn) {
            (Some(f), Some(b)) => Some(f.params.gradients(&mut tape, b)),
            _ => None,
        };
        Self::apply(&mut self.renderer.generator.params, gen_grads, &mut self.opt_renderer[0], clip, &adam)?;
        if let (Some(f), Some(g)) = (self.renderer.fcn.as_mut(), fcn_grads) {
            Self::apply(&mut f.params, g, &mut self.opt_renderer[1], clip, &adam)?;
        }
        self.counters.g_steps += 1;
        Ok(losses)
    }

    /// One discriminator update on `(target, reference)` as real and
    /// `(generated, reference)` as fake. The generator runs with frozen
    /// batchnorm statistics and constant parameters.
    pub fn discriminator_step(&mut self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let rb = self.renderer.bind(&mut tape, false);
        let db = self.discriminator.params.bind(&mut tape, true);
        let pose = tape.constant(batch.pose.clone());
        let app = tape.constant(batch.reference.clone());
        let goal = tape.constant(batch.target.clone());
        let fake = self.renderer.forward(&mut tape, &rb, pose, app, NormMode::TrainFrozen)?;
        let real_logits = self.discriminator.logits(&mut tape, &db, goal, app, NormMode::Train)?;
        let fake_logits = self.discriminator.logits(&mut tape, &db, fake, app, NormMode::Train)?;
        let loss = discriminator_loss(&mut tape, real_logits, fake_logits)?;
        let value = finite("loss_D", tape.value(loss).item() as f64, &self.counters)?;
        tape.backward(loss)?;
        let grads = self.discriminator.params.gradients(&mut tape, &db);
        let adam = self.adam();
        Self::apply(&mut self.discriminator.params, grads, &mut self.opt_disc, self.config.grad_clip, &adam)?;
        self.counters.d_steps += 1;
        Ok(value)
    }

    /// `g_steps_per_cycle` generator updates then `d_steps_per_cycle`
    /// discriminator updates, each on a fresh batch.
    pub fn train_cycle(&mut self, data: &PairSet) -> Result<CycleMetrics> {
        let mut g = GeneratorLosses::default();
        let ng = self.config.g_steps_per_cycle;
        for _ in 0..ng {
            let batch = self.sample_batch(data)?;
            let l = self.generator_step(&batch)?;
            g.adversarial += l.adversarial / ng as f64;
            g.l1 += l.l1 / ng as f64;
            g.content += l.content / ng as f64;
            g.style += l.style / ng as f64;
        }
        let nd = self.config.d_steps_per_cycle;
        let mut loss_d = 0.0;
        for _ in 0..nd {
            let batch = self.sample_batch(data)?;
            loss_d += self.discriminator_step(&batch)? / nd as f64;
        }
        self.counters.cycle += 1;
        Ok(CycleMetrics {
            cycle: self.counters.cycle,
            loss_g: g.adversarial,
            loss_d,
            l1: g.l1,
            content: g.content,
            style: g.style,
        })
    }

    /// Runs cycles until `total_cycles`, calling `on_cycle` after each.
    pub fn train(
        &mut self,
        data: &PairSet,
        mut on_cycle: impl FnMut(&Trainer, &CycleMetrics) -> Result<()>,
    ) -> Result<()> {
        while (self.counters.cycle as usize) < self.config.total_cycles {
            let m = self.train_cycle(data)?;
            on_cycle(self, &m)?;
        }
        Ok(())
    }

    /// Mean unweighted transfer-loss terms of the current model (eval mode)
    /// over every pair of `data`.
    pub fn evaluate_losses(&mut self, data: &PairSet, batch_size: usize) -> Result<GeneratorLosses> {
        let mut acc = GeneratorLosses::default();
        let mut n = 0usize;
        for batch in data.chunks(batch_size) {
            let batch = batch?;
            let mut tape = Tape::new();
            let rb = self.renderer.bind(&mut tape, false);
            let pose = tape.constant(batch.pose.clone());
            let app = tape.constant(batch.reference.clone());
            let goal = tape.constant(batch.target.clone());
            let gen = self.renderer.forward(&mut tape, &rb, pose, app, NormMode::Eval)?;
            let tl = transfer_loss(&mut tape, gen, goal, app, self.config.loss_weights, &self.features)?;
            let b = batch.len() as f64;
            acc.l1 += tape.value(tl.l1).item() as f64 * b;
            acc.content += tape.value(tl.content).item() as f64 * b;
            acc.style += tape.value(tl.style).item() as f64 * b;
            acc.total += tape.value(tl.total).item() as f64 * b;
            n += batch.len();
        }
        let n = n.max(1) as f64;
        acc.l1 /= n;
        acc.content /= n;
        acc.style /= n;
        acc.total /= n;
        Ok(acc)
    }
}
