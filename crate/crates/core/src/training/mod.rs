//! Plain and adversarial SGD training, learning-rate schedule and checkpoints.

mod checkpoint;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::compute::{Graph, ParamStore, Tensor, Var};
use crate::data::{make_batch, stream_rng, ClipSource};
use crate::error::{Error, Result};
use crate::losses::{adv_d_loss, combined_loss, DiscriminatorRef, LossWeights};
use crate::model::{
    build_pyramid, generator_forward, init_discriminator, init_generator, Generator, ModelSpec,
};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

/// Piecewise-constant geometric decay from `initial` to `final_rate`.
///
/// The decay runs over the first `end_fraction` of training in `intervals`
/// equal pieces; afterwards the rate is exactly `final_rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub final_rate: f64,
    pub intervals: u32,
    pub end_fraction: f64,
}

impl LrSchedule {
    pub fn constant(rate: f64) -> Self {
        Self {
            initial: rate,
            final_rate: rate,
            intervals: 1,
            end_fraction: 0.75,
        }
    }

    pub fn decaying(initial: f64, final_rate: f64) -> Self {
        Self {
            initial,
            final_rate,
            intervals: 8,
            end_fraction: 0.75,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.final_rate >= 0.0 && self.initial >= self.final_rate && self.initial.is_finite())
        {
            return Err(Error::Config(format!(
                "learning rates must satisfy initial >= final >= 0, got {} and {}",
                self.initial, self.final_rate
            )));
        }
        if self.intervals == 0 {
            return Err(Error::Config("schedule needs at least one interval".into()));
        }
        if !(0.0..=1.0).contains(&self.end_fraction) {
            return Err(Error::Config(format!(
                "end fraction must lie in [0, 1], got {}",
                self.end_fraction
            )));
        }
        Ok(())
    }

    /// Rate for zero-based `step` of a `total`-step run.
    pub fn rate(&self, step: u64, total: u64) -> f64 {
        let end = (self.end_fraction * total as f64).ceil() as u64;
        if self.initial == self.final_rate || step >= end {
            return self.final_rate;
        }
        if self.final_rate == 0.0 {
            // geometric decay to zero is undefined; step down linearly instead
            let piece = step * self.intervals as u64 / end;
            return self.initial * (1.0 - piece as f64 / self.intervals as f64);
        }
        let piece = step * self.intervals as u64 / end;
        self.initial * (self.final_rate / self.initial).powf(piece as f64 / self.intervals as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub rho_g: LrSchedule,
    pub rho_d: f64,
    pub batch: usize,
    pub steps: u64,
    pub seed: u64,
    pub adversarial: bool,
    /// Log every this many steps; 0 disables logging.
    pub log_every: u64,
}

pub const TRAIN_PRESETS: [&str; 6] = ["l2", "l1", "gdl-l1", "gdl-l2", "adv", "adv-gdl"];

impl TrainConfig {
    /// Named loss configurations. Adversarial presets use minibatches of 8,
    /// the others 4.
    pub fn preset(name: &str) -> Result<Self> {
        let w = |lambda_adv, lambda_gdl, p, alpha| LossWeights {
            lambda_adv,
            lambda_lp: 1.0,
            lambda_gdl,
            p,
            alpha,
        };
        let (weights, adversarial) = match name {
            "l2" => (w(0.0, 0.0, 2, 1), false),
            "l1" => (w(0.0, 0.0, 1, 1), false),
            "gdl-l1" => (w(0.0, 1.0, 1, 1), false),
            "gdl-l2" => (w(0.0, 1.0, 2, 2), false),
            "adv" => (w(0.05, 0.0, 2, 1), true),
            "adv-gdl" => (w(0.05, 1.0, 2, 1), true),
            _ => {
                return Err(Error::Config(format!(
                    "unknown training preset `{name}` (expected one of {})",
                    TRAIN_PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            weights,
            rho_g: LrSchedule::decaying(0.04, 0.005),
            rho_d: 0.02,
            batch: if adversarial { 8 } else { 4 },
            steps: 1000,
            seed: 0,
            adversarial,
            log_every: 100,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.rho_g.validate()?;
        if !(self.rho_d >= 0.0 && self.rho_d.is_finite()) {
            return Err(Error::Config(format!(
                "discriminator rate must be >= 0, got {}",
                self.rho_d
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("minibatch size must be at least 1".into()));
        }
        if self.weights.lambda_adv > 0.0 && !self.adversarial {
            return Err(Error::Config(
                "λ_adv > 0 requires adversarial training".into(),
            ));
        }
        Ok(())
    }
}

/// Loss terms of one generator step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub lp: f64,
    pub gdl: f64,
    pub adv: Option<f64>,
}

/// What a training step reports to the logger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    /// Number of completed steps.
    pub step: u64,
    pub rho_g: f64,
    pub d_loss: Option<f64>,
    pub g: StepLosses,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "step={} rho_g={:.6} loss={:.6} lp={:.6} gdl={:.6}",
            self.step, self.rho_g, self.g.total, self.g.lp, self.g.gdl
        );
        if let Some(a) = self.g.adv {
            s.push_str(&format!(" adv={a:.6}"));
        }
        if let Some(d) = self.d_loss {
            s.push_str(&format!(" d_loss={d:.6}"));
        }
        s
    }
}

fn finite(v: f64, what: &str, step: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence(format!(
            "{what} loss became {v} at step {step}"
        )))
    }
}

/// Generator and discriminator state with their sampling streams.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub generator: ParamStore<f32>,
    pub discriminator: Option<ParamStore<f32>>,
    step: u64,
    rng_g: ChaCha8Rng,
    rng_d: ChaCha8Rng,
}

impl Trainer {
    /// Fresh parameters and RNG streams derived from `config.seed`.
    pub fn new(spec: ModelSpec, config: TrainConfig) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        let generator = init_generator(&spec.generator, stream_rng(config.seed, 0).gen())?;
        let discriminator = if config.adversarial {
            let d = spec.discriminator.as_ref().ok_or_else(|| {
                Error::Config("adversarial training needs a discriminator spec".into())
            })?;
            Some(init_discriminator(
                d,
                &spec.scales,
                stream_rng(config.seed, 1).gen(),
            )?)
        } else {
            None
        };
        Ok(Self {
            spec,
            config: config.clone(),
            generator,
            discriminator,
            step: 0,
            rng_g: stream_rng(config.seed, 2),
            rng_d: stream_rng(config.seed, 3),
        })
    }

    /// Resumes from a checkpoint with a (possibly different) configuration.
    pub fn from_checkpoint(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.adversarial && ckpt.discriminator.is_none() {
            return Err(Error::Config(
                "checkpoint holds no discriminator for adversarial training".into(),
            ));
        }
        Ok(Self {
            spec: ckpt.spec,
            config,
            generator: ckpt.generator,
            discriminator: ckpt.discriminator,
            step: ckpt.step,
            rng_g: ckpt.rng_g.restore(),
            rng_d: ckpt.rng_d.restore(),
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            step: self.step,
            rng_g: RngState::capture(&self.rng_g),
            rng_d: RngState::capture(&self.rng_d),
        }
    }

    pub fn model(&self) -> Generator<f32> {
        Generator::new(self.spec.generator.clone(), self.generator.clone())
    }

    pub fn current_rate(&self) -> f64 {
        self.config.rho_g.rate(self.step, self.config.steps)
    }

    /// One SGD update of the discriminator on the adversarial loss with the
    /// generator frozen. Returns the loss before the update.
    pub fn train_step_d(&mut self, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<f64> {
        let disc_params = self.discriminator.as_mut().ok_or_else(|| {
            Error::Config("discriminator step in non-adversarial training".into())
        })?;
        let dspec = self
            .spec
            .discriminator
            .as_ref()
            .expect("validated with discriminator");
        let pyr = build_pyramid(x, y, &self.spec.scales)?;
        let mut g = Graph::new();
        let gb = g.bind(&self.generator, false);
        let db = g.bind(disc_params, true);
        let xs: Vec<Var> = pyr.inputs.into_iter().map(|t| g.input(t)).collect();
        let ys: Vec<Var> = pyr.targets.into_iter().map(|t| g.input(t)).collect();
        let preds = generator_forward(&mut g, &self.spec.generator, &gb, &xs)?;
        let d = DiscriminatorRef {
            spec: dspec,
            sizes: &self.spec.scales,
            params: &db,
        };
        let loss = adv_d_loss(&mut g, d, &xs, &ys, &preds)?;
        let value = finite(g.value(loss).item()? as f64, "discriminator", self.step)?;
        g.backward(loss)?;
        g.accumulate_grads(&db, disc_params)?;
        disc_params.sgd_step(self.config.rho_d as f32)?;
        Ok(value)
    }

    /// One SGD update of the generator on the combined loss with the
    /// discriminator frozen, at the scheduled rate. Advances the step counter.
    pub fn train_step_g(&mut self, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<StepLosses> {
        let pyr = build_pyramid(x, y, &self.spec.scales)?;
        let mut g = Graph::new();
        let gb = g.bind(&self.generator, true);
        let db = self.discriminator.as_ref().map(|d| g.bind(d, false));
        let xs: Vec<Var> = pyr.inputs.into_iter().map(|t| g.input(t)).collect();
        let ys: Vec<Var> = pyr.targets.into_iter().map(|t| g.input(t)).collect();
        let preds = generator_forward(&mut g, &self.spec.generator, &gb, &xs)?;
        let disc = match (&db, &self.spec.discriminator) {
            (Some(b), Some(spec)) => Some(DiscriminatorRef {
                spec,
                sizes: &self.spec.scales,
                params: b,
            }),
            _ => None,
        };
        let parts = combined_loss(&mut g, &self.config.weights, disc, &xs, &ys, &preds)?;
        let item = |v: Var| -> Result<f64> { Ok(g.value(v).item()? as f64) };
        let losses = StepLosses {
            total: finite(item(parts.total)?, "generator", self.step)?,
            lp: item(parts.lp)?,
            gdl: item(parts.gdl)?,
            adv: parts.adv.map(item).transpose()?,
        };
        let rate = self.current_rate();
        g.backward(parts.total)?;
        g.accumulate_grads(&gb, &mut self.generator)?;
        self.generator.sgd_step(rate as f32)?;
        self.step += 1;
        Ok(losses)
    }

    /// Alternates discriminator and generator steps (generator only when not
    /// adversarial) until `config.steps` steps are done. Each step draws its
    /// own minibatch from the stream of the network it updates.
    pub fn run(&mut self, source: &dyn ClipSource, mut log: impl FnMut(&LogRecord)) -> Result<()> {
        while self.step < self.config.steps {
            self.run_one(source, &mut log)?;
        }
        Ok(())
    }

    /// A single iteration of [`Trainer::run`].
    pub fn run_one(
        &mut self,
        source: &dyn ClipSource,
        log: &mut dyn FnMut(&LogRecord),
    ) -> Result<LogRecord> {
        let d_loss = if self.config.adversarial {
            let (x, y) = make_batch(&source.draw_batch(&mut self.rng_d, self.config.batch)?)?;
            Some(self.train_step_d(&x, &y)?)
        } else {
            None
        };
        let rho_g = self.current_rate();
        let (x, y) = make_batch(&source.draw_batch(&mut self.rng_g, self.config.batch)?)?;
        let g = self.train_step_g(&x, &y)?;
        let rec = LogRecord {
            step: self.step,
            rho_g,
            d_loss,
            g,
        };
        let every = self.config.log_every;
        if every > 0 && (self.step.is_multiple_of(every) || self.step == self.config.steps) {
            log(&rec);
        }
        Ok(rec)
    }
}

/// Trains a fresh model on `source` and returns the final checkpoint.
pub fn train_loop(
    spec: ModelSpec,
    config: TrainConfig,
    source: &dyn ClipSource,
    log: impl FnMut(&LogRecord),
) -> Result<Checkpoint> {
    let mut t = Trainer::new(spec, config)?;
    t.run(source, log)?;
    Ok(t.checkpoint())
}
