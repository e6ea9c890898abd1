//! Alternating critic/generator training for the triplet GAN and the vanilla baseline.

mod adam;

pub use adam::{adam_step, AdamConfig, AdamState};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::autodiff::{Array2, Graph};
use crate::losses::{clip_terms, triplet_objective, vanilla_gan_losses, ClipConfig, LossError};
use crate::models::{critic_forward, generator_forward, GanNetworks, MlpSpec, ModelError, LATENT_DIM};
use crate::sampler::{make_triplets, sample_noise, RealSource, RingSpec, Rng, TripletBatch};
use crate::sphere::SphereMetric;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in tensor {tensor} at entry {index}: {value}")]
    NonFiniteGradient { tensor: usize, index: usize, value: f64 },
    #[error("{what} is {value}")]
    NonFiniteLoss { what: &'static str, value: f64 },
    #[error("optimizer shape mismatch: {0}")]
    Optimizer(String),
    #[error("diverged at step {step}: {detail}")]
    Diverged {
        step: usize,
        detail: String,
        /// Networks as they were before the failing step.
        last_good: Box<GanNetworks>,
    },
    #[error("{0}")]
    Observer(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Triplet,
    Vanilla,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Triplet => "triplet",
            ModelKind::Vanilla => "vanilla",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "triplet" => Ok(ModelKind::Triplet),
            "vanilla" => Ok(ModelKind::Vanilla),
            other => Err(format!("unknown model '{other}' (expected triplet or vanilla)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Ring,
    Mnist,
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataKind::Ring => "ring",
            DataKind::Mnist => "mnist",
        })
    }
}

impl FromStr for DataKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ring" => Ok(DataKind::Ring),
            "mnist" => Ok(DataKind::Mnist),
            other => Err(format!("unknown dataset '{other}' (expected ring or mnist)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub data: DataKind,
    pub ring: RingSpec,
    pub batch: usize,
    pub steps: usize,
    pub lr_g: f64,
    pub lr_c: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// Critic clip threshold; unused by the vanilla model.
    pub c: f64,
    pub feature_dim: usize,
    pub metric: SphereMetric,
    pub seed: u64,
    /// RNG stream for parallel replicas of one seed.
    pub stream: u64,
    /// Evaluation interval in steps; 0 disables periodic evaluation.
    pub eval_every: usize,
    pub out_dir: PathBuf,
}

pub const PRESET_NAMES: [&str; 8] = [
    "ring-triplet",
    "ring-triplet-fast",
    "ring-vanilla",
    "ring-vanilla-fast",
    "mnist-triplet",
    "mnist-triplet-fast",
    "mnist-vanilla",
    "mnist-vanilla-fast",
];

impl TrainConfig {
    /// Gaussian-ring triplet GAN with its published hyperparameters.
    pub fn ring_triplet() -> Self {
        Self {
            model: ModelKind::Triplet,
            data: DataKind::Ring,
            ring: RingSpec::default(),
            batch: 512,
            steps: 25_000,
            lr_g: 1e-3,
            lr_c: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps_adam: 1e-8,
            c: 0.5,
            feature_dim: 16,
            metric: SphereMetric::Arc,
            seed: 0,
            stream: 0,
            eval_every: 1000,
            out_dir: PathBuf::from("out"),
        }
    }

    pub fn mnist_triplet() -> Self {
        Self {
            data: DataKind::Mnist,
            batch: 256,
            steps: 100_000,
            lr_g: 5e-4,
            lr_c: 5e-4,
            c: 1.0,
            eval_every: 5000,
            ..Self::ring_triplet()
        }
    }

    /// The same settings with the one-logit discriminator.
    pub fn into_vanilla(self) -> Self {
        Self {
            model: ModelKind::Vanilla,
            feature_dim: 1,
            ..self
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        let cfg = match name {
            "ring-triplet" => Self::ring_triplet(),
            "ring-triplet-fast" => Self {
                batch: 256,
                steps: 8000,
                ..Self::ring_triplet()
            },
            "mnist-triplet" => Self::mnist_triplet(),
            "mnist-triplet-fast" => Self {
                steps: 20_000,
                ..Self::mnist_triplet()
            },
            other => {
                let base = other.replacen("vanilla", "triplet", 1);
                if base == other {
                    return None;
                }
                return Self::preset(&base).map(Self::into_vanilla);
            }
        };
        Some(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.steps < 1 {
            return bad("steps must be >= 1".into());
        }
        for (name, lr) in [("lr_g", self.lr_g), ("lr_c", self.lr_c)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return bad(format!("{name} must be > 0, got {lr}"));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps_adam > 0.0) {
            return bad(format!("eps_adam must be > 0, got {}", self.eps_adam));
        }
        if self.data == DataKind::Ring {
            self.ring.validate().map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        }
        match self.model {
            ModelKind::Triplet => {
                if !(self.c > 0.0) {
                    return bad(format!("c must be > 0, got {}", self.c));
                }
                if self.batch < 2 {
                    return bad(format!("triplet loss needs two fake samples, got batch {}", self.batch));
                }
                if self.feature_dim < 2 {
                    return bad(format!("triplet critic needs feature_dim >= 2, got {}", self.feature_dim));
                }
            }
            ModelKind::Vanilla => {
                if self.batch < 1 {
                    return bad("batch must be >= 1".into());
                }
                if self.feature_dim != 1 {
                    return bad(format!("vanilla critic emits one logit, got feature_dim {}", self.feature_dim));
                }
            }
        }
        Ok(())
    }

    pub fn generator_spec(&self) -> MlpSpec {
        match self.data {
            DataKind::Ring => MlpSpec::ring_generator(),
            DataKind::Mnist => MlpSpec::mnist_generator(),
        }
    }

    pub fn critic_spec(&self) -> Result<MlpSpec, TrainError> {
        Ok(match self.data {
            DataKind::Ring => MlpSpec::ring_critic(self.feature_dim)?,
            DataKind::Mnist => MlpSpec::mnist_critic(self.feature_dim)?,
        })
    }

    /// The stream every random draw of a run comes from.
    pub fn rng(&self) -> Rng {
        Rng::new(self.seed).jumped(self.stream)
    }

    /// Freshly initialized networks; consumes the first draws of `rng`.
    pub fn init_networks(&self, rng: &mut Rng) -> Result<GanNetworks, TrainError> {
        Ok(GanNetworks::init(self.generator_spec(), self.critic_spec()?, rng)?)
    }

    fn critic_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_c,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }

    fn generator_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_g,
            ..self.critic_adam()
        }
    }
}

/// Losses logged after one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based step number.
    pub step: usize,
    /// Clipped triplet objective (triplet) or discriminator loss (vanilla), before the critic update.
    pub critic_loss: f64,
    /// Generator objective, evaluated with the updated critic.
    pub generator_loss: f64,
    pub cross_term: f64,
    pub intra_term: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<StepRecord>,
    pub networks: GanNetworks,
}

/// Called after every step with the record and the updated networks.
pub type Observer<'a> = dyn FnMut(&StepRecord, &GanNetworks) -> Result<(), String> + 'a;

/// Optimizer state for both networks.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub generator: AdamState,
    pub critic: AdamState,
}

impl Optimizers {
    pub fn new(nets: &GanNetworks) -> Self {
        Self {
            generator: AdamState::new(&nets.generator.tensors()),
            critic: AdamState::new(&nets.critic.tensors()),
        }
    }
}

/// Dispatches on `config.model`.
pub fn train(config: &TrainConfig, source: &dyn RealSource, observer: &mut Observer<'_>) -> Result<TrainOutcome, TrainError> {
    match config.model {
        ModelKind::Triplet => train_tripletgan(config, source, observer),
        ModelKind::Vanilla => train_vanilla(config, source, observer),
    }
}

pub fn train_tripletgan(
    config: &TrainConfig,
    source: &dyn RealSource,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome, TrainError> {
    if config.model != ModelKind::Triplet {
        return Err(TrainError::InvalidConfig("train_tripletgan needs model = triplet".into()));
    }
    run(config, source, observer)
}

pub fn train_vanilla(
    config: &TrainConfig,
    source: &dyn RealSource,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome, TrainError> {
    if config.model != ModelKind::Vanilla {
        return Err(TrainError::InvalidConfig("train_vanilla needs model = vanilla".into()));
    }
    run(config, source, observer)
}

fn run(config: &TrainConfig, source: &dyn RealSource, observer: &mut Observer<'_>) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let mut rng = config.rng();
    let nets = config.init_networks(&mut rng)?;
    train_from(config, source, nets, &mut rng, observer)
}

/// Trains `nets` for `config.steps` steps, drawing real and noise batches from `rng`.
pub fn train_from(
    config: &TrainConfig,
    source: &dyn RealSource,
    mut nets: GanNetworks,
    rng: &mut Rng,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if source.data_dim() != nets.generator_spec.output_dim() {
        return Err(TrainError::InvalidConfig(format!(
            "data has {} columns but the generator emits {}",
            source.data_dim(),
            nets.generator_spec.output_dim()
        )));
    }
    if nets.feature_dim() != config.feature_dim {
        return Err(ModelError::FeatureDim {
            network: nets.feature_dim(),
            requested: config.feature_dim,
        }
        .into());
    }
    let triplets = match config.model {
        ModelKind::Triplet => Some(make_triplets(config.batch).map_err(|e| TrainError::InvalidConfig(e.to_string()))?),
        ModelKind::Vanilla => None,
    };
    let mut opt = Optimizers::new(&nets);
    let mut records = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let start = Instant::now();
        let real = source.sample(config.batch, rng);
        let z = sample_noise(config.batch, LATENT_DIM, rng);
        let critic_before = nets.critic.clone();
        let result = match &triplets {
            Some(t) => triplet_step(config, &mut nets, &mut opt, &real, &z, t, true),
            None => vanilla_step(config, &mut nets, &mut opt, &real, &z),
        };
        let mut record = match result {
            Ok(r) => r,
            Err(e) => {
                let mut last_good = nets.clone();
                last_good.critic = critic_before;
                return Err(TrainError::Diverged {
                    step,
                    detail: e.to_string(),
                    last_good: Box::new(last_good),
                });
            }
        };
        record.step = step;
        record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        observer(&record, &nets).map_err(TrainError::Observer)?;
        records.push(record);
    }
    Ok(TrainOutcome { records, networks: nets })
}

fn finite(what: &'static str, value: f64) -> Result<f64, TrainError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TrainError::NonFiniteLoss { what, value })
    }
}

/// Critic ascent on the clipped objective, then (optionally) generator descent
/// on the unclipped one with the updated critic. Both use the same batches.
pub(crate) fn triplet_step(
    config: &TrainConfig,
    nets: &mut GanNetworks,
    opt: &mut Optimizers,
    real: &Array2,
    z: &Array2,
    triplets: &TripletBatch,
    update_generator: bool,
) -> Result<StepRecord, TrainError> {
    let clip = ClipConfig::new(config.c)?;
    let fd = config.feature_dim;

    // Generator graph; its output is reused as a constant by the critic phase.
    let mut gg = Graph::new();
    let gp = nets.generator.bind(&mut gg, true);
    let zv = gg.constant(z.clone());
    let fake = generator_forward(&mut gg, &nets.generator_spec, &gp, zv)?;

    let mut cg = Graph::new();
    let cp = nets.critic.bind(&mut cg, true);
    let rv = cg.constant(real.clone());
    let fv = cg.constant(gg.value(fake).clone());
    let er = critic_forward(&mut cg, &nets.critic_spec, &cp, rv, fd, true)?;
    let ef = critic_forward(&mut cg, &nets.critic_spec, &cp, fv, fd, true)?;
    let terms = triplet_objective(&mut cg, er, ef, triplets, config.metric)?;
    let clipped = clip_terms(&mut cg, &terms, clip)?;
    let critic_loss = finite("critic loss", cg.scalar(clipped).map_err(LossError::from)?)?;
    let grads = cg.backward(clipped).map_err(LossError::from)?;
    // Ascent: descend on the negated gradient.
    let ascent: Vec<Array2> = cp.grads(&cg, &grads).iter().map(|g| g.map(|v| -v)).collect();
    adam_step(&mut opt.critic, nets.critic.tensors_mut(), &ascent, &config.critic_adam())?;

    let cpc = nets.critic.bind(&mut gg, false);
    let rv = gg.constant(real.clone());
    let er = critic_forward(&mut gg, &nets.critic_spec, &cpc, rv, fd, true)?;
    let ef = critic_forward(&mut gg, &nets.critic_spec, &cpc, fake, fd, true)?;
    let terms = triplet_objective(&mut gg, er, ef, triplets, config.metric)?;
    let value = terms.value(&gg);
    finite("generator loss", value.total)?;
    if update_generator {
        let grads = gg.backward(terms.total).map_err(LossError::from)?;
        let gen_grads = gp.grads(&gg, &grads);
        adam_step(&mut opt.generator, nets.generator.tensors_mut(), &gen_grads, &config.generator_adam())?;
    }
    Ok(StepRecord {
        step: 0,
        critic_loss,
        generator_loss: value.total,
        cross_term: value.cross_term,
        intra_term: value.intra_term,
        wall_ms: 0.0,
    })
}

/// Discriminator descent, then non-saturating generator descent with the
/// updated discriminator.
pub(crate) fn vanilla_step(
    config: &TrainConfig,
    nets: &mut GanNetworks,
    opt: &mut Optimizers,
    real: &Array2,
    z: &Array2,
) -> Result<StepRecord, TrainError> {
    let mut gg = Graph::new();
    let gp = nets.generator.bind(&mut gg, true);
    let zv = gg.constant(z.clone());
    let fake = generator_forward(&mut gg, &nets.generator_spec, &gp, zv)?;

    let mut cg = Graph::new();
    let cp = nets.critic.bind(&mut cg, true);
    let rv = cg.constant(real.clone());
    let fv = cg.constant(gg.value(fake).clone());
    let lr = critic_forward(&mut cg, &nets.critic_spec, &cp, rv, 1, false)?;
    let lf = critic_forward(&mut cg, &nets.critic_spec, &cp, fv, 1, false)?;
    let (d_loss, _) = vanilla_gan_losses(&mut cg, lr, lf)?;
    let critic_loss = finite("discriminator loss", cg.scalar(d_loss).map_err(LossError::from)?)?;
    let grads = cg.backward(d_loss).map_err(LossError::from)?;
    adam_step(&mut opt.critic, nets.critic.tensors_mut(), &cp.grads(&cg, &grads), &config.critic_adam())?;

    let cpc = nets.critic.bind(&mut gg, false);
    let rv = gg.constant(real.clone());
    let lr = critic_forward(&mut gg, &nets.critic_spec, &cpc, rv, 1, false)?;
    let lf = critic_forward(&mut gg, &nets.critic_spec, &cpc, fake, 1, false)?;
    let (_, g_loss) = vanilla_gan_losses(&mut gg, lr, lf)?;
    let generator_loss = finite("generator loss", gg.scalar(g_loss).map_err(LossError::from)?)?;
    let grads = gg.backward(g_loss).map_err(LossError::from)?;
    adam_step(&mut opt.generator, nets.generator.tensors_mut(), &gp.grads(&gg, &grads), &config.generator_adam())?;
    Ok(StepRecord {
        step: 0,
        critic_loss,
        generator_loss,
        cross_term: 0.0,
        intra_term: 0.0,
        wall_ms: 0.0,
    })
}
