//! Mini-batch training on fresh noise couplings or on fixed (rectification)
//! couplings, pair generation and pair filtering.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{loss_gradient, ChainContext, LossConfig};
use super::{Architecture, ModelParams};
use crate::error::{Error, Result};
use crate::frames::FrameTransform;
use crate::interpolants::{interpolate, InterpolantSample, TRAIN_T_MIN};
use crate::so3_stats::{sample_noise_frame, Igso3, IgsoConfig, RngState};
use crate::solvers::{integrate_path, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        epsilon: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::Sgd { momentum: 0.0 }
    }
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        Self::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_adam_eps(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Sgd { momentum } => (0.0..1.0).contains(&momentum),
            Self::Adam {
                beta1,
                beta2,
                epsilon,
            } => (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moment buffers and step count. Empty buffers mean "not yet allocated".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl OptimizerState {
    fn apply(&mut self, cfg: &OptimizerConfig, lr: f64, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match *cfg {
            OptimizerConfig::Sgd { momentum } => {
                if momentum == 0.0 {
                    for (p, g) in params.iter_mut().zip(grad) {
                        *p -= lr * g;
                    }
                } else {
                    self.first.resize(params.len(), 0.0);
                    for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut self.first) {
                        *v = momentum * *v + g;
                        *p -= lr * *v;
                    }
                }
            }
            OptimizerConfig::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                self.first.resize(params.len(), 0.0);
                self.second.resize(params.len(), 0.0);
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for (i, (p, g)) in params.iter_mut().zip(grad).enumerate() {
                    let m = &mut self.first[i];
                    let v = &mut self.second[i];
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative decay; epoch `e` uses `learning_rate * lr_decay^e`.
    pub lr_decay: f64,
    pub optimizer: OptimizerConfig,
    /// Independent noise draws (or time draws, for fixed pairs) per item and
    /// epoch.
    pub draws_per_item: usize,
    pub translation_weight: f64,
    pub rotation_weight: f64,
    pub aux_weight: f64,
    pub aux_time_threshold: f64,
    pub t_min: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Residual output head, see [`Architecture::skip`].
    pub skip: bool,
    pub igso3: IgsoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 128,
            learning_rate: 1e-4,
            lr_decay: 1.0,
            optimizer: OptimizerConfig::default(),
            draws_per_item: 1,
            translation_weight: 1.0,
            rotation_weight: 1.0,
            aux_weight: 0.0,
            aux_time_threshold: 0.5,
            t_min: TRAIN_T_MIN,
            seed: 0,
            hidden: vec![64, 64],
            skip: false,
            igso3: IgsoConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            translation_weight: self.translation_weight,
            rotation_weight: self.rotation_weight,
            aux_weight: self.aux_weight,
            aux_time_threshold: self.aux_time_threshold,
            t_min: self.t_min,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::with_hidden(self.hidden.clone()).with_skip(self.skip)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("train.batch_size must be at least 1".into()));
        }
        if self.draws_per_item < 1 {
            return Err(Error::InvalidConfig("train.draws_per_item must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "train.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train.lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        self.optimizer.validate()?;
        self.loss_config().validate()?;
        self.architecture().validate()?;
        self.igso3.validate()
    }
}

/// A noise frame and the frame it is coupled with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingPair {
    pub t0: FrameTransform,
    pub t1: FrameTransform,
}

/// Where the training couplings come from.
#[derive(Clone, Debug)]
pub enum CouplingSource {
    /// Fresh noise drawn every epoch, independent of the data frame.
    Independent {
        data: Vec<FrameTransform>,
        prior: Igso3,
    },
    /// Whole chains, one shared `t` per chain, so the auxiliary loss can be
    /// evaluated.
    Chains {
        chains: Vec<Vec<FrameTransform>>,
        prior: Igso3,
    },
    /// Fixed couplings; only `t` is redrawn.
    Fixed { pairs: Vec<CouplingPair> },
}

impl CouplingSource {
    fn item_count(&self) -> usize {
        match self {
            Self::Independent { data, .. } => data.len(),
            Self::Chains { chains, .. } => chains.len(),
            Self::Fixed { pairs } => pairs.len(),
        }
    }
}

enum Item {
    Sample(InterpolantSample),
    Chain(ChainContext),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub loss_trace: Vec<f64>,
    pub optimizer_state: OptimizerState,
    pub epochs_completed: usize,
}

/// Owns the parameters and optimizer state across epochs. Epoch `e` draws
/// from stream `e + 1` of the configured seed, so a run resumed from a saved
/// state continues exactly where it stopped.
pub struct Trainer {
    cfg: TrainConfig,
    source: CouplingSource,
    params: ModelParams,
    optimizer: OptimizerState,
    epoch: usize,
    loss_trace: Vec<f64>,
}

impl Trainer {
    pub fn new(params: ModelParams, cfg: TrainConfig, source: CouplingSource) -> Result<Self> {
        Self::resume(params, cfg, source, 0, Vec::new(), OptimizerState::default())
    }

    pub fn resume(
        params: ModelParams,
        cfg: TrainConfig,
        source: CouplingSource,
        epoch: usize,
        loss_trace: Vec<f64>,
        optimizer: OptimizerState,
    ) -> Result<Self> {
        cfg.validate()?;
        if *params.architecture() != cfg.architecture() {
            return Err(Error::Architecture(format!(
                "parameters have architecture {:?}, config asks for {:?}",
                params.architecture(),
                cfg.architecture()
            )));
        }
        if source.item_count() == 0 {
            return Err(Error::InvalidConfig("training set is empty".into()));
        }
        Ok(Self {
            cfg,
            source,
            params,
            optimizer,
            epoch,
            loss_trace,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn optimizer_state(&self) -> &OptimizerState {
        &self.optimizer
    }

    fn draw_t(&self, rng: &mut RngState) -> f64 {
        let lo = self.cfg.t_min;
        lo + (1.0 - 2.0 * lo) * rng.uniform()
    }

    fn epoch_items(&self, rng: &mut RngState) -> Vec<Item> {
        let draws = self.cfg.draws_per_item;
        let mut items = Vec::with_capacity(self.source.item_count() * draws);
        match &self.source {
            CouplingSource::Independent { data, prior } => {
                for t1 in data {
                    for _ in 0..draws {
                        let t0 = sample_noise_frame(prior, rng);
                        let t = self.draw_t(rng);
                        items.push(Item::Sample(interpolate(&t0, t1, t)));
                    }
                }
            }
            CouplingSource::Chains { chains, prior } => {
                for chain in chains {
                    for _ in 0..draws {
                        let t = self.draw_t(rng);
                        let samples = chain
                            .iter()
                            .map(|t1| interpolate(&sample_noise_frame(prior, rng), t1, t))
                            .collect();
                        items.push(Item::Chain(ChainContext {
                            samples,
                            truth: chain.clone(),
                        }));
                    }
                }
            }
            CouplingSource::Fixed { pairs } => {
                for pair in pairs {
                    for _ in 0..draws {
                        let t = self.draw_t(rng);
                        items.push(Item::Sample(interpolate(&pair.t0, &pair.t1, t)));
                    }
                }
            }
        }
        items.shuffle(rng);
        items
    }

    /// Runs one epoch and returns its mean batch loss (evaluated before each
    /// update).
    pub fn run_epoch(&mut self) -> Result<f64> {
        let mut rng = RngState::with_stream(self.cfg.seed, self.epoch as u64 + 1);
        let items = self.epoch_items(&mut rng);
        let loss_cfg = self.cfg.loss_config();
        let lr = self.cfg.learning_rate * self.cfg.lr_decay.powi(self.epoch as i32);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (batch_index, batch) in items.chunks(self.cfg.batch_size).enumerate() {
            let mut samples = Vec::new();
            let mut chains = Vec::new();
            for item in batch {
                match item {
                    Item::Sample(s) => samples.push(*s),
                    Item::Chain(c) => chains.push(c.clone()),
                }
            }
            let (loss, grad) = loss_gradient(&self.params, &samples, &chains, &loss_cfg)?;
            self.optimizer.apply(
                &self.cfg.optimizer,
                lr,
                self.params.values_mut(),
                grad.values(),
            );
            if !self.params.is_finite() {
                return Err(Error::NonFiniteParams {
                    epoch: self.epoch,
                    batch: batch_index,
                });
            }
            total += loss.total;
            batches += 1;
        }
        let mean = total / batches as f64;
        self.loss_trace.push(mean);
        self.epoch += 1;
        Ok(mean)
    }

    /// Runs until `cfg.epochs` epochs have completed in total.
    pub fn run(&mut self) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            params: self.params,
            loss_trace: self.loss_trace,
            optimizer_state: self.optimizer,
            epochs_completed: self.epoch,
        }
    }
}

/// Trains from a fresh initialization drawn from stream 0 of `cfg.seed`.
pub fn train_qflow(dataset: &[FrameTransform], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training dataset is empty".into()));
    }
    cfg.validate()?;
    let mut rng = RngState::with_stream(cfg.seed, 0);
    let params = ModelParams::init(cfg.architecture(), &mut rng)?;
    let source = CouplingSource::Independent {
        data: dataset.to_vec(),
        prior: Igso3::new(cfg.igso3)?,
    };
    let mut trainer = Trainer::new(params, cfg.clone(), source)?;
    trainer.run()?;
    Ok(trainer.into_outcome())
}

/// Continues training `params` on fixed couplings. With no pairs the
/// parameters come back unchanged.
pub fn rectify(params: &ModelParams, pairs: &[CouplingPair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Ok(TrainOutcome {
            params: params.clone(),
            loss_trace: Vec::new(),
            optimizer_state: OptimizerState::default(),
            epochs_completed: 0,
        });
    }
    let source = CouplingSource::Fixed {
        pairs: pairs.to_vec(),
    };
    let mut trainer = Trainer::new(params.clone(), cfg.clone(), source)?;
    trainer.run()?;
    Ok(trainer.into_outcome())
}

/// Draws `count` noise frames and integrates each to `t = 1`.
pub fn generate_pairs(
    params: &ModelParams,
    count: usize,
    solver: &SolverConfig,
    prior: &Igso3,
    rng: &mut RngState,
) -> Result<Vec<CouplingPair>> {
    let noise: Vec<FrameTransform> = (0..count).map(|_| sample_noise_frame(prior, rng)).collect();
    pairs_from_noise(params, &noise, solver)
}

/// Integrates each given starting frame to `t = 1`.
pub fn pairs_from_noise(
    params: &ModelParams,
    noise: &[FrameTransform],
    solver: &SolverConfig,
) -> Result<Vec<CouplingPair>> {
    solver.validate()?;
    noise
        .iter()
        .map(|t0| {
            let t1 = integrate_path(params, t0, solver)?;
            Ok(CouplingPair { t0: *t0, t1 })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped: usize,
}

/// Keeps, in order, the pairs whose generated frame satisfies `predicate`.
pub fn filter_pairs<F>(pairs: &[CouplingPair], predicate: F) -> (Vec<CouplingPair>, FilterReport)
where
    F: Fn(&FrameTransform) -> bool,
{
    let kept: Vec<CouplingPair> = pairs.iter().filter(|p| predicate(&p.t1)).copied().collect();
    let report = FilterReport {
        kept: kept.len(),
        dropped: pairs.len() - kept.len(),
    };
    (kept, report)
}
