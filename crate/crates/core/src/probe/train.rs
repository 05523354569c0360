use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{example_loss, example_loss_and_gradient, ProbeMatrix, TargetMode};
use crate::error::{Error, Result};
use crate::ingest::ProbeExample;

/// Probe training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer_epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Fraction of all optimizer steps spent on the linear warmup.
    pub warmup_fraction: f64,
    /// Sentences per optimizer step.
    pub batch_size: usize,
    /// Initial entries are uniform in `[-init_range, init_range]`.
    pub init_range: f64,
    pub seed: u64,
    pub target_mode: TargetMode,
    /// Probe rank; half the embedding dimension when unset.
    pub rank: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            optimizer_epsilon: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            epochs: 10,
            warmup_fraction: 0.1,
            batch_size: 32,
            init_range: 0.05,
            seed: 0,
            target_mode: TargetMode::Supervised,
            rank: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("optimizer_epsilon", self.optimizer_epsilon),
            ("init_range", self.init_range),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidInput(format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidInput("betas must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidInput(
                "weight_decay must be nonnegative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        if self.rank == Some(0) {
            return Err(Error::InvalidInput("rank must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate at optimizer step `step` (0-based) out of `total`.
    pub fn learning_rate_at(&self, step: usize, total: usize) -> f64 {
        let warmup = (self.warmup_fraction * total as f64).ceil() as usize;
        if step < warmup {
            self.learning_rate * (step + 1) as f64 / warmup as f64
        } else {
            self.learning_rate
        }
    }
}

/// Adam with decoupled weight decay over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            epsilon,
            weight_decay,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let decay = 1.0 - lr * self.weight_decay;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p * decay - lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedProbe {
    pub probe: ProbeMatrix,
    /// Corpus loss of `probe` under the trained target mode.
    pub metric: f64,
    /// Corpus loss after initialization and after every epoch.
    pub history: Vec<f64>,
}

/// Mean loss over the corpus. Supervised mode averages over labeled examples
/// only.
pub fn corpus_loss(examples: &[ProbeExample], f: &ProbeMatrix, mode: TargetMode) -> Result<f64> {
    let losses = examples
        .par_iter()
        .map(|ex| example_loss(f, ex, mode))
        .collect::<Result<Vec<_>>>()?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for l in losses.into_iter().flatten() {
        sum += l;
        count += 1;
    }
    if count == 0 {
        return match mode {
            TargetMode::Supervised => Err(Error::MissingLabels),
            _ => Err(Error::InvalidInput("empty corpus".into())),
        };
    }
    Ok(sum / count as f64)
}

/// Trains a probe for `cfg.target_mode` and returns the best probe seen at
/// an epoch boundary.
pub fn train(examples: &[ProbeExample], cfg: &TrainConfig) -> Result<TrainedProbe> {
    cfg.validate()?;
    let first = examples
        .first()
        .ok_or_else(|| Error::InvalidInput("empty corpus".into()))?;
    let dim = first.sentence.dim();
    if let Some(bad) = examples.iter().find(|e| e.sentence.dim() != dim) {
        return Err(Error::Shape(format!(
            "sentence {:?} has dimension {}, expected {dim}",
            bad.sentence.id,
            bad.sentence.dim()
        )));
    }
    let rank = cfg.rank.unwrap_or(dim / 2);
    if rank == 0 || rank >= dim {
        return Err(Error::InvalidInput(format!(
            "probe rank {rank} must satisfy 0 < rank < {dim}"
        )));
    }

    let pool: Vec<&ProbeExample> = match cfg.target_mode {
        TargetMode::Supervised => examples.iter().filter(|e| e.gold.is_some()).collect(),
        _ => examples.iter().collect(),
    };
    if pool.is_empty() {
        return Err(Error::MissingLabels);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut f = ProbeMatrix::random_uniform(rank, dim, cfg.init_range, &mut rng);
    let mut opt = AdamW::new(
        rank * dim,
        cfg.beta1,
        cfg.beta2,
        cfg.optimizer_epsilon,
        cfg.weight_decay,
    );

    let initial = corpus_loss(examples, &f, cfg.target_mode)?;
    let mut history = vec![initial];
    let mut best = (initial, f.clone());

    let steps_per_epoch = pool.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..pool.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let parts = batch
                .par_iter()
                .map(|&i| example_loss_and_gradient(&f, pool[i], cfg.target_mode))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; rank * dim];
            let mut count = 0usize;
            // Reduce in batch order so results do not depend on thread count.
            for (_, g) in parts.into_iter().flatten() {
                for (acc, v) in grad.iter_mut().zip(g.as_slice()) {
                    *acc += v;
                }
                count += 1;
            }
            if count > 0 {
                let inv = 1.0 / count as f64;
                grad.iter_mut().for_each(|g| *g *= inv);
                let lr = cfg.learning_rate_at(step, total_steps);
                opt.step(f.as_mut_slice(), &grad, lr);
            }
            step += 1;
        }
        let metric = corpus_loss(examples, &f, cfg.target_mode)?;
        history.push(metric);
        if metric < best.0 {
            best = (metric, f.clone());
        }
    }

    Ok(TrainedProbe {
        probe: best.1,
        metric: best.0,
        history,
    })
}
