//! Mask-only training: reliability-weighted multi-subject reconstruction loss
//! minimised with Adam over shuffled minibatches of image pairs.

pub mod adam;
pub mod corpus;
pub mod loss;
pub mod reliability;
pub mod sampler;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamParams, AdamState};
pub use corpus::{split_corpus, CorpusPair, Dataset, Split, TrainingCorpus, WeightOptions};
pub use loss::{pair_loss, LossKind};
pub use reliability::{compute_noise, reliability_weight, StdConvention};
pub use sampler::sample_meg_slice;

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::types::{Mask, MaskResolution};

/// Pairs per parallel work unit; partial sums are reduced in chunk order.
const CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub use_reliability_weights: bool,
    pub alpha: f64,
    pub beta_exp: f64,
    pub noise_std: StdConvention,
    pub resolution: MaskResolution,
    pub val_fraction: f64,
    #[serde(with = "seed_text")]
    pub seed: u64,
    pub meg_gaussian_sampling: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 40,
            epochs: 15,
            loss: LossKind::L1,
            use_reliability_weights: false,
            alpha: reliability::DEFAULT_ALPHA,
            beta_exp: reliability::DEFAULT_BETA_EXP,
            noise_std: StdConvention::Population,
            resolution: MaskResolution::PerChannel,
            val_fraction: 0.10,
            seed: 0,
            meg_gaussian_sampling: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val fraction {} not in (0, 1)",
                self.val_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn weight_options(&self) -> WeightOptions {
        WeightOptions {
            enabled: self.use_reliability_weights,
            alpha: self.alpha,
            beta_exp: self.beta_exp,
            convention: self.noise_std,
        }
    }
}

/// One line of the training log, written once per epoch (epoch 0 is the initial mask).
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "epoch\tstep\ttrain_loss\tval_loss\twall_time_s";

    /// Tab-separated rows under [`Self::HEADER`].
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.9e}\t{:.9e}\t{:.3}",
                r.epoch, r.step, r.train_loss, r.val_loss, r.wall_time
            );
        }
        out
    }
}

/// Best-validation snapshot returned by training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub mask: Mask,
    pub adam: AdamState,
    pub best_epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    /// Mask after the last epoch, whether or not it was the best.
    pub final_mask: Mask,
}

/// Hook into the training loop.
pub trait TrainObserver {
    /// Called with the corpus pair indices of every minibatch before its gradient step.
    fn on_batch(&mut self, _corpus: &TrainingCorpus, _batch: &[usize]) {}
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Concatenate, weight and split the datasets for training.
pub fn prepare_corpus(datasets: Vec<Dataset>, config: &TrainConfig) -> Result<TrainingCorpus> {
    config.validate()?;
    let mut corpus = TrainingCorpus::new(datasets)?;
    corpus.configure_weights(config.weight_options())?;
    split_corpus(corpus, config.val_fraction, config.seed)
}

pub fn train(datasets: Vec<Dataset>, config: &TrainConfig) -> Result<(TrainOutcome, TrainingLog)> {
    let corpus = prepare_corpus(datasets, config)?;
    train_corpus(&corpus, config, &mut NoObserver)
}

/// Slice each dataset is evaluated on: the midpoint slice for timestamped stacks.
pub fn eval_slices(corpus: &TrainingCorpus) -> Vec<usize> {
    corpus
        .datasets()
        .iter()
        .map(|d| d.stack.midpoint_slice())
        .collect()
}

fn encoders<'a>(corpus: &'a TrainingCorpus, mask: &Mask) -> Result<Vec<Encoder<'a>>> {
    corpus
        .datasets()
        .iter()
        .map(|d| Encoder::new(&d.features, mask))
        .collect()
}

/// Per-pair losses of the listed corpus pairs, in order.
pub fn pair_losses(
    corpus: &TrainingCorpus,
    mask: &Mask,
    indices: &[usize],
    slices: &[usize],
    kind: LossKind,
) -> Result<Vec<f64>> {
    let encs = encoders(corpus, mask)?;
    indices
        .par_iter()
        .map(|&k| {
            let p = &corpus.pairs()[k];
            let slice = slices[p.dataset];
            let d = encs[p.dataset].dissimilarity(p.pair)?;
            Ok(pair_loss(
                d,
                &corpus.targets(k, slice),
                corpus.weight(k, slice)?,
                kind,
            ))
        })
        .collect()
}

/// Mean per-pair loss over a split at the evaluation slices.
pub fn split_loss(
    corpus: &TrainingCorpus,
    mask: &Mask,
    split: Split,
    kind: LossKind,
) -> Result<f64> {
    let indices = corpus.indices(split);
    if indices.is_empty() {
        return Err(Error::Degenerate("empty split".into()));
    }
    let losses = pair_losses(corpus, mask, &indices, &eval_slices(corpus), kind)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean loss and mean gradient over one minibatch.
pub fn batch_gradient(
    corpus: &TrainingCorpus,
    mask: &Mask,
    batch: &[usize],
    slices: &[usize],
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    let encs = encoders(corpus, mask)?;
    let n = mask.num_coefficients();
    let partials = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n];
            let mut loss = 0.0;
            for &k in chunk {
                let p = &corpus.pairs()[k];
                let slice = slices[p.dataset];
                let enc = &encs[p.dataset];
                let targets = corpus.targets(k, slice);
                let weight = corpus.weight(k, slice)?;
                let d = enc.dissimilarity(p.pair)?;
                let (l, slope) = loss::pair_loss_and_slope(d, &targets, weight, kind);
                loss += l;
                if slope != 0.0 {
                    enc.accumulate_gradient(p.pair, slope, &mut grad)?;
                }
            }
            Ok((loss, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    for (l, g) in partials {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

pub fn train_corpus(
    corpus: &TrainingCorpus,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(TrainOutcome, TrainingLog)> {
    config.validate()?;
    let started = Instant::now();
    let mut mask = Mask::identity(config.resolution, corpus.stages());
    let mut adam = AdamState::for_mask(&mask);
    let params = config.adam();
    let mut train_idx = corpus.indices(Split::Train);
    if train_idx.is_empty() || corpus.indices(Split::Val).is_empty() {
        return Err(Error::Degenerate("both splits must be non-empty".into()));
    }
    let eval = eval_slices(corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut log = TrainingLog::default();
    let train_loss = split_loss(corpus, &mask, Split::Train, config.loss)?;
    let val_loss = split_loss(corpus, &mask, Split::Val, config.loss)?;
    check_finite(train_loss, 0, 0)?;
    log.records.push(LogRecord {
        epoch: 0,
        step: 0,
        train_loss,
        val_loss,
        wall_time: started.elapsed().as_secs_f64(),
    });
    let mut best = TrainOutcome {
        mask: mask.clone(),
        adam: adam.clone(),
        best_epoch: 0,
        train_loss,
        val_loss,
        final_train_loss: train_loss,
        final_val_loss: val_loss,
        final_mask: mask.clone(),
    };

    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(config.batch_size) {
            let slices: Vec<usize> = corpus
                .datasets()
                .iter()
                .zip(&eval)
                .map(|(d, &mid)| {
                    if config.meg_gaussian_sampling && d.stack.is_timestamped() {
                        sample_meg_slice(&d.stack, &mut rng)
                    } else {
                        Ok(mid)
                    }
                })
                .collect::<Result<_>>()?;
            observer.on_batch(corpus, batch);
            let (loss, grad) = batch_gradient(corpus, &mask, batch, &slices, config.loss)?;
            check_finite(loss, epoch, adam.step + 1)?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient at epoch {epoch}, step {}",
                    adam.step + 1
                )));
            }
            adam_step(&mut mask, &grad, &mut adam, &params)?;
        }
        let train_loss = split_loss(corpus, &mask, Split::Train, config.loss)?;
        let val_loss = split_loss(corpus, &mask, Split::Val, config.loss)?;
        check_finite(train_loss, epoch, adam.step)?;
        check_finite(val_loss, epoch, adam.step)?;
        log.records.push(LogRecord {
            epoch,
            step: adam.step,
            train_loss,
            val_loss,
            wall_time: started.elapsed().as_secs_f64(),
        });
        if val_loss < best.val_loss {
            best.mask = mask.clone();
            best.adam = adam.clone();
            best.best_epoch = epoch;
            best.train_loss = train_loss;
            best.val_loss = val_loss;
        }
        best.final_train_loss = train_loss;
        best.final_val_loss = val_loss;
        best.final_mask = mask.clone();
    }
    Ok((best, log))
}

// TOML integers are signed 64-bit; seeds are kept as decimal text.
mod seed_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&seed.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

fn check_finite(loss: f64, epoch: usize, step: u64) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Divergence(format!(
            "loss became {loss} at epoch {epoch}, step {step}"
        )));
    }
    Ok(())
}
