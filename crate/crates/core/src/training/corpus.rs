//! Concatenation of (features, RDM stack) datasets into one flat list of
//! supervised pairs, the train/validation split and per-pair weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::reliability::{compute_noise_with, reliability_weight, StdConvention};
use crate::error::{Error, Result};
use crate::types::{all_pairs, FeatureSet, PairIndex, RdmStack, StageSpec};

/// Minimum number of pairs a corpus must hold to be split.
pub const MIN_SPLIT_PAIRS: usize = 10;

/// Features aligned to the image order of one RDM stack.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub features: FeatureSet,
    pub stack: RdmStack,
}

impl Dataset {
    /// Join by image id; the stack defines the order.
    pub fn new(name: impl Into<String>, features: &FeatureSet, stack: RdmStack) -> Result<Self> {
        let features = features.select(stack.image_ids())?;
        Ok(Self {
            name: name.into(),
            features,
            stack,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusPair {
    pub dataset: usize,
    pub pair: PairIndex,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightOptions {
    pub enabled: bool,
    pub alpha: f64,
    pub beta_exp: f64,
    pub convention: StdConvention,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self {
            enabled: false,
            alpha: super::reliability::DEFAULT_ALPHA,
            beta_exp: super::reliability::DEFAULT_BETA_EXP,
            convention: StdConvention::Population,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingCorpus {
    datasets: Vec<Dataset>,
    pairs: Vec<CorpusPair>,
    weights: WeightOptions,
    /// Mean training-split noise per dataset, per slice.
    mean_noise: Vec<Vec<f64>>,
}

impl TrainingCorpus {
    /// Concatenate datasets; every pair starts in the training split.
    pub fn new(datasets: Vec<Dataset>) -> Result<Self> {
        let first = datasets
            .first()
            .ok_or_else(|| Error::Degenerate("no datasets".into()))?;
        let stages: &[StageSpec] = first.features.stages();
        for d in &datasets {
            if d.features.stages() != stages {
                return Err(Error::ShapeMismatch(format!(
                    "dataset {:?} has different stage layout from {:?}",
                    d.name, first.name
                )));
            }
        }
        let mut pairs = Vec::new();
        for (k, d) in datasets.iter().enumerate() {
            pairs.extend(all_pairs(d.stack.num_images()).map(|pair| CorpusPair {
                dataset: k,
                pair,
                split: Split::Train,
            }));
        }
        let mean_noise = datasets
            .iter()
            .map(|d| vec![0.0; d.stack.slices().len()])
            .collect();
        Ok(Self {
            datasets,
            pairs,
            weights: WeightOptions::default(),
            mean_noise,
        })
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn pairs(&self) -> &[CorpusPair] {
        &self.pairs
    }

    pub fn stages(&self) -> &[StageSpec] {
        self.datasets[0].features.stages()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.pairs.len())
            .filter(|&k| self.pairs[k].split == split)
            .collect()
    }

    pub fn weight_options(&self) -> &WeightOptions {
        &self.weights
    }

    pub fn mean_noise(&self, dataset: usize, slice: usize) -> f64 {
        self.mean_noise[dataset][slice]
    }

    /// Enable or disable reliability weighting; recomputes mean noise on the training split.
    pub fn configure_weights(&mut self, options: WeightOptions) -> Result<()> {
        self.weights = options;
        if !options.enabled {
            return Ok(());
        }
        for (k, d) in self.datasets.iter().enumerate() {
            for slice in 0..d.stack.slices().len() {
                let mut sum = 0.0;
                let mut count = 0usize;
                for p in self
                    .pairs
                    .iter()
                    .filter(|p| p.dataset == k && p.split == Split::Train)
                {
                    sum += compute_noise_with(&d.stack, p.pair, slice, options.convention)?;
                    count += 1;
                }
                if count == 0 {
                    return Err(Error::Degenerate(format!(
                        "dataset {:?} has no training pairs",
                        d.name
                    )));
                }
                let mean = sum / count as f64;
                if !(mean > 0.0) {
                    return Err(Error::Degenerate(format!(
                        "dataset {:?} slice {slice} has zero mean cross-subject noise",
                        d.name
                    )));
                }
                self.mean_noise[k][slice] = mean;
            }
        }
        Ok(())
    }

    /// Reliability weight of a corpus pair at a slice; exactly 1 when weighting is off.
    pub fn weight(&self, index: usize, slice: usize) -> Result<f64> {
        if !self.weights.enabled {
            return Ok(1.0);
        }
        let p = &self.pairs[index];
        let stack = &self.datasets[p.dataset].stack;
        let noise = compute_noise_with(stack, p.pair, slice, self.weights.convention)?;
        reliability_weight(
            noise,
            self.mean_noise[p.dataset][slice],
            self.weights.alpha,
            self.weights.beta_exp,
        )
    }

    /// Subject target values of a corpus pair at a slice.
    pub fn targets(&self, index: usize, slice: usize) -> Vec<f32> {
        let p = &self.pairs[index];
        let stack = &self.datasets[p.dataset].stack;
        (0..stack.subjects())
            .map(|k| stack.entry(slice, k, p.pair))
            .collect()
    }
}

/// Uniform pair-level split with `round(val_fraction * total)` validation pairs.
pub fn split_corpus(
    mut corpus: TrainingCorpus,
    val_fraction: f64,
    seed: u64,
) -> Result<TrainingCorpus> {
    let total = corpus.pairs.len();
    let assignment = split_assignment(total, val_fraction, seed)?;
    for (p, split) in corpus.pairs.iter_mut().zip(assignment) {
        p.split = split;
    }
    // mean noise depends on the split
    let options = corpus.weights;
    corpus.configure_weights(options)?;
    Ok(corpus)
}

pub fn split_assignment(total: usize, val_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val fraction {val_fraction} not in (0, 1)"
        )));
    }
    if total < MIN_SPLIT_PAIRS {
        return Err(Error::Degenerate(format!(
            "{total} pairs, need at least {MIN_SPLIT_PAIRS} to split"
        )));
    }
    let n_val = (val_fraction * total as f64).round() as usize;
    if n_val == 0 || n_val == total {
        return Err(Error::Config(format!(
            "val fraction {val_fraction} leaves an empty split of {total} pairs"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut out = vec![Split::Train; total];
    for &k in &order[..n_val] {
        out[k] = Split::Val;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{from_upper_triangle, Modality, RdmSlice};
    use rand::Rng;

    pub(crate) fn synthetic_dataset(name: &str, n: usize, subjects: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = vec![StageSpec::new("a", 2, 2), StageSpec::new("b", 3, 1)];
        let ids: Vec<String> = (0..n).map(|i| format!("{name}-{i}")).collect();
        let data = (0..n * 7).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let fs = FeatureSet::new(ids.clone(), stages, data).unwrap();
        let matrices = (0..subjects)
            .map(|_| {
                let upper: Vec<f64> = (0..n * (n - 1) / 2)
                    .map(|_| rng.random_range(0.0..2.0))
                    .collect();
                from_upper_triangle(&upper)
                    .unwrap()
                    .into_iter()
                    .map(|v| v as f32)
                    .collect()
            })
            .collect();
        let stack = RdmStack::new(
            ids,
            Modality::FmriIt,
            vec![RdmSlice {
                timestamp: None,
                matrices,
            }],
        )
        .unwrap();
        Dataset::new(name, &fs, stack).unwrap()
    }

    #[test]
    fn split_examples() {
        let s = split_assignment(100, 0.10, 1).unwrap();
        assert_eq!(s.iter().filter(|&&x| x == Split::Val).count(), 10);
        assert_eq!(s, split_assignment(100, 0.10, 1).unwrap());
        assert_ne!(s, split_assignment(100, 0.10, 2).unwrap());
        let big = split_assignment(4186 + 6903, 0.10, 7).unwrap();
        assert_eq!(big.iter().filter(|&&x| x == Split::Val).count(), 1109);
        assert!(matches!(
            split_assignment(9, 0.5, 0),
            Err(Error::Degenerate(_))
        ));
        assert!(split_assignment(100, 0.0, 0).is_err());
        assert!(split_assignment(100, 1.0, 0).is_err());
    }

    #[test]
    fn corpus_concatenates_without_mixing() {
        let a = synthetic_dataset("a", 6, 3, 1);
        let b = synthetic_dataset("b", 5, 3, 2);
        let corpus = TrainingCorpus::new(vec![a, b]).unwrap();
        assert_eq!(corpus.pairs().len(), 15 + 10);
        for p in corpus.pairs() {
            let n = corpus.datasets()[p.dataset].stack.num_images();
            assert!(p.pair.j < n);
        }
    }

    #[test]
    fn weights_off_are_exactly_one() {
        let corpus = TrainingCorpus::new(vec![synthetic_dataset("a", 6, 3, 1)]).unwrap();
        for k in 0..corpus.pairs().len() {
            assert_eq!(corpus.weight(k, 0).unwrap(), 1.0);
        }
    }

    #[test]
    fn mean_noise_over_training_pairs() {
        let mut corpus = TrainingCorpus::new(vec![
            synthetic_dataset("a", 8, 4, 3),
            synthetic_dataset("b", 7, 5, 4),
        ])
        .unwrap();
        corpus
            .configure_weights(WeightOptions {
                enabled: true,
                ..Default::default()
            })
            .unwrap();
        let corpus = split_corpus(corpus, 0.2, 9).unwrap();
        for k in 0..2 {
            let stack = &corpus.datasets()[k].stack;
            let noises: Vec<f64> = corpus
                .pairs()
                .iter()
                .filter(|p| p.dataset == k && p.split == Split::Train)
                .map(|p| super::super::reliability::compute_noise(stack, p.pair, 0).unwrap())
                .collect();
            let mean = noises.iter().sum::<f64>() / noises.len() as f64;
            assert!((corpus.mean_noise(k, 0) - mean).abs() < 1e-9);
        }
        assert!((0..corpus.pairs().len()).all(|k| corpus.weight(k, 0).unwrap() > 0.0));
    }

    #[test]
    fn mismatched_stage_layouts_rejected() {
        let a = synthetic_dataset("a", 4, 2, 1);
        let mut b = synthetic_dataset("b", 4, 2, 2);
        let stages = vec![StageSpec::new("a", 7, 1)];
        b.features = FeatureSet::new(
            b.features.image_ids().to_vec(),
            stages,
            b.features.data().to_vec(),
        )
        .unwrap();
        assert!(matches!(
            TrainingCorpus::new(vec![a, b]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn dataset_join_reports_unknown_ids() {
        let a = synthetic_dataset("a", 4, 2, 1);
        let other = synthetic_dataset("b", 4, 2, 2);
        assert!(matches!(
            Dataset::new("x", &a.features, other.stack),
            Err(Error::UnknownImage(_))
        ));
    }
}
