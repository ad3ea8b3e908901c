//! Cross-subject noise and the per-pair reliability weight
//! `w = (1 / (N + alpha * N_bar)) ^ beta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{PairIndex, RdmStack};

pub const DEFAULT_ALPHA: f64 = 0.25;
pub const DEFAULT_BETA_EXP: f64 = 1.0;

/// Normalisation of the cross-subject standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StdConvention {
    /// Divide by S.
    #[default]
    Population,
    /// Divide by S - 1.
    Sample,
}

/// Standard deviation across subjects of one RDM entry.
pub fn compute_noise(target: &RdmStack, pair: PairIndex, slice: usize) -> Result<f64> {
    compute_noise_with(target, pair, slice, StdConvention::Population)
}

pub fn compute_noise_with(
    target: &RdmStack,
    pair: PairIndex,
    slice: usize,
    convention: StdConvention,
) -> Result<f64> {
    let s = target.subjects();
    if s < 2 {
        return Err(Error::Undefined(format!(
            "cross-subject noise needs at least 2 subjects, stack has {s}"
        )));
    }
    target.slice_index(slice)?;
    if pair.i >= pair.j || pair.j >= target.num_images() {
        return Err(Error::Config(format!(
            "pair ({}, {}) out of range",
            pair.i, pair.j
        )));
    }
    let values = (0..s).map(|k| target.entry(slice, k, pair) as f64);
    let mean = values.clone().sum::<f64>() / s as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    let denom = match convention {
        StdConvention::Population => s as f64,
        StdConvention::Sample => (s - 1) as f64,
    };
    Ok((ss / denom).sqrt())
}

pub fn reliability_weight(noise: f64, n_bar: f64, alpha: f64, beta_exp: f64) -> Result<f64> {
    if !(noise >= 0.0) || !(n_bar >= 0.0) {
        return Err(Error::Config(format!(
            "noise {noise} and mean noise {n_bar} must be non-negative"
        )));
    }
    let denom = noise + alpha * n_bar;
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!(
            "reliability weight undefined for noise {noise}, mean noise {n_bar}, alpha {alpha}"
        )));
    }
    Ok((1.0 / denom).powf(beta_exp))
}
