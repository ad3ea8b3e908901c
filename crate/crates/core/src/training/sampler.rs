//! Time-slice sampling for timestamped (MEG) stacks: a Gaussian centred on
//! the interval midpoint with sigma a quarter of the interval, truncated to
//! the interval by rejection, snapped to the nearest slice.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::types::RdmStack;

/// Sigma as a fraction of the recorded interval length.
pub const SIGMA_FRACTION: f64 = 0.25;

pub fn sample_meg_slice<R: Rng + ?Sized>(stack: &RdmStack, rng: &mut R) -> Result<usize> {
    let (lo, hi) = interval(stack)?;
    sample_with_sigma(stack, SIGMA_FRACTION * (hi - lo), rng)
}

pub fn sample_with_sigma<R: Rng + ?Sized>(
    stack: &RdmStack,
    sigma: f64,
    rng: &mut R,
) -> Result<usize> {
    let (lo, hi) = interval(stack)?;
    if stack.slices().len() == 1 || sigma <= 0.0 || hi <= lo {
        return Ok(stack.midpoint_slice());
    }
    let normal =
        Normal::new(0.5 * (lo + hi), sigma).map_err(|e| Error::Config(format!("sampler: {e}")))?;
    loop {
        let t = normal.sample(rng);
        if (lo..=hi).contains(&t) {
            return Ok(stack.nearest_slice(t));
        }
    }
}

fn interval(stack: &RdmStack) -> Result<(f64, f64)> {
    stack.interval().ok_or_else(|| {
        Error::Config(format!(
            "slice sampling needs a timestamped stack, got {}",
            stack.modality()
        ))
    })
}
