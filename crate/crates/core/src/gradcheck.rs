//! Analytic-versus-finite-difference check of the encoder gradient.
//!
//! Each instance draws a random stage layout, two random images and a random
//! positive mask, then compares the closed-form gradient of the pair
//! dissimilarity with central differences of step `1e-3 * (1 + |beta|)`.
//! The relative error of an instance is `max_k |g_k - fd_k| / max(max_k |g_k|,
//! max_k |fd_k|)`; components far below the gradient's scale are dominated by
//! truncation error and are not meaningful on their own.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::Encoder;
use crate::error::Result;
use crate::types::{FeatureSet, MaskResolution, PairIndex, StageSpec};

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_INSTANCES: usize = 100;
pub const TOLERANCE: f64 = 1e-4;
pub const STEP_FRACTION: f64 = 1e-3;
const SCALE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub instances: usize,
    pub tolerance: f64,
    /// Perturb each analytic gradient before comparing; the check must then fail.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            instances: DEFAULT_INSTANCES,
            tolerance: TOLERANCE,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub resolution: MaskResolution,
    pub stages: usize,
    pub coefficients: usize,
    pub relative_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub options: GradcheckOptions,
    pub instances: Vec<InstanceResult>,
    pub elapsed: Duration,
}

impl GradcheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.instances
            .iter()
            .map(|r| r.relative_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> usize {
        self.instances
            .iter()
            .filter(|r| !(r.relative_error <= self.options.tolerance))
            .count()
    }

    pub fn passed(&self) -> bool {
        !self.instances.is_empty() && self.failures() == 0
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for res in MaskResolution::ALL {
            let rows: Vec<&InstanceResult> = self
                .instances
                .iter()
                .filter(|r| r.resolution == res)
                .collect();
            let worst = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
            out.push_str(&format!(
                "{:<12} instances {:>3}  max rel err {worst:.3e}\n",
                res.as_str(),
                rows.len()
            ));
        }
        out.push_str(&format!(
            "{}: {} instances, max rel err {:.3e} (tolerance {:.0e}), {} failing, {:.2}s\n",
            if self.passed() { "PASS" } else { "FAIL" },
            self.instances.len(),
            self.max_relative_error(),
            self.options.tolerance,
            self.failures(),
            self.elapsed.as_secs_f64()
        ));
        out
    }
}

pub fn run_gradcheck(options: GradcheckOptions) -> Result<GradcheckReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut instances = Vec::with_capacity(options.instances);
    for t in 0..options.instances {
        let resolution = MaskResolution::ALL[t % MaskResolution::ALL.len()];
        instances.push(check_instance(&mut rng, resolution, options.corrupt)?);
    }
    Ok(GradcheckReport {
        options,
        instances,
        elapsed: start.elapsed(),
    })
}

fn check_instance(
    rng: &mut ChaCha8Rng,
    resolution: MaskResolution,
    corrupt: bool,
) -> Result<InstanceResult> {
    let stages: Vec<StageSpec> = (0..rng.random_range(2..=4))
        .map(|s| {
            StageSpec::new(
                format!("s{s}"),
                rng.random_range(1..=8),
                rng.random_range(1..=5),
            )
        })
        .collect();
    let len: usize = stages.iter().map(StageSpec::len).sum();
    let data = (0..2 * len)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let features = FeatureSet::new(vec!["a".into(), "b".into()], stages.clone(), data)?;
    let n: usize = stages.iter().map(|s| resolution.coefficients_for(s)).sum();
    let beta: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let pair = PairIndex::new(0, 1)?;

    let encoder = Encoder::from_flat(&features, resolution, beta.clone())?;
    let (_, mut analytic) = encoder.gradient(pair)?;
    if corrupt {
        let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        analytic[0] += 0.01 * scale.max(1e-6);
    }

    let mut numeric = Vec::with_capacity(n);
    for k in 0..n {
        let h = STEP_FRACTION * (1.0 + beta[k].abs());
        let mut plus = beta.clone();
        plus[k] += h;
        let mut minus = beta.clone();
        minus[k] -= h;
        let dp = Encoder::from_flat(&features, resolution, plus)?.dissimilarity(pair)?;
        let dm = Encoder::from_flat(&features, resolution, minus)?.dissimilarity(pair)?;
        numeric.push((dp - dm) / (2.0 * h));
    }

    Ok(InstanceResult {
        resolution,
        stages: stages.len(),
        coefficients: n,
        relative_error: relative_error(&analytic, &numeric),
    })
}

/// Max absolute difference over the larger of the two vectors' max norms.
/// Non-finite input yields infinity.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    if analytic.iter().chain(numeric).any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(SCALE_FLOOR, f64::max);
    diff / scale
}
