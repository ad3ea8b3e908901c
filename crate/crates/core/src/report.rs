//! Per-stage summary of a learned mask: mean coefficient with a 95%
//! normal-approximation confidence interval over the stage's channels.

use std::fmt::Write as _;

use crate::types::{Mask, MaskResolution, StageSpec};

pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub stage: String,
    /// Number of channel values averaged.
    pub count: usize,
    pub mean: f64,
    /// `None` when the stage has a single value.
    pub ci: Option<(f64, f64)>,
}

/// One row per stage. Per-feature masks are first averaged over each
/// channel's spatial positions; per-stage masks report the scalar with no CI.
pub fn stage_summaries(mask: &Mask, stages: &[StageSpec]) -> Vec<StageSummary> {
    stages
        .iter()
        .zip(mask.coefficients())
        .map(|(stage, coeffs)| {
            let values: Vec<f64> = match mask.resolution() {
                MaskResolution::PerStage | MaskResolution::PerChannel => {
                    coeffs.iter().map(|&v| v as f64).collect()
                }
                MaskResolution::PerFeature => coeffs
                    .chunks(stage.spatial)
                    .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / c.len() as f64)
                    .collect(),
            };
            summarize(&stage.name, &values)
        })
        .collect()
}

fn summarize(name: &str, values: &[f64]) -> StageSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ci = (n > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let half = Z_95 * var.sqrt() / (n as f64).sqrt();
        (mean - half, mean + half)
    });
    StageSummary {
        stage: name.to_string(),
        count: n,
        mean,
        ci,
    }
}

pub const CSV_HEADER: &str = "stage,count,mean,ci_low,ci_high";

/// CSV under [`CSV_HEADER`]; CI columns are empty when undefined.
pub fn to_csv(rows: &[StageSummary]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let (lo, hi) = match r.ci {
            Some((lo, hi)) => (lo.to_string(), hi.to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(out, "{},{},{},{},{}", r.stage, r.count, r.mean, lo, hi);
    }
    out
}

pub fn to_table(rows: &[StageSummary]) -> String {
    let mut out = format!(
        "{:<12} {:>7} {:>12} {:>25}\n",
        "stage", "count", "mean", "95% CI"
    );
    for r in rows {
        let ci = match r.ci {
            Some((lo, hi)) => format!("[{lo:.6}, {hi:.6}]"),
            None => "-".to_string(),
        };
        let _ = writeln!(
            out,
            "{:<12} {:>7} {:>12.6} {:>25}",
            r.stage, r.count, r.mean, ci
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stages() -> Vec<StageSpec> {
        vec![
            StageSpec::new("layer0", 4, 2),
            StageSpec::new("layer1", 6, 1),
        ]
    }

    #[test]
    fn identity_mask_has_zero_width() {
        for res in MaskResolution::ALL {
            let rows = stage_summaries(&Mask::identity(res, &stages()), &stages());
            for r in &rows {
                assert_eq!(r.mean, 1.0);
                match r.ci {
                    Some((lo, hi)) => assert_eq!(hi - lo, 0.0),
                    None => assert_eq!(res, MaskResolution::PerStage),
                }
            }
        }
    }

    #[test]
    fn doubled_stage() {
        let mut mask = Mask::identity(MaskResolution::PerChannel, &stages());
        mask.stage_mut(1).iter_mut().for_each(|v| *v = 2.0);
        let rows = stage_summaries(&mask, &stages());
        assert_eq!(rows[0].mean, 1.0);
        assert_eq!(rows[1].mean, 2.0);
        assert_eq!(rows[1].count, 6);
    }

    #[test]
    fn random_mask_matches_textbook_ci() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut mask = Mask::identity(MaskResolution::PerChannel, &stages());
        let values: Vec<f32> = (0..10).map(|_| rng.random_range(0.0f32..3.0)).collect();
        mask.set_flat(&values).unwrap();
        let rows = stage_summaries(&mask, &stages());
        let xs: Vec<f64> = values[4..].iter().map(|&v| v as f64).collect();
        let mean = xs.iter().sum::<f64>() / 6.0;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        let (lo, hi) = rows[1].ci.unwrap();
        assert!((rows[1].mean - mean).abs() < 1e-12);
        assert!((lo - (mean - 1.96 * sd / 6f64.sqrt())).abs() < 1e-12);
        assert!((hi - (mean + 1.96 * sd / 6f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let mask = Mask::identity(MaskResolution::PerStage, &stages());
        let csv = to_csv(&stage_summaries(&mask, &stages()));
        assert_eq!(
            csv,
            "stage,count,mean,ci_low,ci_high\nlayer0,1,1,,\nlayer1,1,1,,\n"
        );
    }
}
