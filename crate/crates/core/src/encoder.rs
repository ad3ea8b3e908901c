//! Forward model from mask coefficients to pairwise dissimilarity, and its
//! closed-form gradient.
//!
//! For a pair of masked embeddings `x`, `y` of length `L`:
//!
//! ```text
//! A = var(x) + eps,  B = var(y) + eps,  C = cov(x, y)      (1/L normalisation)
//! r = C / sqrt(A B),  d = 1 - r
//! dr/dx_k = (y_k - mean y) / (L sqrt(A B)) - r (x_k - mean x) / (L A)
//! ```
//!
//! and `dx_k / dbeta_g = f_k` for each raw feature `f_k` scaled by
//! coefficient `g`, so gradients are sums over each coefficient's broadcast
//! group. `eps` is zero on scoring paths and [`VARIANCE_GUARD`] in training.

use crate::error::{Error, Result};
use crate::types::{FeatureSet, Mask, MaskResolution, PairIndex};

/// Variance guard added to both variances during training.
pub const VARIANCE_GUARD: f64 = 1e-12;

/// Masked concatenated embedding of one image.
pub fn embed(features: &FeatureSet, mask: &Mask, image: usize) -> Result<Vec<f64>> {
    mask.check_compatible(features.stages())?;
    if image >= features.num_images() {
        return Err(Error::Config(format!("image index {image} out of range")));
    }
    let res = mask.resolution();
    let mut out = Vec::with_capacity(features.embedding_len());
    for (s, stage) in features.stages().iter().enumerate() {
        let raw = features.stage(image, s);
        let coeffs = &mask.coefficients()[s];
        for c in 0..stage.channels {
            for p in 0..stage.spatial {
                let beta = coeffs[res.coefficient_index(stage, c, p)] as f64;
                out.push(beta * raw[c * stage.spatial + p] as f64);
            }
        }
    }
    Ok(out)
}

/// Gradient of one pair's dissimilarity, shaped like the mask coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub stages: Vec<Vec<f64>>,
}

impl PairGradient {
    pub fn flat(&self) -> Vec<f64> {
        self.stages.iter().flatten().copied().collect()
    }
}

/// Mask snapshot widened to f64 and laid out flat, bound to one FeatureSet.
#[derive(Debug, Clone)]
pub struct Encoder<'a> {
    features: &'a FeatureSet,
    resolution: MaskResolution,
    coefficients: Vec<f64>,
    offsets: Vec<usize>,
    guard: f64,
}

impl<'a> Encoder<'a> {
    /// Training encoder (variance guard enabled).
    pub fn new(features: &'a FeatureSet, mask: &Mask) -> Result<Self> {
        mask.check_compatible(features.stages())?;
        Self::from_flat(features, mask.resolution(), mask.to_flat_f64())
    }

    pub fn from_flat(
        features: &'a FeatureSet,
        resolution: MaskResolution,
        coefficients: Vec<f64>,
    ) -> Result<Self> {
        let mut offsets = Vec::with_capacity(features.stages().len());
        let mut total = 0;
        for stage in features.stages() {
            offsets.push(total);
            total += resolution.coefficients_for(stage);
        }
        if coefficients.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients, {} expected at {}",
                coefficients.len(),
                total,
                resolution
            )));
        }
        Ok(Self {
            features,
            resolution,
            coefficients,
            offsets,
            guard: VARIANCE_GUARD,
        })
    }

    /// Replace the variance guard; zero gives exact Pearson and errors on constant embeddings.
    pub fn with_guard(mut self, guard: f64) -> Self {
        self.guard = guard;
        self
    }

    pub fn num_coefficients(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    fn check_pair(&self, pair: PairIndex) -> Result<()> {
        if pair.i >= pair.j || pair.j >= self.features.num_images() {
            return Err(Error::Config(format!(
                "pair ({}, {}) invalid for {} images",
                pair.i,
                pair.j,
                self.features.num_images()
            )));
        }
        Ok(())
    }

    /// Visit every element as (coefficient index, raw x, raw y).
    #[inline]
    fn for_each_element(&self, pair: PairIndex, mut f: impl FnMut(usize, f64, f64)) {
        let fs = self.features;
        for (s, stage) in fs.stages().iter().enumerate() {
            let xs = fs.stage(pair.i, s);
            let ys = fs.stage(pair.j, s);
            let base = self.offsets[s];
            for c in 0..stage.channels {
                let row = c * stage.spatial;
                for p in 0..stage.spatial {
                    let g = base + self.resolution.coefficient_index(stage, c, p);
                    f(g, xs[row + p] as f64, ys[row + p] as f64);
                }
            }
        }
    }

    fn moments(&self, pair: PairIndex) -> Result<PairMoments> {
        self.check_pair(pair)?;
        let beta = &self.coefficients;
        let len = self.features.embedding_len() as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        self.for_each_element(pair, |g, x, y| {
            sx += beta[g] * x;
            sy += beta[g] * y;
        });
        let mean_x = sx / len;
        let mean_y = sy / len;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        self.for_each_element(pair, |g, x, y| {
            let dx = beta[g] * x - mean_x;
            let dy = beta[g] * y - mean_y;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        });
        let var_x = sxx / len + self.guard;
        let var_y = syy / len + self.guard;
        if var_x <= 0.0 || var_y <= 0.0 {
            let id = if var_x <= 0.0 { pair.i } else { pair.j };
            return Err(Error::ZeroVariance(format!(
                "embedding of image {:?} is constant",
                self.features.image_ids()[id]
            )));
        }
        let norm = (var_x * var_y).sqrt();
        let r = (sxy / len) / norm;
        Ok(PairMoments {
            len,
            mean_x,
            mean_y,
            var_x,
            norm,
            var_y,
            r,
        })
    }

    pub fn dissimilarity(&self, pair: PairIndex) -> Result<f64> {
        Ok(1.0 - self.moments(pair)?.r)
    }

    /// Dissimilarity, with `grad[c] += scale * dd/dbeta_c` accumulated into `grad`.
    pub fn accumulate_gradient(
        &self,
        pair: PairIndex,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        if grad.len() != self.coefficients.len() {
            return Err(Error::LengthMismatch(grad.len(), self.coefficients.len()));
        }
        let m = self.moments(pair)?;
        let beta = &self.coefficients;
        let a = 1.0 / (m.len * m.norm);
        let bx = m.r / (m.len * m.var_x);
        let by = m.r / (m.len * m.var_y);
        self.for_each_element(pair, |g, x, y| {
            let dx = beta[g] * x - m.mean_x;
            let dy = beta[g] * y - m.mean_y;
            let dr_dx = a * dy - bx * dx;
            let dr_dy = a * dx - by * dy;
            grad[g] -= scale * (dr_dx * x + dr_dy * y);
        });
        Ok(1.0 - m.r)
    }

    /// Dissimilarity and its gradient as a fresh flat vector.
    pub fn gradient(&self, pair: PairIndex) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.coefficients.len()];
        let d = self.accumulate_gradient(pair, 1.0, &mut grad)?;
        Ok((d, grad))
    }

    /// Split a flat coefficient-shaped vector back into per-stage arrays.
    pub fn unflatten(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.offsets.len());
        for (s, &start) in self.offsets.iter().enumerate() {
            let end = self.offsets.get(s + 1).copied().unwrap_or(flat.len());
            out.push(flat[start..end].to_vec());
        }
        out
    }
}

struct PairMoments {
    len: f64,
    mean_x: f64,
    mean_y: f64,
    var_x: f64,
    var_y: f64,
    norm: f64,
    r: f64,
}

/// Dissimilarity of one pair under the training variance guard.
pub fn pair_dissimilarity(features: &FeatureSet, mask: &Mask, pair: PairIndex) -> Result<f64> {
    Encoder::new(features, mask)?.dissimilarity(pair)
}

pub fn pair_gradient(
    features: &FeatureSet,
    mask: &Mask,
    pair: PairIndex,
) -> Result<(f64, PairGradient)> {
    let enc = Encoder::new(features, mask)?;
    let (d, flat) = enc.gradient(pair)?;
    Ok((
        d,
        PairGradient {
            stages: enc.unflatten(&flat),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::predicted_rdm;
    use crate::types::StageSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, images: usize) -> FeatureSet {
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
        let data = (0..images * len)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        let ids = (0..images).map(|i| format!("i{i}")).collect();
        FeatureSet::new(ids, stages, data).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, fs: &FeatureSet, res: MaskResolution) -> Mask {
        let coeffs = fs
            .stages()
            .iter()
            .map(|s| {
                (0..res.coefficients_for(s))
                    .map(|_| rng.random_range(0.5f32..1.5))
                    .collect()
            })
            .collect();
        Mask::from_coefficients(res, fs.stages(), coeffs).unwrap()
    }

    fn central_difference(enc: &Encoder, pair: PairIndex, c: usize, h: f64) -> f64 {
        let mut plus = enc.coefficients().to_vec();
        let mut minus = plus.clone();
        plus[c] += h;
        minus[c] -= h;
        let fs = enc.features;
        let dp = Encoder::from_flat(fs, enc.resolution, plus)
            .unwrap()
            .dissimilarity(pair)
            .unwrap();
        let dm = Encoder::from_flat(fs, enc.resolution, minus)
            .unwrap()
            .dissimilarity(pair)
            .unwrap();
        (dp - dm) / (2.0 * h)
    }

    #[test]
    fn embed_examples() {
        let stages = vec![StageSpec::new("s", 1, 3)];
        let fs = FeatureSet::new(vec!["a".into()], stages.clone(), vec![1.0, 2.0, 3.0]).unwrap();
        let id = Mask::identity(MaskResolution::PerChannel, &stages);
        assert_eq!(embed(&fs, &id, 0).unwrap(), vec![1.0, 2.0, 3.0]);
        let two =
            Mask::from_coefficients(MaskResolution::PerChannel, &stages, vec![vec![2.0]]).unwrap();
        assert_eq!(embed(&fs, &two, 0).unwrap(), vec![2.0, 4.0, 6.0]);
        let zero = id.scaled(0.0);
        assert_eq!(embed(&fs, &zero, 0).unwrap(), vec![0.0; 3]);
        assert!(embed(&fs, &id, 1).is_err());
        let wrong = Mask::identity(MaskResolution::PerFeature, &[StageSpec::new("s", 2, 3)]);
        assert!(matches!(
            embed(&fs, &wrong, 0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn per_feature_and_per_stage_embedding() {
        let stages = vec![StageSpec::new("a", 2, 2), StageSpec::new("b", 1, 1)];
        let fs = FeatureSet::new(
            vec!["x".into()],
            stages.clone(),
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
        )
        .unwrap();
        let per_stage = Mask::from_coefficients(
            MaskResolution::PerStage,
            &stages,
            vec![vec![2.0], vec![-1.0]],
        )
        .unwrap();
        assert_eq!(
            embed(&fs, &per_stage, 0).unwrap(),
            vec![2.0, 4.0, 6.0, 8.0, -5.0]
        );
        let per_feature = Mask::from_coefficients(
            MaskResolution::PerFeature,
            &stages,
            vec![vec![1.0, 0.0, 2.0, 0.5], vec![3.0]],
        )
        .unwrap();
        assert_eq!(
            embed(&fs, &per_feature, 0).unwrap(),
            vec![1.0, 0.0, 6.0, 2.0, 15.0]
        );
    }

    #[test]
    fn identical_and_negated_pairs() {
        let stages = vec![StageSpec::new("s", 2, 2)];
        let ids = vec!["a".into(), "b".into(), "c".into()];
        let data = vec![1.0, 2.0, 0.0, 5.0, 1.0, 2.0, 0.0, 5.0, 3.0, 2.0, 4.0, -1.0];
        let fs = FeatureSet::new(ids, stages.clone(), data).unwrap();
        let mask = Mask::identity(MaskResolution::PerChannel, &stages);
        let same = PairIndex::new(0, 1).unwrap();
        assert!(pair_dissimilarity(&fs, &mask, same).unwrap().abs() < 1e-12);
        let neg = PairIndex::new(0, 2).unwrap();
        assert!((pair_dissimilarity(&fs, &mask, neg).unwrap() - 2.0).abs() < 1e-12);

        let (d, grad) = pair_gradient(&fs, &mask, same).unwrap();
        assert!(d.abs() < 1e-12);
        assert!(grad.flat().iter().all(|g| g.abs() < 1e-12), "{grad:?}");
    }

    #[test]
    fn zero_mask_stays_finite_under_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fs = random_instance(&mut rng, 2);
        let mask = Mask::identity(MaskResolution::PerChannel, fs.stages()).scaled(0.0);
        let (d, grad) = pair_gradient(&fs, &mask, PairIndex::new(0, 1).unwrap()).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        assert!(grad.flat().iter().all(|g| g.is_finite()));
        let exact = Encoder::new(&fs, &mask).unwrap().with_guard(0.0);
        assert!(matches!(
            exact.dissimilarity(PairIndex::new(0, 1).unwrap()),
            Err(Error::ZeroVariance(_))
        ));
    }

    #[test]
    fn matches_predicted_rdm() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for res in MaskResolution::ALL {
            let fs = random_instance(&mut rng, 5);
            let mask = random_mask(&mut rng, &fs, res);
            let rdm = predicted_rdm(&fs, &mask, &[0, 1, 2, 3, 4]).unwrap();
            for p in crate::types::all_pairs(5) {
                let d = pair_dissimilarity(&fs, &mask, p).unwrap();
                assert!((d - rdm.get(p.i, p.j)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..30 {
            let res = MaskResolution::ALL[trial % 3];
            let fs = random_instance(&mut rng, 2);
            let mask = random_mask(&mut rng, &fs, res);
            let enc = Encoder::new(&fs, &mask).unwrap();
            let pair = PairIndex::new(0, 1).unwrap();
            let (_, grad) = enc.gradient(pair).unwrap();
            let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            for (c, g) in grad.iter().enumerate() {
                let h = 1e-3 * (1.0 + enc.coefficients()[c].abs());
                let fd = central_difference(&enc, pair, c, h);
                assert!(
                    (g - fd).abs() <= 1e-4 * scale.max(1e-12),
                    "{res} c={c}: {g} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn directional_derivative_and_radial_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for trial in 0..20 {
            let res = MaskResolution::ALL[trial % 3];
            let fs = random_instance(&mut rng, 2);
            let mask = random_mask(&mut rng, &fs, res);
            let enc = Encoder::new(&fs, &mask).unwrap();
            let pair = PairIndex::new(0, 1).unwrap();
            let (_, grad) = enc.gradient(pair).unwrap();
            let beta = enc.coefficients();

            let mut v: Vec<f64> = (0..beta.len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            let h = 1e-4;
            let shifted = |sign: f64| {
                let b: Vec<f64> = beta.iter().zip(&v).map(|(b, v)| b + sign * h * v).collect();
                Encoder::from_flat(&fs, res, b)
                    .unwrap()
                    .dissimilarity(pair)
                    .unwrap()
            };
            let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
            let analytic: f64 = grad.iter().zip(&v).map(|(g, v)| g * v).sum();
            assert!(
                (analytic - fd).abs() <= 1e-5 * analytic.abs().max(1e-8),
                "{analytic} vs {fd}"
            );

            let radial: f64 = grad.iter().zip(beta).map(|(g, b)| g * b).sum();
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let bnorm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
            assert!(radial.abs() <= 1e-6 * gnorm * bnorm);
        }
    }

    #[test]
    fn broadcast_group_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fs = random_instance(&mut rng, 2);
        let pair = PairIndex::new(0, 1).unwrap();
        // stage-constant coefficients expressed at every resolution
        let stage_values: Vec<f32> = fs
            .stages()
            .iter()
            .map(|_| rng.random_range(0.5f32..2.0))
            .collect();
        let at = |res: MaskResolution| {
            let coeffs = fs
                .stages()
                .iter()
                .zip(&stage_values)
                .map(|(s, &v)| vec![v; res.coefficients_for(s)])
                .collect();
            let mask = Mask::from_coefficients(res, fs.stages(), coeffs).unwrap();
            pair_gradient(&fs, &mask, pair).unwrap().1
        };
        let per_stage = at(MaskResolution::PerStage);
        let per_channel = at(MaskResolution::PerChannel);
        let per_feature = at(MaskResolution::PerFeature);
        for (s, stage) in fs.stages().iter().enumerate() {
            let summed: f64 = per_channel.stages[s].iter().sum();
            assert!((summed - per_stage.stages[s][0]).abs() < 1e-9);
            for c in 0..stage.channels {
                let row = &per_feature.stages[s][c * stage.spatial..(c + 1) * stage.spatial];
                assert!((row.iter().sum::<f64>() - per_channel.stages[s][c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_pairs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fs = random_instance(&mut rng, 3);
        let mask = Mask::identity(MaskResolution::PerStage, fs.stages());
        let enc = Encoder::new(&fs, &mask).unwrap();
        assert!(enc.dissimilarity(PairIndex { i: 1, j: 1 }).is_err());
        assert!(enc.dissimilarity(PairIndex { i: 0, j: 3 }).is_err());
    }
}
