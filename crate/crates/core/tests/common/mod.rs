#![allow(dead_code)]

use hyperagg::similarity::predicted_rdm;
use hyperagg::types::{
    from_upper_triangle, FeatureSet, Mask, Modality, RdmSlice, RdmStack, StageSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn image_ids(n: usize, prefix: &str) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:03}")).collect()
}

pub fn uniform_stages(stages: usize, channels: usize, spatial: usize) -> Vec<StageSpec> {
    (0..stages)
        .map(|s| StageSpec::new(format!("layer{s}"), channels, spatial))
        .collect()
}

/// Standard-normal features.
pub fn gaussian_features(
    rng: &mut ChaCha8Rng,
    ids: Vec<String>,
    stages: Vec<StageSpec>,
) -> FeatureSet {
    let len: usize = stages.iter().map(StageSpec::len).sum();
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let data = (0..ids.len() * len).map(|_| normal.sample(rng)).collect();
    FeatureSet::new(ids, stages, data).unwrap()
}

pub fn uniform_features(
    rng: &mut ChaCha8Rng,
    ids: Vec<String>,
    stages: Vec<StageSpec>,
) -> FeatureSet {
    let len: usize = stages.iter().map(StageSpec::len).sum();
    let data = (0..ids.len() * len)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    FeatureSet::new(ids, stages, data).unwrap()
}

/// `subjects` copies of the mask's predicted RDM, each plus symmetric i.i.d.
/// Gaussian noise of the given std on the upper triangle.
pub fn noisy_subjects(
    rng: &mut ChaCha8Rng,
    features: &FeatureSet,
    mask: &Mask,
    subjects: usize,
    noise_std: f64,
) -> Vec<Vec<f32>> {
    let subset: Vec<usize> = (0..features.num_images()).collect();
    let clean = predicted_rdm(features, mask, &subset)
        .unwrap()
        .upper_triangle();
    (0..subjects)
        .map(|_| {
            let upper: Vec<f64> = clean
                .iter()
                .map(|&v| {
                    if noise_std > 0.0 {
                        v + Normal::new(0.0, noise_std).unwrap().sample(rng)
                    } else {
                        v
                    }
                })
                .collect();
            from_upper_triangle(&upper)
                .unwrap()
                .into_iter()
                .map(|v| v as f32)
                .collect()
        })
        .collect()
}

pub fn fmri_stack(ids: Vec<String>, modality: Modality, matrices: Vec<Vec<f32>>) -> RdmStack {
    RdmStack::new(
        ids,
        modality,
        vec![RdmSlice {
            timestamp: None,
            matrices,
        }],
    )
    .unwrap()
}

/// MEG stack whose slices all hold the same subject matrices.
pub fn meg_stack(
    ids: Vec<String>,
    modality: Modality,
    times: &[f64],
    matrices: Vec<Vec<f32>>,
) -> RdmStack {
    let slices = times
        .iter()
        .map(|&t| RdmSlice {
            timestamp: Some(t),
            matrices: matrices.clone(),
        })
        .collect();
    RdmStack::new(ids, modality, slices).unwrap()
}

/// Flat-index view of a mask coefficient for (stage, channel, position),
/// written out per resolution without going through the library's indexing.
pub fn coefficient(
    mask: &Mask,
    stage: usize,
    spec: &StageSpec,
    channel: usize,
    position: usize,
) -> f64 {
    let coeffs = &mask.coefficients()[stage];
    let v = match coeffs.len() {
        1 => coeffs[0],
        n if n == spec.channels => coeffs[channel],
        _ => coeffs[channel * spec.spatial + position],
    };
    v as f64
}

/// Embedding built by looping over stage, channel and position.
pub fn brute_embedding(features: &FeatureSet, mask: &Mask, image: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for (s, spec) in features.stages().iter().enumerate() {
        let raw = features.stage(image, s);
        for c in 0..spec.channels {
            for p in 0..spec.spatial {
                out.push(raw[c * spec.spatial + p] as f64 * coefficient(mask, s, spec, c, p));
            }
        }
    }
    out
}

/// Textbook Pearson correlation.
pub fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn brute_rdm(features: &FeatureSet, mask: &Mask) -> Vec<f64> {
    let n = features.num_images();
    let emb: Vec<Vec<f64>> = (0..n).map(|i| brute_embedding(features, mask, i)).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[i * n + j] = 1.0 - textbook_pearson(&emb[i], &emb[j]);
            }
        }
    }
    out
}
