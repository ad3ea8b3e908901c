//! Correlation primitives, RDM construction from masked embeddings, the
//! leave-one-out noise ceiling and the noise-normalized R² score.
//!
//! Dissimilarity is `1 - r` with `r` the Pearson correlation of two
//! embeddings. Predicted and measured RDMs are compared by Spearman's rank
//! correlation over the row-major upper triangle; the ceiling is the mean
//! over subjects of the squared Spearman correlation between that subject and
//! the average of the remaining subjects.

use crate::encoder;
use crate::error::{Error, Result};
use crate::types::{all_pairs, upper_triangle, FeatureSet, Mask, RdmStack};

/// Pearson product-moment correlation with 64-bit accumulation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::Degenerate(format!("{} samples", x.len())));
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("first argument is constant".into()));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("second argument is constant".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Fractional ranks starting at 1; ties share the average of their ranks.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            out[k] = rank;
        }
        start = end;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    pearson(&ranks(x), &ranks(y))
}

/// A dense N×N dissimilarity matrix tagged with its image ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Rdm {
    pub image_ids: Vec<String>,
    pub data: Vec<f64>,
}

impl Rdm {
    pub fn n(&self) -> usize {
        self.image_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n() + j]
    }

    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.n();
        all_pairs(n).map(|p| self.data[p.i * n + p.j]).collect()
    }

    /// Round every entry to storage precision.
    pub fn quantized(&self) -> Rdm {
        Rdm {
            image_ids: self.image_ids.clone(),
            data: self.data.iter().map(|&v| v as f32 as f64).collect(),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// RDM of `1 - pearson` between masked embeddings of the selected images.
pub fn predicted_rdm(features: &FeatureSet, mask: &Mask, subset: &[usize]) -> Result<Rdm> {
    mask.check_compatible(features.stages())?;
    let n = subset.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("{n} images in subset")));
    }
    let embeddings = subset
        .iter()
        .map(|&i| {
            if i >= features.num_images() {
                return Err(Error::Config(format!("image index {i} out of range")));
            }
            encoder::embed(features, mask, i)
        })
        .collect::<Result<Vec<_>>>()?;
    let image_ids: Vec<String> = subset
        .iter()
        .map(|&i| features.image_ids()[i].clone())
        .collect();
    let mut data = vec![0.0; n * n];
    for p in all_pairs(n) {
        let r = pearson(&embeddings[p.i], &embeddings[p.j]).map_err(|e| match e {
            Error::ZeroVariance(_) => {
                let which = if embedding_is_constant(&embeddings[p.i]) {
                    &image_ids[p.i]
                } else {
                    &image_ids[p.j]
                };
                Error::ZeroVariance(format!("embedding of image {which:?} is constant"))
            }
            other => other,
        })?;
        let d = 1.0 - r;
        data[p.i * n + p.j] = d;
        data[p.j * n + p.i] = d;
    }
    Ok(Rdm { image_ids, data })
}

fn embedding_is_constant(e: &[f64]) -> bool {
    e.iter().all(|&v| v == e[0])
}

/// Leave-one-out squared-Spearman ceiling of one slice.
pub fn noise_ceiling(target: &RdmStack, slice: usize) -> Result<f64> {
    target.slice_index(slice)?;
    let s = target.subjects();
    if s < 2 {
        return Err(Error::Undefined(format!(
            "noise ceiling needs at least 2 subjects, stack has {s}"
        )));
    }
    let vectors = subject_vectors(target, slice)?;
    let total: Vec<f64> = (0..vectors[0].len())
        .map(|e| vectors.iter().map(|v| v[e]).sum())
        .collect();
    let mut acc = 0.0;
    for v in &vectors {
        let others: Vec<f64> = total
            .iter()
            .zip(v)
            .map(|(t, x)| (t - x) / (s - 1) as f64)
            .collect();
        let rho = spearman(v, &others)?;
        acc += rho * rho;
    }
    Ok(acc / s as f64)
}

fn subject_vectors(target: &RdmStack, slice: usize) -> Result<Vec<Vec<f64>>> {
    (0..target.subjects())
        .map(|k| upper_triangle(target.matrix(slice, k)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub per_subject_r2: Vec<f64>,
    pub noise_ceiling: f64,
    pub normalized_score_percent: f64,
}

impl ScoreReport {
    pub fn mean_r2(&self) -> f64 {
        self.per_subject_r2.iter().sum::<f64>() / self.per_subject_r2.len() as f64
    }
}

pub fn score(predicted: &Rdm, target: &RdmStack, slice: usize) -> Result<ScoreReport> {
    score_with_ceiling(predicted, target, slice, None)
}

/// Score with an optional override of the noise ceiling.
pub fn score_with_ceiling(
    predicted: &Rdm,
    target: &RdmStack,
    slice: usize,
    ceiling: Option<f64>,
) -> Result<ScoreReport> {
    target.slice_index(slice)?;
    if predicted.image_ids != target.image_ids() {
        return Err(Error::ImageMismatch(
            "predicted RDM and target stack list different images".into(),
        ));
    }
    let pred = predicted.upper_triangle();
    let per_subject_r2 = subject_vectors(target, slice)?
        .iter()
        .map(|v| spearman(&pred, v).map(|r| r * r))
        .collect::<Result<Vec<_>>>()?;
    let noise_ceiling = match ceiling {
        Some(c) => c,
        None => noise_ceiling(target, slice)?,
    };
    if !(noise_ceiling > 0.0) {
        return Err(Error::Undefined(format!(
            "noise ceiling {noise_ceiling} is not positive"
        )));
    }
    let mean = per_subject_r2.iter().sum::<f64>() / per_subject_r2.len() as f64;
    Ok(ScoreReport {
        per_subject_r2,
        noise_ceiling,
        normalized_score_percent: (100.0 * mean / noise_ceiling).max(0.0),
    })
}
