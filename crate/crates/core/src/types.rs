//! Domain types shared across the crate: frozen per-stage features, learnable
//! masks, subject RDM stacks and upper-triangle pair indexing.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

/// Tolerance for RDM symmetry and zero-diagonal validation.
pub const RDM_TOLERANCE: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSpec {
    pub name: String,
    pub channels: usize,
    /// Flattened spatial extent.
    pub spatial: usize,
}

impl StageSpec {
    pub fn new(name: impl Into<String>, channels: usize, spatial: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            spatial,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.spatial
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Frozen backbone activations, stored image-major, then stage, channel, spatial.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    image_ids: Vec<String>,
    stages: Vec<StageSpec>,
    data: Vec<f32>,
    stage_offsets: Vec<usize>,
    embedding_len: usize,
}

impl FeatureSet {
    pub fn new(image_ids: Vec<String>, stages: Vec<StageSpec>, data: Vec<f32>) -> Result<Self> {
        validate_stages(&stages).map_err(Error::Decode)?;
        let mut seen = HashSet::with_capacity(image_ids.len());
        for id in &image_ids {
            if !seen.insert(id.as_str()) {
                return Err(FormatError::DuplicateId(id.clone()).into());
            }
        }
        let mut stage_offsets = Vec::with_capacity(stages.len());
        let mut embedding_len = 0usize;
        for stage in &stages {
            stage_offsets.push(embedding_len);
            embedding_len += stage.len();
        }
        let expected = image_ids.len() * embedding_len;
        if data.len() != expected {
            return Err(Error::LengthMismatch(data.len(), expected));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite(pos).into());
        }
        Ok(Self {
            image_ids,
            stages,
            data,
            stage_offsets,
            embedding_len,
        })
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn num_images(&self) -> usize {
        self.image_ids.len()
    }

    /// Length of one concatenated embedding, summed over stages.
    pub fn embedding_len(&self) -> usize {
        self.embedding_len
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Raw concatenated features of one image.
    pub fn image(&self, index: usize) -> &[f32] {
        let start = index * self.embedding_len;
        &self.data[start..start + self.embedding_len]
    }

    pub fn stage(&self, image: usize, stage: usize) -> &[f32] {
        let start = image * self.embedding_len + self.stage_offsets[stage];
        &self.data[start..start + self.stages[stage].len()]
    }

    pub fn stage_offsets(&self) -> &[usize] {
        &self.stage_offsets
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.image_ids.iter().position(|x| x == id)
    }

    /// A new FeatureSet holding the listed images in the listed order.
    pub fn select(&self, ids: &[String]) -> Result<FeatureSet> {
        let lookup: std::collections::HashMap<&str, usize> = self
            .image_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut data = Vec::with_capacity(ids.len() * self.embedding_len);
        for id in ids {
            let idx = *lookup
                .get(id.as_str())
                .ok_or_else(|| Error::UnknownImage(id.clone()))?;
            data.extend_from_slice(self.image(idx));
        }
        FeatureSet::new(ids.to_vec(), self.stages.clone(), data)
    }
}

pub(crate) fn validate_stages(stages: &[StageSpec]) -> std::result::Result<(), FormatError> {
    if stages.is_empty() {
        return Err(FormatError::InvalidShape("no stages".into()));
    }
    let mut names = HashSet::new();
    for stage in stages {
        if stage.channels == 0 || stage.spatial == 0 {
            return Err(FormatError::InvalidShape(format!(
                "stage {:?} has channels={} spatial={}",
                stage.name, stage.channels, stage.spatial
            )));
        }
        if !names.insert(stage.name.as_str()) {
            return Err(FormatError::DuplicateStage(stage.name.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskResolution {
    PerStage,
    PerChannel,
    PerFeature,
}

impl MaskResolution {
    pub const ALL: [MaskResolution; 3] = [
        MaskResolution::PerStage,
        MaskResolution::PerChannel,
        MaskResolution::PerFeature,
    ];

    /// Number of coefficients this resolution assigns to a stage.
    pub fn coefficients_for(self, stage: &StageSpec) -> usize {
        match self {
            MaskResolution::PerStage => 1,
            MaskResolution::PerChannel => stage.channels,
            MaskResolution::PerFeature => stage.channels * stage.spatial,
        }
    }

    /// Coefficient index within a stage for the feature at (channel, spatial).
    #[inline]
    pub fn coefficient_index(self, stage: &StageSpec, channel: usize, position: usize) -> usize {
        match self {
            MaskResolution::PerStage => 0,
            MaskResolution::PerChannel => channel,
            MaskResolution::PerFeature => channel * stage.spatial + position,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MaskResolution::PerStage => "per-stage",
            MaskResolution::PerChannel => "per-channel",
            MaskResolution::PerFeature => "per-feature",
        }
    }
}

impl fmt::Display for MaskResolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskResolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-stage" => Ok(MaskResolution::PerStage),
            "per-channel" => Ok(MaskResolution::PerChannel),
            "per-feature" => Ok(MaskResolution::PerFeature),
            other => Err(Error::Config(format!("unknown mask resolution {other:?}"))),
        }
    }
}

/// Learnable multiplicative coefficients, one array per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    resolution: MaskResolution,
    coefficients: Vec<Vec<f32>>,
}

impl Mask {
    pub fn identity(resolution: MaskResolution, stages: &[StageSpec]) -> Self {
        let coefficients = stages
            .iter()
            .map(|s| vec![1.0; resolution.coefficients_for(s)])
            .collect();
        Self {
            resolution,
            coefficients,
        }
    }

    pub fn from_coefficients(
        resolution: MaskResolution,
        stages: &[StageSpec],
        coefficients: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let mask = Self {
            resolution,
            coefficients,
        };
        mask.check_compatible(stages)?;
        if mask.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite mask coefficient".into()));
        }
        Ok(mask)
    }

    pub fn resolution(&self) -> MaskResolution {
        self.resolution
    }

    pub fn coefficients(&self) -> &[Vec<f32>] {
        &self.coefficients
    }

    pub fn stage_mut(&mut self, stage: usize) -> &mut [f32] {
        &mut self.coefficients[stage]
    }

    pub fn num_coefficients(&self) -> usize {
        self.coefficients.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = f32> + '_ {
        self.coefficients.iter().flatten().copied()
    }

    pub fn check_compatible(&self, stages: &[StageSpec]) -> Result<()> {
        if stages.len() != self.coefficients.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} stages, features have {}",
                self.coefficients.len(),
                stages.len()
            )));
        }
        for (stage, coeffs) in stages.iter().zip(&self.coefficients) {
            let want = self.resolution.coefficients_for(stage);
            if coeffs.len() != want {
                return Err(Error::ShapeMismatch(format!(
                    "stage {:?}: {} coefficients, {} expected at {}",
                    stage.name,
                    coeffs.len(),
                    want,
                    self.resolution
                )));
            }
        }
        Ok(())
    }

    /// All coefficients widened to f64, concatenated over stages.
    pub fn to_flat_f64(&self) -> Vec<f64> {
        self.iter().map(f64::from).collect()
    }

    /// Overwrite coefficients from a flat vector in stage order.
    pub fn set_flat(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.num_coefficients() {
            return Err(Error::LengthMismatch(flat.len(), self.num_coefficients()));
        }
        let mut offset = 0;
        for coeffs in &mut self.coefficients {
            let n = coeffs.len();
            coeffs.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f32) -> Mask {
        Mask {
            resolution: self.resolution,
            coefficients: self
                .coefficients
                .iter()
                .map(|c| c.iter().map(|v| v * factor).collect())
                .collect(),
        }
    }

    /// Apply the mask to a FeatureSet, producing a new one.
    pub fn apply(&self, features: &FeatureSet) -> Result<FeatureSet> {
        self.check_compatible(features.stages())?;
        let mut data = Vec::with_capacity(features.data().len());
        for image in 0..features.num_images() {
            for (s, stage) in features.stages().iter().enumerate() {
                let raw = features.stage(image, s);
                let coeffs = &self.coefficients[s];
                for c in 0..stage.channels {
                    for p in 0..stage.spatial {
                        let k = self.resolution.coefficient_index(stage, c, p);
                        data.push(raw[c * stage.spatial + p] * coeffs[k]);
                    }
                }
            }
        }
        FeatureSet::new(
            features.image_ids().to_vec(),
            features.stages().to_vec(),
            data,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Modality {
    FmriEvc,
    FmriIt,
    MegEarly,
    MegLate,
    Other(String),
}

impl Modality {
    pub fn is_meg(&self) -> bool {
        matches!(self, Modality::MegEarly | Modality::MegLate)
    }

    pub fn is_fmri(&self) -> bool {
        matches!(self, Modality::FmriEvc | Modality::FmriIt)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::FmriEvc => f.write_str("fMRI-EVC"),
            Modality::FmriIt => f.write_str("fMRI-IT"),
            Modality::MegEarly => f.write_str("MEG-early"),
            Modality::MegLate => f.write_str("MEG-late"),
            Modality::Other(s) => write!(f, "other:{s}"),
        }
    }
}

/// One time point: S row-major N×N matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct RdmSlice {
    pub timestamp: Option<f64>,
    pub matrices: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdmStack {
    image_ids: Vec<String>,
    subjects: usize,
    slices: Vec<RdmSlice>,
    modality: Modality,
}

impl RdmStack {
    pub fn new(
        image_ids: Vec<String>,
        modality: Modality,
        slices: Vec<RdmSlice>,
    ) -> std::result::Result<Self, FormatError> {
        let subjects = slices.first().map_or(0, |s| s.matrices.len());
        let stack = Self {
            image_ids,
            subjects,
            slices,
            modality,
        };
        stack.validate()?;
        Ok(stack)
    }

    fn validate(&self) -> std::result::Result<(), FormatError> {
        let n = self.image_ids.len();
        if n < 2 {
            return Err(FormatError::InvalidShape(format!("{n} images")));
        }
        let mut seen = HashSet::new();
        for id in &self.image_ids {
            if !seen.insert(id.as_str()) {
                return Err(FormatError::DuplicateId(id.clone()));
            }
        }
        if self.subjects == 0 {
            return Err(FormatError::InvalidShape("no subjects".into()));
        }
        if self.slices.is_empty() {
            return Err(FormatError::InvalidShape("no slices".into()));
        }
        let timed = self.slices.iter().filter(|s| s.timestamp.is_some()).count();
        if timed != 0 && timed != self.slices.len() {
            return Err(FormatError::Timestamps(
                "mix of timestamped and untimestamped slices".into(),
            ));
        }
        if self.modality.is_fmri() && (self.slices.len() != 1 || timed != 0) {
            return Err(FormatError::Timestamps(
                "fMRI stacks hold exactly one untimestamped slice".into(),
            ));
        }
        if self.modality.is_meg() && timed == 0 {
            return Err(FormatError::Timestamps(
                "MEG stacks require timestamped slices".into(),
            ));
        }
        if timed == 0 && self.slices.len() != 1 {
            return Err(FormatError::Timestamps(
                "untimestamped stacks hold exactly one slice".into(),
            ));
        }
        for pair in self.slices.windows(2) {
            match (pair[0].timestamp, pair[1].timestamp) {
                (Some(a), Some(b)) if a.is_finite() && b.is_finite() && a < b => {}
                (a, b) => {
                    return Err(FormatError::Timestamps(format!(
                        "timestamps not strictly increasing: {a:?} then {b:?}"
                    )))
                }
            }
        }
        if let Some(t) = self
            .slices
            .iter()
            .filter_map(|s| s.timestamp)
            .find(|t| !t.is_finite())
        {
            return Err(FormatError::Timestamps(format!("non-finite timestamp {t}")));
        }
        for (si, slice) in self.slices.iter().enumerate() {
            if slice.matrices.len() != self.subjects {
                return Err(FormatError::InvalidShape(format!(
                    "slice {si} has {} subjects, expected {}",
                    slice.matrices.len(),
                    self.subjects
                )));
            }
            for (k, m) in slice.matrices.iter().enumerate() {
                validate_rdm(m, n, si, k)?;
            }
        }
        Ok(())
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn num_images(&self) -> usize {
        self.image_ids.len()
    }

    pub fn subjects(&self) -> usize {
        self.subjects
    }

    pub fn slices(&self) -> &[RdmSlice] {
        &self.slices
    }

    pub fn modality(&self) -> &Modality {
        &self.modality
    }

    pub fn is_timestamped(&self) -> bool {
        self.slices[0].timestamp.is_some()
    }

    pub fn matrix(&self, slice: usize, subject: usize) -> &[f32] {
        &self.slices[slice].matrices[subject]
    }

    #[inline]
    pub fn entry(&self, slice: usize, subject: usize, pair: PairIndex) -> f32 {
        self.slices[slice].matrices[subject][pair.i * self.image_ids.len() + pair.j]
    }

    pub fn slice_index(&self, slice: usize) -> Result<()> {
        if slice >= self.slices.len() {
            return Err(Error::Config(format!(
                "slice {slice} out of range ({} slices)",
                self.slices.len()
            )));
        }
        Ok(())
    }

    /// Time interval covered by the slices, if timestamped.
    pub fn interval(&self) -> Option<(f64, f64)> {
        let first = self.slices.first()?.timestamp?;
        let last = self.slices.last()?.timestamp?;
        Some((first, last))
    }

    /// Index of the slice whose timestamp is nearest `t`; ties go to the earlier slice.
    pub fn nearest_slice(&self, t: f64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, s) in self.slices.iter().enumerate() {
            if let Some(ts) = s.timestamp {
                let d = (ts - t).abs();
                if d < best_dist {
                    best = i;
                    best_dist = d;
                }
            }
        }
        best
    }

    /// Slice nearest the interval midpoint, or 0 for untimestamped stacks.
    pub fn midpoint_slice(&self) -> usize {
        match self.interval() {
            Some((lo, hi)) => self.nearest_slice(0.5 * (lo + hi)),
            None => 0,
        }
    }
}

fn validate_rdm(
    m: &[f32],
    n: usize,
    slice: usize,
    subject: usize,
) -> std::result::Result<(), FormatError> {
    if m.len() != n * n {
        return Err(FormatError::InvalidShape(format!(
            "matrix {subject} of slice {slice} has {} entries, expected {}",
            m.len(),
            n * n
        )));
    }
    for i in 0..n {
        let d = m[i * n + i];
        if !d.is_finite() || d.abs() > RDM_TOLERANCE {
            return Err(FormatError::NonZeroDiagonal {
                slice,
                subject,
                index: i,
                value: d,
            });
        }
        for j in i + 1..n {
            let a = m[i * n + j];
            let b = m[j * n + i];
            if !a.is_finite() || !b.is_finite() {
                return Err(FormatError::NonFinite(i * n + j));
            }
            let delta = (a - b).abs();
            if delta > RDM_TOLERANCE {
                return Err(FormatError::Asymmetric {
                    slice,
                    subject,
                    row: i,
                    col: j,
                    delta,
                });
            }
        }
    }
    Ok(())
}

/// An upper-triangle pair, `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairIndex {
    pub i: usize,
    pub j: usize,
}

impl PairIndex {
    pub fn new(i: usize, j: usize) -> Result<Self> {
        if i >= j {
            return Err(Error::Config(format!(
                "pair ({i}, {j}) is not upper-triangular"
            )));
        }
        Ok(Self { i, j })
    }
}

/// Row-major upper-triangle pairs of an `n`-image set.
pub fn all_pairs(n: usize) -> impl Iterator<Item = PairIndex> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| PairIndex { i, j }))
}

pub fn pair_count(n: usize) -> Result<usize> {
    if n < 2 {
        return Err(Error::Degenerate(format!("{n} images, need at least 2")));
    }
    Ok(n * (n - 1) / 2)
}

fn square_side(len: usize) -> Result<usize> {
    let n = (len as f64).sqrt().round() as usize;
    if n * n != len {
        return Err(Error::NonSquare { len });
    }
    Ok(n)
}

/// Row-major entries with `i < j` of a square matrix given flat.
pub fn upper_triangle<T: Copy + Into<f64>>(matrix: &[T]) -> Result<Vec<f64>> {
    let n = square_side(matrix.len())?;
    pair_count(n)?;
    Ok(all_pairs(n).map(|p| matrix[p.i * n + p.j].into()).collect())
}

/// Symmetric zero-diagonal matrix from its row-major upper triangle.
pub fn from_upper_triangle(values: &[f64]) -> Result<Vec<f64>> {
    // n(n-1)/2 = len
    let n = ((1.0 + (1.0 + 8.0 * values.len() as f64).sqrt()) / 2.0).round() as usize;
    if n < 2 || n * (n - 1) / 2 != values.len() {
        return Err(Error::NonSquare { len: values.len() });
    }
    let mut m = vec![0.0; n * n];
    for (p, &v) in all_pairs(n).zip(values) {
        m[p.i * n + p.j] = v;
        m[p.j * n + p.i] = v;
    }
    Ok(m)
}
