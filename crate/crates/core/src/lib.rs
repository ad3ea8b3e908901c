// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod report;
pub mod similarity;
pub mod training;
pub mod types;

pub use error::{Error, FormatError, Result};
pub use types::{
    FeatureSet, Mask, MaskResolution, Modality, PairIndex, RdmSlice, RdmStack, StageSpec,
};
