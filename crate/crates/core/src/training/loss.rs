use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    L1,
    Mse,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L1 => "l1",
            LossKind::Mse => "mse",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "l1" => Ok(LossKind::L1),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

/// Weighted mean over subjects of the per-subject reconstruction error.
pub fn pair_loss<T: Copy + Into<f64>>(
    predicted: f64,
    targets: &[T],
    weight: f64,
    kind: LossKind,
) -> f64 {
    pair_loss_and_slope(predicted, targets, weight, kind).0
}

/// Loss together with its derivative with respect to `predicted`.
pub fn pair_loss_and_slope<T: Copy + Into<f64>>(
    predicted: f64,
    targets: &[T],
    weight: f64,
    kind: LossKind,
) -> (f64, f64) {
    let s = targets.len() as f64;
    let (mut loss, mut slope) = (0.0, 0.0);
    for &t in targets {
        let diff = predicted - t.into();
        match kind {
            LossKind::L1 => {
                loss += diff.abs();
                slope += if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
            LossKind::Mse => {
                loss += diff * diff;
                slope += 2.0 * diff;
            }
        }
    }
    (weight * loss / s, weight * slope / s)
}
