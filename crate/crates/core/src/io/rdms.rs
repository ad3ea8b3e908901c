//! AGR1 RDM stack files.
//!
//! ```text
//! "AGR1" | version u32 | modality u8 [| name_len u16 | name, when modality = 255]
//! subjects u32 | images u32 | slices u32
//! per image:  id_len u16 | id utf-8
//! per slice:  timestamp f64 (NaN = none) | subjects x (images x images) f32 LE, row-major
//! ```
//!
//! Modality tags: 0 fMRI-EVC, 1 fMRI-IT, 2 MEG-early, 3 MEG-late, 255 other.

use std::path::Path;

use super::{put_string, put_u32, read_file, tag_path, write_file, Reader, FORMAT_VERSION};
use crate::error::{FormatError, Result};
use crate::types::{Modality, RdmSlice, RdmStack};

pub const MAGIC: &[u8; 4] = b"AGR1";
const OTHER_TAG: u8 = 255;

fn modality_tag(m: &Modality) -> u8 {
    match m {
        Modality::FmriEvc => 0,
        Modality::FmriIt => 1,
        Modality::MegEarly => 2,
        Modality::MegLate => 3,
        Modality::Other(_) => OTHER_TAG,
    }
}

pub fn encode_rdms(stack: &RdmStack) -> Result<Vec<u8>> {
    let n = stack.num_images();
    let mut out =
        Vec::with_capacity(64 + stack.slices().len() * (8 + stack.subjects() * n * n * 4));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(modality_tag(stack.modality()));
    if let Modality::Other(name) = stack.modality() {
        put_string(&mut out, name)?;
    }
    put_u32(&mut out, stack.subjects(), "subject count")?;
    put_u32(&mut out, n, "image count")?;
    put_u32(&mut out, stack.slices().len(), "slice count")?;
    for id in stack.image_ids() {
        put_string(&mut out, id)?;
    }
    for slice in stack.slices() {
        out.extend_from_slice(&slice.timestamp.unwrap_or(f64::NAN).to_le_bytes());
        for m in &slice.matrices {
            for v in m {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_rdms(bytes: &[u8]) -> Result<RdmStack> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version()?;
    let modality = match r.u8()? {
        0 => Modality::FmriEvc,
        1 => Modality::FmriIt,
        2 => Modality::MegEarly,
        3 => Modality::MegLate,
        OTHER_TAG => Modality::Other(r.string("modality name")?),
        t => return Err(FormatError::UnknownModality(t).into()),
    };
    let subjects = r.u32()? as usize;
    let images = r.u32()? as usize;
    let slice_count = r.u32()? as usize;
    let ids = r.strings(images, "image id")?;
    let matrix = images
        .checked_mul(images)
        .ok_or(FormatError::SizeOverflow("matrix"))?;
    let slice_bytes = matrix
        .checked_mul(subjects)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(8))
        .ok_or(FormatError::SizeOverflow("slice"))?;
    let needed = slice_bytes
        .checked_mul(slice_count)
        .ok_or(FormatError::SizeOverflow("payload"))?;
    if needed > r.remaining() {
        return Err(FormatError::Truncated {
            offset: bytes.len() - r.remaining(),
            needed,
            available: r.remaining(),
        }
        .into());
    }
    let mut slices = Vec::with_capacity(slice_count);
    for s in 0..slice_count {
        let t = r.f64()?;
        let timestamp = if t.is_nan() { None } else { Some(t) };
        let matrices = (0..subjects)
            .map(|k| r.f32s(matrix, (s * subjects + k) * matrix))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        slices.push(RdmSlice {
            timestamp,
            matrices,
        });
    }
    r.finish()?;
    Ok(RdmStack::new(ids, modality, slices)?)
}

pub fn read_rdms(path: impl AsRef<Path>) -> Result<RdmStack> {
    let path = path.as_ref();
    decode_rdms(&read_file(path)?).map_err(tag_path(path))
}

pub fn write_rdms(stack: &RdmStack, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_rdms(stack)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::types::from_upper_triangle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(
        n: usize,
        subjects: usize,
        timestamps: &[Option<f64>],
        modality: Modality,
    ) -> RdmStack {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64 * 31 + subjects as u64);
        let slices = timestamps
            .iter()
            .map(|&timestamp| RdmSlice {
                timestamp,
                matrices: (0..subjects)
                    .map(|_| {
                        let upper: Vec<f64> = (0..n * (n - 1) / 2)
                            .map(|_| rng.random_range(0.0..2.0))
                            .collect();
                        from_upper_triangle(&upper)
                            .unwrap()
                            .into_iter()
                            .map(|v| v as f32)
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        let ids = (0..n).map(|i| format!("img{i:03}")).collect();
        RdmStack::new(ids, modality, slices).unwrap()
    }

    fn kind(bytes: &[u8]) -> FormatError {
        match decode_rdms(bytes) {
            Err(Error::Decode(e)) => e,
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn fmri_round_trip_and_size() {
        let stack = random_stack(92, 15, &[None], Modality::FmriEvc);
        let bytes = encode_rdms(&stack).unwrap();
        let header = 4 + 4 + 1 + 12 + 92 * (2 + 6) + 8;
        assert_eq!(bytes.len() - header, 507_840);
        let back = decode_rdms(&bytes).unwrap();
        assert_eq!(back, stack);
        assert_eq!(encode_rdms(&back).unwrap(), bytes);
    }

    #[test]
    fn meg_and_other_round_trip() {
        let meg = random_stack(
            6,
            3,
            &[Some(-0.1), Some(0.0), Some(0.25)],
            Modality::MegLate,
        );
        assert_eq!(decode_rdms(&encode_rdms(&meg).unwrap()).unwrap(), meg);
        let other = random_stack(4, 1, &[None], Modality::Other("predicted".into()));
        assert_eq!(decode_rdms(&encode_rdms(&other).unwrap()).unwrap(), other);
    }

    #[test]
    fn diagonal_entry_rejected() {
        let stack = random_stack(5, 2, &[None], Modality::FmriIt);
        let mut bytes = encode_rdms(&stack).unwrap();
        // subject 0, entry (1, 1)
        let payload = bytes.len() - 2 * 25 * 4;
        let at = payload + 6 * 4;
        bytes[at..at + 4].copy_from_slice(&0.1f32.to_le_bytes());
        assert!(matches!(
            kind(&bytes),
            FormatError::NonZeroDiagonal { index: 1, .. }
        ));
    }

    #[test]
    fn asymmetry_reports_coordinates() {
        let stack = random_stack(5, 1, &[None], Modality::FmriIt);
        let mut bytes = encode_rdms(&stack).unwrap();
        let payload = bytes.len() - 25 * 4;
        let at = payload + (2 * 5 + 4) * 4;
        bytes[at..at + 4].copy_from_slice(&5.0f32.to_le_bytes());
        assert!(matches!(
            kind(&bytes),
            FormatError::Asymmetric { row: 2, col: 4, .. }
        ));
    }

    #[test]
    fn structural_errors() {
        let bytes = encode_rdms(&random_stack(4, 2, &[None], Modality::FmriIt)).unwrap();
        assert!(matches!(
            kind(&bytes[..bytes.len() - 1]),
            FormatError::Truncated { .. }
        ));
        let mut tag = bytes.clone();
        tag[8] = 7;
        assert!(matches!(kind(&tag), FormatError::UnknownModality(7)));
        let mut fmri_timed = bytes.clone();
        let at = 4 + 4 + 1 + 12 + 4 * 8;
        fmri_timed[at..at + 8].copy_from_slice(&0.5f64.to_le_bytes());
        assert!(matches!(kind(&fmri_timed), FormatError::Timestamps(_)));
        let mut huge = bytes.clone();
        huge[13..17].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(kind(&huge), FormatError::Truncated { .. }));
    }
}
