//! AGF1 feature files.
//!
//! ```text
//! "AGF1" | version u32 | images u32 | stages u32
//! per stage:  name_len u16 | name utf-8 | channels u32 | spatial u32
//! per image:  id_len u16 | id utf-8
//! payload:    f32 LE, image-major, then stage, channel, spatial
//! ```

use std::path::Path;

use super::{put_string, put_u32, read_file, tag_path, write_file, Reader, FORMAT_VERSION};
use crate::error::{FormatError, Result};
use crate::types::{validate_stages, FeatureSet, StageSpec};

pub const MAGIC: &[u8; 4] = b"AGF1";

pub fn encode_features(features: &FeatureSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + features.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, features.num_images(), "image count")?;
    put_u32(&mut out, features.stages().len(), "stage count")?;
    for stage in features.stages() {
        put_string(&mut out, &stage.name)?;
        put_u32(&mut out, stage.channels, "channels")?;
        put_u32(&mut out, stage.spatial, "spatial")?;
    }
    for id in features.image_ids() {
        put_string(&mut out, id)?;
    }
    for v in features.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version()?;
    let images = r.u32()? as usize;
    let stage_count = r.u32()? as usize;
    // each stage header is at least 10 bytes
    if stage_count.saturating_mul(10) > r.remaining() {
        return Err(FormatError::Truncated {
            offset: 16,
            needed: stage_count.saturating_mul(10),
            available: r.remaining(),
        }
        .into());
    }
    let mut stages = Vec::with_capacity(stage_count);
    for _ in 0..stage_count {
        let name = r.string("stage name")?;
        let channels = r.u32()? as usize;
        let spatial = r.u32()? as usize;
        stages.push(StageSpec::new(name, channels, spatial));
    }
    validate_stages(&stages)?;
    let ids = r.strings(images, "image id")?;
    let per_image = stages.iter().try_fold(0usize, |acc, s| {
        s.channels
            .checked_mul(s.spatial)
            .and_then(|n| acc.checked_add(n))
    });
    let total = per_image
        .and_then(|p| p.checked_mul(images))
        .ok_or(FormatError::SizeOverflow("feature payload"))?;
    let data = r.f32s(total, 0)?;
    r.finish()?;
    FeatureSet::new(ids, stages, data)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    decode_features(&read_file(path)?).map_err(tag_path(path))
}

pub fn write_features(features: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_features(features)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn sample() -> FeatureSet {
        let stages = vec![
            StageSpec::new("layer0", 2, 3),
            StageSpec::new("layer1", 4, 1),
        ];
        let data = (0..30).map(|k| (k as f32 * 0.731).sin()).collect();
        FeatureSet::new(vec!["a".into(), "β".into(), "c".into()], stages, data).unwrap()
    }

    fn kind(bytes: &[u8]) -> FormatError {
        match decode_features(bytes) {
            Err(Error::Decode(e)) => e,
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let fs = sample();
        let bytes = encode_features(&fs).unwrap();
        let back = decode_features(&bytes).unwrap();
        assert_eq!(back, fs);
        assert_eq!(encode_features(&back).unwrap(), bytes);
    }

    #[test]
    fn corruption_cases() {
        let bytes = encode_features(&sample()).unwrap();
        assert!(matches!(
            kind(&bytes[..bytes.len() - 1]),
            FormatError::Truncated { .. }
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(kind(&extra), FormatError::TrailingBytes(1)));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(kind(&magic), FormatError::BadMagic { .. }));
        let mut nan = bytes.clone();
        let at = nan.len() - 4;
        nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(kind(&nan), FormatError::NonFinite(29)));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(kind(&version), FormatError::UnsupportedVersion(9)));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let stages = vec![StageSpec::new("s", 1, 1)];
        let fs = FeatureSet::new(vec!["aa".into(), "ab".into()], stages, vec![1.0, 2.0]).unwrap();
        let mut bytes = encode_features(&fs).unwrap();
        // second id "ab" -> "aa"
        let pos = bytes.windows(2).rposition(|w| w == b"ab").unwrap();
        bytes[pos + 1] = b'a';
        assert!(matches!(kind(&bytes), FormatError::DuplicateId(_)));
    }

    #[test]
    fn payload_size_for_five_stage_layout() {
        let channels = [64usize, 256, 512, 1024, 2048];
        let stages: Vec<StageSpec> = channels
            .iter()
            .enumerate()
            .map(|(k, &c)| StageSpec::new(format!("layer{k}"), c, 1))
            .collect();
        let ids: Vec<String> = (0..92).map(|i| format!("{i:03}")).collect();
        let header: usize = 16
            + stages.iter().map(|s| 2 + s.name.len() + 8).sum::<usize>()
            + ids.iter().map(|s| 2 + s.len()).sum::<usize>();
        let fs = FeatureSet::new(ids, stages, vec![0.5; 92 * 3904]).unwrap();
        let bytes = encode_features(&fs).unwrap();
        assert_eq!(bytes.len() - header, 1_436_672);
    }

    proptest! {
        #[test]
        fn mutated_headers_never_panic(pos in 0usize..64, value in any::<u8>()) {
            let mut bytes = encode_features(&sample()).unwrap();
            if pos < bytes.len() {
                bytes[pos] = value;
            }
            let _ = decode_features(&bytes);
        }

        #[test]
        fn random_sets_round_trip(
            images in 1usize..5,
            shape in prop::collection::vec((1usize..4, 1usize..4), 1..4),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let stages: Vec<StageSpec> = shape.iter().enumerate()
                .map(|(k, &(c, s))| StageSpec::new(format!("s{k}"), c, s)).collect();
            let len: usize = stages.iter().map(StageSpec::len).sum();
            let data = (0..images * len).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let ids = (0..images).map(|i| format!("id{i}")).collect();
            let fs = FeatureSet::new(ids, stages, data).unwrap();
            let back = decode_features(&encode_features(&fs).unwrap()).unwrap();
            prop_assert_eq!(
                back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                fs.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(back, fs);
        }
    }
}
