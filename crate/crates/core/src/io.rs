//! The `SEMB` embedding file format.
//!
//! Layout, all little-endian:
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..4   | magic `b"SEMB"`                           |
//! | 4..6   | version, `u16` = 1                        |
//! | 6..8   | kind code, `u16` (0 video, 1 phrases, 2 step texts, 3 slots) |
//! | 8..12  | length N, `u32`                           |
//! | 12..16 | dim d, `u32`                              |
//! | 16..   | N·d `f32` values, row-major               |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::types::{EmbeddingSequence, SequenceKind};

pub const MAGIC: &[u8; 4] = b"SEMB";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

/// Serializes a sequence to bytes. Values are rounded to `f32`.
pub fn encode_embedding(seq: &EmbeddingSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * seq.len() * seq.dim());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&seq.kind().code().to_le_bytes());
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    encode_f32_payload(seq.data().as_slice(), &mut out);
    out
}

/// Parses bytes produced by [`encode_embedding`]. `path` is used only in
/// error messages.
pub fn decode_embedding(bytes: &[u8], path: &Path) -> Result<EmbeddingSequence> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let kind = SequenceKind::from_code(u16::from_le_bytes([bytes[6], bytes[7]]))?;
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if n == 0 || d == 0 {
        return Err(Error::EmptySequence);
    }
    let expected = HEADER_LEN + 4 * n * d;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let values = decode_f32_payload(&bytes[HEADER_LEN..expected]);
    EmbeddingSequence::new(Matrix::from_vec(n, d, values)?, kind)
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding(&bytes, path)
}

/// Writes `seq` to `path`. Non-finite values are rejected before the file is
/// touched.
pub fn write_embedding_file(seq: &EmbeddingSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some((row, col)) = seq.data().find_non_finite() {
        return Err(Error::NonFinite { row, col });
    }
    fs::write(path, encode_embedding(seq)).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_f32_payload(values: &[f64], out: &mut Vec<u8>) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub(crate) fn decode_f32_payload(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(rows: &[&[f64]]) -> EmbeddingSequence {
        EmbeddingSequence::from_rows(rows, SequenceKind::Phrases).unwrap()
    }

    #[test]
    fn single_value_file_is_twenty_bytes() {
        let s = seq(&[&[0.5]]);
        let bytes = encode_embedding(&s);
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"SEMB");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..8], &[1, 0]);
        assert_eq!(&bytes[8..16], &[1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[16..], &0.5f32.to_le_bytes());
    }

    #[test]
    fn round_trip_two_by_three() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.semb");
        let s = seq(&[&[1.0, 2.0, 3.0], &[-0.1, 0.2, 1e-3]]);
        write_embedding_file(&s, &p).unwrap();
        let back = read_embedding_file(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.dim(), 3);
        assert_eq!(back, s.to_f32_precision());
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode_embedding(&seq(&[&[1.0, 2.0]]));
        bytes[0] = b'X';
        assert!(matches!(
            decode_embedding(&bytes, Path::new("x")),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_rows() {
        let s = seq(&[&[1.0], &[2.0], &[3.0], &[4.0], &[5.0]]);
        let bytes = encode_embedding(&s);
        // keep the header declaring 5 rows, but only 3 rows of payload
        let cut = &bytes[..HEADER_LEN + 3 * 4];
        assert!(matches!(
            decode_embedding(cut, Path::new("x")),
            Err(Error::TruncatedPayload {
                expected: 36,
                found: 28,
                ..
            })
        ));
    }

    #[test]
    fn zero_shape_and_non_finite_are_distinct_errors() {
        let mut bytes = encode_embedding(&seq(&[&[1.0]]));
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_embedding(&bytes, Path::new("x")),
            Err(Error::EmptySequence)
        ));

        let mut bytes = encode_embedding(&seq(&[&[1.0]]));
        bytes[16..20].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(
            decode_embedding(&bytes, Path::new("x")),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn nan_never_reaches_disk() {
        // a NaN sequence cannot be constructed, so nothing can be written
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.semb");
        let m = Matrix::from_rows(&[[0.5, f64::NAN]]);
        let r = EmbeddingSequence::new(m, SequenceKind::Video)
            .and_then(|s| write_embedding_file(&s, &p));
        assert!(matches!(r, Err(Error::NonFinite { row: 0, col: 1 })));
        assert!(!p.exists());
    }

    proptest! {
        #[test]
        fn file_round_trip_is_f32_cast(
            n in 1usize..6,
            d in 1usize..6,
            seed in proptest::collection::vec(-1e6f64..1e6, 36),
            kind in 0u16..4,
        ) {
            let data = Matrix::from_fn(n, d, |i, j| seed[i * 6 + j]);
            let s = EmbeddingSequence::new(data, SequenceKind::from_code(kind).unwrap()).unwrap();
            let back = decode_embedding(&encode_embedding(&s), Path::new("p")).unwrap();
            prop_assert_eq!(back, s.to_f32_precision());
        }
    }
}
