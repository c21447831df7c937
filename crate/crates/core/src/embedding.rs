//! Per-encoder embedding matrices and their binary file format.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "ZSE1" | u32 version=1 | u32 dim | u64 count
//! u16 len + model_id | u32 flags (bit 0 = normalized)
//! count x (u16 len + id)
//! count x dim f32, row-major
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ZSE1";
pub const FORMAT_VERSION: u32 = 1;
pub const FLAG_NORMALIZED: u32 = 1;

/// Tolerance on row norms for matrices flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-3;

/// One encoder's embeddings, one row per document id.
///
/// Construction validates every invariant, so a value of this type is
/// always consistent: unique ids, finite values, unit rows when flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    model_id: String,
    dim: usize,
    ids: Vec<String>,
    rows: Vec<f32>,
    normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingFileHeader {
    pub magic: [u8; 4],
    pub version: u32,
    pub dim: u32,
    pub count: u64,
    pub model_id: String,
    pub flags: u32,
}

impl EmbeddingFileHeader {
    pub fn normalized(&self) -> bool {
        self.flags & FLAG_NORMALIZED != 0
    }
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major `rows` (`ids.len() * dim` values).
    pub fn new(
        model_id: impl Into<String>,
        dim: usize,
        ids: Vec<String>,
        rows: Vec<f32>,
        normalized: bool,
    ) -> Result<Self> {
        let matrix = EmbeddingMatrix {
            model_id: model_id.into(),
            dim,
            ids,
            rows,
            normalized,
        };
        matrix.validate()?;
        Ok(matrix)
    }

    /// Builds a matrix from `(id, row)` pairs.
    pub fn from_rows<I, S>(model_id: impl Into<String>, dim: usize, rows: I, normalized: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut ids = Vec::new();
        let mut flat = Vec::new();
        for (id, row) in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            ids.push(id.into());
            flat.extend_from_slice(&row);
        }
        Self::new(model_id, dim, ids, flat, normalized)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        let expected = self.ids.len().checked_mul(self.dim).ok_or_else(|| {
            Error::Truncated(format!("count {} x dim {} overflows", self.ids.len(), self.dim))
        })?;
        if self.rows.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.rows.len(),
            });
        }
        let mut seen = HashSet::with_capacity(self.ids.len());
        for id in &self.ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for (i, id) in self.ids.iter().enumerate() {
            let row = self.row(i);
            if let Some(column) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    id: id.clone(),
                    column,
                });
            }
            if self.normalized {
                let norm = row_norm(row);
                if norm == 0.0 {
                    return Err(Error::ZeroNormRow(id.clone()));
                }
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::NotNormalized {
                        id: id.clone(),
                        norm,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Row-major payload.
    pub fn as_slice(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.rows[index * self.dim..(index + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.rows.chunks_exact(self.dim))
    }

    /// Position of `id`, by linear scan.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn header(&self) -> EmbeddingFileHeader {
        EmbeddingFileHeader {
            magic: MAGIC,
            version: FORMAT_VERSION,
            dim: self.dim as u32,
            count: self.ids.len() as u64,
            model_id: self.model_id.clone(),
            flags: if self.normalized { FLAG_NORMALIZED } else { 0 },
        }
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// Divides every row by its L2 norm and sets the normalized flag.
pub fn normalize_rows(matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut rows = Vec::with_capacity(matrix.rows.len());
    for (id, row) in matrix.rows() {
        let norm = row_norm(row);
        if norm == 0.0 {
            return Err(Error::ZeroNormRow(id.to_string()));
        }
        rows.extend(row.iter().map(|&v| (f64::from(v) / norm) as f32));
    }
    EmbeddingMatrix::new(
        matrix.model_id.clone(),
        matrix.dim,
        matrix.ids.clone(),
        rows,
        true,
    )
}

fn put_str(out: &mut Vec<u8>, s: &str, what: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::TooLong(what.to_string()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Serializes a matrix into the on-disk byte layout.
pub fn encode_embeddings(matrix: &EmbeddingMatrix) -> Result<Vec<u8>> {
    matrix.validate()?;
    let dim = u32::try_from(matrix.dim).map_err(|_| Error::DimensionMismatch {
        expected: u32::MAX as usize,
        actual: matrix.dim,
    })?;
    let mut out = Vec::with_capacity(32 + matrix.ids.len() * 16 + matrix.rows.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(matrix.ids.len() as u64).to_le_bytes());
    put_str(&mut out, &matrix.model_id, "model_id")?;
    let flags = if matrix.normalized { FLAG_NORMALIZED } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for id in &matrix.ids {
        put_str(&mut out, id, "id")?;
    }
    for v in &matrix.rows {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N, what)?);
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Truncated(format!("{what}: invalid UTF-8")))
    }
}

fn decode_header(reader: &mut Reader<'_>) -> Result<EmbeddingFileHeader> {
    let magic: [u8; 4] = reader.array("magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = reader.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = reader.u32("dim")?;
    if dim == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            actual: 0,
        });
    }
    let count = reader.u64("count")?;
    let model_id = reader.string("model_id")?;
    let flags = reader.u32("flags")?;
    if flags & !FLAG_NORMALIZED != 0 {
        return Err(Error::UnknownFlags(flags));
    }
    Ok(EmbeddingFileHeader {
        magic,
        version,
        dim,
        count,
        model_id,
        flags,
    })
}

/// Parses only the header of an embedding file image.
pub fn decode_header_bytes(bytes: &[u8]) -> Result<EmbeddingFileHeader> {
    decode_header(&mut Reader { buf: bytes, pos: 0 })
}

/// Parses and validates a complete embedding file image.
pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let mut reader = Reader { buf: bytes, pos: 0 };
    let header = decode_header(&mut reader)?;
    let dim = header.dim as usize;

    // Every id entry costs at least two bytes, so an oversized count is
    // rejected before anything is allocated for it.
    let count = usize::try_from(header.count)
        .ok()
        .filter(|&c| c <= reader.remaining() / 2 || c == 0)
        .ok_or_else(|| {
            Error::Truncated(format!(
                "declared count {} exceeds remaining {} bytes",
                header.count,
                reader.remaining()
            ))
        })?;

    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(reader.string("id table")?);
    }

    let payload_len = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Truncated(format!("count {count} x dim {dim} overflows")))?;
    if reader.remaining() < payload_len {
        return Err(Error::Truncated(format!(
            "declared {count}x{dim} f32 payload needs {payload_len} bytes, {} left",
            reader.remaining()
        )));
    }
    let payload = reader.take(payload_len, "payload")?;
    if reader.remaining() != 0 {
        return Err(Error::TrailingBytes(reader.remaining()));
    }
    let rows = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let normalized = header.normalized();
    EmbeddingMatrix::new(header.model_id, dim, ids, rows, normalized)
}

/// Writes `matrix` to `path`. Invariants are checked before any byte is written.
pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_embeddings(matrix)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single() -> EmbeddingMatrix {
        EmbeddingMatrix::new("m", 2, vec!["a".into()], vec![0.0, 0.0], false).unwrap()
    }

    #[test]
    fn minimal_file_layout() {
        let bytes = encode_embeddings(&single()).unwrap();
        // header: 4 + 4 + 4 + 8 + (2 + 1) + 4, id: 2 + 1, payload: 8
        assert_eq!(bytes.len(), 27 + 3 + 8);
        assert_eq!(&bytes[0..4], b"ZSE1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &1u64.to_le_bytes());
        assert_eq!(&bytes[20..22], &1u16.to_le_bytes());
        assert_eq!(bytes[22], b'm');
        assert_eq!(&bytes[23..27], &0u32.to_le_bytes());
        assert_eq!(&bytes[27..30], &[1, 0, b'a']);
        assert_eq!(decode_embeddings(&bytes).unwrap(), single());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = EmbeddingMatrix::new("m", 1, vec!["a".into(), "a".into()], vec![1.0, 2.0], false)
            .unwrap_err();
        assert!(err.to_string().contains("duplicate id"), "{err}");
    }

    #[test]
    fn seeded_payload_is_bit_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ids = (0..100).map(|i| format!("img{i:03}")).collect();
        let rows: Vec<f32> = (0..300).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let m = EmbeddingMatrix::new("clip", 3, ids, rows.clone(), false).unwrap();
        let bytes = encode_embeddings(&m).unwrap();
        let back = decode_embeddings(&bytes).unwrap();
        let written: Vec<u32> = rows.iter().map(|v| v.to_bits()).collect();
        let reread: Vec<u32> = back.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(written, reread);
        assert_eq!(&bytes[bytes.len() - 1200..], &encode_embeddings(&back).unwrap()[bytes.len() - 1200..]);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_embeddings(&single()).unwrap();
        bytes[0] = b'X';
        let err = decode_embeddings(&bytes).unwrap_err();
        assert!(err.to_string().starts_with("bad magic"), "{err}");
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = encode_embeddings(&single()).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_embeddings(&bytes),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn truncated_inside_payload() {
        let m = EmbeddingMatrix::new(
            "m",
            4,
            vec!["a".into(), "b".into()],
            vec![1.0; 8],
            false,
        )
        .unwrap();
        let bytes = encode_embeddings(&m).unwrap();
        let payload_start = bytes.len() - 32;
        for cut in [payload_start + 1, payload_start + 13, bytes.len() - 1] {
            let err = decode_embeddings(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().starts_with("truncated payload"), "{err}");
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_embeddings(&single()).unwrap();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(decode_embeddings(&bytes), Err(Error::TrailingBytes(4))));
    }

    #[test]
    fn huge_declared_count_is_rejected_without_allocating() {
        let mut bytes = encode_embeddings(&single()).unwrap();
        bytes[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_embeddings(&bytes), Err(Error::Truncated(_))));
    }

    #[test]
    fn non_finite_rejected_on_load() {
        let mut bytes = encode_embeddings(&single()).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_embeddings(&bytes), Err(Error::NonFinite { column: 1, .. })));
    }

    #[test]
    fn normalize_three_four_five() {
        let m = EmbeddingMatrix::new("m", 2, vec!["r".into()], vec![3.0, 4.0], false).unwrap();
        let n = normalize_rows(&m).unwrap();
        assert!(n.is_normalized());
        assert!((n.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((n.row(0)[1] - 0.8).abs() < 1e-7);
        assert_eq!(n.ids(), m.ids());
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ids = (0..40).map(|i| i.to_string()).collect();
        let rows = (0..40 * 16).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let once = normalize_rows(&EmbeddingMatrix::new("m", 16, ids, rows, false).unwrap()).unwrap();
        let twice = normalize_rows(&once).unwrap();
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            assert!((a - b).abs() <= 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn normalize_zero_row_names_id() {
        let m = EmbeddingMatrix::new("m", 2, vec!["z9".into()], vec![0.0, 0.0], false).unwrap();
        assert_eq!(normalize_rows(&m).unwrap_err().to_string(), "zero-norm row: z9");
    }

    #[test]
    fn normalized_flag_requires_unit_rows() {
        assert!(EmbeddingMatrix::new("m", 2, vec!["a".into()], vec![3.0, 4.0], true).is_err());
        assert!(EmbeddingMatrix::new("m", 2, vec!["a".into()], vec![0.0, 0.0], true).is_err());
        assert!(EmbeddingMatrix::new("m", 2, vec!["a".into()], vec![0.6, 0.8], true).is_ok());
    }

    #[test]
    fn empty_matrix_round_trips() {
        let m = EmbeddingMatrix::new("dinov2", 8, vec![], vec![], false).unwrap();
        assert_eq!(decode_embeddings(&encode_embeddings(&m).unwrap()).unwrap(), m);
    }
}
