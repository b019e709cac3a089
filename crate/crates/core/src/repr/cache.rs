//! Binary featurization cache.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "MPEC0001"
//! u32 header length, header JSON (CacheHeader)
//! per record:
//!   u32 id length, id UTF-8
//!   u32 n, n x u32 atomic numbers
//!   u8 flags (bit 0: raw Coulomb matrix present, bit 1: spectrum present)
//!   n*n f64 graph matrix, row-major
//!   [n*n f64 raw Coulomb matrix]
//!   [n f64 eigenvalues, n*n f64 eigenvectors (column k = eigenvector k)]
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LaplacianKind, Normalization, Spectrum};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const CACHE_MAGIC: &[u8; 8] = b"MPEC0001";

const HAS_COULOMB: u8 = 1;
const HAS_SPECTRUM: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub variant: String,
    pub normalization: Normalization,
    pub laplacian: Option<LaplacianKind>,
    pub p: usize,
    /// Hash of the dataset contents and featurization settings.
    pub feature_hash: String,
    pub count: usize,
    /// Hash of the run configuration that produced the file.
    #[serde(default)]
    pub config_hash: String,
}

/// Features of one molecule as stored in the cache.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub atomic_numbers: Vec<u32>,
    /// Matrix the graph convolution runs on (adjacency or normalized Coulomb).
    pub graph: Matrix,
    pub coulomb: Option<Matrix>,
    pub spectrum: Option<Spectrum>,
}

pub fn encode(header: &CacheHeader, records: &[FeatureRecord]) -> Result<Vec<u8>> {
    if header.count != records.len() {
        return Err(Error::Format(format!(
            "header announces {} records but {} were given",
            header.count,
            records.len()
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    let json = serde_json::to_vec(header)?;
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);
    for r in records {
        let n = r.atomic_numbers.len();
        put_u32(&mut out, r.id.len());
        out.extend_from_slice(r.id.as_bytes());
        put_u32(&mut out, n);
        for &z in &r.atomic_numbers {
            out.extend_from_slice(&z.to_le_bytes());
        }
        let flags =
            if r.coulomb.is_some() { HAS_COULOMB } else { 0 } | if r.spectrum.is_some() { HAS_SPECTRUM } else { 0 };
        out.push(flags);
        put_square(&mut out, &r.graph, n, &r.id)?;
        if let Some(c) = &r.coulomb {
            put_square(&mut out, c, n, &r.id)?;
        }
        if let Some(s) = &r.spectrum {
            if s.eigenvalues.len() != n {
                return Err(Error::molecule(&r.id, "spectrum size does not match atom count"));
            }
            put_f64s(&mut out, &s.eigenvalues);
            put_square(&mut out, &s.eigenvectors, n, &r.id)?;
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(CacheHeader, Vec<FeatureRecord>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CACHE_MAGIC {
        return Err(Error::Format("not a feature cache (bad magic)".into()));
    }
    let len = r.u32()?;
    let header: CacheHeader = serde_json::from_slice(r.take(len)?)?;
    let mut records = Vec::with_capacity(header.count.min(1 << 20));
    for _ in 0..header.count {
        let id_len = r.u32()?;
        let id =
            String::from_utf8(r.take(id_len)?.to_vec()).map_err(|_| Error::Format("record id is not UTF-8".into()))?;
        let n = r.u32()?;
        let atomic_numbers = (0..n).map(|_| r.u32().map(|z| z as u32)).collect::<Result<Vec<_>>>()?;
        let flags = r.take(1)?[0];
        let graph = r.square(n)?;
        let coulomb = if flags & HAS_COULOMB != 0 { Some(r.square(n)?) } else { None };
        let spectrum = if flags & HAS_SPECTRUM != 0 {
            let eigenvalues = r.f64s(n)?;
            Some(Spectrum { eigenvalues, eigenvectors: r.square(n)? })
        } else {
            None
        };
        records.push(FeatureRecord { id, atomic_numbers, graph, coulomb, spectrum });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Ok((header, records))
}

pub fn write_cache(path: impl AsRef<Path>, header: &CacheHeader, records: &[FeatureRecord]) -> Result<()> {
    fs::write(path, encode(header, records)?)?;
    Ok(())
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<(CacheHeader, Vec<FeatureRecord>)> {
    decode(&fs::read(path)?)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_square(out: &mut Vec<u8>, m: &Matrix, n: usize, id: &str) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::molecule(id, format!("expected {n}x{n} matrix, got {}x{}", m.rows(), m.cols())));
    }
    put_f64s(out, m.as_slice());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn square(&mut self, n: usize) -> Result<Matrix> {
        Matrix::from_vec(n, n, self.f64s(n * n)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (CacheHeader, Vec<FeatureRecord>) {
        let header = CacheHeader {
            variant: "mol-peco-sym".into(),
            normalization: Normalization::Frobenius,
            laplacian: Some(LaplacianKind::Symmetric),
            p: 4,
            feature_hash: "abc".into(),
            count: 2,
            config_hash: "def".into(),
        };
        let records = vec![
            FeatureRecord {
                id: "a".into(),
                atomic_numbers: vec![8, 1],
                graph: Matrix::from_rows(&[[0.1, 0.2], [0.2, 0.3]]),
                coulomb: Some(Matrix::from_rows(&[[36.8, 4.0], [4.0, 0.5]])),
                spectrum: Some(Spectrum {
                    eigenvalues: vec![0.0, 1.5],
                    eigenvectors: Matrix::from_rows(&[[0.6, 0.8], [0.8, -0.6]]),
                }),
            },
            FeatureRecord {
                id: "β".into(),
                atomic_numbers: vec![6],
                graph: Matrix::from_rows(&[[1.0]]),
                coulomb: None,
                spectrum: None,
            },
        ];
        (header, records)
    }

    #[test]
    fn encode_decode_round_trip() {
        let (h, r) = sample();
        let bytes = encode(&h, &r).unwrap();
        assert_eq!(&bytes[..8], CACHE_MAGIC);
        let (h2, r2) = decode(&bytes).unwrap();
        assert_eq!(h, h2);
        assert_eq!(r, r2);
    }

    #[test]
    fn truncated_and_bad_magic_rejected() {
        let (h, r) = sample();
        let bytes = encode(&h, &r).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
    }
}
