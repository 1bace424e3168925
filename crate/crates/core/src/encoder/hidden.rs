use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::atomic_write;
use crate::linalg::Matrix;
use crate::syntax::{Span, Terminal};
use crate::{Error, Result};

pub const HIDDEN_MAGIC: &[u8; 4] = b"CHL1";

/// Per-terminal hidden vectors of one sample, `n x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenMatrix {
    pub sample_id: String,
    /// 1-based encoder layer the rows were taken from.
    pub layer: usize,
    pub model: String,
    pub rows: Matrix,
    /// Byte span of the terminal behind each row.
    pub spans: Vec<Span>,
}

impl HiddenMatrix {
    pub fn new(
        sample_id: impl Into<String>,
        layer: usize,
        model: impl Into<String>,
        rows: Matrix,
        spans: Vec<Span>,
    ) -> Result<Self> {
        let h = Self {
            sample_id: sample_id.into(),
            layer,
            model: model.into(),
            rows,
            spans,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn n(&self) -> usize {
        self.rows.rows()
    }

    pub fn width(&self) -> usize {
        self.rows.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.spans.len() != self.rows.rows() {
            return Err(Error::Alignment(format!(
                "`{}`: {} rows but {} spans",
                self.sample_id,
                self.rows.rows(),
                self.spans.len()
            )));
        }
        if let Some(i) = self.rows.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "`{}` row {} column {}",
                self.sample_id,
                i / self.rows.cols().max(1),
                i % self.rows.cols().max(1)
            )));
        }
        Ok(())
    }

    /// Checks that the rows line up with the sample's terminals.
    pub fn check_alignment(&self, terminals: &[Terminal]) -> Result<()> {
        if self.n() != terminals.len() {
            return Err(Error::Alignment(format!(
                "`{}` has {} hidden rows but {} terminals",
                self.sample_id,
                self.n(),
                terminals.len()
            )));
        }
        if let Some(i) = (0..self.n()).find(|&i| self.spans[i] != terminals[i].span) {
            return Err(Error::Alignment(format!(
                "`{}` row {i} spans {:?}, terminal spans {:?}",
                self.sample_id, self.spans[i], terminals[i].span
            )));
        }
        Ok(())
    }
}

/// Averages subword rows into terminal rows: each terminal takes the mean of
/// every subword whose span overlaps its own.
pub fn pool_by_spans(subword_rows: &Matrix, subword_spans: &[Span], terminals: &[Terminal]) -> Result<Matrix> {
    if subword_rows.rows() != subword_spans.len() {
        return Err(Error::Shape(format!(
            "{} subword rows but {} spans",
            subword_rows.rows(),
            subword_spans.len()
        )));
    }
    let mut out = Matrix::zeros(terminals.len(), subword_rows.cols());
    for (t, term) in terminals.iter().enumerate() {
        let covering: Vec<usize> = (0..subword_spans.len())
            .filter(|&s| subword_spans[s].overlaps(&term.span))
            .collect();
        if covering.is_empty() {
            return Err(Error::Alignment(format!(
                "terminal {t} at {:?} has no covering subword",
                term.span
            )));
        }
        let row = out.row_mut(t);
        for &s in &covering {
            row.iter_mut().zip(subword_rows.row(s)).for_each(|(a, b)| *a += b);
        }
        let k = covering.len() as f64;
        row.iter_mut().for_each(|v| *v /= k);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    sample_id: String,
    layer: usize,
    model: String,
    spans: Vec<[usize; 2]>,
}

/// Metadata file stored next to a hidden-state file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Serializes the matrix rows in the interchange layout. Entries are written
/// as `f32`, so only `f32`-representable matrices roundtrip bit-for-bit.
pub fn hidden_to_bytes(rows: &Matrix) -> Result<Vec<u8>> {
    let n = u32::try_from(rows.rows()).map_err(|_| Error::Shape("too many rows".into()))?;
    let d = u32::try_from(rows.cols()).map_err(|_| Error::Shape("too many columns".into()))?;
    let mut out = Vec::with_capacity(12 + rows.data().len() * 4);
    out.extend_from_slice(HIDDEN_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for v in rows.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parses the interchange layout into a matrix.
pub fn hidden_from_bytes(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes, no magic", bytes.len())));
    }
    if &bytes[..4] != HIDDEN_MAGIC {
        return Err(Error::BadMagic { expected: "CHL1" });
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated("header shorter than 12 bytes".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (n, d) = (word(4), word(8));
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::Shape(format!("{n}x{d} overflows")))?;
    let body = &bytes[12..];
    if body.len() < expected {
        return Err(Error::Truncated(format!(
            "{n}x{d} matrix needs {expected} bytes, found {}",
            body.len()
        )));
    }
    if body.len() > expected {
        return Err(Error::Shape(format!(
            "{} trailing bytes after a {n}x{d} matrix",
            body.len() - expected
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("entry {i}")));
    }
    Matrix::from_vec(n, d, data)
}

/// Writes the matrix file and its metadata sidecar.
pub fn write_hidden(hidden: &HiddenMatrix, path: &Path) -> Result<()> {
    hidden.validate()?;
    atomic_write(path, &hidden_to_bytes(&hidden.rows)?)?;
    let meta = Sidecar {
        sample_id: hidden.sample_id.clone(),
        layer: hidden.layer,
        model: hidden.model.clone(),
        spans: hidden.spans.iter().map(|s| [s.start, s.end]).collect(),
    };
    atomic_write(&sidecar_path(path), &serde_json::to_vec_pretty(&meta)?)
}

/// Reads a matrix file and its sidecar, validating format and consistency.
pub fn read_hidden(path: &Path) -> Result<HiddenMatrix> {
    let rows = hidden_from_bytes(&fs::read(path)?)?;
    let meta: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    HiddenMatrix::new(
        meta.sample_id,
        meta.layer,
        meta.model,
        rows,
        meta.spans.iter().map(|[s, e]| Span::new(*s, *e)).collect(),
    )
}

/// [`read_hidden`] plus agreement with the sample's terminals.
pub fn read_hidden_aligned(path: &Path, terminals: &[Terminal]) -> Result<HiddenMatrix> {
    let h = read_hidden(path)?;
    h.check_alignment(terminals)?;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hidden(n: usize, d: usize) -> HiddenMatrix {
        let mut rows = Matrix::random_normal(n, d, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        rows.round_to_f32();
        let spans = (0..n).map(|i| Span::new(2 * i, 2 * i + 1)).collect();
        HiddenMatrix::new("s1", 2, "test", rows, spans).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s1.chl");
        let h = hidden(5, 7);
        write_hidden(&h, &path).unwrap();
        let back = read_hidden(&path).unwrap();
        assert_eq!(back, h);
        let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.rows), bits(&h.rows));
    }

    #[test]
    fn format_errors_are_distinct() {
        let bytes = hidden_to_bytes(&hidden(3, 2).rows).unwrap();
        assert_eq!(&bytes[..4], b"CHL1");
        assert_eq!(bytes.len(), 12 + 3 * 2 * 4);
        assert!(matches!(
            hidden_from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(hidden_from_bytes(&bytes[..10]), Err(Error::Truncated(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(hidden_from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(hidden_from_bytes(&long), Err(Error::Shape(_))));
        let mut nan = bytes;
        nan[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(hidden_from_bytes(&nan), Err(Error::NonFinite(_))));
    }

    #[test]
    fn row_count_must_match_terminals() {
        let h = hidden(2, 3);
        let terms: Vec<Terminal> = (0..3)
            .map(|i| Terminal {
                label: "identifier".into(),
                span: Span::new(2 * i, 2 * i + 1),
            })
            .collect();
        assert!(matches!(h.check_alignment(&terms), Err(Error::Alignment(_))));
        assert!(h.check_alignment(&terms[..2]).is_ok());
    }

    #[test]
    fn pooling_averages_overlapping_subwords() {
        let rows = Matrix::from_rows(&[vec![1.0, 0.0], vec![3.0, 2.0], vec![10.0, 10.0]]).unwrap();
        let subwords = [Span::new(0, 2), Span::new(2, 5), Span::new(6, 8)];
        let terminals = vec![
            Terminal {
                label: "identifier".into(),
                span: Span::new(0, 5),
            },
            Terminal {
                label: "integer".into(),
                span: Span::new(6, 7),
            },
        ];
        let pooled = pool_by_spans(&rows, &subwords, &terminals).unwrap();
        let oracle = |idx: &[usize]| -> Vec<f64> {
            (0..2)
                .map(|c| idx.iter().map(|&i| rows.get(i, c)).sum::<f64>() / idx.len() as f64)
                .collect()
        };
        assert_eq!(pooled.row(0), oracle(&[0, 1]).as_slice());
        assert_eq!(pooled.row(1), oracle(&[2]).as_slice());

        let orphan = [Terminal {
            label: "x".into(),
            span: Span::new(5, 6),
        }];
        assert!(matches!(
            pool_by_spans(&rows, &subwords, &orphan),
            Err(Error::Alignment(_))
        ));
    }
}
