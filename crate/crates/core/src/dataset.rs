//! Binary dataset files of normalized phase matrices.
//!
//! Layout (little-endian): magic `KBPS`, u32 version = 1, u32 side M,
//! u64 sample count, u8 value width (4), then count·M² f32 values, row-major
//! per sample.

use std::path::Path;

use crate::channel::{PhaseDomain, PhaseShiftMatrix};
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic, Reader};

pub const MAGIC: &[u8; 4] = b"KBPS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 21;

/// Largest f32 below 1.
const F32_BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub side: usize,
    pub samples: Vec<PhaseShiftMatrix>,
}

impl Dataset {
    pub fn new(side: usize, samples: Vec<PhaseShiftMatrix>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.side() != side {
                return Err(Error::shape(
                    format!("{side}×{side} samples"),
                    format!("sample {i} of side {}", s.side()),
                ));
            }
            if s.domain() != PhaseDomain::Normalized {
                return Err(Error::Domain(format!("sample {i} is not normalized")));
            }
        }
        Ok(Dataset { side, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let per = self.side * self.side;
        let mut out = Vec::with_capacity(HEADER_LEN + self.samples.len() * per * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.side as u32).to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        out.push(4);
        for s in &self.samples {
            for &v in s.values() {
                out.extend_from_slice(&(v as f32).min(F32_BELOW_ONE).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let side = r.u32("side")? as usize;
        let count = r.u64("sample count")?;
        let width_at = r.offset();
        let width = r.u8("value width")?;
        if width != 4 {
            return Err(Error::format(width_at, format!("unsupported value width {width}")));
        }
        if side == 0 {
            return Err(Error::format(8, "surface side is zero"));
        }
        let per = side * side;
        let expected = (count as u128) * (per as u128) * 4;
        if expected != r.remaining() as u128 {
            return Err(Error::format(
                bytes.len() as u64,
                format!("payload of {} bytes, expected {expected}", r.remaining()),
            ));
        }
        let mut samples = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut values = Vec::with_capacity(per);
            for _ in 0..per {
                let at = r.offset();
                let v = r.f32("value")?;
                if !(0.0..1.0).contains(&v) {
                    return Err(Error::format(at, format!("value {v} outside [0, 1)")));
                }
                values.push(f64::from(v));
            }
            samples.push(PhaseShiftMatrix::new(side, values, PhaseDomain::Normalized)?);
        }
        r.finish()?;
        Ok(Dataset { side, samples })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    /// Splits into consecutive, disjoint parts sized by [`split_counts`].
    pub fn split(&self, weights: &[f64]) -> Result<Vec<Dataset>> {
        let counts = split_counts(self.samples.len(), weights)?;
        let mut start = 0;
        Ok(counts
            .into_iter()
            .map(|c| {
                let part = self.samples[start..start + c].to_vec();
                start += c;
                Dataset {
                    side: self.side,
                    samples: part,
                }
            })
            .collect())
    }
}

/// Part sizes proportional to `weights`, rounded by largest remainder (ties
/// go to the earlier part) so they sum to `total`.
pub fn split_counts(total: usize, weights: &[f64]) -> Result<Vec<usize>> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) || sum <= 0.0 {
        return Err(Error::config(format!("invalid split weights {weights:?}")));
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_split() {
        assert_eq!(split_counts(1000, &[10.0, 1.0, 1.0]).unwrap(), vec![834, 83, 83]);
        assert_eq!(
            split_counts(72_000, &[10.0, 1.0, 1.0]).unwrap(),
            vec![60_000, 6_000, 6_000]
        );
        assert_eq!(split_counts(5, &[1.0, 1.0]).unwrap(), vec![3, 2]);
        assert!(split_counts(5, &[]).is_err());
        assert!(split_counts(5, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let ds = Dataset::new(2, vec![PhaseShiftMatrix::zeros(2, PhaseDomain::Normalized)]).unwrap();
        let mut bytes = ds.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Dataset::from_bytes(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncation_and_bad_values_are_rejected() {
        let ds = Dataset::new(2, vec![PhaseShiftMatrix::zeros(2, PhaseDomain::Normalized); 3]).unwrap();
        let bytes = ds.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 3 * 4 * 4);
        assert!(matches!(
            Dataset::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
        assert!(matches!(Dataset::from_bytes(&bytes[..10]), Err(Error::Format { .. })));

        let mut bad = bytes.clone();
        bad[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(matches!(
            Dataset::from_bytes(&bad),
            Err(Error::Format { offset, .. }) if offset == HEADER_LEN as u64
        ));

        let mut ver = bytes;
        ver[4] = 2;
        assert!(matches!(
            Dataset::from_bytes(&ver),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn values_near_one_stay_below_one() {
        let m = PhaseShiftMatrix::new(1, vec![1.0 - 1e-12], PhaseDomain::Normalized).unwrap();
        let ds = Dataset::new(1, vec![m]).unwrap();
        let back = Dataset::from_bytes(&ds.to_bytes()).unwrap();
        assert!(back.samples[0].values()[0] < 1.0);
    }

    #[test]
    fn raw_samples_are_rejected() {
        assert!(Dataset::new(1, vec![PhaseShiftMatrix::zeros(1, PhaseDomain::Raw)]).is_err());
    }
}
