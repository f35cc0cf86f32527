//! Binary dataset container.
//!
//! Layout, all integers u32 little-endian: magic `C2AF`, version, record type
//! (0 = dataset), V, N, T, K, then V widths, then N labels, then for each view
//! N·T·Dᵛ f32 LE values in `[sample][time][feature]` order.

use std::fs;
use std::path::Path;

use super::dataset::{MultiViewDataset, Sample};
use crate::error::{Error, Result};
use crate::math::Tensor;

pub const MAGIC: [u8; 4] = *b"C2AF";
pub const VERSION: u32 = 1;
pub const RECORD_DATASET: u32 = 0;
pub const RECORD_CHECKPOINT: u32 = 1;

/// Bounds-checked little-endian reader.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::TruncatedPayload {
                offset: self.pos,
                needed: n,
            }),
        }
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Magic, version and record type.
    pub(crate) fn header(&mut self, record: u32) -> Result<()> {
        let magic: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let found = self.u32()?;
        if found != record {
            return Err(Error::RecordType { found, expected: record });
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Malformed(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub(crate) fn write_header(out: &mut Vec<u8>, record: u32) {
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&record.to_le_bytes());
}

fn u32_field(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::InvalidArgument(format!("{what} {value} exceeds u32")))
}

/// Values are stored as f32; anything not representable in f32 is rounded.
pub fn to_bytes(ds: &MultiViewDataset) -> Result<Vec<u8>> {
    let values: usize = ds.dims().iter().map(|d| ds.len() * ds.seq_len() * d).sum();
    let mut out = Vec::with_capacity(28 + 4 * (ds.views() + ds.len() + values));
    write_header(&mut out, RECORD_DATASET);
    for (v, what) in [(ds.views(), "V"), (ds.len(), "N"), (ds.seq_len(), "T"), (ds.classes(), "K")] {
        out.extend_from_slice(&u32_field(v, what)?.to_le_bytes());
    }
    for &d in ds.dims() {
        out.extend_from_slice(&u32_field(d, "width")?.to_le_bytes());
    }
    for s in ds.samples() {
        out.extend_from_slice(&(s.label as u32).to_le_bytes());
    }
    for v in 0..ds.views() {
        for s in ds.samples() {
            for &x in s.views[v].data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn from_bytes(buf: &[u8]) -> Result<MultiViewDataset> {
    let mut r = Reader::new(buf);
    r.header(RECORD_DATASET)?;
    let views = r.u32()? as usize;
    let n = r.u32()? as usize;
    let t = r.u32()? as usize;
    let k = r.u32()?;
    if views == 0 || n == 0 || t == 0 || k == 0 {
        return Err(Error::Malformed(format!("V={views}, N={n}, T={t}, K={k} must all be positive")));
    }
    let dims = (0..views).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    if dims.contains(&0) {
        return Err(Error::Malformed("zero view width".into()));
    }
    let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let mut per_view: Vec<Vec<Tensor>> = Vec::with_capacity(views);
    for &d in &dims {
        let bytes = r.take(n * t * d * 4)?;
        let mut tensors = Vec::with_capacity(n);
        for chunk in bytes.chunks_exact(t * d * 4) {
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect();
            tensors.push(Tensor::matrix(t, d, data)?);
        }
        per_view.push(tensors);
    }
    r.finish()?;
    let mut iters: Vec<_> = per_view.into_iter().map(|v| v.into_iter()).collect();
    let samples = labels
        .iter()
        .map(|&y| Sample {
            views: iters.iter_mut().map(|it| it.next().expect("N per view")).collect(),
            label: y as usize,
        })
        .collect();
    MultiViewDataset::new(k as usize, t, dims, samples)
}

pub fn save_container(ds: &MultiViewDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(ds)?)?;
    Ok(())
}

pub fn load_container(path: impl AsRef<Path>) -> Result<MultiViewDataset> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(values: &[f32]) -> MultiViewDataset {
        // Two views of widths 1 and 2, T = 2, six values per sample.
        let n = values.len() / 6;
        let samples = (0..n)
            .map(|i| {
                let v = &values[i * 6..i * 6 + 6];
                Sample {
                    views: vec![
                        Tensor::matrix(2, 1, v[..2].iter().map(|&x| x as f64).collect()).unwrap(),
                        Tensor::matrix(2, 2, v[2..].iter().map(|&x| x as f64).collect()).unwrap(),
                    ],
                    label: i % 3,
                }
            })
            .collect();
        MultiViewDataset::new(3, 2, vec![1, 2], samples).unwrap()
    }

    #[test]
    fn layout_by_hand() {
        let ds = dataset(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = to_bytes(&ds).unwrap();
        let words: Vec<u32> = b[4..].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(&b[..4], b"C2AF");
        assert_eq!(&words[..9], &[1, 0, 2, 1, 2, 3, 1, 2, 0]);
        let floats: Vec<f32> = b[40..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(floats, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn distinct_errors() {
        let ds = dataset(&[0.5; 12]);
        let good = to_bytes(&ds).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(from_bytes(&bad), Err(Error::VersionMismatch { found: 2, .. })));

        let mut bad = good.clone();
        bad[8] = 1;
        assert!(matches!(from_bytes(&bad), Err(Error::RecordType { found: 1, .. })));

        // Header claims N=2; keep only one sample's payload.
        let one = to_bytes(&dataset(&[0.5; 6])).unwrap();
        let mut bad = one.clone();
        bad[16..20].copy_from_slice(&2u32.to_le_bytes());
        bad.splice(36..36, 0u32.to_le_bytes());
        assert!(matches!(from_bytes(&bad), Err(Error::TruncatedPayload { .. })));

        let mut bad = good.clone();
        bad[36..40].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(from_bytes(&bad), Err(Error::LabelOutOfRange { label: 7, classes: 3 })));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(from_bytes(&bad), Err(Error::Malformed(_))));
    }

    #[test]
    fn file_round_trip() {
        let ds = dataset(&[1.5, -0.0, 3.25, f32::MIN_POSITIVE, -7.0, 1e30]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.c2af");
        save_container(&ds, &path).unwrap();
        let back = load_container(&path).unwrap();
        assert_eq!(back, ds);
        assert!(back.samples()[0].views[0].data()[1].is_sign_negative());
        assert!(load_container(dir.path().join("missing")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(bits in prop::collection::vec(any::<u32>(), 6..60)) {
            let values: Vec<f32> = bits.iter()
                .map(|&b| f32::from_bits(b))
                .map(|x| if x.is_finite() { x } else { -0.0 })
                .collect();
            let n = values.len() / 6 * 6;
            let ds = dataset(&values[..n]);
            let bytes = to_bytes(&ds).unwrap();
            let back = from_bytes(&bytes).unwrap();
            for (a, b) in ds.samples().iter().zip(back.samples()) {
                for (x, y) in a.views.iter().zip(&b.views) {
                    for (p, q) in x.data().iter().zip(y.data()) {
                        prop_assert_eq!(p.to_bits(), q.to_bits());
                    }
                }
            }
            prop_assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }
}
