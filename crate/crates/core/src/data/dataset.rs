use crate::error::{Error, Result};
use crate::math::Tensor;

/// One labelled multi-view sample; `views[v]` is `[T, Dᵛ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub views: Vec<Tensor>,
    pub label: usize,
}

/// Time-aligned multi-view samples sharing `T` and per-view widths.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    classes: usize,
    seq_len: usize,
    dims: Vec<usize>,
    samples: Vec<Sample>,
}

impl MultiViewDataset {
    pub fn new(classes: usize, seq_len: usize, dims: Vec<usize>, samples: Vec<Sample>) -> Result<Self> {
        if classes == 0 || seq_len == 0 || dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "dataset needs K, T, V and every width positive (K={classes}, T={seq_len}, dims={dims:?})"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.label >= classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label as u32,
                    classes: classes as u32,
                });
            }
            if s.views.len() != dims.len() {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has {} views, expected {}",
                    s.views.len(),
                    dims.len()
                )));
            }
            for (x, &d) in s.views.iter().zip(&dims) {
                if x.shape() != [seq_len, d] {
                    return Err(Error::ShapeMismatch {
                        op: "MultiViewDataset::new",
                        expected: vec![seq_len, d],
                        got: x.shape().to_vec(),
                    });
                }
            }
        }
        Ok(Self {
            classes,
            seq_len,
            dims,
            samples,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn views(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// View `v` of the samples at `indices`.
    pub fn view_batch(&self, v: usize, indices: &[usize]) -> Vec<&Tensor> {
        indices.iter().map(|&i| &self.samples[i].views[v]).collect()
    }

    /// View `v` of every sample.
    pub fn view_all(&self, v: usize) -> Vec<&Tensor> {
        self.samples.iter().map(|s| &s.views[v]).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::IndexOutOfRange { index: i, len: self.len() });
        }
        Self::new(
            self.classes,
            self.seq_len,
            self.dims.clone(),
            indices.iter().map(|&i| self.samples[i].clone()).collect(),
        )
    }

    /// First `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Self, Self)> {
        if n == 0 || n >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "split point {n} leaves an empty side of {} samples",
                self.len()
            )));
        }
        let head = (0..n).collect::<Vec<_>>();
        let tail = (n..self.len()).collect::<Vec<_>>();
        Ok((self.subset(&head)?, self.subset(&tail)?))
    }

    /// Train/test split holding out the last `round(N·fraction)` samples.
    pub fn split_test_fraction(&self, fraction: f64) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("test fraction {fraction} outside (0, 1)")));
        }
        let test = (self.len() as f64 * fraction).round() as usize;
        self.split_at(self.len() - test)
    }
}

/// Per-frame concatenation of all views into a single view, plus the column
/// offset where each original view starts.
pub fn feature_concat(ds: &MultiViewDataset) -> (MultiViewDataset, Vec<usize>) {
    let mut offsets = Vec::with_capacity(ds.views());
    let mut total = 0;
    for &d in ds.dims() {
        offsets.push(total);
        total += d;
    }
    let t = ds.seq_len();
    let samples = ds
        .samples()
        .iter()
        .map(|s| {
            let mut data = Vec::with_capacity(t * total);
            for step in 0..t {
                for x in &s.views {
                    data.extend_from_slice(x.row(step));
                }
            }
            Sample {
                views: vec![Tensor::matrix(t, total, data).expect("consistent widths")],
                label: s.label,
            }
        })
        .collect();
    let out = MultiViewDataset::new(ds.classes(), t, vec![total], samples).expect("valid by construction");
    (out, offsets)
}

/// Inverse of [`feature_concat`] for one concatenated `[T, ΣDᵛ]` matrix.
pub fn split_features(x: &Tensor, offsets: &[usize]) -> Result<Vec<Tensor>> {
    let (t, total) = x.dims2()?;
    if offsets.first() != Some(&0) || offsets.windows(2).any(|w| w[0] >= w[1]) || offsets.last() >= Some(&total) {
        return Err(Error::InvalidArgument(format!("bad view offsets {offsets:?} for width {total}")));
    }
    let mut bounds = offsets.to_vec();
    bounds.push(total);
    bounds
        .windows(2)
        .map(|w| {
            let data = (0..t).flat_map(|step| x.row(step)[w[0]..w[1]].iter().copied()).collect();
            Tensor::matrix(t, w[1] - w[0], data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize, d: usize, base: f64) -> Tensor {
        Tensor::matrix(t, d, (0..t * d).map(|i| base + i as f64).collect()).unwrap()
    }

    fn two_view() -> MultiViewDataset {
        let samples = (0..3)
            .map(|i| Sample {
                views: vec![ramp(4, 2, i as f64 * 100.0), ramp(4, 3, i as f64 * 100.0 + 50.0)],
                label: i % 2,
            })
            .collect();
        MultiViewDataset::new(2, 4, vec![2, 3], samples).unwrap()
    }

    #[test]
    fn rejects_inconsistent_samples() {
        let bad = vec![Sample {
            views: vec![ramp(4, 2, 0.0)],
            label: 0,
        }];
        assert!(MultiViewDataset::new(2, 4, vec![3], bad.clone()).is_err());
        assert!(matches!(
            MultiViewDataset::new(1, 4, vec![2], vec![Sample { label: 1, ..bad[0].clone() }]),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(MultiViewDataset::new(2, 4, vec![2], vec![]).is_err());
    }

    #[test]
    fn concat_layout() {
        let ds = two_view();
        let (cat, offsets) = feature_concat(&ds);
        assert_eq!(cat.dims(), &[5]);
        assert_eq!(offsets, vec![0, 2]);
        let x = &cat.samples()[1].views[0];
        assert_eq!(&x.row(2)[..2], ds.samples()[1].views[0].row(2));
        assert_eq!(&x.row(2)[2..], ds.samples()[1].views[1].row(2));
    }

    #[test]
    fn concat_of_one_view_is_identity() {
        let ds = two_view().subset(&[0, 1]).unwrap();
        let one = MultiViewDataset::new(
            2,
            4,
            vec![2],
            ds.samples()
                .iter()
                .map(|s| Sample {
                    views: vec![s.views[0].clone()],
                    label: s.label,
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(feature_concat(&one).0, one);
    }

    #[test]
    fn split_features_inverts_concat() {
        let ds = two_view();
        let (cat, offsets) = feature_concat(&ds);
        for (s, c) in ds.samples().iter().zip(cat.samples()) {
            assert_eq!(split_features(&c.views[0], &offsets).unwrap(), s.views);
        }
        assert!(split_features(&cat.samples()[0].views[0], &[0, 7]).is_err());
    }

    #[test]
    fn splits() {
        let ds = two_view();
        let (a, b) = ds.split_at(2).unwrap();
        assert_eq!((a.len(), b.len()), (2, 1));
        assert_eq!(b.samples()[0], ds.samples()[2]);
        assert!(ds.split_at(3).is_err());
        let (a, b) = ds.split_test_fraction(0.34).unwrap();
        assert_eq!((a.len(), b.len()), (2, 1));
    }
}
