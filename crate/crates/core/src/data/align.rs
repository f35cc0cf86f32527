use crate::error::{Error, Result};
use crate::math::Tensor;

/// Brings an `[L, D]` series to `T` frames: longer series keep their first
/// `T` frames, shorter ones repeat cyclically from the start.
pub fn align_length(series: &Tensor, t: usize) -> Result<Tensor> {
    let (l, d) = series.dims2()?;
    if l == 0 || t == 0 {
        return Err(Error::InvalidArgument("cannot align an empty series".into()));
    }
    let data = (0..t).flat_map(|i| series.row(i % l).iter().copied()).collect();
    Tensor::matrix(t, d, data)
}
