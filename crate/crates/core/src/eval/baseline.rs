use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Late-fusion baselines over the per-view probability vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LateFusion {
    /// Trained linear softmax head over the `V·K` concatenation.
    Concat,
    Average,
    Max,
}

impl LateFusion {
    pub fn name(self) -> &'static str {
        match self {
            LateFusion::Concat => "concat",
            LateFusion::Average => "average",
            LateFusion::Max => "max",
        }
    }
}

impl fmt::Display for LateFusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LateFusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(LateFusion::Concat),
            "average" => Ok(LateFusion::Average),
            "max" => Ok(LateFusion::Max),
            _ => Err(Error::InvalidArgument(format!("unknown baseline `{s}`"))),
        }
    }
}

fn check(views: &[&[f64]]) -> Result<usize> {
    let k = views.first().map(|v| v.len()).ok_or(Error::EmptyBatch)?;
    if let Some(v) = views.iter().find(|v| v.len() != k) {
        return Err(Error::ShapeMismatch {
            op: "late_fusion",
            expected: vec![k],
            got: vec![v.len()],
        });
    }
    Ok(k)
}

/// Element-wise mean over views.
pub fn average_fusion(views: &[&[f64]]) -> Result<Vec<f64>> {
    let k = check(views)?;
    let n = views.len() as f64;
    Ok((0..k).map(|i| views.iter().map(|v| v[i]).sum::<f64>() / n).collect())
}

/// Element-wise max over views.
pub fn max_fusion(views: &[&[f64]]) -> Result<Vec<f64>> {
    let k = check(views)?;
    Ok((0..k)
        .map(|i| views.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::argmax;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let p = [0.2, 0.5, 0.3];
        let avg = average_fusion(&[&p, &p, &p]).unwrap();
        assert!(avg.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-15));
        let c = [0.0, 1.0, 0.0];
        assert_eq!(argmax(&max_fusion(&[&c, &c]).unwrap()), 1);
        assert!(average_fusion(&[&p, &[0.5, 0.5]]).is_err());
        assert!(max_fusion(&[]).is_err());
        assert_eq!("max".parse::<LateFusion>().unwrap(), LateFusion::Max);
        assert!("median".parse::<LateFusion>().is_err());
    }

    proptest! {
        #[test]
        fn match_elementwise_oracles(a in prop::collection::vec(0.0f64..1.0, 3), b in prop::collection::vec(0.0f64..1.0, 3)) {
            let avg = average_fusion(&[&a, &b]).unwrap();
            let mx = max_fusion(&[&a, &b]).unwrap();
            for i in 0..3 {
                prop_assert_eq!(avg[i], (a[i] + b[i]) / 2.0);
                prop_assert_eq!(mx[i], if a[i] >= b[i] { a[i] } else { b[i] });
            }
            prop_assert_eq!(max_fusion(&[&b, &a]).unwrap(), mx);
            let swapped = average_fusion(&[&b, &a]).unwrap();
            for i in 0..3 {
                prop_assert!((swapped[i] - avg[i]).abs() < 1e-15);
            }
        }
    }
}
