use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use super::tensor::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates sampled per parameter tensor (all of them when the tensor is smaller).
    pub samples_per_param: usize,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// both numerically zero compare as equal.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            samples_per_param: 20,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    /// Coordinates in the tensor.
    pub size: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.params.extend(other.params);
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradients currently stored in `model` against central
/// differences of `loss`.
///
/// `loss` must be a pure function of the parameter values; the caller is
/// responsible for having populated the analytic gradients beforehand.
pub fn finite_diff_check<M: ParamSet>(
    model: &mut M,
    loss: impl Fn(&M) -> Result<f64>,
    opts: &GradCheckOptions,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    if !(opts.eps.is_finite() && opts.eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference eps must be positive and finite, got {}",
            opts.eps
        )));
    }
    let base = loss(model)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("finite_diff_check"));
    }

    let shapes: Vec<(String, usize)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.len()))
        .collect();
    let mut report = GradCheckReport::default();
    for (j, (name, len)) in shapes.into_iter().enumerate() {
        let coords: Vec<usize> = if len <= opts.samples_per_param {
            (0..len).collect()
        } else {
            let mut c = index::sample(rng, len, opts.samples_per_param).into_vec();
            c.sort_unstable();
            c
        };
        let mut check = ParamCheck {
            name,
            size: len,
            checked: coords.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in coords {
            let (orig, analytic) = {
                let p = &model.params()[j];
                (p.value.data()[i], p.grad.data()[i])
            };
            model.params_mut()[j].value.data_mut()[i] = orig + opts.eps;
            let plus = loss(model);
            model.params_mut()[j].value.data_mut()[i] = orig - opts.eps;
            let minus = loss(model);
            model.params_mut()[j].value.data_mut()[i] = orig;
            let (plus, minus) = (plus?, minus?);
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::NonFinite("finite_diff_check"));
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let rel = relative_error(analytic, numeric, opts.floor);
            if rel > check.max_rel_err || check.checked == 0 {
                check.max_rel_err = rel;
                check.worst_index = i;
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
