//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::params::{Grads, ParamStore};
use super::tensor::Tensor4;
use crate::error::Result;
use crate::seed;

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floor(analytic, numeric, 1e-8)
}

/// `|a - n| / max(floor, |a| + |n|)`. The floor keeps gradients that are
/// exactly zero by construction from being compared against pure rounding
/// noise of the finite difference.
pub fn relative_error_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Entries checked per tensor; all entries when the tensor is smaller or
    /// when this is 0.
    pub samples_per_tensor: usize,
    /// Step relative to `max(1, |theta|)`.
    pub rel_step: f64,
    pub seed: u64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// When set, each entry is also differenced with half the step. If the
    /// two estimates disagree by more than this relative error, a ReLU or L1
    /// kink lies inside the stencil and the entry is skipped.
    pub kink_tol: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            samples_per_tensor: 0,
            rel_step: 1e-5,
            seed: 0,
            floor: 1e-8,
            kink_tol: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error, entries checked)`.
    pub per_param: Vec<(String, f64, usize)>,
    /// Entries skipped because the stencil straddled a kink.
    pub kinks: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64, usize)> {
        self.per_param.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn pick(len: usize, opts: &GradCheckOptions, salt: u64) -> Vec<usize> {
    if opts.samples_per_tensor == 0 || len <= opts.samples_per_tensor {
        (0..len).collect()
    } else {
        let mut rng = seed::rng(seed::derive(opts.seed, salt));
        let mut idx = sample(&mut rng, len, opts.samples_per_tensor).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Compares `analytic` parameter gradients of `loss` against central
/// differences.
pub fn grad_check(
    store: &ParamStore,
    analytic: &Grads,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut probe = store.clone();
    let mut report = GradCheckReport::default();
    for id in store.ids() {
        let entries = pick(store.get(id).len(), opts, id.index() as u64);
        let mut worst: f64 = 0.0;
        for &i in &entries {
            let orig = probe.get(id).data()[i];
            let h = opts.rel_step * orig.abs().max(1.0);
            let mut diff = |h: f64| -> Result<f64> {
                probe.get_mut(id).data_mut()[i] = orig + h;
                let plus = loss(&probe)?;
                probe.get_mut(id).data_mut()[i] = orig - h;
                let minus = loss(&probe)?;
                probe.get_mut(id).data_mut()[i] = orig;
                Ok((plus - minus) / (2.0 * h))
            };
            let numeric = diff(h)?;
            if let Some(tol) = opts.kink_tol {
                if relative_error_floor(numeric, diff(0.5 * h)?, opts.floor) > tol {
                    report.kinks += 1;
                    continue;
                }
            }
            worst = worst.max(relative_error_floor(analytic.get(id)[i], numeric, opts.floor));
        }
        report.per_param.push((store.name(id).to_string(), worst, entries.len()));
    }
    Ok(report)
}

/// Max relative error of an input gradient against central differences of
/// `f` around `x`.
pub fn check_input_grad(
    x: &Tensor4,
    analytic: &Tensor4,
    mut f: impl FnMut(&Tensor4) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<f64> {
    analytic.check_same(x, "input gradient")?;
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in pick(x.len(), opts, u64::MAX) {
        let orig = x.data()[i];
        let h = opts.rel_step * orig.abs().max(1.0);
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error_floor(analytic.data()[i], numeric, opts.floor));
    }
    Ok(worst)
}
