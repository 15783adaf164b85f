//! Central finite-difference gradient checking.

use super::params::Params;
use super::tape::Grads;

pub const FD_EPS: f64 = 1e-5;

/// Relative error with an absolute floor so that gradients that are zero up
/// to rounding do not blow up the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Numerical gradient of `f` with respect to every parameter entry.
pub fn numerical_grads(params: &mut Params, mut f: impl FnMut(&Params) -> f64) -> Grads {
    let ids: Vec<_> = params.ids().collect();
    let mut out = Grads::zeros_like(params);
    for id in ids {
        for k in 0..params.get(id).data.len() {
            let orig = params.get(id).data[k];
            params.get_mut(id).data[k] = orig + FD_EPS;
            let plus = f(params);
            params.get_mut(id).data[k] = orig - FD_EPS;
            let minus = f(params);
            params.get_mut(id).data[k] = orig;
            out.0[id.0].data[k] = (plus - minus) / (2.0 * FD_EPS);
        }
    }
    out
}

/// Largest relative error between `analytic` and central differences of `f`.
pub fn max_relative_error(params: &mut Params, analytic: &Grads, f: impl FnMut(&Params) -> f64) -> f64 {
    let numeric = numerical_grads(params, f);
    per_tensor_errors(params, analytic, &numeric)
        .into_iter()
        .map(|(_, e)| e)
        .fold(0.0, f64::max)
}

pub fn per_tensor_errors(params: &Params, analytic: &Grads, numeric: &Grads) -> Vec<(String, f64)> {
    params
        .iter()
        .zip(analytic.0.iter().zip(&numeric.0))
        .map(|((name, _), (a, n))| {
            let e = a
                .data
                .iter()
                .zip(&n.data)
                .map(|(&x, &y)| relative_error(x, y))
                .fold(0.0, f64::max);
            (name.to_string(), e)
        })
        .collect()
}
