//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::params::{Bound, ParamSet};
use crate::error::Result;

/// Gradients below this magnitude are compared absolutely rather than
/// relatively, so exact zeros are not divided by rounding noise.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(parameter, element, analytic, numeric)` at the worst element.
    pub worst: (String, usize, f64, f64),
}

/// Compares reverse-mode gradients of the scalar built by `loss` against
/// `(L(θ+h) − L(θ−h)) / 2h` for every element of every tensor in `params`.
pub fn check<F>(params: &ParamSet, h: f64, loss: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let out = loss(&mut g, &bound)?;
    g.backward(out)?;
    let analytic = bound.grads(&g);

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let out = loss(&mut g, &b)?;
        Ok(g.value(out).data()[0])
    };

    let mut report = GradReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: (String::new(), 0, 0.0, 0.0),
    };
    let mut probe = params.clone();
    for (k, name) in params.names().iter().enumerate() {
        for i in 0..params.tensors()[k].len() {
            let x0 = params.tensors()[k].data()[i];
            probe.tensors_mut()[k].data_mut()[i] = x0 + h;
            let up = eval(&probe)?;
            probe.tensors_mut()[k].data_mut()[i] = x0 - h;
            let down = eval(&probe)?;
            probe.tensors_mut()[k].data_mut()[i] = x0;

            let numeric = (up - down) / (2.0 * h);
            let err = rel_error(analytic[k][i], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.checked == 1 {
                report.max_rel_err = err;
                report.worst = (name.clone(), i, analytic[k][i], numeric);
            }
        }
    }
    Ok(report)
}
