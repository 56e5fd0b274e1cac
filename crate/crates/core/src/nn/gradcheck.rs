//! Central finite-difference check of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::params::ModelParams;
use crate::error::Result;

/// Per-parameter worst relative error between analytic and numeric
/// gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub worst_param: String,
    pub worst_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst_error <= self.tolerance
    }
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// entries whose true gradient is zero from dividing by rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares the gradients of `forward` against central differences with
/// step `h` for every entry of every parameter.
pub fn grad_check<F>(forward: F, params: &ModelParams, h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ModelParams) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = forward(&mut g, params)?;
    let analytic = g.backward(loss, params.len())?;

    let eval = |p: &ModelParams| -> Result<f64> {
        let mut g = Graph::new();
        let l = forward(&mut g, p)?;
        Ok(g.value(l).to_scalar())
    };

    let mut probe = params.clone();
    let mut per_param = Vec::new();
    let mut worst = (String::new(), 0.0f64);
    for id in params.ids() {
        let n = params.value(id).data().len();
        let mut max_err = 0.0f64;
        for i in 0..n {
            let orig = params.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |t| t.data()[i]);
            max_err = max_err.max(relative_error(a, numeric));
        }
        let name = params.name(id).to_string();
        if max_err >= worst.1 {
            worst = (name.clone(), max_err);
        }
        per_param.push((name, max_err));
    }
    Ok(GradCheckReport {
        per_param,
        worst_param: worst.0,
        worst_error: worst.1,
        tolerance,
    })
}
