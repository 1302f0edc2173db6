use super::params::{BoundParams, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst component.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub components: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare the tape gradient of a scalar program against central
/// differences (f(θ+ε) − f(θ−ε)) / 2ε over every parameter component.
pub fn grad_check<F>(params: &ParamStore, eps: f64, program: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::<f64>::new();
    let bound = params.bind(&mut tape)?;
    let out = program(&mut tape, &bound)?;
    tape.backward(out)?;
    let analytic = params.grads(&tape, &bound);

    let eval = |p: &ParamStore| -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let bound = p.bind(&mut tape)?;
        let out = program(&mut tape, &bound)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        components: 0,
    };
    let mut probe = params.clone();
    for (ti, (name, tensor)) in params.iter().enumerate() {
        for k in 0..tensor.len() {
            let original = tensor.data()[k];
            probe.tensor_mut(ti).data_mut()[k] = original + eps;
            let plus = eval(&probe)?;
            probe.tensor_mut(ti).data_mut()[k] = original - eps;
            let minus = eval(&probe)?;
            probe.tensor_mut(ti).data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[ti].data()[k];
            let err = relative_error(a, numeric);
            report.components += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.to_string(), k));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
