//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates forward values, so it stays independent
//! of every backward rule it is used to verify.

use crate::autodiff::{Graph, Var};
use crate::error::{ensure, Result};
use crate::params::{ParamStore, Session};
use crate::tensor::Tensor;

/// Denominator floor for relative error; gradients smaller than this are
/// compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>], track: bool) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), track)).collect();
    let out = f(&mut g, &vars)?;
    ensure!(g.value(out).is_scalar(), "gradcheck function must return a scalar");
    Ok((g, vars, out))
}

/// Compares analytic gradients of the scalar function `f` at `inputs`
/// against central differences with step `h`.
///
/// At most `max_per_input` coordinates of each input are probed (evenly
/// strided) to bound the cost on larger tensors.
pub fn check<F>(inputs: &[Tensor<f64>], f: F, h: f64, max_per_input: usize) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (g, vars, out) = eval(&f, inputs, true)?;
    let grads = g.backward(out)?;
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let numel = inputs[which].numel();
        let stride = numel.div_ceil(max_per_input.max(1)).max(1);
        for idx in (0..numel).step_by(stride) {
            let analytic = grads.get(*var).map_or(0.0, |t| t.data()[idx]);
            let orig = inputs[which].data()[idx];
            probe[which].data_mut()[idx] = orig + h;
            let (gp, _, op) = eval(&f, &probe, false)?;
            probe[which].data_mut()[idx] = orig - h;
            let (gm, _, om) = eval(&f, &probe, false)?;
            probe[which].data_mut()[idx] = orig;
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * h);
            let err = rel_err(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.checked == 1 {
                report.max_rel_err = err;
                report.worst_input = which;
                report.worst_index = idx;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Gradcheck of a layer-level function: every parameter in `store` and every
/// tensor in `inputs` is perturbed. `f` receives a session whose parameters
/// are bound to the perturbable leaves, plus the input variables.
pub fn check_with_params<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    h: f64,
    max_per_input: usize,
    f: F,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Session<'_, f64>, &[Var]) -> Result<Var>,
{
    let n_params = store.len();
    let mut all: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    all.extend(inputs.iter().cloned());
    check(
        &all,
        |g, vars| {
            let mut s = Session::over(store, std::mem::take(g), &vars[..n_params])?;
            let out = f(&mut s, &vars[n_params..]);
            *g = s.into_graph();
            out
        },
        h,
        max_per_input,
    )
}
