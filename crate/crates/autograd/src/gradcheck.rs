//! Central finite-difference checks of analytic gradients (run in `f64`).

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckReport {
    /// Worst elementwise `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
}

/// Denominator floor so that entries whose true gradient is zero compare on
/// an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;

fn accumulate(report: &mut GradcheckReport, analytic: f64, numeric: f64) {
    let abs = (analytic - numeric).abs();
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    report.max_abs_err = report.max_abs_err.max(abs);
    report.max_rel_err = report.max_rel_err.max(abs / denom);
    report.checked += 1;
}

fn empty() -> GradcheckReport {
    GradcheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    }
}

/// Compares gradients of the scalar `f(inputs)` with respect to every entry
/// of every input.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> GradcheckReport
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let eval = |vals: &[Tensor<f64>]| {
        let g = Graph::new();
        let vars: Vec<_> = vals.iter().map(|v| g.constant(v.clone())).collect();
        f(&g, &vars).item()
    };
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|v| g.leaf(v.clone())).collect();
    let out = f(&g, &vars);
    let grads = g.backward(out);
    let mut report = empty();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .of(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        for i in 0..input.numel() {
            let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
            probe[k].data_mut()[i] = input.data()[i] + eps;
            let up = eval(&probe);
            probe[k].data_mut()[i] = input.data()[i] - eps;
            let down = eval(&probe);
            accumulate(&mut report, analytic.data()[i], (up - down) / (2.0 * eps));
        }
    }
    report
}

/// Like [`gradcheck`] but perturbs parameters of a store; `f` builds the
/// loss from the store on a fresh graph.
pub fn gradcheck_params<F>(store: &ParamStore<f64>, ids: &[ParamId], eps: f64, f: F) -> GradcheckReport
where
    F: for<'g> Fn(&'g Graph<f64>, &'g ParamStore<f64>) -> Var<'g, f64>,
{
    let g = Graph::new();
    let out = f(&g, store);
    let grads = g.backward(out);
    let mut report = empty();
    let mut probe = store.clone();
    for &id in ids {
        let base = store.get(id).clone();
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(base.shape().to_vec()));
        for i in 0..base.numel() {
            let mut t = base.clone();
            t.data_mut()[i] = base.data()[i] + eps;
            probe.set(id, t.clone());
            let up = f(&Graph::new(), &probe).item();
            t.data_mut()[i] = base.data()[i] - eps;
            probe.set(id, t);
            let down = f(&Graph::new(), &probe).item();
            accumulate(&mut report, analytic.data()[i], (up - down) / (2.0 * eps));
        }
        probe.set(id, base);
    }
    report
}
