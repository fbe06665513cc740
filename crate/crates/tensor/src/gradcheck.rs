//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// `(input index, flat coordinate)` pairs whose error exceeded `tol`.
    pub failing: Vec<(usize, usize)>,
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }
}

/// Relative error with the denominator floored at this magnitude, so that
/// near-zero gradients are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the tape gradient of `f` at `inputs` against central
/// differences `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` on every
/// coordinate of every input.
pub fn gradcheck<Fun>(f: Fun, inputs: &[Tensor<f64>], eps: f64, tol: f64) -> Result<GradcheckReport>
where
    Fun: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    drop(g);

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::inference();
        let vars: Vec<Var> = probe.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.scalar(loss))
    };

    let mut probe = inputs.to_vec();
    let mut report = GradcheckReport { max_rel_err: 0.0, failing: Vec::new(), checked: 0 };
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let x0 = t.data()[j];
            probe[ti].data_mut()[j] = x0 + eps;
            let up = eval(&probe)?;
            probe[ti].data_mut()[j] = x0 - eps;
            let down = eval(&probe)?;
            probe[ti].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * eps);
            let err = rel_err(analytic[ti][j], numeric);
            report.max_rel_err = report.max_rel_err.max(err);
            report.checked += 1;
            if err > tol {
                report.failing.push((ti, j));
            }
        }
    }
    Ok(report)
}
