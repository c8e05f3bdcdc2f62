//! Central finite-difference verification of analytic gradients.
//!
//! The checker only uses forward evaluation of a freshly built graph at
//! perturbed inputs, so it is independent of the backward implementation it
//! verifies. Perturbed inputs must stay away from non-smooth loci (max ties,
//! relu kinks) for the comparison to be meaningful.

use alloc::vec::Vec;

use crate::graph::{EngineError, Graph, NodeId};
use crate::tensor::Tensor2;

/// Worst-case result of a gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// max over all components of |analytic - fd| / max(1, |analytic|)
    pub max_rel_err: f64,
    /// (input index, flat element index) of the worst component
    pub worst: (usize, usize),
    pub analytic_at_worst: f64,
    pub fd_at_worst: f64,
}

/// Compare analytic gradients of a scalar-valued graph against central
/// finite differences with step `h`.
///
/// `build` receives the inputs as parameter nodes and must return a 1x1
/// loss node. It is re-invoked on perturbed copies of the inputs, so it must
/// be a pure function of them.
pub fn check_gradients(
    inputs: &[Tensor2],
    h: f64,
    build: impl Fn(&mut Graph, &[NodeId]) -> Result<NodeId, EngineError>,
) -> Result<GradCheckReport, EngineError> {
    let eval = |tensors: &[Tensor2]| -> Result<f64, EngineError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).item())
    };

    // Analytic pass.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor2> = ids.iter().map(|&id| g.grad_or_zeros(id)).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic_at_worst: 0.0,
        fd_at_worst: 0.0,
    };
    let mut work: Vec<Tensor2> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for k in 0..t.numel() {
            let orig = t.data()[k];
            work[ti].data_mut()[k] = orig + h;
            let f_plus = eval(&work)?;
            work[ti].data_mut()[k] = orig - h;
            let f_minus = eval(&work)?;
            work[ti].data_mut()[k] = orig;

            let fd = (f_plus - f_minus) / (2.0 * h);
            let an = analytic[ti].data()[k];
            let rel = (an - fd).abs() / an.abs().max(1.0);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (ti, k);
                report.analytic_at_worst = an;
                report.fd_at_worst = fd;
            }
        }
    }
    Ok(report)
}
