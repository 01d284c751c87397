//! Central finite-difference validation of backward passes.
//!
//! The builder closure maps (graph, input leaf) to a scalar root. It must be
//! deterministic: if it samples noise, the caller seeds an identical stream
//! on every invocation, otherwise the difference quotient measures the noise
//! rather than the derivative.

use super::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::Tensor;

/// Compares the analytic gradient of `build`'s output against central
/// differences, coordinate by coordinate, and returns
/// max_i |analytic_i - central_i| / max(1, |central_i|).
///
/// The step `h` must lie in [1e-6, 1e-4]: larger steps lose to truncation
/// error, smaller ones to cancellation in f64.
pub fn finite_difference_check<F>(build: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::BadFdStep(h));
    }

    let mut g = Graph::new();
    let leaf = g.leaf(x, true);
    let root = build(&mut g, leaf)?;
    g.backward(root)?;
    let analytic: Vec<f64> = match g.grad(leaf) {
        Some(grad) => grad.to_vec(),
        // Root does not depend on x; the true gradient is zero everywhere.
        None => vec![0.0; x.numel()],
    };

    let eval = |x: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.leaf(x, true);
        let root = build(&mut g, leaf)?;
        g.scalar_value(root).ok_or_else(|| Error::NonScalarRoot {
            shape: g.shape(root).to_vec(),
        })
    };

    let mut probe = x.clone();
    let mut max_err = 0.0_f64;
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let f_plus = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let f_minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let central = (f_plus - f_minus) / (2.0 * h);
        if !central.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_difference_check",
            });
        }
        let err = (analytic[i] - central).abs() / central.abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
