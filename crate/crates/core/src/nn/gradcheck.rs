//! Central-difference gradient oracle.

use super::{Gradients, Matrix, MlpNet};
use crate::error::{Error, Result};

/// Denominator floor for [`relative_error`]. Entries whose magnitude is
/// below the floor are effectively compared by absolute error, which keeps
/// finite-difference round-off (about `1e-16 * |loss| / eps`) from dominating
/// near-zero gradient entries.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Inputs with regression targets; the loss is [`mse_loss`].
#[derive(Debug, Clone)]
pub struct RegressionBatch {
    pub inputs: Matrix,
    pub targets: Matrix,
}

/// `mean_i ||y_i - t_i||^2` and its per-sample output gradient `2 (y_i - t_i)`.
pub fn mse_loss(outputs: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if outputs.rows() != targets.rows() || outputs.cols() != targets.cols() {
        return Err(Error::Shape(format!(
            "outputs {}x{} vs targets {}x{}",
            outputs.rows(),
            outputs.cols(),
            targets.rows(),
            targets.cols()
        )));
    }
    if outputs.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut upstream = Matrix::zeros(outputs.rows(), outputs.cols());
    let mut total = 0.0;
    for ((u, &y), &t) in upstream
        .as_mut_slice()
        .iter_mut()
        .zip(outputs.as_slice())
        .zip(targets.as_slice())
    {
        let d = y - t;
        total += d * d;
        *u = 2.0 * d;
    }
    Ok((total / outputs.rows() as f64, upstream))
}

/// Central differences of `loss` with respect to every parameter of `net`.
pub fn numerical_gradient<F>(net: &MlpNet, eps: f64, mut loss: F) -> Gradients
where
    F: FnMut(&MlpNet) -> f64,
{
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(net.params().len());
    for k in 0..net.params().len() {
        let orig = probe.params()[k];
        probe.params_mut()[k] = orig + eps;
        let plus = loss(&probe);
        probe.params_mut()[k] = orig - eps;
        let minus = loss(&probe);
        probe.params_mut()[k] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    Gradients::from_vec(out)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Worst relative error between [`MlpNet::backward`] and central
/// differences of the batch MSE loss.
pub fn grad_check(net: &MlpNet, batch: &RegressionBatch, eps: f64) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {eps}")));
    }
    let trace = net.trace(&batch.inputs)?;
    let (_, upstream) = mse_loss(trace.output(), &batch.targets)?;
    let analytic = net.backward(&trace, &upstream)?.grads;
    let numeric = numerical_gradient(net, eps, |n| {
        let out = n.forward_batch(&batch.inputs).expect("shape checked above");
        mse_loss(&out, &batch.targets).expect("shape checked above").0
    });
    Ok(max_relative_error(&analytic, &numeric))
}
