use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::LossReport;
use crate::tensor::Logits;

/// Row-wise `log softmax(z / tau)`.
pub fn log_softmax(z: &Matrix, tau: f64) -> Matrix {
    let mut out = z.scaled(1.0 / tau);
    let cols = out.cols();
    for row in out.as_mut_slice().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Row-wise `softmax(z / tau)`.
pub fn softmax(z: &Matrix, tau: f64) -> Matrix {
    let mut out = log_softmax(z, tau);
    out.as_mut_slice().iter_mut().for_each(|v| *v = v.exp());
    out
}

/// Vanilla KD: `τ² · mean_i KL(softmax(z_t/τ) ‖ softmax(z_s/τ))`.
///
/// The gradient w.r.t. `z_s` is `τ (p_s − p_t) / N`.
pub fn kd_kl_loss(z_s: &Logits, z_t: &Logits, tau: f64) -> Result<LossReport<Logits>> {
    if z_s.as_matrix().shape() != z_t.as_matrix().shape() {
        return Err(Error::dim(format!(
            "KD logits {:?} vs {:?}",
            z_s.as_matrix().shape(),
            z_t.as_matrix().shape()
        )));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tau must be > 0, got {tau}"
        )));
    }
    let n = z_s.samples() as f64;
    let log_ps = log_softmax(z_s.as_matrix(), tau);
    let log_pt = log_softmax(z_t.as_matrix(), tau);

    let mut kl = 0.0;
    let mut grad = Matrix::zeros(z_s.samples(), z_s.classes());
    for ((g, &ls), &lt) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(log_ps.as_slice())
        .zip(log_pt.as_slice())
    {
        let pt = lt.exp();
        if pt > 0.0 {
            kl += pt * (lt - ls);
        }
        *g = tau * (ls.exp() - pt) / n;
    }
    let value = (tau * tau * kl / n).max(0.0);
    Ok(LossReport {
        value,
        grad: Logits::new(grad)?,
        components: vec![("kd", value)],
    })
}
