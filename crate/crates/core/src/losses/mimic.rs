use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::LossReport;
use crate::tensor::FeatureMap;

/// Mimic loss result: gradients for the student map and for the projection.
#[derive(Clone, Debug, PartialEq)]
pub struct MimicReport {
    pub report: LossReport<FeatureMap>,
    pub proj_grad: Matrix,
}

/// Mean squared error between `proj · f_s` (a 1x1 convolution mapping student
/// channels to teacher channels at each pixel) and `f_t`.
///
/// `proj` is `c_teacher x c_student`.
pub fn mimic_mse_loss(f_s: &FeatureMap, f_t: &FeatureMap, proj: &Matrix) -> Result<MimicReport> {
    let (b, cs, h, w) = f_s.dims();
    let (bt, ct, ht, wt) = f_t.dims();
    if (b, h, w) != (bt, ht, wt) {
        return Err(Error::dim(format!(
            "mimic maps disagree outside channels: student {:?} vs teacher {:?}",
            f_s.dims(),
            f_t.dims()
        )));
    }
    if proj.shape() != (ct, cs) {
        return Err(Error::dim(format!(
            "projection must be {ct}x{cs}, got {:?}",
            proj.shape()
        )));
    }
    let hw = h * w;
    let count = (b * ct * hw) as f64;
    let mut sum_sq = 0.0;
    let mut grad = vec![0.0; f_s.len()];
    let mut proj_grad = Matrix::zeros(ct, cs);
    let (fs, ft) = (f_s.as_slice(), f_t.as_slice());
    for bi in 0..b {
        for p in 0..hw {
            for k in 0..ct {
                let mut y = 0.0;
                for j in 0..cs {
                    y += proj.get(k, j) * fs[(bi * cs + j) * hw + p];
                }
                let r = y - ft[(bi * ct + k) * hw + p];
                sum_sq += r * r;
                let d = 2.0 * r / count;
                for j in 0..cs {
                    let si = (bi * cs + j) * hw + p;
                    grad[si] += d * proj.get(k, j);
                    let pg = proj_grad.get(k, j) + d * fs[si];
                    proj_grad.set(k, j, pg);
                }
            }
        }
    }
    let value = sum_sq / count;
    Ok(MimicReport {
        report: LossReport {
            value,
            grad: f_s.with_data(grad),
            components: vec![("mimic", value)],
        },
        proj_grad,
    })
}
