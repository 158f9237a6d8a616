//! Linear CKA and the quantities derived from it.
//!
//! `cka` evaluates `‖YᵀX‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F)` in feature space, while
//! [`cka_via_gram_cosine`] evaluates the cosine between the flattened sample
//! Gram matrices. The two routes share no intermediate values, which is what
//! makes the second one usable as an oracle for the first.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{center_columns, cosine, frobenius_norm, gram, vec, Matrix, DEGENERATE_EPS};

/// Options shared by every CKA evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CkaConfig {
    /// Column-center both inputs before forming Gram matrices.
    pub center: bool,
    /// Gram norms at or below this are reported as degenerate.
    pub eps: f64,
}

impl Default for CkaConfig {
    fn default() -> Self {
        CkaConfig {
            center: true,
            eps: DEGENERATE_EPS,
        }
    }
}

impl CkaConfig {
    pub fn uncentered() -> Self {
        CkaConfig {
            center: false,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.eps > 0.0 && self.eps.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "eps must be > 0, got {}",
                self.eps
            )))
        }
    }

    fn prepare(&self, x: &Matrix) -> Matrix {
        if self.center {
            center_columns(x)
        } else {
            x.clone()
        }
    }
}

/// Row-pair decomposition of CKA in terms of normalized sample inner products.
///
/// With `x̃ᵢ` the rows of `X / √‖XXᵀ‖_F` (after optional centering) and `ỹᵢ`
/// likewise, `pairwise_term = Σᵢⱼ (⟨x̃ᵢ,x̃ⱼ⟩ − ⟨ỹᵢ,ỹⱼ⟩)²` is the squared
/// distance between the unit-norm Gram vectors, so `cka = 1 − pairwise_term / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmdDecomposition {
    pub cka: f64,
    pub pairwise_term: f64,
    /// `2 − (Σᵢⱼ⟨x̃ᵢ,x̃ⱼ⟩ − Σᵢⱼ⟨ỹᵢ,ỹⱼ⟩)² / N²`, built from exact sums.
    pub jensen_bound: f64,
    pub n: usize,
}

impl MmdDecomposition {
    /// `2 − pairwise_term`, the right-hand side as it is usually quoted.
    /// It equals `2·cka`, not `cka`.
    pub fn two_minus_pairwise(&self) -> f64 {
        2.0 - self.pairwise_term
    }

    /// `1 − pairwise_term / 2`, which equals `cka` exactly.
    pub fn cka_from_pairwise(&self) -> f64 {
        1.0 - 0.5 * self.pairwise_term
    }
}

fn check_pair(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::dim(format!(
            "CKA needs equal sample counts, got {} and {}",
            x.rows(),
            y.rows()
        )));
    }
    if x.rows() < 2 {
        return Err(Error::dim("CKA needs at least 2 samples"));
    }
    Ok(())
}

/// Feature-space pieces of CKA for already-prepared inputs.
struct Parts {
    /// `YᵀX`
    cross: Matrix,
    /// `XᵀX`
    xx: Matrix,
    numerator: f64,
    norm_x: f64,
    norm_y: f64,
}

fn parts(x: &Matrix, y: &Matrix, eps: f64) -> Result<Parts> {
    let xt = x.transpose();
    let yt = y.transpose();
    let cross = yt.matmul(x)?;
    let xx = xt.matmul(x)?;
    let yy = yt.matmul(y)?;
    let norm_x = frobenius_norm(&xx);
    let norm_y = frobenius_norm(&yy);
    if norm_x <= eps || norm_y <= eps {
        return Err(Error::Degenerate(format!(
            "Gram norm below eps ({norm_x:e}, {norm_y:e})"
        )));
    }
    let f = frobenius_norm(&cross);
    Ok(Parts {
        cross,
        xx,
        numerator: f * f,
        norm_x,
        norm_y,
    })
}

/// Linear CKA similarity of `x` and `y` (same sample count, any feature counts).
pub fn cka(x: &Matrix, y: &Matrix, cfg: &CkaConfig) -> Result<f64> {
    cfg.validate()?;
    check_pair(x, y)?;
    let p = parts(&cfg.prepare(x), &cfg.prepare(y), cfg.eps)?;
    Ok(p.numerator / (p.norm_x * p.norm_y))
}

/// CKA as the cosine between `vec(XXᵀ)` and `vec(YYᵀ)`.
pub fn cka_via_gram_cosine(x: &Matrix, y: &Matrix, cfg: &CkaConfig) -> Result<f64> {
    cfg.validate()?;
    check_pair(x, y)?;
    let gx = vec(&gram(&cfg.prepare(x)));
    let gy = vec(&gram(&cfg.prepare(y)));
    if gx.norm() <= cfg.eps || gy.norm() <= cfg.eps {
        return Err(Error::Degenerate(format!(
            "Gram norm below eps ({:e}, {:e})",
            gx.norm(),
            gy.norm()
        )));
    }
    cosine(&gx, &gy)
}

/// Pairwise decomposition of CKA over normalized rows, plus the Jensen bound.
pub fn mmd_decomposition(x: &Matrix, y: &Matrix, cfg: &CkaConfig) -> Result<MmdDecomposition> {
    let value = cka(x, y, cfg)?;
    let (xc, yc) = (cfg.prepare(x), cfg.prepare(y));
    let sx = frobenius_norm(&gram(&xc)).sqrt();
    let sy = frobenius_norm(&gram(&yc)).sqrt();
    let xn = xc.scaled(1.0 / sx);
    let yn = yc.scaled(1.0 / sy);

    let n = x.rows();
    let (mut pairwise, mut sum_x, mut sum_y) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let kx: f64 = xn.row(i).iter().zip(xn.row(j)).map(|(a, b)| a * b).sum();
            let ky: f64 = yn.row(i).iter().zip(yn.row(j)).map(|(a, b)| a * b).sum();
            pairwise += (kx - ky) * (kx - ky);
            sum_x += kx;
            sum_y += ky;
        }
    }
    let nn = (n * n) as f64;
    Ok(MmdDecomposition {
        cka: value,
        pairwise_term: pairwise,
        jensen_bound: 2.0 - (sum_x - sum_y) * (sum_x - sum_y) / nn,
        n,
    })
}

/// Analytic `∂ cka(X, Y) / ∂X` with `Y` held fixed.
///
/// With `A = ‖YᵀX‖²_F`, `B = ‖XᵀX‖_F`:
/// `∂A/∂X = 2 Y(YᵀX)`, `∂B/∂X = 2 X(XᵀX) / B`, and the quotient rule gives the
/// rest. Under centering the result is pushed back through `X ↦ HX`, which for
/// the symmetric projector `H` amounts to centering the gradient's columns.
pub fn cka_gradient(x: &Matrix, y: &Matrix, cfg: &CkaConfig) -> Result<Matrix> {
    Ok(cka_value_and_gradient(x, y, cfg)?.1)
}

/// [`cka`] and [`cka_gradient`] sharing one factorization.
pub fn cka_value_and_gradient(x: &Matrix, y: &Matrix, cfg: &CkaConfig) -> Result<(f64, Matrix)> {
    cfg.validate()?;
    check_pair(x, y)?;
    let (xc, yc) = (cfg.prepare(x), cfg.prepare(y));
    let p = parts(&xc, &yc, cfg.eps)?;
    let s = p.numerator / (p.norm_x * p.norm_y);

    // 2 Y (YᵀX) / (BₓB_y)  −  S · 2 X (XᵀX) / Bₓ²
    let d_num = yc.matmul(&p.cross)?;
    let d_norm = xc.matmul(&p.xx)?;
    let grad = d_num
        .scaled(2.0 / (p.norm_x * p.norm_y))
        .add_scaled(&d_norm, -2.0 * s / (p.norm_x * p.norm_x))?;
    let grad = if cfg.center {
        center_columns(&grad)
    } else {
        grad
    };
    Ok((s, grad))
}

/// `out[i][j] = cka(a[i], b[j])`. Entries are computed independently, so the
/// parallel evaluation is bit-identical to a sequential one.
pub fn layer_cka_matrix(a: &[Matrix], b: &[Matrix], cfg: &CkaConfig) -> Result<Matrix> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::dim("layer lists must be non-empty"));
    }
    let cells: Vec<(usize, usize)> = (0..a.len())
        .flat_map(|i| (0..b.len()).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            cka(&a[i], &b[j], cfg).map_err(|e| Error::Layer {
                row: i,
                col: j,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    Matrix::from_vec(a.len(), b.len(), values)
}
