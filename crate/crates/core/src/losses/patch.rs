//! Patch-based CKA.
//!
//! A `(B, C, H, W)` map cut into `P_H x P_W` patches has four axes: channel,
//! patch index (`N_PH·N_PW` of them), batch element and in-patch pixel. The
//! loss picks one axis to average over and computes CKA on the matrix spanned
//! by the remaining ones for every index of that axis.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::{dissimilarity, LossReport};
use crate::similarity::{cka_value_and_gradient, CkaConfig};
use crate::tensor::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchConfig {
    pub p_h: usize,
    pub p_w: usize,
}

impl PatchConfig {
    pub fn new(p_h: usize, p_w: usize) -> Result<Self> {
        if p_h == 0 || p_w == 0 {
            return Err(Error::Patch(format!(
                "patch size must be >= 1, got {p_h}x{p_w}"
            )));
        }
        Ok(PatchConfig { p_h, p_w })
    }

    fn grid(&self, f: &FeatureMap) -> Result<(usize, usize)> {
        let (_, _, h, w) = f.dims();
        if self.p_h == 0 || self.p_w == 0 {
            return Err(Error::Patch(format!(
                "patch size must be >= 1, got {}x{}",
                self.p_h, self.p_w
            )));
        }
        if h % self.p_h != 0 || w % self.p_w != 0 {
            return Err(Error::Patch(format!(
                "{h}x{w} map is not divisible into {}x{} patches",
                self.p_h, self.p_w
            )));
        }
        Ok((h / self.p_h, w / self.p_w))
    }
}

/// Patched layout `(C, N_PH·N_PW, B·P_H·P_W)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchTensor {
    pub c: usize,
    pub n_patches: usize,
    pub patch_len: usize,
    data: Vec<f64>,
    source: (usize, usize, usize, usize),
    patch: PatchConfig,
}

impl PatchTensor {
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// The `(n_patches x patch_len)` matrix of channel `k`.
    pub fn channel(&self, k: usize) -> Matrix {
        let len = self.n_patches * self.patch_len;
        Matrix::from_vec(
            self.n_patches,
            self.patch_len,
            self.data[k * len..(k + 1) * len].to_vec(),
        )
        .expect("patch tensor is finite")
    }

    /// `(b, c, h, w)` of the map this tensor was cut from.
    pub fn source_dims(&self) -> (usize, usize, usize, usize) {
        self.source
    }
}

/// Which axis the per-slice CKA values are averaged over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AveragingDim {
    /// One `(patches x batch·pixels)` matrix per channel.
    #[default]
    Channel,
    /// One `(patches x channels·pixels)` matrix per batch element.
    Batch,
    /// One `(channels x batch·pixels)` matrix per patch location.
    Spatial,
}

/// Flat feature-map indices for the `(slices, rows, cols)` view selected by `dim`.
struct SliceLayout {
    slices: usize,
    rows: usize,
    cols: usize,
    /// `index[(slice*rows + row)*cols + col]` is a flat index into the map.
    index: Vec<usize>,
}

fn layout(f: &FeatureMap, pc: &PatchConfig, dim: AveragingDim) -> Result<SliceLayout> {
    let (n_ph, n_pw) = pc.grid(f)?;
    let (b, c, _, _) = f.dims();
    let n_patches = n_ph * n_pw;
    let pix = pc.p_h * pc.p_w;
    let (slices, rows, cols) = match dim {
        AveragingDim::Channel => (c, n_patches, b * pix),
        AveragingDim::Batch => (b, n_patches, c * pix),
        AveragingDim::Spatial => (n_patches, c, b * pix),
    };
    let mut index = vec![0usize; b * c * n_patches * pix];
    for bi in 0..b {
        for k in 0..c {
            for q in 0..n_patches {
                let (r, s) = (q / n_pw, q % n_pw);
                for t in 0..pix {
                    let (i, j) = (t / pc.p_w, t % pc.p_w);
                    let src = f.index(bi, k, r * pc.p_h + i, s * pc.p_w + j);
                    let (slice, row, col) = match dim {
                        AveragingDim::Channel => (k, q, bi * pix + t),
                        AveragingDim::Batch => (bi, q, k * pix + t),
                        AveragingDim::Spatial => (q, k, bi * pix + t),
                    };
                    index[(slice * rows + row) * cols + col] = src;
                }
            }
        }
    }
    Ok(SliceLayout {
        slices,
        rows,
        cols,
        index,
    })
}

impl SliceLayout {
    fn slice(&self, f: &FeatureMap, s: usize) -> Matrix {
        let len = self.rows * self.cols;
        let data = self.index[s * len..(s + 1) * len]
            .iter()
            .map(|&i| f.as_slice()[i])
            .collect();
        Matrix::from_vec(self.rows, self.cols, data).expect("finite slice")
    }
}

/// Cuts `f` into patches laid out as `(C, N_PH·N_PW, B·P_H·P_W)`.
///
/// For channel `k` and patch `q = r·N_PW + s`, the patch vector concatenates
/// over the batch the row-major values of `f[b, k, r·P_H.., s·P_W..]`.
pub fn patchify(f: &FeatureMap, pc: &PatchConfig) -> Result<PatchTensor> {
    let l = layout(f, pc, AveragingDim::Channel)?;
    let data = l.index.iter().map(|&i| f.as_slice()[i]).collect();
    Ok(PatchTensor {
        c: l.slices,
        n_patches: l.rows,
        patch_len: l.cols,
        data,
        source: f.dims(),
        patch: *pc,
    })
}

/// Inverse of [`patchify`].
pub fn unpatchify(p: &PatchTensor) -> Result<FeatureMap> {
    let (b, c, h, w) = p.source;
    let template = FeatureMap::zeros(b, c, h, w);
    let l = layout(&template, &p.patch, AveragingDim::Channel)?;
    let mut data = vec![0.0; template.len()];
    for (&dst, &v) in l.index.iter().zip(&p.data) {
        data[dst] = v;
    }
    FeatureMap::new(b, c, h, w, data)
}

/// PCKA value, gradient w.r.t. the student map, and the slices that were
/// skipped because their Gram matrix was degenerate.
#[derive(Clone, Debug, PartialEq)]
pub struct PckaReport {
    pub report: LossReport<FeatureMap>,
    pub skipped: Vec<usize>,
}

/// `γ · mean_k (1 − CKA(teacher_k, student_k))` over channels.
pub fn pcka_loss(
    f_s: &FeatureMap,
    f_t: &FeatureMap,
    pc: &PatchConfig,
    gamma: f64,
    cfg: &CkaConfig,
) -> Result<PckaReport> {
    pcka_loss_with(f_s, f_t, pc, gamma, cfg, AveragingDim::Channel)
}

/// PCKA with an explicit averaging axis.
pub fn pcka_loss_with(
    f_s: &FeatureMap,
    f_t: &FeatureMap,
    pc: &PatchConfig,
    gamma: f64,
    cfg: &CkaConfig,
    dim: AveragingDim,
) -> Result<PckaReport> {
    if f_s.dims() != f_t.dims() {
        return Err(Error::dim(format!(
            "PCKA needs matching maps, got student {:?} vs teacher {:?}",
            f_s.dims(),
            f_t.dims()
        )));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gamma must be >= 0, got {gamma}"
        )));
    }
    let l = layout(f_s, pc, dim)?;
    if l.rows < 2 {
        return Err(Error::dim(format!(
            "PCKA slices have {} row(s); need >= 2 for a Gram matrix",
            l.rows
        )));
    }

    // per-slice results are gathered first and reduced in slice order
    let mut per_slice: Vec<Option<(f64, Matrix)>> = Vec::with_capacity(l.slices);
    for s in 0..l.slices {
        match cka_value_and_gradient(&l.slice(f_s, s), &l.slice(f_t, s), cfg) {
            Ok(v) => per_slice.push(Some(v)),
            Err(Error::Degenerate(_)) => per_slice.push(None),
            Err(e) => return Err(e),
        }
    }
    let skipped: Vec<usize> = (0..l.slices).filter(|&s| per_slice[s].is_none()).collect();
    let used = l.slices - skipped.len();
    if used == 0 {
        return Err(Error::Degenerate(format!(
            "all {} PCKA slices are degenerate",
            l.slices
        )));
    }

    let scale = gamma / used as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; f_s.len()];
    let len = l.rows * l.cols;
    for (s, entry) in per_slice.iter().enumerate() {
        let Some((sim, g)) = entry else { continue };
        total += dissimilarity(*sim);
        for (&dst, gv) in l.index[s * len..(s + 1) * len].iter().zip(g.as_slice()) {
            grad[dst] -= scale * gv;
        }
    }
    let value = scale * total;
    Ok(PckaReport {
        report: LossReport {
            value,
            grad: f_s.with_data(grad),
            components: vec![("pcka", value)],
        },
        skipped,
    })
}
