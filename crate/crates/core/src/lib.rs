//! Linear centered kernel alignment (CKA) for comparing representations, and
//! CKA-based knowledge-distillation losses.
//!
//! - [`linalg`]: dense matrices, Gram matrices, Frobenius geometry.
//! - [`similarity`]: CKA, its Gram-cosine form, the pairwise/MMD-style
//!   decomposition and the analytic gradient.
//! - [`losses`]: feature and logit CKA losses, patch CKA, vanilla KD and the
//!   mimic MSE, each returning value and student gradient.
//! - [`harness`]: tiny MLP teacher/student training on synthetic data.
//! - [`io`]: the FDMP binary dump format and CSV export.
//! - [`verify`]: randomized property checks behind `relcka verify`.

pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod similarity;
pub mod tensor;
pub mod verify;

pub use error::{Error, IoError, Result};
pub use linalg::{
    center_columns, cosine, frobenius_inner, frobenius_norm, gram, vec, Matrix, Vector,
};
pub use losses::{LossReport, LossWeights};
pub use similarity::{
    cka, cka_gradient, cka_value_and_gradient, cka_via_gram_cosine, layer_cka_matrix,
    mmd_decomposition, CkaConfig, MmdDecomposition,
};
pub use tensor::{FeatureMap, Logits};
