//! Randomized property suite: Gram-cosine equality, the pairwise decomposition
//! and Jensen bound, invariances, and gradient agreement with finite
//! differences. Each check records the worst deviation seen and its tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{central_difference, max_relative_error, FD_STEP};
use crate::linalg::Matrix;
use crate::similarity::{cka, cka_gradient, cka_via_gram_cosine, mmd_decomposition, CkaConfig};

pub const THEOREM1: &str = "Theorem 1: CKA equals Gram cosine";
pub const PAIRWISE: &str = "Theorem 2: CKA = 1 - pairwise/2";
pub const JENSEN: &str = "Theorem 2: CKA <= Jensen bound";
pub const RANGE: &str = "range: 0 <= CKA <= 1";
pub const SYMMETRY: &str = "symmetry";
pub const ORTHOGONAL: &str = "orthogonal invariance";
pub const SCALE: &str = "isotropic scale invariance";
pub const GRADIENT: &str = "CKA gradient vs finite differences";

/// Deliberate corruptions used to check that the suite can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Flip the sign of the CKA numerator `‖YᵀX‖²_F`.
    NegateNumerator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub max_deviation: f64,
    pub tolerance: f64,
    /// Informational checks are reported but never fail the suite.
    pub gating: bool,
}

impl Check {
    pub fn passed(&self) -> bool {
        !self.gating || self.max_deviation <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub trials: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed())
    }
}

fn cka_under_test(fault: Fault, x: &Matrix, y: &Matrix, cfg: &CkaConfig) -> Result<f64> {
    let s = cka(x, y, cfg)?;
    Ok(match fault {
        Fault::None => s,
        Fault::NegateNumerator => -s,
    })
}

struct Worst(f64);

impl Worst {
    fn see(&mut self, v: f64) {
        // NaN counts as a failure
        if v.is_nan() || v > self.0 {
            self.0 = if v.is_nan() { f64::INFINITY } else { v };
        }
    }
}

fn config_for(trial: usize) -> CkaConfig {
    if trial.is_multiple_of(2) {
        CkaConfig::default()
    } else {
        CkaConfig::uncentered()
    }
}

/// Runs every check over `trials` random instances (gradient checks use at
/// most 100). Inputs alternate between centered and uncentered CKA.
pub fn run(trials: usize, seed: u64, fault: Fault) -> Result<VerifyReport> {
    let trials = trials.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut push = |name, worst: Worst, tolerance, gating| {
        checks.push(Check {
            name,
            max_deviation: worst.0,
            tolerance,
            gating,
        })
    };

    let mut eq = Worst(0.0);
    let mut range = Worst(0.0);
    let mut sym = Worst(0.0);
    for t in 0..trials {
        let cfg = config_for(t);
        let x = Matrix::random_normal(8, 5, &mut rng);
        let y = Matrix::random_normal(8, 7, &mut rng);
        let s = cka_under_test(fault, &x, &y, &cfg)?;
        eq.see((s - cka_via_gram_cosine(&x, &y, &cfg)?).abs());
        range.see((-s).max(s - 1.0).max(0.0));
        sym.see((s - cka_under_test(fault, &y, &x, &cfg)?).abs());
    }
    push(THEOREM1, eq, 1e-10, true);

    let mut pair = Worst(0.0);
    let mut quoted = Worst(0.0);
    let mut jensen = Worst(f64::NEG_INFINITY);
    for t in 0..trials {
        let cfg = config_for(t);
        let x = Matrix::random_normal(6, 4, &mut rng);
        let y = Matrix::random_normal(6, 4, &mut rng);
        let d = mmd_decomposition(&x, &y, &cfg)?;
        let s = cka_under_test(fault, &x, &y, &cfg)?;
        pair.see((s - d.cka_from_pairwise()).abs());
        quoted.see((s - d.two_minus_pairwise()).abs());
        jensen.see(s - d.jensen_bound);
    }
    push(PAIRWISE, pair, 1e-8, true);
    push(
        "Theorem 2 literal form: CKA = 2 - pairwise",
        quoted,
        1e-8,
        false,
    );
    push(JENSEN, jensen, 1e-10, true);
    push(RANGE, range, 1e-12, true);
    push(SYMMETRY, sym, 1e-12, true);

    let mut orth = Worst(0.0);
    let mut scale = Worst(0.0);
    let scales = [1e-3, 1.0, 1e3];
    for t in 0..trials {
        let cfg = config_for(t);
        let x = Matrix::random_normal(8, 5, &mut rng);
        let y = Matrix::random_normal(8, 7, &mut rng);
        let base = cka_under_test(fault, &x, &y, &cfg)?;
        let q1 = Matrix::random_orthogonal(5, &mut rng);
        let q2 = Matrix::random_orthogonal(7, &mut rng);
        let rotated = cka_under_test(fault, &x.matmul(&q1)?, &y.matmul(&q2)?, &cfg)?;
        orth.see((base - rotated).abs());
        let a = scales[rng.random_range(0..3)];
        let b = scales[rng.random_range(0..3)];
        scale.see((base - cka_under_test(fault, &x.scaled(a), &y.scaled(b), &cfg)?).abs());
    }
    push(ORTHOGONAL, orth, 1e-10, true);
    push(SCALE, scale, 1e-10, true);

    let mut grad = Worst(0.0);
    for t in 0..trials.min(100) {
        let cfg = config_for(t);
        let x = Matrix::random_normal(5, 3, &mut rng);
        let y = Matrix::random_normal(5, 4, &mut rng);
        let analytic = cka_gradient(&x, &y, &cfg)?;
        let numeric = central_difference(
            |v| {
                let xv = Matrix::from_vec(5, 3, v.to_vec()).expect("finite probe");
                cka_under_test(fault, &xv, &y, &cfg).unwrap_or(f64::NAN)
            },
            x.as_slice(),
            FD_STEP,
        );
        grad.see(max_relative_error(analytic.as_slice(), &numeric));
    }
    push(GRADIENT, grad, 1e-4, true);

    Ok(VerifyReport {
        trials,
        seed,
        checks,
    })
}
