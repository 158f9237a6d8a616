#![allow(dead_code, clippy::needless_range_loop)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relcka::gradcheck::{central_difference, max_relative_error, FD_STEP};
use relcka::{FeatureMap, Logits, Matrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn logits(n: usize, p: usize, r: &mut ChaCha8Rng) -> Logits {
    Logits::new(Matrix::random_normal(n, p, r)).unwrap()
}

/// Brute-force `‖YᵀX‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F)` with explicit triple loops,
/// optionally on column-centered copies.
pub fn brute_cka(x: &Matrix, y: &Matrix, center: bool) -> f64 {
    let n = x.rows();
    let prep = |m: &Matrix| -> Vec<Vec<f64>> {
        let mut rows: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
        if center {
            for c in 0..m.cols() {
                let mean: f64 = rows.iter().map(|r| r[c]).sum::<f64>() / n as f64;
                rows.iter_mut().for_each(|r| r[c] -= mean);
            }
        }
        rows
    };
    let (a, b) = (prep(x), prep(y));
    let cross = |u: &Vec<Vec<f64>>, v: &Vec<Vec<f64>>| -> f64 {
        let (p, q) = (u[0].len(), v[0].len());
        let mut s = 0.0;
        for i in 0..q {
            for j in 0..p {
                let mut e = 0.0;
                for k in 0..n {
                    e += v[k][i] * u[k][j];
                }
                s += e * e;
            }
        }
        s
    };
    cross(&a, &b) / (cross(&a, &a).sqrt() * cross(&b, &b).sqrt())
}

/// Max relative error between `analytic` and central differences of `f`.
pub fn fd_error<F: FnMut(&[f64]) -> f64>(f: F, at: &[f64], analytic: &[f64]) -> f64 {
    let numeric = central_difference(f, at, FD_STEP);
    max_relative_error(analytic, &numeric)
}

pub fn map_like(f: &FeatureMap, data: &[f64]) -> FeatureMap {
    let (b, c, h, w) = f.dims();
    FeatureMap::new(b, c, h, w, data.to_vec()).unwrap()
}

pub fn logits_like(z: &Logits, data: &[f64]) -> Logits {
    Logits::from_vec(z.samples(), z.classes(), data.to_vec()).unwrap()
}
