use crate::error::{Error, Result};
use crate::losses::{dissimilarity, LossReport, LossWeights};
use crate::similarity::{cka_value_and_gradient, CkaConfig};
use crate::tensor::{FeatureMap, Logits};

/// Feature-level CKA loss on maps flattened to `(batch, c·h·w)`.
///
/// Only the batch sizes have to agree; the Gram matrices are `batch x batch`.
pub fn fcka_loss(
    f_s: &FeatureMap,
    f_t: &FeatureMap,
    cfg: &CkaConfig,
) -> Result<LossReport<FeatureMap>> {
    if f_s.batch() != f_t.batch() {
        return Err(Error::dim(format!(
            "FCKA batch sizes differ: student {} vs teacher {}",
            f_s.batch(),
            f_t.batch()
        )));
    }
    let (s, g) = cka_value_and_gradient(&f_s.flatten(), &f_t.flatten(), cfg)?;
    let value = dissimilarity(s);
    let grad = f_s.with_data(g.scaled(-1.0).into_vec());
    Ok(LossReport {
        value,
        grad,
        components: vec![("fcka", value)],
    })
}

/// Sample-relation logit loss: `1 − CKA(z_t, z_s)` on `N x N` Grams.
pub fn intra_lcka_loss(z_s: &Logits, z_t: &Logits, cfg: &CkaConfig) -> Result<LossReport<Logits>> {
    if z_s.samples() != z_t.samples() {
        return Err(Error::dim(format!(
            "intra-LCKA sample counts differ: {} vs {}",
            z_s.samples(),
            z_t.samples()
        )));
    }
    let (s, g) = cka_value_and_gradient(z_s.as_matrix(), z_t.as_matrix(), cfg)?;
    let value = dissimilarity(s);
    Ok(LossReport {
        value,
        grad: Logits::new(g.scaled(-1.0))?,
        components: vec![("intra", value)],
    })
}

/// Class-relation logit loss: `1 − CKA(z_tᵀ, z_sᵀ)` on `P x P` Grams.
pub fn inter_lcka_loss(z_s: &Logits, z_t: &Logits, cfg: &CkaConfig) -> Result<LossReport<Logits>> {
    if z_s.as_matrix().shape() != z_t.as_matrix().shape() {
        return Err(Error::dim(format!(
            "inter-LCKA needs identical logit shapes, got {:?} vs {:?}",
            z_s.as_matrix().shape(),
            z_t.as_matrix().shape()
        )));
    }
    let (s, g) = cka_value_and_gradient(
        &z_s.as_matrix().transpose(),
        &z_t.as_matrix().transpose(),
        cfg,
    )?;
    let value = dissimilarity(s);
    Ok(LossReport {
        value,
        grad: Logits::new(g.transpose().scaled(-1.0))?,
        components: vec![("inter", value)],
    })
}

/// `ce + α·fcka + β·(intra + inter)`. Gradients live on different tensors, so
/// callers combine them with the same weights.
pub fn rcka_total<A, B, C>(
    ce: f64,
    fcka: &LossReport<A>,
    intra: &LossReport<B>,
    inter: &LossReport<C>,
    w: &LossWeights,
) -> LossReport<()> {
    let value = ce + w.alpha * fcka.value + w.beta * (intra.value + inter.value);
    LossReport {
        value,
        grad: (),
        components: vec![
            ("ce", ce),
            ("fcka", fcka.value),
            ("intra", intra.value),
            ("inter", inter.value),
            ("total", value),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::similarity::cka;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn report(v: f64) -> LossReport<()> {
        LossReport {
            value: v,
            grad: (),
            components: vec![],
        }
    }

    #[test]
    fn fcka_zero_on_identical_maps() {
        let f = FeatureMap::random_normal(4, 3, 2, 2, &mut rng(1));
        let r = fcka_loss(&f, &f, &CkaConfig::default()).unwrap();
        assert!(r.value.abs() < 1e-12);
    }

    #[test]
    fn fcka_across_shapes() {
        let mut r = rng(2);
        let t = FeatureMap::random_normal(4, 8, 4, 4, &mut r);
        let s = FeatureMap::random_normal(4, 3, 2, 2, &mut r);
        let cfg = CkaConfig::default();
        let rep = fcka_loss(&s, &t, &cfg).unwrap();
        assert!((0.0..=1.0).contains(&rep.value));
        let oracle = 1.0 - cka(&t.flatten(), &s.flatten(), &cfg).unwrap();
        assert!((rep.value - oracle).abs() < 1e-12);
        assert_eq!(rep.grad.dims(), s.dims());
        let other = FeatureMap::random_normal(3, 3, 2, 2, &mut r);
        assert!(matches!(
            fcka_loss(&other, &t, &cfg),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn intra_invariant_to_rotated_classes() {
        let mut r = rng(3);
        let zt = Matrix::random_normal(8, 10, &mut r);
        let q = Matrix::random_orthogonal(10, &mut r);
        let zs = Logits::new(zt.matmul(&q).unwrap()).unwrap();
        let zt = Logits::new(zt).unwrap();
        let cfg = CkaConfig::default();
        assert!(intra_lcka_loss(&zt, &zt, &cfg).unwrap().value < 1e-12);
        assert!(intra_lcka_loss(&zs, &zt, &cfg).unwrap().value < 1e-10);
    }

    #[test]
    fn intra_allows_different_class_counts() {
        let mut r = rng(4);
        let zs = Logits::new(Matrix::random_normal(8, 4, &mut r)).unwrap();
        let zt = Logits::new(Matrix::random_normal(8, 10, &mut r)).unwrap();
        assert!(intra_lcka_loss(&zs, &zt, &CkaConfig::default()).is_ok());
        assert!(inter_lcka_loss(&zs, &zt, &CkaConfig::default()).is_err());
    }

    #[test]
    fn inter_ignores_shared_sample_permutation() {
        let mut r = rng(5);
        let zs = Matrix::random_normal(8, 4, &mut r);
        let zt = Matrix::random_normal(8, 4, &mut r);
        let perm = [3usize, 0, 7, 1, 6, 2, 5, 4];
        let permute = |m: &Matrix| {
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| m.row(i).to_vec()).collect();
            Logits::new(Matrix::from_rows(&rows).unwrap()).unwrap()
        };
        let cfg = CkaConfig::default();
        let base = inter_lcka_loss(
            &Logits::new(zs.clone()).unwrap(),
            &Logits::new(zt.clone()).unwrap(),
            &cfg,
        )
        .unwrap()
        .value;
        let moved = inter_lcka_loss(&permute(&zs), &permute(&zt), &cfg)
            .unwrap()
            .value;
        assert!((base - moved).abs() < 1e-10);
        let oracle = 1.0 - cka(&zt.transpose(), &zs.transpose(), &cfg).unwrap();
        assert!((base - oracle).abs() < 1e-12);
    }

    #[test]
    fn total_is_a_weighted_sum() {
        let w = LossWeights::default();
        let zero = report(0.0);
        assert_eq!(rcka_total(0.7, &zero, &zero, &zero, &w).value, 0.7);
        let off = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            ..w
        };
        assert_eq!(
            rcka_total(0.3, &report(0.5), &report(0.2), &report(0.1), &off).value,
            0.3
        );
        let t = rcka_total(1.0, &report(0.1), &report(0.2), &report(0.3), &w);
        assert!((t.value - (1.0 + 5.0 * 0.1 + 5.0 * 0.5)).abs() < 1e-15);
        assert_eq!(t.component("fcka"), Some(0.1));
    }
}
