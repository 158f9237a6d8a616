use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Gaussian-blob classification problem.
///
/// Each class owns `clusters_per_class` centers drawn from `N(0, center_scale²)`;
/// points are drawn around a uniformly chosen center of their class with
/// isotropic standard deviation `spread`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobConfig {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    pub clusters_per_class: usize,
    pub center_scale: f64,
    pub spread: f64,
    /// Fraction of each class assigned to the training split.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            n_classes: 4,
            n_per_class: 400,
            dim: 16,
            clusters_per_class: 8,
            center_scale: 1.0,
            spread: 0.55,
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlobDataset {
    pub config: BlobConfig,
    /// `(n_classes · clusters_per_class) x dim`, class-major.
    pub centers: Matrix,
    pub train_x: Matrix,
    pub train_y: Vec<usize>,
    pub test_x: Matrix,
    pub test_y: Vec<usize>,
}

impl BlobDataset {
    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn len(&self) -> usize {
        self.train_y.len() + self.test_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn make_blobs(cfg: &BlobConfig) -> Result<BlobDataset> {
    if cfg.n_classes < 2 || cfg.dim < 2 || cfg.clusters_per_class < 1 {
        return Err(Error::InvalidArgument(format!(
            "blobs need >= 2 classes, dim >= 2 and >= 1 cluster per class: {cfg:?}"
        )));
    }
    if !(cfg.spread > 0.0 && cfg.spread.is_finite() && cfg.center_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spread must be > 0, got {}",
            cfg.spread
        )));
    }
    let n_train = (cfg.n_per_class as f64 * cfg.train_fraction).round() as usize;
    if n_train < 1 || n_train >= cfg.n_per_class {
        return Err(Error::InvalidArgument(format!(
            "train fraction {} leaves an empty split of {} per class",
            cfg.train_fraction, cfg.n_per_class
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_centers = cfg.n_classes * cfg.clusters_per_class;
    let centers = Matrix::random_normal(n_centers, cfg.dim, &mut rng).scaled(cfg.center_scale);

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in 0..cfg.n_classes {
        let mut points: Vec<Vec<f64>> = (0..cfg.n_per_class)
            .map(|_| {
                let k =
                    class * cfg.clusters_per_class + rng.random_range(0..cfg.clusters_per_class);
                centers
                    .row(k)
                    .iter()
                    .map(|c| c + cfg.spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        points.shuffle(&mut rng);
        let rest = points.split_off(n_train);
        train.extend(points.into_iter().map(|p| (p, class)));
        test.extend(rest.into_iter().map(|p| (p, class)));
    }
    train.shuffle(&mut rng);

    let split = |pairs: Vec<(Vec<f64>, usize)>| -> Result<(Matrix, Vec<usize>)> {
        let labels = pairs.iter().map(|p| p.1).collect();
        let rows: Vec<Vec<f64>> = pairs.into_iter().map(|p| p.0).collect();
        Ok((Matrix::from_rows(&rows)?, labels))
    };
    let (train_x, train_y) = split(train)?;
    let (test_x, test_y) = split(test)?;
    Ok(BlobDataset {
        config: cfg.clone(),
        centers,
        train_x,
        train_y,
        test_x,
        test_y,
    })
}
