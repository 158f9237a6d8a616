//! Feature maps and logits, the two student/teacher tensor kinds the losses consume.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{check_finite, Matrix};

/// `(batch, channels, height, width)` activation tensor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(b: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if b == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::dim(format!(
                "feature map dims must be >= 1, got {b}x{c}x{h}x{w}"
            )));
        }
        if data.len() != b * c * h * w {
            return Err(Error::dim(format!(
                "{b}x{c}x{h}x{w} feature map needs {} values, got {}",
                b * c * h * w,
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(FeatureMap { b, c, h, w, data })
    }

    pub fn zeros(b: usize, c: usize, h: usize, w: usize) -> Self {
        Self::new(b, c, h, w, vec![0.0; b * c * h * w]).expect("dims must be >= 1")
    }

    pub fn random_normal<R: Rng + ?Sized>(
        b: usize,
        c: usize,
        h: usize,
        w: usize,
        rng: &mut R,
    ) -> Self {
        let data = (0..b * c * h * w)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Self::new(b, c, h, w, data).expect("dims must be >= 1")
    }

    /// Wraps a `(batch, channels)` matrix as a map with 1x1 spatial extent.
    pub fn from_matrix(m: &Matrix) -> Self {
        FeatureMap {
            b: m.rows(),
            c: m.cols(),
            h: 1,
            w: 1,
            data: m.as_slice().to_vec(),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.b, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.b
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(b, c, y, x)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `R^{b×c×h×w} → R^{b×chw}`: one row per batch element.
    pub fn flatten(&self) -> Matrix {
        Matrix::from_vec(self.b, self.c * self.h * self.w, self.data.clone())
            .expect("feature map is finite and non-empty")
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        FeatureMap { data, ..*self }
    }
}

/// `(samples, classes)` pre-softmax scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits(Matrix);

impl Logits {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() < 2 || m.cols() < 2 {
            return Err(Error::dim(format!(
                "logits need >= 2 samples and >= 2 classes, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(Logits(m))
    }

    pub fn from_vec(n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Matrix::from_vec(n, p, data)?)
    }

    pub fn samples(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

impl AsRef<Matrix> for Logits {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}
