//! One-hidden-layer ReLU perceptron with hand-written backprop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tensor::{FeatureMap, Logits};

/// `input -> hidden (ReLU) -> output`.
///
/// Weights are stored `fan_in x fan_out` so a batch forward pass is `X W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyNet {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Parameter gradients share the network's layout.
pub type NetGrads = TinyNet;

/// Intermediate values needed by [`TinyNet::backward`].
#[derive(Clone, Debug)]
pub struct Forward {
    pub input: Matrix,
    pub pre: Matrix,
    /// Post-ReLU activations, `batch x hidden`.
    pub hidden: Matrix,
    pub logits: Matrix,
}

impl Forward {
    /// Hidden activations as a `(batch, hidden, 1, 1)` map.
    pub fn hidden_map(&self) -> FeatureMap {
        FeatureMap::from_matrix(&self.hidden)
    }

    pub fn logits(&self) -> Result<Logits> {
        Logits::new(self.logits.clone())
    }
}

impl TinyNet {
    /// He-initialized weights, zero biases.
    pub fn new(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |fan_in: usize, fan_out: usize| {
            let std = (2.0 / fan_in as f64).sqrt();
            let mut m = Matrix::zeros(fan_in, fan_out);
            for v in m.as_mut_slice() {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
            m
        };
        TinyNet {
            w1: init(input, hidden),
            b1: vec![0.0; hidden],
            w2: init(hidden, output),
            b2: vec![0.0; output],
        }
    }

    pub fn zeros_like(&self) -> Self {
        TinyNet {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn input_size(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_size(&self) -> usize {
        self.w2.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Forward> {
        if x.cols() != self.input_size() {
            return Err(Error::dim(format!(
                "batch has {} features, network expects {}",
                x.cols(),
                self.input_size()
            )));
        }
        let mut pre = x.matmul(&self.w1)?;
        add_bias(&mut pre, &self.b1);
        let mut hidden = pre.clone();
        hidden
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = v.max(0.0));
        let mut logits = hidden.matmul(&self.w2)?;
        add_bias(&mut logits, &self.b2);
        Ok(Forward {
            input: x.clone(),
            pre,
            hidden,
            logits,
        })
    }

    /// Backpropagates upstream gradients on the logits and (optionally) on the
    /// post-ReLU hidden activations.
    pub fn backward(
        &self,
        fwd: &Forward,
        d_logits: &Matrix,
        d_hidden: Option<&Matrix>,
    ) -> Result<NetGrads> {
        if d_logits.shape() != fwd.logits.shape() {
            return Err(Error::dim(format!(
                "logit gradient {:?} vs logits {:?}",
                d_logits.shape(),
                fwd.logits.shape()
            )));
        }
        let w2 = fwd.hidden.transpose().matmul(d_logits)?;
        let b2 = column_sums(d_logits);
        let mut dh = d_logits.matmul(&self.w2.transpose())?;
        if let Some(extra) = d_hidden {
            if extra.shape() != dh.shape() {
                return Err(Error::dim(format!(
                    "hidden gradient {:?} vs hidden {:?}",
                    extra.shape(),
                    dh.shape()
                )));
            }
            dh = dh.add_scaled(extra, 1.0)?;
        }
        for (g, p) in dh.as_mut_slice().iter_mut().zip(fwd.pre.as_slice()) {
            if *p <= 0.0 {
                *g = 0.0;
            }
        }
        let w1 = fwd.input.transpose().matmul(&dh)?;
        let b1 = column_sums(&dh);
        Ok(TinyNet { w1, b1, w2, b2 })
    }

    /// Parameters flattened as `w1, b1, w2, b2`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.w1.as_slice().to_vec();
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        v
    }

    /// Inverse of [`TinyNet::to_flat`] for a network of this shape.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let sizes = [
            self.w1.as_slice().len(),
            self.b1.len(),
            self.w2.as_slice().len(),
            self.b2.len(),
        ];
        if flat.len() != sizes.iter().sum::<usize>() {
            return Err(Error::dim("flat parameter length does not match network"));
        }
        let (w1, rest) = flat.split_at(sizes[0]);
        let (b1, rest) = rest.split_at(sizes[1]);
        let (w2, b2) = rest.split_at(sizes[2]);
        Ok(TinyNet {
            w1: Matrix::from_vec(self.w1.rows(), self.w1.cols(), w1.to_vec())?,
            b1: b1.to_vec(),
            w2: Matrix::from_vec(self.w2.rows(), self.w2.cols(), w2.to_vec())?,
            b2: b2.to_vec(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let f = self.forward(x)?;
        Ok((0..f.logits.rows())
            .map(|r| argmax(f.logits.row(r)))
            .collect())
    }

    pub fn accuracy(&self, x: &Matrix, y: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
        Ok(hits as f64 / y.len() as f64)
    }
}

fn add_bias(m: &mut Matrix, b: &[f64]) {
    let cols = m.cols();
    for row in m.as_mut_slice().chunks_mut(cols) {
        row.iter_mut().zip(b).for_each(|(v, bias)| *v += bias);
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        out.iter_mut().zip(m.row(r)).for_each(|(o, v)| *o += v);
    }
    out
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
