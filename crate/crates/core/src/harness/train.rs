use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::data::BlobDataset;
use crate::harness::net::{Forward, NetGrads, TinyNet};
use crate::linalg::Matrix;
use crate::losses::{
    fcka_loss, inter_lcka_loss, intra_lcka_loss, kd_kl_loss, log_softmax, LossReport, LossWeights,
};
use crate::similarity::{cka, CkaConfig};
use crate::tensor::Logits;

/// Test accuracy a default-configured teacher must reach.
pub const TEACHER_MIN_ACCURACY: f64 = 0.95;

/// Number of held-out samples in the fixed probe batch.
pub const PROBE_SIZE: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Ce,
    Kd,
    Rcka,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Ce, Mode::Kd, Mode::Rcka];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ce => "ce",
            Mode::Kd => "kd",
            Mode::Rcka => "rcka",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Mode::Ce),
            "kd" => Ok(Mode::Kd),
            "rcka" => Ok(Mode::Rcka),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub weights: LossWeights,
    pub cka_cfg: CkaConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs (0-based) at whose start the learning rate is multiplied by `lr_decay`.
    pub lr_steps: Vec<usize>,
    pub lr_decay: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Student defaults.
    pub fn student(mode: Mode, seed: u64) -> Self {
        TrainConfig {
            mode,
            weights: LossWeights::default(),
            cka_cfg: CkaConfig::default(),
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_steps: vec![10, 15],
            lr_decay: 0.1,
            hidden: 8,
            seed,
        }
    }

    /// Teacher defaults: cross-entropy only, 64 hidden units.
    pub fn teacher(seed: u64) -> Self {
        TrainConfig {
            mode: Mode::Ce,
            epochs: 30,
            learning_rate: 0.05,
            lr_steps: vec![20, 25],
            hidden: 64,
            ..Self::student(Mode::Ce, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.hidden < 1 || self.epochs < 1 {
            return Err(Error::InvalidArgument(
                "hidden size and epochs must be >= 1".into(),
            ));
        }
        let rates = [
            self.learning_rate,
            self.momentum,
            self.weight_decay,
            self.lr_decay,
        ];
        if rates.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate, momentum, weight decay and decay factor must be >= 0: {self:?}"
            )));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        let steps = self.lr_steps.iter().filter(|&&s| s <= epoch).count();
        self.learning_rate * self.lr_decay.powi(steps as i32)
    }

    /// Weights actually applied to the gradient; CE mode zeroes the distillation terms.
    fn effective_weights(&self) -> (f64, f64) {
        match self.mode {
            Mode::Ce => (0.0, 0.0),
            Mode::Kd => (self.weights.alpha, 0.0),
            Mode::Rcka => (self.weights.alpha, self.weights.beta),
        }
    }
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::dim(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    let n = labels.len() as f64;
    let logp = log_softmax(logits, 1.0);
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= logits.cols() {
            return Err(Error::InvalidArgument(format!("label {y} out of range")));
        }
        loss -= logp.get(r, y);
        for c in 0..logits.cols() {
            let target = if c == y { 1.0 } else { 0.0 };
            grad.set(r, c, (logp.get(r, c).exp() - target) / n);
        }
    }
    Ok((loss / n, grad))
}

/// Teacher outputs on one batch.
#[derive(Clone, Debug)]
pub struct TeacherBatch {
    pub hidden: Matrix,
    pub logits: Matrix,
}

/// Per-batch loss values. Distillation terms are `None` when the CKA Gram
/// matrix was degenerate for this batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepLoss {
    pub ce: f64,
    pub kd: Option<f64>,
    pub fcka: Option<f64>,
    pub intra: Option<f64>,
    pub inter: Option<f64>,
    pub total: f64,
}

fn degenerate_as_none<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Student objective for one batch and its parameter gradients.
///
/// All distillation terms are evaluated for reporting; only those whose weight
/// is non-zero for `cfg.mode` contribute to `total` and the gradient.
pub fn student_objective(
    net: &TinyNet,
    x: &Matrix,
    y: &[usize],
    teacher: &TeacherBatch,
    cfg: &TrainConfig,
) -> Result<(StepLoss, NetGrads, Forward)> {
    let fwd = net.forward(x)?;
    let (ce, mut d_logits) = cross_entropy(&fwd.logits, y)?;
    let (w_feat, w_logit) = cfg.effective_weights();

    let z_s = Logits::new(fwd.logits.clone())?;
    let z_t = Logits::new(teacher.logits.clone())?;
    let f_s = fwd.hidden_map();
    let f_t = crate::tensor::FeatureMap::from_matrix(&teacher.hidden);

    let kd = kd_kl_loss(&z_s, &z_t, cfg.weights.tau)?;
    let fcka = degenerate_as_none(fcka_loss(&f_s, &f_t, &cfg.cka_cfg))?;
    let intra = degenerate_as_none(intra_lcka_loss(&z_s, &z_t, &cfg.cka_cfg))?;
    let inter = degenerate_as_none(inter_lcka_loss(&z_s, &z_t, &cfg.cka_cfg))?;

    let mut total = ce;
    let mut d_hidden: Option<Matrix> = None;
    let add_logit_term =
        |w: f64, r: &LossReport<Logits>, d: &mut Matrix, total: &mut f64| -> Result<()> {
            *total += w * r.value;
            *d = d.add_scaled(r.grad.as_matrix(), w)?;
            Ok(())
        };
    match cfg.mode {
        Mode::Ce => {}
        Mode::Kd => {
            if w_feat != 0.0 {
                add_logit_term(w_feat, &kd, &mut d_logits, &mut total)?;
            }
        }
        Mode::Rcka => {
            if w_feat != 0.0 {
                if let Some(r) = &fcka {
                    total += w_feat * r.value;
                    let g =
                        Matrix::from_vec(x.rows(), net.hidden_size(), r.grad.as_slice().to_vec())?;
                    d_hidden = Some(g.scaled(w_feat));
                }
            }
            if w_logit != 0.0 {
                for r in [&intra, &inter].into_iter().flatten() {
                    add_logit_term(w_logit, r, &mut d_logits, &mut total)?;
                }
            }
        }
    }

    let grads = net.backward(&fwd, &d_logits, d_hidden.as_ref())?;
    let loss = StepLoss {
        ce,
        kd: Some(kd.value),
        fcka: fcka.map(|r| r.value),
        intra: intra.map(|r| r.value),
        inter: inter.map(|r| r.value),
        total,
    };
    Ok((loss, grads, fwd))
}

/// SGD with momentum and L2 weight decay: `v ← μv + (g + λw)`, `w ← w − ηv`.
struct Sgd {
    velocity: Vec<f64>,
}

impl Sgd {
    fn new(net: &TinyNet) -> Self {
        Sgd {
            velocity: vec![0.0; net.to_flat().len()],
        }
    }

    fn step(
        &mut self,
        net: &TinyNet,
        grads: &NetGrads,
        cfg: &TrainConfig,
        lr: f64,
    ) -> Result<TinyNet> {
        let mut params = net.to_flat();
        for ((p, g), v) in params
            .iter_mut()
            .zip(grads.to_flat())
            .zip(&mut self.velocity)
        {
            *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
            *p -= lr * *v;
        }
        net.with_flat(&params)
    }
}

fn gather(x: &Matrix, idx: &[usize]) -> Matrix {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| x.row(i)).collect();
    Matrix::from_rows(&rows).expect("non-empty batch of finite rows")
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| c.to_vec())
        .collect()
}

/// Trains `net` with cross-entropy only. No accuracy gate.
pub fn fit_ce(mut net: TinyNet, data: &BlobDataset, cfg: &TrainConfig) -> Result<TinyNet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut opt = Sgd::new(&net);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        for idx in batches(data.train_x.rows(), cfg.batch_size, &mut rng) {
            let x = gather(&data.train_x, &idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.train_y[i]).collect();
            let fwd = net.forward(&x)?;
            let (loss, d_logits) = cross_entropy(&fwd.logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let grads = net.backward(&fwd, &d_logits, None)?;
            net = opt.step(&net, &grads, cfg, lr)?;
            if !net.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
        }
    }
    Ok(net)
}

/// Trains a teacher of width `cfg.hidden` and requires
/// [`TEACHER_MIN_ACCURACY`] test accuracy.
pub fn train_teacher(data: &BlobDataset, cfg: &TrainConfig) -> Result<TinyNet> {
    let net = TinyNet::new(data.dim(), cfg.hidden, data.n_classes(), cfg.seed);
    let net = fit_ce(net, data, cfg)?;
    let accuracy = net.accuracy(&data.test_x, &data.test_y)?;
    if accuracy < TEACHER_MIN_ACCURACY {
        return Err(Error::TeacherUnderTrained {
            accuracy,
            required: TEACHER_MIN_ACCURACY,
        });
    }
    Ok(net)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub ce: f64,
    pub fcka: f64,
    pub intra: f64,
    pub inter: f64,
    pub total: f64,
    pub test_acc: f64,
    pub probe_cka: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub final_accuracy: f64,
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "epoch",
    "mode",
    "seed",
    "ce",
    "fcka",
    "intra",
    "inter",
    "total",
    "test_acc",
    "probe_cka",
];

impl TrainReport {
    pub fn probe_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.probe_cka).collect()
    }

    /// Rows in [`REPORT_COLUMNS`] order.
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        use crate::io::format_value as f;
        self.epochs
            .iter()
            .map(|e| {
                vec![
                    e.epoch.to_string(),
                    self.mode.to_string(),
                    self.seed.to_string(),
                    f(e.ce),
                    f(e.fcka),
                    f(e.intra),
                    f(e.inter),
                    f(e.total),
                    f(e.test_acc),
                    f(e.probe_cka),
                ]
            })
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        write_reports_csv(std::slice::from_ref(self), out)
    }
}

pub fn write_reports_csv<W: std::io::Write>(
    reports: &[TrainReport],
    out: W,
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in reports {
        for row in r.csv_rows() {
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Fixed probe: the first [`PROBE_SIZE`] test samples.
fn probe_batch(data: &BlobDataset) -> Matrix {
    let n = PROBE_SIZE.min(data.test_x.rows());
    gather(&data.test_x, &(0..n).collect::<Vec<_>>())
}

/// Distills a student of width `cfg.hidden` from a frozen teacher.
pub fn train_student(
    teacher: &TinyNet,
    data: &BlobDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if teacher.input_size() != data.dim() || teacher.output_size() != data.n_classes() {
        return Err(Error::dim("teacher does not match the dataset"));
    }
    let mut net = TinyNet::new(data.dim(), cfg.hidden, data.n_classes(), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut opt = Sgd::new(&net);

    let teacher_train = teacher.forward(&data.train_x)?;
    let probe = probe_batch(data);
    let probe_teacher = teacher.forward(&probe)?.logits;
    let probe_cfg = cfg.cka_cfg;

    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut sums = Means::default();
        for idx in batches(data.train_x.rows(), cfg.batch_size, &mut rng) {
            let x = gather(&data.train_x, &idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.train_y[i]).collect();
            let t = TeacherBatch {
                hidden: gather(&teacher_train.hidden, &idx),
                logits: gather(&teacher_train.logits, &idx),
            };
            let (loss, grads, _) = student_objective(&net, &x, &y, &t, cfg)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    loss: loss.total,
                });
            }
            sums.add(&loss);
            net = opt.step(&net, &grads, cfg, lr)?;
            if !net.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    loss: f64::NAN,
                });
            }
        }
        let student_probe = net.forward(&probe)?.logits;
        let probe_cka = cka(&probe_teacher, &student_probe, &probe_cfg).unwrap_or(0.0);
        records.push(EpochRecord {
            epoch: epoch + 1,
            ce: sums.ce.mean(),
            fcka: sums.fcka.mean(),
            intra: sums.intra.mean(),
            inter: sums.inter.mean(),
            total: sums.total.mean(),
            test_acc: net.accuracy(&data.test_x, &data.test_y)?,
            probe_cka,
        });
    }
    let final_accuracy = records.last().map_or(0.0, |r| r.test_acc);
    Ok(TrainReport {
        mode: cfg.mode,
        seed: cfg.seed,
        epochs: records,
        final_accuracy,
    })
}

#[derive(Default)]
struct Mean {
    sum: f64,
    count: usize,
}

impl Mean {
    fn push(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.count += 1;
        }
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

#[derive(Default)]
struct Means {
    ce: Mean,
    fcka: Mean,
    intra: Mean,
    inter: Mean,
    total: Mean,
}

impl Means {
    fn add(&mut self, l: &StepLoss) {
        self.ce.push(Some(l.ce));
        self.fcka.push(l.fcka);
        self.intra.push(l.intra);
        self.inter.push(l.inter);
        self.total.push(Some(l.total));
    }
}
