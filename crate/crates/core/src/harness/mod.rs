//! Desk-scale teacher/student distillation on synthetic blobs.
//!
//! A wide one-hidden-layer perceptron is trained as the teacher, then narrow
//! students are trained with cross-entropy alone, with vanilla KD, or with the
//! relation-CKA objective (feature CKA on the hidden layer plus sample- and
//! class-relation CKA on the logits). Logit CKA against the teacher on a fixed
//! probe batch is tracked every epoch.

mod data;
mod net;
mod sweep;
mod train;

pub use data::{make_blobs, BlobConfig, BlobDataset};
pub use net::{Forward, NetGrads, TinyNet};
pub use sweep::{median, run_seed_sweep, ModeSummary, SweepRun, SweepSummary};
pub use train::{
    cross_entropy, fit_ce, student_objective, train_student, train_teacher, write_reports_csv,
    EpochRecord, Mode, StepLoss, TeacherBatch, TrainConfig, TrainReport, PROBE_SIZE,
    REPORT_COLUMNS, TEACHER_MIN_ACCURACY,
};
