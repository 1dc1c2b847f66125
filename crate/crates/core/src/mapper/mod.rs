//! Query-embedding → cluster classifier: a single-step two-layer LSTM with a
//! softmax head, a linear baseline, training and evaluation.

mod eval;
mod model;
mod train;

pub use eval::{classification_report, evaluate_mapper, predict_batch, ClassCounts, Confusion, EvalReport};
pub use model::{gradient_check, lstm_forward, predict_cluster, GradCheck, MapperKind, MapperModel, Mode, Param};
pub use train::{split_dataset, train_mapper, LabeledExample, TrainConfig, TrainedMapper};
