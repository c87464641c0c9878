//! Desk-scale distillation: a small tanh network, softened KD and feature
//! matching losses, and FedSGD over synthetic class blobs.

pub mod data;
pub mod demo;
pub mod loss;
pub mod net;
pub mod tensor;
pub mod train;

pub use demo::{run_demo, KdDemoConfig, KdDemoOutcome, KdDemoRun};
pub use data::{contiguous_groups, iid_split, label_split, BlobSpec, Blobs, ToyDataset};
pub use loss::{cross_entropy, kd_loss, kl_divergence, simkd_loss, softened_probs, LossSpec, SimKdOutput};
pub use net::{Arch, Dense, Forward, NetParams, Projector};
pub use tensor::Matrix;
pub use train::{
    distill_student, fedsgd_gradient, fedsgd_round, measure_accuracy, student_objective, train_teacher, Distilled,
    StudentGrad, Targets, Trained,
};
