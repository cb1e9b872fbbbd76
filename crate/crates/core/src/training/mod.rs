//! Loss, backpropagation, optimisers and the training loop.

pub mod backward;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use backward::{backward, BackwardOptions, BackwardOutput, GradEntry, Gradients, Mutation};
pub use loss::{cross_entropy, loss_and_grad, PROB_FLOOR};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState, TrainConfig};
pub use trainer::{evaluate, predict, predict_batch, train, train_step, train_until, EpochLog, TrainOutcome, LOG_HEADER};
