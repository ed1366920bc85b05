//! Joint training: learning-rate schedule, Adam, the epoch loop with
//! per-epoch quadruple re-sampling, and gradient checking.

mod adam;
mod gradcheck;
mod schedule;
mod trainer;

pub use adam::Adam;
pub use gradcheck::{analytic_gradient, check_indices, check_random_pairs, gradient_check, random_pair, GradCheckReport, GRAD_FLOOR};
pub use schedule::{lr_schedule, TrainConfig};
pub use trainer::{epoch_seed, train, TrainEvent, TrainReport, Trainer, ValidationMetrics};
