//! Feed-forward two-class classifier trained from scratch.

mod gradcheck;
mod loss;
mod network;
mod train;

pub use gradcheck::{analytic_gradients, gradient_check, GradientCheckReport, FD_STEP, MAX_CHECK_ROWS};
pub use loss::{
    composite_loss, cross_entropy, kl_divergence, summed_kl_per_row, temper, validate_distributions,
    CompositeLossSpec, DISTRIBUTION_TOLERANCE, PROB_FLOOR,
};
pub use network::{softmax_rows, BatchNorm, Dense, MlpArchitecture, MlpModel, Mode, MLP_FORMAT_VERSION};
pub use train::{fit, train, EarlyStopping, MlpTrainConfig, MlpTrainOutcome};
pub(crate) use train::stream;
