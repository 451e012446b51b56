//! Gradient-boosted decision trees for binary classification, trained on the
//! same hard-label plus teacher-KL objective as the neural learner.

mod objective;
mod train;
mod tree;

pub use objective::{binary_composite_loss, grad_hess, logit, sigmoid};
pub use train::{train, GbtConfig, GbtModel, GbtTrainOutcome, DEFAULT_MISSING_MARKER, GBT_FORMAT_VERSION};
pub use tree::{build_tree, leaf_weight, split_gain, threshold_between, Direction, SortedColumns, SplitParams, TreeNode};
