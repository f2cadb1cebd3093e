//! Detection of topological interaction violations in multi-class label
//! grids, the masked topological-interaction loss, and segmentation metrics.

pub mod constraints;
pub mod detect;
pub mod error;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod synth;

pub use constraints::{
    build_kernel, parse_config, reduce, Connectivity, Constraint, ConstraintConfig, ConstraintSet,
    PairTask,
};
pub use detect::{detect, Algorithm, ConvBackend, DetectionResult};
pub use error::{Error, Result};
pub use grid::{
    argmax_labels, class_mask, BinaryMask, CountGrid, LabelGrid, LikelihoodGrid, Shape,
};
pub use loss::{
    masked_loss, masked_loss_grad, total_loss, total_loss_with_mask, LossConfig, LossReport,
    LossValue, Surrogate,
};
pub use metrics::{evaluate, MetricsReport};
pub use synth::{bench, generate, BenchConfig, BenchReport, Scenario, SynthSpec, Synthesized};
