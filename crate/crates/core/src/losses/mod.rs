//! Point-wise training losses that shape feature maps for the solver.

pub mod batch;
pub mod terms;
pub mod train;

pub use batch::{
    batch_terms, loss_gradient_fd, loss_gradient_fd_on, sample_batch, sample_terms, total_loss, CorrespondenceBatch, LossBreakdown,
    LossSample, MapSide, FD_STEP, MAX_FD_ENTRIES,
};
pub use terms::{e_gd, e_gn, e_neg, e_pos, gd_hinge, gn_value, point_gn_system, LossConfig, LossWeights, PointGnSystem, DET_FLOOR};
pub use train::{
    make_toy_pairs, score_alignment, train_toy_features, AlignmentScore, Divergence, EpochRecord, FilterBank, ToyConfig, ToyPair,
    ToyTrainingResult,
};
