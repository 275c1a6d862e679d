//! Trajectories, tubes, grains, and the empirical constants built on them.

mod grain;
mod lipschitz;
mod region;
mod subspace;
mod tube;

pub use grain::{grain_decompose, GrainAssignment};
pub use lipschitz::{
    estimate_layer_lipschitz, estimate_lipschitz, lipschitz_chain_bound, perturb_state, LipschitzEstimate,
    DEFAULT_PAIRS_PER_SCALE, LIPSCHITZ_SCALES,
};
pub(crate) use region::sample_ball;
pub(crate) use tube::dist;
pub use region::{
    collapse_over_regions, cone_count, default_normalizer, estimate_collapse_constant, estimate_head_constant,
    head_count_variance, head_count_variance_with, ln_collapse_ratio, tube_count_in_region, CollapseEstimate,
    ConvexRegion, HeadVariance, RegionCount, DEFAULT_EPS,
};
pub use subspace::{
    grain_subspaces, max_overlap, principal_basis, probe_interference, project, projector_overlap, GrainBasis,
    Interference, DEFAULT_MAX_RANK,
};
pub use tube::{
    point_segment_distance, point_trajectory_distance, segment_segment_distance, trajectory_distance,
    tubes_intersect, RepresentationField, Trajectory, Tube,
};
