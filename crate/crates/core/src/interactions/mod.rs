//! Global interaction measures built from input Hessians: expected absolute
//! (EAH), absolute expected (AEH) and group expected Hessians (M-GEH), their
//! posterior summaries under dropout sampling, and the choice of `M`.

mod detect;
mod geh;
mod partition;
mod report;
mod select;

pub use geh::{
    absolute_expected, all_pairs, assign_ranks, bayes_p_value, bayesian_geh, cluster_points, expected_absolute,
    geh_single_sample, group_expected, hessian_field, important_nodes, pairs_among, sample_effects, summarize,
    HessianField, InteractionEstimate, Pair, CI_MULTIPLIER,
};
pub use partition::{partition_kmeans, Partition};
pub use report::{DetectionReport, ReportMeta, ReportRow};
pub use select::{choose_m, effect_ranks, rank_weighted_distance, select_m, MSelectionTrace, DEFAULT_TAU};
pub use detect::{detect, detection_inputs, detection_pairs, node_names, DetectOptions, Detection, Grouping};
