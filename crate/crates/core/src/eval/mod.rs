//! Overlap and boundary metrics, lesion heatmaps, the ventricle-area proxy and
//! the segmentation experiment.

mod experiment;
mod metrics;
mod segmenter;

pub use experiment::{
    paired_t_test, real_count, run_seg_experiment, write_table_csv, Arm, ArmSummary, Comparison,
    ExperimentResult, Pair, RunScores, SegExperimentConfig, BASELINE_ARM,
};
pub use metrics::{
    accumulate_heatmap, dice, hausdorff, heatmap_correlation, nearest_rank, pearson,
    ventricle_area_delta, HeatmapGrid, DEFAULT_CSF_THRESHOLD,
};
pub use segmenter::{train_segmenter, Segmenter, SegmenterConfig};
