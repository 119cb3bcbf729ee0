//! Experiment harness: dataset generation, the detection and localization
//! loop, metrics and frame export.

pub mod dataset;
pub mod export;
pub mod metrics;
pub mod pipeline;
pub mod training;

pub use dataset::{
    detector_input, generate, load_dataset, plan_scenarios, random_placement, record_windows,
    segmentor_input, split_groups, windows_in, write_dataset, Dataset, DatasetPlan,
    PlannedScenario, ScenarioRun, WindowRecord,
};
pub use export::{
    export_frame, frame_from_csv, frame_to_csv, frame_to_pgm, read_frame, FrameFormat,
};
pub use metrics::{eval_metrics, Confusion, MetricsReport, Task};
pub use pipeline::{
    analyze_window, attribute_directions, run_pipeline, Models, PipelineConfig, PipelineOutcome,
    WindowAnalysis, WindowOutcome,
};
pub use training::{
    calibrate_threshold, detection_report, detector_samples, localization_report, mirror_variants,
    segmentation_dice, segmentor_samples, train_detector, train_segmentor,
};
