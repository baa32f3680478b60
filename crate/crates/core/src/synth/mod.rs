//! Synthetic data: rotated-pattern volumes and toy spherical experiments.

pub mod patterns;
pub mod toy;

pub use patterns::{
    generate_dataset, make_pattern, pattern_count, place_patterns, sample_seed, GenConfig, Manifest, Pattern,
    PatternKind, Placement, SampleRecord, Split,
};
pub use toy::{
    run_toy, summarize, synthesize_from_sh, toy_class_vectors, ShAnalyzer, SimoncelliProfile, ToyExperiment,
    ToyInstance, ToyPipeline, ToyResult, ToySpec, ToySummary,
};
