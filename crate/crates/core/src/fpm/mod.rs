//! Per-class short-term fault prediction with a small neural network.

pub mod eval;
pub mod nn;
pub mod sampling;

pub use eval::{
    evaluate_horizons, horizon_steps, monte_carlo_eval, shift_test_set, train_class, FpmSettings, HorizonMetrics,
    HorizonSpec, McConfig, ShiftedSet,
};
pub use nn::{train_nn, NnConfig, NnModel, TrainData};
pub use sampling::{build_sets, FeatureTimeline, SampleSet, SamplingPlan, SplitSets};
