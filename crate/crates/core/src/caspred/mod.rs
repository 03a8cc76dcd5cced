//! Classical feature-based baseline: hand-crafted text and early-timing
//! features with one logistic classifier per growth step.

mod classify;
mod features;

pub use classify::{Classifier, Logistic, StepClassifier};
pub use features::{
    complexity, lix, referral_count, size, temporal_gaps, write_matrix, CasPredFeatures, Extractor, FeatureSet,
    Lexicon, TfIdf, K,
};
