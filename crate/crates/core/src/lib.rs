//! Post-hoc reject-option classification.
//!
//! Given the logits of any trained classifier on a labeled validation set,
//! this crate learns one rejection threshold per predicted class. A
//! threshold is acceptable only when the examples it rejects look no better
//! than a coin flip under a one-sided binomial test; among acceptable
//! thresholds the one with the highest accuracy on the kept examples wins.
//!
//! Pipeline: [`calibration::fit_per_class_temperature`] →
//! [`learner::learn_thresholds`] → [`metrics::evaluate`].

pub mod calibration;
pub mod error;
pub mod learner;
pub mod metrics;
pub mod randomness;
pub mod score_model;
pub mod special;
pub mod synthetic;

pub use calibration::{apply_calibration, fit_per_class_temperature, CalibrationMap};
pub use error::{Error, Result};
pub use learner::{learn_thresholds, ClassSlice};
pub use metrics::{evaluate, EvalReport};
pub use randomness::{binom_cdf, region_viable, RegionTally, ViabilityMethod};
pub use score_model::{decide, softmax, Decision, Example, ScoreSet, ThresholdVector};
