//! Effect-estimation and forecasting metrics, and the noise-robustness
//! experiment harness.

mod matching;
mod metrics;

pub use matching::{att_error, matched_att, nn_match, MatchPair, MatchedSet};
pub use metrics::{bacc, mean_effect_on_treated, naive_att, Bacc, Confusion, IteSummary, THRESHOLD};
pub mod robustness;

pub use robustness::{run_robustness, summarize, CellSummary, RobustnessRow};
