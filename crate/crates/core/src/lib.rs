//! Self-supervised tree-depth probing of contextual embeddings.
//!
//! A linear probe maps token vectors to predicted tree depths. Instead of
//! comparing predictions with gold depths only, the probe is scored against
//! the whole set of depth sequences that satisfy the tree constraints:
//! the nearest member gives a lower bound on the supervised loss and the
//! farthest member an upper bound.

pub mod constraint;
pub mod error;
pub mod geometry;
pub mod greedy;
pub mod ingest;
pub mod metrics;
pub mod probe;
pub mod report;

pub use constraint::{
    enumerate_all, max_oracle, mean_squared_distance, min_oracle, validate,
    ConstraintSetEnumeration, DepthSequence, OracleCaps,
};
pub use error::{Error, Result};
pub use greedy::{pesu, unit_gap_condition_holds, xpesu, GreedyTrace, PredictedDepths};
pub use ingest::{Corpus, MeasurementMode, ProbeExample, SentenceEmbedding};
pub use metrics::{aggregate, MetricReport, MetricSummary, ProbeSet, ProjectionSolver};
pub use probe::{train, ProbeMatrix, TargetMode, TrainConfig, TrainedProbe};
pub use report::SweepResult;
