//! Approximate aggregation queries over fixed-radius nearest neighbors.
//!
//! A query asks for an aggregate (AVG, VAR, PCT, COUNT, SUM) of an attribute
//! over every object whose *oracle* embedding lies within radius `r` of a query
//! target. Oracle embeddings are expensive, so the pipeline draws a uniform
//! sample `S`, embeds it with a cheap *proxy* model, labels a small pilot
//! `S_p ⊂ S` with the oracle, and uses the pilot to calibrate a proxy-distance
//! threshold. The precision target fed to the calibrated selector is tuned per
//! aggregation:
//!
//! * value-sensitive aggregates (AVG, VAR) maximise pilot F1 by ternary search,
//! * count-sensitive aggregates (PCT, COUNT) balance pilot precision and recall
//!   by bisection,
//! * SUM runs the balancing search first and then refines within ±0.05.
//!
//! The crate also provides closed-form sample-size calculators, baselines, an
//! experiment harness and one-sample hypothesis tests over query results.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod bounds;
pub mod dataset;
pub mod error;
pub mod frnn;
pub mod harness;
pub mod models;
pub mod rng;
pub mod search;
pub mod sprint;
pub mod stats;

pub use aggregate::{aggregate, relative_error, AggScope, Aggregation, AggregationContext, Sensitivity};
pub use dataset::{DataObject, Dataset, SyntheticGenConfig};
pub use error::{Error, Result};
pub use frnn::{dist, exact_frnn, pqe_pt, prf1, top_k_baseline, Calibration, Candidate, Metric, NeighborSet, PrecisionTarget, Prf1, Space};
pub use models::{speedup, CallLedger, EmbeddingModel, EmbeddingSession, EmbeddingSource, LedgerCounts, ModelRole};
pub use sprint::{select_neighbors, QuerySpec, QueryTarget, Selection, SelectionContext, SprintConfig};
