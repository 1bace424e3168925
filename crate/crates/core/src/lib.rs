//! Line-level localization of hallucinated code.
//!
//! The pipeline parses a program into its original syntax tree, reads the
//! per-terminal hidden vectors of a detection encoder, projects them into a
//! low-dimensional syntactic subspace with a trained probe, rebuilds a
//! predicted tree from the projected vectors and scores source lines by the
//! structures the two trees share.
//!
//! Modules follow the stages of that pipeline:
//!
//! - [`corpus`]: labeled samples, splits, line indexing and a synthetic generator.
//! - [`syntax`]: parsing and the tree / binary tree / `(d, c, u)` tuple codec.
//! - [`encoder`]: a small transformer encoder, its classifier head and the
//!   hidden-state interchange format.
//! - [`probe`]: the syntactic-subspace probe.
//! - [`localize`]: structure matching, token scoring and line ranking.
//! - [`metrics`]: classification and effort-aware localization metrics.
//! - [`planted`]: hidden states with a known syntactic subspace, for testing
//!   the probe and the localizer against a constructed ground truth.

pub mod corpus;
pub mod encoder;
mod error;
pub mod io;
pub mod linalg;
pub mod localize;
pub mod metrics;
pub mod optim;
pub mod planted;
pub mod probe;
pub mod syntax;

pub use corpus::{Label, LineIndex, Sample};
pub use encoder::{ClassifierHead, DetectionResult, Detector, EncoderParams, HiddenMatrix};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use localize::{LineRanking, LocalizationReport, ScoreVector, StructureRepr};
pub use metrics::{ConfusionCounts, MetricsReport};
pub use probe::{ProbeDataset, ProbeParams};
pub use syntax::{AstNode, BinaryNode, Span, Terminal, TupleEncoding};
