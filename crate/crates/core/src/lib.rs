//! Quality engineering for multilingual PII span annotation.
//!
//! The crate is organised around the lifecycle of an annotation task:
//!
//! - [`model`]: locales, the PII type registry, label normalisation and
//!   annotation validity.
//! - [`agreement`]: span matching and inter-annotator agreement.
//! - [`metrics`]: ground-truth comparison, row taxonomy, Recall and FPR.
//! - [`workflow`]: the task state machine, IRA routing, QA review and
//!   annotator quality scores.
//! - [`rca`]: disagreement categories, confusion pairs and distribution
//!   reports.
//! - [`synth`]: locale-aware synthetic prompts and simulated annotators.
//!
//! [`corpus`] holds the shared task/submission/ground-truth containers and
//! [`config`] the tunable pipeline parameters.

pub mod agreement;
pub mod config;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod rca;
pub mod synth;
pub mod workflow;

pub use agreement::{AgreementBreakdown, AgreementMatrix};
pub use config::PipelineConfig;
pub use corpus::{AnnotatorId, Corpus, GroundTruth, Submission, SubmissionId, Task, TaskId};
pub use model::{Locale, PiiCategory, PiiTypeId, Registry, Span, SpanAnnotation};
pub use workflow::{Phase, Review, Verdict};
