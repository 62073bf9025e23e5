//! Reconstruction and analysis of fine-grained notebook development logs.
//!
//! The pipeline runs raw captured events through [`normalize`] into a log
//! table, replays it into [`snapshot`]s, derives execution [`transition`]s,
//! labels them with the [`annotate`] module, and aggregates everything in
//! [`analytics`].

pub mod analytics;
pub mod annotate;
pub mod distance;
pub mod event;
pub mod ipynb;
pub mod normalize;
pub mod pipeline;
pub mod pylex;
pub mod report;
pub mod snapshot;
pub mod transition;

pub use event::{parse_event, serialize_event, EventKind, NotebookKey, Output, OutputType, RawEvent};
pub use normalize::{normalize, LogRecord, Normalized};
pub use snapshot::{build_histories, build_snapshots, NotebookHistory, NotebookSnapshot};
