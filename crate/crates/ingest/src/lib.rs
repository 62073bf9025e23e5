//! Event ingestion: durable append-only storage and its HTTP interface.

pub mod server;
pub mod store;

pub use server::{parse_batch, router, serve, to_jsonl, AcceptResponse, IngestError, SharedStore};
pub use store::{AcceptOutcome, EventStore, ExportFilter, FileStore, MemoryStore, Receipt, StoreError};
