pub mod aggregate;
pub mod backend;
pub mod error;
pub mod gt;
pub mod model;
pub mod orchestrator;
pub mod report;
pub mod scoring;
pub mod significance;
pub mod store;
