//! Hosts assembled MUSHRA tests over HTTP: dispenses panels to raters under
//! a per-panel quota, streams stimuli and persists ratings.

pub mod error;
pub mod http;
pub mod model;
pub mod service;
pub mod store;

pub use error::ServiceError;
pub use http::{router, serve};
pub use model::{
    NextPanel, PanelProgress, PanelView, RatingRecord, RatingSubmission, SentenceSpec, Session, SlotScore, SubmitAck,
    TestConfig, TestRecord, TestSummary,
};
pub use service::{EvalService, ServiceOptions};
