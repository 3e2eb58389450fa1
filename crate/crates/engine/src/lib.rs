//! Annotation data engine: caption an image, extract and filter noun
//! phrases, ground them, caption each region conditioned on its phrase,
//! then verify and rewrite into a short referring expression.

pub mod client;
pub mod config;
pub mod error;
pub mod manifest;
pub mod phrases;
pub mod pipeline;
pub mod prompts;
pub mod stages;

pub use client::{
    Capability, ClientError, HttpClient, ImageRef, MockClient, RecordingClient, ReplayClient,
    RetryClient, StageClient, StageReply, StageRequest,
};
pub use config::EngineConfig;
pub use error::EngineError;
pub use manifest::{read_manifest, ManifestRecord};
pub use phrases::{extract_noun_phrases, filter_abstract, Lexicon, PhraseKind, PhraseSpan};
pub use pipeline::{AnnotationTriplet, Clients, Pipeline, Region, RunOptions, RunReport};
