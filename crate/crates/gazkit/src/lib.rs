//! Gazetteer toolkit for named-entity recognition.

pub mod corpus;
pub mod dict;
pub mod ingest;
pub mod embedding;
pub mod linalg;
pub mod matcher;
