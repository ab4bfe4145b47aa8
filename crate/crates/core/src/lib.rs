//! Two-stage one-to-many dialogue engine: generate a diverse candidate set
//! per context, then pick the final response with a trained preference
//! scorer.

pub mod backends;
pub mod corpus;
pub mod metrics;
pub mod mrg;
pub mod odrp;
pub mod pipeline;
pub mod text;
