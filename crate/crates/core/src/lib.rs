//! Open-domain question answering: BM25 retrieval over sliding-window chunks,
//! then one shared transformer encoder that both re-ranks the retrieved
//! chunks and extracts answer spans from them.

mod binio;
pub mod corpus;
pub mod exec;
pub mod retriever;
pub mod encoder;
pub mod multitask;
pub mod pipeline;
pub mod evalkit;
