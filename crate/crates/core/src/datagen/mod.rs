//! Triplet sources: the synthetic scene generator and the staged LLM
//! captioning pipeline.

pub mod good4cir;
pub mod synthetic;
