//! Minimum risk training for SMILES sequence recognition.

pub mod hash;
pub mod molgraph;
pub mod rng;
pub mod similarity;
pub mod reward;
pub mod seqmodel;
pub mod mrt;
pub mod data;
pub mod trainer;
pub mod eval;
pub mod experiment;
