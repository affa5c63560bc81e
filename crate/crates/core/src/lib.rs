//! Multi-label odor prediction for blended pairs of aroma chemicals.
//!
//! The pipeline runs from SMILES text to trained graph neural networks:
//!
//! - [`smiles`] parses molecules, [`featurize`] turns them into feature graphs
//!   and [`fingerprint`] computes circular fingerprints for the baseline.
//! - [`dataset`] ingests labeled pairs into a meta-graph whose nodes are
//!   molecules and whose edges are labeled blends.
//! - [`carve`] partitions that meta-graph into train/test components so that no
//!   molecule is shared between splits.
//! - [`tensor`] is a small reverse-mode autodiff engine; [`gnn`] builds the GIN
//!   and MPNN models on it and [`train`] drives optimization and search.
//! - [`eval`] scores predictions by AUROC; [`analyze`] studies embedding space.

pub mod analyze;
pub mod carve;
pub mod dataset;
pub mod eval;
pub mod featurize;
pub mod fingerprint;
pub mod gnn;
pub mod smiles;
pub mod synth;
pub mod tensor;
pub mod train;
