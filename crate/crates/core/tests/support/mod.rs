//! Checks shared between the core integration tests and the acceptance suite.

#![allow(dead_code)]

pub mod criteria;
pub mod gradcheck;
pub mod smiles_suite;
