//! Shared test support: independent oracles and dataset builders.
//!
//! Everything here is deliberately written against the math, not against
//! the crate's implementation, so tests compare two separately derived
//! answers.
#![allow(dead_code)]

pub mod data;
pub mod fd;
pub mod grad_cases;
pub mod oracles;
