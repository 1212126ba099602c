//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod gradcheck;
pub mod stats_oracle;
pub mod toy;
pub mod xor;
