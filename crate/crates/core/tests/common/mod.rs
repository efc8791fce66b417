//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod ad;
pub mod analytic;
pub mod gaussian;
pub mod identities;
