//! Random instance generators shared by the integration tests.
#![allow(unused_imports)]

pub use sdnc_core::selftest::gen::*;
