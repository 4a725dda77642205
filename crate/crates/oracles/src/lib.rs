//! Reference implementations written independently of the production code,
//! kept deliberately naive so they can serve as test oracles.

pub mod geo;
pub mod journeys;
pub mod rt;
pub mod signal;
