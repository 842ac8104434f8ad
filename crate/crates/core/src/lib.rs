//! Simultaneous ascending (M+1)st-price auctions for supply chain formation.
//!
//! The crate models task dependency networks, runs the auction protocol in a
//! deterministic discrete-event kernel, and checks outcomes against exact
//! equilibrium and efficiency oracles.

pub mod agents;
pub mod analysis;
pub mod auction;
pub mod cli;
pub mod expgen;
pub mod fixtures;
pub mod netmodel;
pub mod simkernel;

pub use netmodel::{Allocation, AgentId, Edge, GoodId, Money, Network, PriceSystem, Resolution};
