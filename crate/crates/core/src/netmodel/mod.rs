//! Static problem model: networks, allocations, prices and their predicates.

pub mod allocation;
pub mod io;
pub mod money;
pub mod network;

pub use allocation::{Allocation, AllocationError, PriceSystem};
pub use money::{Money, MoneyError, Resolution};
pub use network::{
    Agent, AgentId, AgentKind, Consumer, Dir, Edge, FilePolicy, GoodId, Network, NetworkParams, PolicyOverrides, Producer,
    Violation, Warning,
};
