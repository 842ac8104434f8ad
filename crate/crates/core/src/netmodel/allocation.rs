//! Allocations, prices, and the value and surplus predicates over them.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::money::Money;
use super::network::{AgentId, AgentKind, Dir, Edge, GoodId, Network};

/// A set of traded unit edges.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Allocation {
    pub edges: BTreeSet<Edge>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AllocationError {
    #[error("edge {0:?} is not in the network")]
    UnknownEdge(Edge),
    #[error("unknown agent #{0}")]
    UnknownAgent(usize),
}

/// One price per good.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PriceSystem {
    pub prices: Vec<Money>,
}

impl PriceSystem {
    pub fn zero(net: &Network) -> PriceSystem {
        PriceSystem { prices: vec![Money::ZERO; net.goods.len()] }
    }

    pub fn get(&self, g: GoodId) -> Money {
        self.prices[g.0]
    }

    pub fn set(&mut self, g: GoodId, p: Money) {
        self.prices[g.0] = p;
    }
}

impl Allocation {
    pub fn new() -> Allocation {
        Allocation::default()
    }

    pub fn from_edges(edges: impl IntoIterator<Item = Edge>) -> Allocation {
        Allocation { edges: edges.into_iter().collect() }
    }

    pub fn insert(&mut self, e: Edge) {
        self.edges.insert(e);
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn check_subgraph(&self, net: &Network) -> Result<(), AllocationError> {
        match self.edges.iter().find(|e| !net.has_edge(e)) {
            Some(e) => Err(AllocationError::UnknownEdge(*e)),
            None => Ok(()),
        }
    }

    pub fn agents(&self) -> BTreeSet<AgentId> {
        self.edges.iter().map(|e| e.agent).collect()
    }

    pub fn goods(&self) -> BTreeSet<GoodId> {
        self.edges.iter().map(|e| e.good).collect()
    }

    pub fn contains_agent(&self, a: AgentId) -> bool {
        self.edges.iter().any(|e| e.agent == a)
    }

    /// Goods acquired by an agent, one entry per unit edge.
    pub fn acquired(&self, a: AgentId) -> impl Iterator<Item = GoodId> + '_ {
        self.edges.iter().filter(move |e| e.agent == a && e.dir == Dir::Acquire).map(|e| e.good)
    }

    pub fn provides(&self, a: AgentId) -> bool {
        self.edges.iter().any(|e| e.agent == a && e.dir == Dir::Provide)
    }

    /// A producer is active iff it provides its output.
    pub fn is_active(&self, net: &Network, a: AgentId) -> bool {
        net.producer(a).is_some() && self.provides(a)
    }

    fn acquires_all_inputs(&self, net: &Network, a: AgentId) -> bool {
        let p = net.producer(a).expect("producer");
        p.inputs.iter().all(|&(g, k)| (0..k).all(|u| self.edges.contains(&Edge::acquire(a, g, u))))
    }

    /// A producer is feasible if inactive, or active with every input unit.
    pub fn producer_feasible(&self, net: &Network, a: AgentId) -> bool {
        !self.is_active(net, a) || self.acquires_all_inputs(net, a)
    }

    pub fn material_balance(&self) -> BTreeMap<GoodId, (u32, u32)> {
        let mut bal: BTreeMap<GoodId, (u32, u32)> = BTreeMap::new();
        for e in &self.edges {
            let entry = bal.entry(e.good).or_default();
            match e.dir {
                Dir::Provide => entry.0 += 1,
                Dir::Acquire => entry.1 += 1,
            }
        }
        bal
    }

    pub fn in_material_balance(&self) -> bool {
        self.material_balance().values().all(|&(i, o)| i == o)
    }

    pub fn is_feasible(&self, net: &Network) -> Result<bool, AllocationError> {
        self.check_subgraph(net)?;
        let producers_ok = net.producers().all(|(a, _)| self.producer_feasible(net, a));
        Ok(producers_ok && self.in_material_balance())
    }

    /// Consumers acquiring at least one good.
    pub fn served_consumers(&self, net: &Network) -> BTreeSet<AgentId> {
        self.edges
            .iter()
            .filter(|e| e.dir == Dir::Acquire && net.agent(e.agent).is_consumer())
            .map(|e| e.agent)
            .collect()
    }

    /// Feasible with at least one consumer served.
    pub fn is_solution(&self, net: &Network) -> Result<bool, AllocationError> {
        Ok(self.is_feasible(net)? && !self.served_consumers(net).is_empty())
    }

    /// Inactive producers holding at least one input.
    pub fn dead_ends(&self, net: &Network) -> BTreeSet<AgentId> {
        net.producers()
            .map(|(a, _)| a)
            .filter(|&a| !self.provides(a) && self.acquired(a).next().is_some())
            .collect()
    }

    /// Dead ends that pay a strictly positive price for some input.
    pub fn priced_dead_ends(&self, net: &Network, prices: &PriceSystem) -> BTreeSet<AgentId> {
        self.dead_ends(net).into_iter().filter(|&a| self.acquired(a).any(|g| prices.get(g).is_positive())).collect()
    }

    /// Consumer value: the best good it acquires, or zero.
    pub fn consumer_value(&self, net: &Network, a: AgentId) -> Money {
        self.acquired(a).filter_map(|g| net.value_of(a, g)).max().unwrap_or(Money::ZERO)
    }

    /// Total consumer value minus costs of active producers.
    pub fn value(&self, net: &Network) -> Money {
        let mut total = Money::ZERO;
        for (i, agent) in net.agents.iter().enumerate() {
            let a = AgentId(i);
            match &agent.kind {
                AgentKind::Consumer(_) => total += self.consumer_value(net, a),
                AgentKind::Producer(p) => {
                    if self.provides(a) {
                        total -= p.cost;
                    }
                }
            }
        }
        total
    }

    pub fn surplus(&self, net: &Network, prices: &PriceSystem, a: AgentId) -> Result<Money, AllocationError> {
        let agent = net.agents.get(a.0).ok_or(AllocationError::UnknownAgent(a.0))?;
        let paid: Money = self.acquired(a).map(|g| prices.get(g)).sum();
        Ok(match &agent.kind {
            AgentKind::Consumer(_) => self.consumer_value(net, a) - paid,
            AgentKind::Producer(p) => {
                if self.provides(a) {
                    prices.get(p.output) - paid - p.cost
                } else {
                    -paid
                }
            }
        })
    }

    pub fn total_surplus(&self, net: &Network, prices: &PriceSystem) -> Money {
        net.agent_ids().map(|a| self.surplus(net, prices, a).expect("agent exists")).sum()
    }

    /// Money an inactive producer owes for inputs it cannot use.
    pub fn exposure(&self, net: &Network, prices: &PriceSystem, a: AgentId) -> Money {
        if net.producer(a).is_none() || self.provides(a) {
            return Money::ZERO;
        }
        self.acquired(a).map(|g| prices.get(g)).sum()
    }

    /// Consumers in budget and active producers break even; dead ends allowed.
    pub fn is_valid_solution(&self, net: &Network, prices: &PriceSystem) -> Result<bool, AllocationError> {
        if !self.is_solution(net)? {
            return Ok(false);
        }
        for c in self.served_consumers(net) {
            let goods: Vec<GoodId> = self.acquired(c).collect();
            let ok = goods.iter().enumerate().any(|(i, &g)| {
                let v = net.value_of(c, g).unwrap_or(Money::ZERO);
                prices.get(g) <= v
                    && goods.iter().enumerate().all(|(j, &h)| j == i || prices.get(h) == Money::ZERO)
            });
            if !ok {
                return Ok(false);
            }
        }
        for (a, _) in net.producers() {
            if self.provides(a) && self.surplus(net, prices, a)?.is_negative() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::money::Resolution;

    fn m(s: &str) -> Money {
        Resolution::default().money(s).unwrap()
    }

    fn chain() -> (Network, AgentId, AgentId, GoodId) {
        let mut n = Network::new(Resolution::default());
        let g = n.add_good("g");
        let p = n.add_producer("p", g, &[], m("0.4"));
        let c = n.add_consumer("c", &[(g, m("1.0"))]);
        (n, p, c, g)
    }

    #[test]
    fn empty_allocation_is_feasible_with_zero_value() {
        let (n, _, _, _) = chain();
        let a = Allocation::new();
        assert!(a.is_feasible(&n).unwrap());
        assert!(a.served_consumers(&n).is_empty());
        assert_eq!(a.value(&n), Money::ZERO);
        assert!(!a.is_solution(&n).unwrap());
    }

    #[test]
    fn full_chain_is_a_solution_worth_point_six() {
        let (n, p, c, g) = chain();
        let a = Allocation::from_edges([Edge::provide(p, g), Edge::acquire(c, g, 0)]);
        assert!(a.is_solution(&n).unwrap());
        assert_eq!(a.served_consumers(&n), BTreeSet::from([c]));
        assert_eq!(a.value(&n), m("0.6"));
    }

    /// Every subgraph of the three-vertex chain: only the full chain serves a consumer feasibly.
    #[test]
    fn chain_subgraph_enumeration() {
        let (n, p, c, g) = chain();
        let all = [Edge::provide(p, g), Edge::acquire(c, g, 0)];
        for mask in 0..4u32 {
            let a = Allocation::from_edges(all.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, e)| *e));
            let served = a.is_solution(&n).unwrap();
            assert_eq!(served, mask == 3, "mask {mask}");
        }
    }

    #[test]
    fn missing_input_is_infeasible() {
        let mut n = Network::new(Resolution::default());
        let a = n.add_good("a");
        let b = n.add_good("b");
        let pa = n.add_producer("pa", a, &[], m("0"));
        let pb = n.add_producer("pb", b, &[(a, 2)], m("0"));
        let c = n.add_consumer("c", &[(b, m("1"))]);
        let alloc = Allocation::from_edges([
            Edge::provide(pa, a),
            Edge::acquire(pb, a, 0),
            Edge::provide(pb, b),
            Edge::acquire(c, b, 0),
        ]);
        assert!(!alloc.is_feasible(&n).unwrap());
    }

    #[test]
    fn foreign_edge_is_rejected() {
        let (n, p, _, g) = chain();
        let alloc = Allocation::from_edges([Edge::acquire(p, g, 0)]);
        assert!(alloc.is_feasible(&n).is_err());
    }

    /// Active producer A (cost 1) feeding inactive producer B.
    fn dead_end_network() -> (Network, Allocation, AgentId, GoodId) {
        let mut n = Network::new(Resolution::default());
        let ga = n.add_good("ga");
        let gb = n.add_good("gb");
        let pa = n.add_producer("A", ga, &[], m("1"));
        let pb = n.add_producer("B", gb, &[(ga, 1)], m("1"));
        n.add_consumer("c", &[(gb, m("5"))]);
        let alloc = Allocation::from_edges([Edge::provide(pa, ga), Edge::acquire(pb, ga, 0)]);
        (n, alloc, pb, ga)
    }

    #[test]
    fn dead_end_allocation_is_feasible_and_negative() {
        let (n, alloc, pb, ga) = dead_end_network();
        assert!(alloc.is_feasible(&n).unwrap());
        assert_eq!(alloc.value(&n), m("-1"));
        assert_eq!(alloc.dead_ends(&n), BTreeSet::from([pb]));
        let mut prices = PriceSystem::zero(&n);
        prices.set(ga, m("1"));
        assert_eq!(alloc.surplus(&n, &prices, pb).unwrap(), m("-1"));
        assert_eq!(alloc.exposure(&n, &prices, pb), m("1"));
        assert_eq!(alloc.priced_dead_ends(&n, &prices), BTreeSet::from([pb]));
    }

    #[test]
    fn producer_surplus_arithmetic() {
        let mut n = Network::new(Resolution::default());
        let i = n.add_good("i");
        let o = n.add_good("o");
        let p = n.add_producer("p", o, &[(i, 1)], m("1"));
        let c = n.add_consumer("c", &[(o, m("10"))]);
        let alloc = Allocation::from_edges([Edge::acquire(p, i, 0), Edge::provide(p, o), Edge::acquire(c, o, 0)]);
        let mut prices = PriceSystem::zero(&n);
        prices.set(o, m("8"));
        prices.set(i, m("3"));
        assert_eq!(alloc.surplus(&n, &prices, p).unwrap(), m("4"));
        assert_eq!(alloc.surplus(&n, &prices, c).unwrap(), m("2"));
        assert!(alloc.surplus(&n, &prices, AgentId(9)).is_err());
        assert_eq!(Allocation::new().surplus(&n, &prices, c).unwrap(), Money::ZERO);
    }

    #[test]
    fn valid_solution_requires_profitable_active_producers() {
        let (n, p, c, g) = chain();
        let a = Allocation::from_edges([Edge::provide(p, g), Edge::acquire(c, g, 0)]);
        let mut prices = PriceSystem::zero(&n);
        prices.set(g, m("0.5"));
        assert!(a.is_valid_solution(&n, &prices).unwrap());
        prices.set(g, m("0.3"));
        assert!(!a.is_valid_solution(&n, &prices).unwrap());
        prices.set(g, m("1.1"));
        assert!(!a.is_valid_solution(&n, &prices).unwrap());
    }
}
