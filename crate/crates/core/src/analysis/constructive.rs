//! Constructive pricing for the network classes where equilibria always
//! exist, and a consumer value sufficient for convergence on polytrees.

use thiserror::Error;

use super::efficient::min_cost_serving;
use super::structure::is_polytree;
use crate::netmodel::{AgentId, AgentKind, Allocation, Edge, GoodId, Money, Network, PriceSystem};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConstructError {
    #[error("producer {0} has more than one input unit")]
    InputComplementarity(String),
    #[error("network is not a polytree")]
    NotPolytree,
    #[error("price bounds crossed at good {0}")]
    BoundsCrossed(String),
    #[error("no fixed point after {0} price changes")]
    NoFixpoint(u64),
    #[error("no solution delivers {good} to {consumer}")]
    NoSolution { consumer: String, good: String },
}

const MAX_UPDATES: u64 = 10_000_000;

/// Fixed-point price raising for networks whose producers use at most one
/// input unit. Starts from zero prices and applies five raising rules until
/// none fires.
pub fn equilibrium_no_input_complementarities(net: &Network, alloc: &Allocation) -> Result<PriceSystem, ConstructError> {
    if let Some((a, _)) = net.producers().find(|(_, p)| p.input_units() > 1) {
        return Err(ConstructError::InputComplementarity(net.agent_name(a).to_string()));
    }
    let mut p = PriceSystem::zero(net);
    let mut updates = 0u64;
    loop {
        let mut changed = false;
        let mut raise = |p: &mut PriceSystem, g: GoodId, to: Money| {
            if to > p.get(g) {
                p.set(g, to);
                changed = true;
            }
        };
        for (i, agent) in net.agents.iter().enumerate() {
            let a = AgentId(i);
            match &agent.kind {
                AgentKind::Consumer(c) => match alloc.acquired(a).next() {
                    None => {
                        // Unserved consumers must not want any good.
                        for &(g, v) in &c.values {
                            raise(&mut p, g, v);
                        }
                    }
                    Some(g) => {
                        // Served consumers must not prefer another good.
                        let s = net.value_of(a, g).unwrap_or(Money::ZERO) - p.get(g);
                        if !s.is_negative() {
                            for &(h, w) in &c.values {
                                if h != g && w - p.get(h) > s {
                                    raise(&mut p, h, w - s);
                                }
                            }
                        }
                    }
                },
                AgentKind::Producer(prod) => {
                    let input = prod.inputs.first().map(|&(g, _)| g);
                    let active = alloc.provides(a);
                    match (input, active) {
                        (None, true) => raise(&mut p, prod.output, prod.cost),
                        (Some(g), true) => {
                            let floor = p.get(g) + prod.cost;
                            raise(&mut p, prod.output, floor);
                        }
                        (Some(g), false) => {
                            let floor = p.get(prod.output) - prod.cost;
                            raise(&mut p, g, floor);
                        }
                        (None, false) => {}
                    }
                }
            }
        }
        if !changed {
            return Ok(p);
        }
        updates += 1;
        if updates > MAX_UPDATES {
            return Err(ConstructError::NoFixpoint(updates));
        }
    }
}

/// Replaces every multi-good consumer by a single-good consumer on a fresh
/// good fed by one auxiliary producer per original good, with cost equal to
/// the value shortfall of that good. Original agent and good ids are kept.
pub fn single_good_form(net: &Network, alloc: &Allocation) -> (Network, Allocation) {
    let mut rw = Network::new(net.resolution);
    rw.goods = net.goods.clone();
    rw.agents = net.agents.clone();
    let mut out = Allocation::new();
    for e in &alloc.edges {
        if !net.agent(e.agent).is_consumer() {
            out.insert(*e);
        }
    }
    for (c, cons) in net.consumers() {
        let held = alloc.acquired(c).next();
        if cons.values.len() <= 1 {
            if let Some(g) = held {
                out.insert(Edge::acquire(c, g, 0));
            }
            continue;
        }
        let best = cons.values.iter().map(|&(_, v)| v).max().unwrap_or(Money::ZERO);
        let name = net.agent_name(c).to_string();
        let gc = rw.add_good(format!("{name}#want"));
        if let AgentKind::Consumer(k) = &mut rw.agents[c.0].kind {
            k.values = vec![(gc, best)];
        }
        for &(g, v) in &cons.values {
            let aux = rw.add_producer(format!("{name}#via#{}", net.good_name(g)), gc, &[(g, 1)], best - v);
            if held == Some(g) {
                out.insert(Edge::acquire(aux, g, 0));
                out.insert(Edge::provide(aux, gc));
                out.insert(Edge::acquire(c, gc, 0));
            }
        }
    }
    (rw, out)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Node {
    Good(usize),
    Agent(usize),
}

struct Bounds<'a> {
    net: &'a Network,
    alloc: &'a Allocation,
    lo: Vec<Money>,
    /// `None` is unbounded.
    hi: Vec<Option<Money>>,
    price: Vec<Option<Money>>,
    visited: Vec<bool>,
    /// Stand-in for an unbounded price when one must be posted.
    big: Money,
    neighbors_of_good: Vec<Vec<usize>>,
}

impl Bounds<'_> {
    fn neighbors(&self, n: Node) -> Vec<Node> {
        match n {
            Node::Good(g) => self.neighbors_of_good[g].iter().map(|&a| Node::Agent(a)).collect(),
            Node::Agent(a) => match &self.net.agents[a].kind {
                AgentKind::Consumer(c) => c.values.iter().map(|&(g, _)| Node::Good(g.0)).collect(),
                AgentKind::Producer(p) => std::iter::once(p.output)
                    .chain(p.inputs.iter().map(|&(g, _)| g))
                    .map(|g| Node::Good(g.0))
                    .collect(),
            },
        }
    }

    fn post(&mut self, g: GoodId, p: Option<Money>) -> Result<(), ConstructError> {
        if let Some(h) = self.hi[g.0] {
            if self.lo[g.0] > h {
                return Err(ConstructError::BoundsCrossed(self.net.good_name(g).to_string()));
            }
        }
        self.price[g.0] = Some(p.unwrap_or(self.big).max(self.lo[g.0]));
        Ok(())
    }

    fn set_bounds(&mut self, n: Node, r: Option<Node>) -> Result<(), ConstructError> {
        if let Node::Good(g) = n {
            self.visited[g] = true;
        }
        for z in self.neighbors(n) {
            if Some(z) != r {
                self.set_bounds(z, Some(n))?;
            }
        }
        let (Node::Agent(a), Some(Node::Good(r))) = (n, r) else { return Ok(()) };
        let a = AgentId(a);
        let r = GoodId(r);
        let served = !self.alloc.edges.iter().all(|e| e.agent != a);
        match &self.net.agent(a).kind {
            AgentKind::Consumer(c) => {
                let v = c.values.iter().find(|&&(g, _)| g == r).map_or(Money::ZERO, |&(_, v)| v);
                if served {
                    self.hi[r.0] = Some(self.hi[r.0].map_or(v, |h| h.min(v)));
                } else {
                    self.lo[r.0] = self.lo[r.0].max(v);
                }
            }
            AgentKind::Producer(p) => {
                let others: Vec<GoodId> = p.inputs.iter().map(|&(g, _)| g).filter(|&g| g != r).collect();
                let r_is_input = r != p.output;
                if !served {
                    for &g in &others {
                        self.post(g, self.hi[g.0])?;
                    }
                    if r_is_input {
                        self.post(p.output, Some(self.lo[p.output.0]))?;
                        let his: Option<Money> = others.iter().map(|g| self.hi[g.0]).sum();
                        if let Some(his) = his {
                            self.lo[r.0] = self.lo[r.0].max(self.lo[p.output.0] - his - p.cost);
                        }
                    } else {
                        let his: Option<Money> = others.iter().map(|g| self.hi[g.0]).sum();
                        if let Some(his) = his {
                            let cap = his + p.cost;
                            self.hi[r.0] = Some(self.hi[r.0].map_or(cap, |h| h.min(cap)));
                        }
                    }
                } else {
                    for &g in &others {
                        self.post(g, Some(self.lo[g.0]))?;
                    }
                    let los: Money = others.iter().map(|g| self.lo[g.0]).sum();
                    if r_is_input {
                        self.post(p.output, self.hi[p.output.0])?;
                        if let Some(h) = self.hi[p.output.0] {
                            let cap = h - los - p.cost;
                            self.hi[r.0] = Some(self.hi[r.0].map_or(cap, |x| x.min(cap)));
                        }
                    } else {
                        self.lo[r.0] = self.lo[r.0].max(los + p.cost);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Bound propagation on a polytree: a postorder walk narrows lower and upper
/// price bounds per good and posts each price once.
pub fn equilibrium_polytree(net: &Network, alloc: &Allocation) -> Result<PriceSystem, ConstructError> {
    if !is_polytree(net) {
        return Err(ConstructError::NotPolytree);
    }
    let (rw, rw_alloc) = single_good_form(net, alloc);
    let mut neighbors_of_good = vec![Vec::new(); rw.goods.len()];
    for (i, agent) in rw.agents.iter().enumerate() {
        match &agent.kind {
            AgentKind::Consumer(c) => c.values.iter().for_each(|&(g, _)| neighbors_of_good[g.0].push(i)),
            AgentKind::Producer(p) => {
                neighbors_of_good[p.output.0].push(i);
                p.inputs.iter().for_each(|&(g, _)| neighbors_of_good[g.0].push(i));
            }
        }
    }
    let total: Money = rw
        .agents
        .iter()
        .map(|a| match &a.kind {
            AgentKind::Consumer(c) => c.values.iter().map(|&(_, v)| v).sum(),
            AgentKind::Producer(p) => p.cost,
        })
        .sum();
    let n = rw.goods.len();
    let mut b = Bounds {
        net: &rw,
        alloc: &rw_alloc,
        lo: vec![Money::ZERO; n],
        hi: vec![None; n],
        price: vec![None; n],
        visited: vec![false; n],
        big: total * 2 + Money(1),
        neighbors_of_good,
    };
    for g in 0..n {
        if !b.visited[g] {
            b.set_bounds(Node::Good(g), None)?;
            b.post(GoodId(g), Some(b.lo[g]))?;
        }
    }
    let prices = b.price[..net.goods.len()].iter().map(|p| p.expect("every good priced")).collect();
    Ok(PriceSystem { prices })
}

/// Value for `c` on `g` above which the protocol must deliver `g` to `c`
/// on a polytree: `(gamma + (2 delta_b + delta_s) n) n + delta_b`, with `n`
/// producers and `gamma` the larger of the cheapest serving solution's
/// cost and every other consumer value.
pub fn sufficient_value_polytree(
    net: &Network,
    c: AgentId,
    g: GoodId,
    delta_b: Money,
    delta_s: Money,
) -> Result<Money, ConstructError> {
    if !is_polytree(net) {
        return Err(ConstructError::NotPolytree);
    }
    let no_solution =
        || ConstructError::NoSolution { consumer: net.agent_name(c).to_string(), good: net.good_name(g).to_string() };
    let cost = min_cost_serving(net, c, g).ok_or_else(no_solution)?;
    let others = net
        .consumers()
        .flat_map(|(a, k)| k.values.iter().filter(move |&&(h, _)| (a, h) != (c, g)).map(|&(_, v)| v))
        .max()
        .unwrap_or(Money::ZERO);
    let gamma = cost.max(others);
    let n = net.num_producers() as i64;
    Ok((gamma + (delta_b * 2 + delta_s) * n) * n + delta_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{check_competitive_equilibrium, efficient_allocation};
    use crate::fixtures::{self, RandomSpec};
    use crate::netmodel::Resolution;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(cost: &str, value: &str) -> Network {
        let res = Resolution::default();
        let mut net = Network::new(res);
        let g = net.add_good("g");
        net.add_producer("p", g, &[], res.money(cost).unwrap());
        net.add_consumer("c", &[(g, res.money(value).unwrap())]);
        net
    }

    #[test]
    fn single_producer_priced_at_cost() {
        let net = single("0.3", "1");
        let (alloc, _) = efficient_allocation(&net);
        let want = net.resolution.money("0.3").unwrap();
        let p = equilibrium_no_input_complementarities(&net, &alloc).unwrap();
        assert_eq!(p.prices, vec![want]);
        let q = equilibrium_polytree(&net, &alloc).unwrap();
        assert_eq!(q.prices, vec![want]);
        assert_eq!(check_competitive_equilibrium(&net, &alloc, &p), Ok(()));
    }

    #[test]
    fn unserved_consumer_lifts_price() {
        let net = single("2", "0.8");
        let (alloc, _) = efficient_allocation(&net);
        assert!(alloc.is_empty());
        let p = equilibrium_no_input_complementarities(&net, &alloc).unwrap();
        assert!(p.prices[0] >= net.resolution.money("0.8").unwrap());
        assert_eq!(check_competitive_equilibrium(&net, &alloc, &p), Ok(()));
    }

    #[test]
    fn rewrite_adds_shortfall_producers() {
        let res = Resolution::default();
        let mut net = Network::new(res);
        let a = net.add_good("a");
        let b = net.add_good("b");
        net.add_producer("pa", a, &[], Money(1));
        net.add_producer("pb", b, &[], Money(1));
        net.add_consumer("c", &[(a, res.money("1").unwrap()), (b, res.money("0.7").unwrap())]);
        let (alloc, _) = efficient_allocation(&net);
        let (rw, rw_alloc) = single_good_form(&net, &alloc);
        let costs: Vec<(String, Money)> = rw.agents[3..].iter().map(|ag| (ag.name.clone(), ag.producer().unwrap().cost)).collect();
        assert_eq!(costs, [("c#via#a".to_string(), Money::ZERO), ("c#via#b".to_string(), res.money("0.3").unwrap())]);
        assert_eq!(rw_alloc.value(&rw), alloc.value(&net));
        assert!(rw_alloc.is_feasible(&rw).unwrap());
        let p = equilibrium_polytree(&net, &alloc).unwrap();
        assert_eq!(check_competitive_equilibrium(&net, &alloc, &p), Ok(()));
    }

    #[test]
    fn rejects_wrong_classes() {
        let net = fixtures::greedy_bad(fixtures::GREEDY_BAD_VALUE);
        let alloc = fixtures::greedy_bad_efficient(&net);
        assert_eq!(equilibrium_polytree(&net, &alloc), Err(ConstructError::NotPolytree));
        assert!(matches!(
            equilibrium_no_input_complementarities(&net, &alloc),
            Err(ConstructError::InputComplementarity(_))
        ));
    }

    #[test]
    fn random_fleets_get_checked_equilibria() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = RandomSpec { max_agents: 14, max_value: 3 };
        for i in 0..200 {
            let net = fixtures::random_polytree(&mut rng, &spec);
            let (alloc, _) = efficient_allocation(&net);
            let p = equilibrium_polytree(&net, &alloc).unwrap();
            assert_eq!(check_competitive_equilibrium(&net, &alloc, &p), Ok(()), "polytree {i}");
            let net = fixtures::random_single_input(&mut rng, &spec);
            let (alloc, _) = efficient_allocation(&net);
            let p = equilibrium_no_input_complementarities(&net, &alloc).unwrap();
            assert_eq!(check_competitive_equilibrium(&net, &alloc, &p), Ok(()), "single-input {i}");
        }
    }

    #[test]
    fn sufficient_value_formula() {
        let net = single("0.5", "1");
        let res = net.resolution;
        let d = res.money("0.01").unwrap();
        let v = sufficient_value_polytree(&net, AgentId(1), GoodId(0), d, d).unwrap();
        assert_eq!(v, res.money("0.54").unwrap());
    }
}
