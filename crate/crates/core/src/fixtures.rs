//! Bundled topologies and random network generators.
//!
//! The named networks are reconstructions: each satisfies a list of known
//! structural and price facts recorded in its `note`, but the wiring beyond
//! those facts is chosen here.

use rand::Rng;

use crate::netmodel::{Allocation, AgentId, Dir, Edge, GoodId, Money, Network, PriceSystem, Resolution};
use crate::simkernel::{DelayRule, DelayScript, MessageKind};

fn money(res: &Resolution, s: &str) -> Money {
    res.money(s).expect("fixture amount on grid")
}

/// Consumer value at which the greedy-bad network has an equilibrium.
pub const GREEDY_BAD_VALUE: &str = "16";
/// Consumer value at which it has none.
pub const GREEDY_BAD_NO_EQ_VALUE: &str = "9";

/// Seven producers feeding one consumer, with a single unit of good 4
/// contested by a6 and a7.
///
/// a1..a4 make goods 1..4 from nothing; a5 makes 5 from {1, 2}; a6 makes 5
/// from {2, 3, 4} and is cheaper than a5; a7 makes 6 from {4, 5}; `cons`
/// wants good 6.
pub fn greedy_bad(value: &str) -> Network {
    let res = Resolution::default();
    let mut n = Network::new(res);
    let g: Vec<GoodId> = (1..=6).map(|i| n.add_good(i.to_string())).collect();
    let m = |s: &str| money(&res, s);
    n.add_consumer("cons", &[(g[5], m(value))]);
    n.add_producer("a1", g[0], &[], m("3"));
    n.add_producer("a2", g[1], &[], m("1"));
    n.add_producer("a3", g[2], &[], m("1"));
    n.add_producer("a4", g[3], &[], m("1"));
    n.add_producer("a5", g[4], &[(g[0], 1), (g[1], 1)], m("1"));
    n.add_producer("a6", g[4], &[(g[1], 1), (g[2], 1), (g[3], 1)], m("0"));
    n.add_producer("a7", g[5], &[(g[3], 1), (g[4], 1)], m("2"));
    n.note = Some(
        "reconstruction: a6 uses goods 2, 3 and 4 and undercuts a5 for good 5; a3 costs 1; \
         the single unit of good 4 is contested by a6 and a7; goods 1 and 4 are joined by \
         several undirected paths; at consumer value 9 the price bounds force p(6) >= 10 \
         against p(6) <= 9; wiring beyond these facts is chosen, not known"
            .to_string(),
    );
    n
}

fn ids(net: &Network, names: &[&str]) -> Vec<AgentId> {
    names.iter().map(|s| net.agent_by_name(s).expect("fixture agent")).collect()
}

fn good(net: &Network, name: &str) -> GoodId {
    net.good_by_name(name).expect("fixture good")
}

/// The unique efficient allocation of [`greedy_bad`]: a1, a2, a4, a5, a7 serve `cons`.
pub fn greedy_bad_efficient(net: &Network) -> Allocation {
    let a = ids(net, &["cons", "a1", "a2", "a4", "a5", "a7"]);
    let g = |s| good(net, s);
    Allocation::from_edges([
        Edge::provide(a[1], g("1")),
        Edge::provide(a[2], g("2")),
        Edge::provide(a[3], g("4")),
        Edge::acquire(a[4], g("1"), 0),
        Edge::acquire(a[4], g("2"), 0),
        Edge::provide(a[4], g("5")),
        Edge::acquire(a[5], g("4"), 0),
        Edge::acquire(a[5], g("5"), 0),
        Edge::provide(a[5], g("6")),
        Edge::acquire(a[0], g("6"), 0),
    ])
}

fn prices(net: &Network, amounts: &[&str]) -> PriceSystem {
    let mut p = PriceSystem::zero(net);
    for (i, s) in amounts.iter().enumerate() {
        p.set(GoodId(i), money(&net.resolution, s));
    }
    p
}

/// Equilibrium prices for the efficient allocation at [`GREEDY_BAD_VALUE`].
pub fn greedy_bad_equilibrium_prices(net: &Network) -> PriceSystem {
    prices(net, &["3", "1", "1", "5", "5", "15"])
}

/// A valid solution with a dead end: a3 sells good 3 to a6, which stays inactive.
pub fn greedy_bad_dead_end(net: &Network) -> (Allocation, PriceSystem) {
    let mut alloc = greedy_bad_efficient(net);
    let a = ids(net, &["a3", "a6"]);
    alloc.insert(Edge::provide(a[0], good(net, "3")));
    alloc.insert(Edge::acquire(a[1], good(net, "3"), 0));
    (alloc, greedy_bad_equilibrium_prices(net))
}

/// Stage producers double the number of output updates under adversarial
/// delivery.
///
/// `start` sells good 0 once at cost 2. Stage `i` has producers `i-1` and
/// `i-2` turning good `i-1` into `i-A` and `i-B`, and `i-3` combining both
/// into good `i`. `cons` values good `n` below its cost, so only price
/// discovery happens.
pub fn exponential(n: usize) -> Network {
    assert!(n >= 1, "at least one stage");
    let res = Resolution::default();
    let mut net = Network::new(res);
    let m = |s: &str| money(&res, s);
    let mut prev = net.add_good("0");
    net.add_producer("start", prev, &[], m("2"));
    for i in 1..=n {
        let a = net.add_good(format!("{i}-A"));
        let b = net.add_good(format!("{i}-B"));
        let out = net.add_good(i.to_string());
        net.add_producer(format!("{i}-1"), a, &[(prev, 1)], Money::ZERO);
        net.add_producer(format!("{i}-2"), b, &[(prev, 1)], Money::ZERO);
        net.add_producer(format!("{i}-3"), out, &[(a, 1), (b, 1)], Money::ZERO);
        prev = out;
    }
    net.add_consumer("cons", &[(prev, m("0.05"))]);
    net.note = Some(
        "reconstruction: start sells one unit of good 0 at 2; each stage i has producers \
         i-1 and i-2 on good i-1 and i-3 on goods i-A and i-B; wiring beyond these facts \
         is chosen, not known"
            .to_string(),
    );
    net
}

/// Delays that keep the two branches of every stage apart, so each stage
/// combiner sees every update of `i-A` before any of `i-B`. Opening quotes
/// are exempt so combiners can bid from the first `i-A` update on.
pub fn exponential_script(n: usize) -> DelayScript {
    let rules = (1..=n)
        .map(|i| DelayRule {
            kind: Some(MessageKind::Quote),
            agent: Some(format!("{i}-3")),
            good: Some(format!("{i}-B")),
            from_tick: Some(2),
            until_tick: None,
            delay: 1 << (2 * i + 2),
        })
        .collect();
    DelayScript { default: 1, rules }
}

/// a8 must win two units of good 4, one of which comes from a6 at a cost
/// of 20 over good 2; a7 undercuts a8 for good 5 but can never be
/// supplied, because only one unit of good 2 exists and a7 needs two.
pub fn no_converge(value: &str) -> Network {
    let res = Resolution::default();
    let mut n = Network::new(res);
    let m = |s: &str| money(&res, s);
    let g2 = n.add_good("2");
    let g4 = n.add_good("4");
    let g5 = n.add_good("5");
    n.add_consumer("cons", &[(g5, m(value))]);
    n.add_producer("a1", g2, &[], m("1"));
    n.add_producer("a5", g4, &[], m("1"));
    n.add_producer("a6", g4, &[(g2, 1)], m("20"));
    n.add_producer("a7", g5, &[(g2, 2)], m("0"));
    n.add_producer("a8", g5, &[(g4, 2)], m("0"));
    n.note = Some(
        "reconstruction: every solution contains a8 and none contains a7; a6 sells good 4 \
         for at least p(2) + 20; a8 needs two units of good 4; wiring beyond these facts is \
         chosen, not known"
            .to_string(),
    );
    n
}

/// `k` producers in a line feeding one consumer; costs 0.5, value 1.
pub fn chain(k: usize) -> Network {
    assert!(k >= 1, "at least one producer");
    let res = Resolution::default();
    let mut n = Network::new(res);
    let mut prev: Option<GoodId> = None;
    for i in 0..k {
        let g = n.add_good(format!("g{i}"));
        let inputs: Vec<(GoodId, u32)> = prev.map(|p| vec![(p, 1)]).unwrap_or_default();
        n.add_producer(format!("p{i}"), g, &inputs, money(&res, "0.5"));
        prev = Some(g);
    }
    n.add_consumer("c", &[(prev.expect("k >= 1"), money(&res, "1"))]);
    n
}

/// Two input-less producers competing to serve one consumer.
pub fn two_parallel() -> Network {
    let res = Resolution::default();
    let mut n = Network::new(res);
    let g = n.add_good("g");
    n.add_producer("p0", g, &[], money(&res, "0.5"));
    n.add_producer("p1", g, &[], money(&res, "0.5"));
    n.add_consumer("c", &[(g, money(&res, "1"))]);
    n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RandomSpec {
    /// Upper bound on agents, consumers included.
    pub max_agents: usize,
    /// Largest consumer value drawn, in whole units.
    pub max_value: u32,
}

impl Default for RandomSpec {
    fn default() -> RandomSpec {
        RandomSpec { max_agents: 12, max_value: 3 }
    }
}

fn cost<R: Rng>(rng: &mut R, res: &Resolution) -> Money {
    res.from_f64(rng.gen::<f64>())
}

fn value<R: Rng>(rng: &mut R, res: &Resolution, spec: &RandomSpec) -> Money {
    let lo = 0.2;
    let hi = spec.max_value.max(1) as f64;
    res.from_f64(lo + rng.gen::<f64>() * (hi - lo)).max(Money(1))
}

/// Grows an undirected tree of goods and agents: every new node hangs off
/// exactly one existing node, so the result is a polytree.
fn grow_polytree<R: Rng>(rng: &mut R, spec: &RandomSpec, max_consumers: usize) -> Network {
    let res = Resolution::default();
    let mut n = Network::new(res);
    let target = rng.gen_range(2..=spec.max_agents.max(2));
    let root = n.add_good("g0");
    n.add_consumer("c0", &[(root, value(rng, &res, spec))]);
    let mut consumers = 1;
    let mut producers = 0;
    // Goods that still lack a producer get priority, and the agent budget
    // always leaves room to supply every good created.
    while n.agents.len() < target {
        let unsupplied: Vec<GoodId> = n.good_ids().filter(|&g| n.producers_of(g).is_empty()).collect();
        let room = target - n.agents.len();
        let roll: f64 = rng.gen();
        if !unsupplied.is_empty() && (roll < 0.6 || unsupplied.len() >= room) {
            let g = unsupplied[rng.gen_range(0..unsupplied.len())];
            let k = rng.gen_range(0..=2usize.min(room - unsupplied.len()));
            let inputs: Vec<(GoodId, u32)> = (0..k)
                .map(|_| {
                    let id = n.goods.len();
                    (n.add_good(format!("g{id}")), 1)
                })
                .collect();
            n.add_producer(format!("p{producers}"), g, &inputs, cost(rng, &res));
            producers += 1;
        } else if roll < 0.8 && consumers < max_consumers {
            let g = GoodId(rng.gen_range(0..n.goods.len()));
            n.add_consumer(format!("c{consumers}"), &[(g, value(rng, &res, spec))]);
            consumers += 1;
        } else {
            let g = GoodId(rng.gen_range(0..n.goods.len()));
            n.add_producer(format!("p{producers}"), g, &[], cost(rng, &res));
            producers += 1;
        }
    }
    n
}

/// Polytree with at most one consumer.
pub fn random_tree<R: Rng>(rng: &mut R, spec: &RandomSpec) -> Network {
    grow_polytree(rng, spec, 1)
}

/// Polytree with any number of consumers.
pub fn random_polytree<R: Rng>(rng: &mut R, spec: &RandomSpec) -> Network {
    grow_polytree(rng, spec, usize::MAX)
}

/// Layered DAG; with `max_units == 1` no producer has more than one input unit.
fn layered<R: Rng>(rng: &mut R, spec: &RandomSpec, max_inputs: usize, max_units: u32) -> Network {
    let res = Resolution::default();
    let mut n = Network::new(res);
    let agents = rng.gen_range(2..=spec.max_agents.max(2));
    let consumers = rng.gen_range(1..=(agents / 3).max(1));
    let producers = agents - consumers;
    let goods = rng.gen_range(1..=producers.max(1));
    for i in 0..goods {
        n.add_good(format!("g{i}"));
    }
    for i in 0..producers {
        // The first producers cover every good once; the rest duplicate.
        let out = if i < goods { GoodId(i) } else { GoodId(rng.gen_range(0..goods)) };
        let mut inputs = Vec::new();
        if out.0 > 0 && rng.gen_bool(0.7) {
            let k = rng.gen_range(1..=max_inputs);
            let mut units_left = if max_units == 1 { 1 } else { u32::MAX };
            for _ in 0..k {
                if units_left == 0 {
                    break;
                }
                let g = GoodId(rng.gen_range(0..out.0));
                let u = rng.gen_range(1..=max_units).min(units_left);
                units_left -= u;
                inputs.push((g, u));
            }
        }
        n.add_producer(format!("p{i}"), out, &inputs, cost(rng, &res));
    }
    for i in 0..consumers {
        // Favor goods late in the order, which sit on longer chains.
        let lo = goods / 2;
        let width = rng.gen_range(1..=2usize.min(goods - lo));
        let mut values = Vec::new();
        while values.len() < width {
            let g = GoodId(rng.gen_range(lo..goods));
            if values.iter().all(|&(h, _)| h != g) {
                values.push((g, value(rng, &res, spec)));
            }
        }
        n.add_consumer(format!("c{i}"), &values);
    }
    n
}

/// DAG in which every producer uses at most one input unit.
pub fn random_single_input<R: Rng>(rng: &mut R, spec: &RandomSpec) -> Network {
    layered(rng, spec, 1, 1)
}

/// DAG with multi-input producers and multi-unit demands.
pub fn random_general<R: Rng>(rng: &mut R, spec: &RandomSpec) -> Network {
    layered(rng, spec, 3, 2)
}

/// A random feasible allocation: each good gets a random number of
/// providers matched to random buyer slots, then active producers missing
/// an input are switched off (dropping one buyer of their output) until
/// every active producer is fully supplied. Dead ends may remain.
pub fn random_feasible_allocation<R: Rng>(net: &Network, rng: &mut R) -> Allocation {
    use rand::seq::SliceRandom;
    let mut edges: Vec<Edge> = Vec::new();
    for g in net.good_ids() {
        let mut sellers = net.producers_of(g);
        sellers.shuffle(rng);
        let mut slots: Vec<Edge> = net
            .users_of(g)
            .into_iter()
            .flat_map(|a| {
                let units = net.producer(a).map_or(1, |p| p.units_of(g));
                (0..units).map(move |u| Edge::acquire(a, g, u))
            })
            .collect();
        slots.shuffle(rng);
        let k = rng.gen_range(0..=sellers.len().min(slots.len()));
        edges.extend(sellers[..k].iter().map(|&a| Edge::provide(a, g)));
        edges.extend(slots[..k].iter().copied());
    }
    let mut alloc = Allocation::from_edges(edges);
    loop {
        let broken = net.producers().map(|(a, _)| a).find(|&a| !alloc.producer_feasible(net, a));
        let Some(a) = broken else { break };
        let out = net.producer(a).expect("producer").output;
        let mut next: Vec<Edge> = alloc.edges.iter().copied().filter(|e| *e != Edge::provide(a, out)).collect();
        let buyers: Vec<usize> =
            next.iter().enumerate().filter(|(_, e)| e.good == out && e.dir == Dir::Acquire).map(|(i, _)| i).collect();
        next.remove(buyers[rng.gen_range(0..buyers.len())]);
        alloc = Allocation::from_edges(next);
    }
    alloc
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FixtureError {
    #[error("unknown fixture: {0}")]
    Unknown(String),
    #[error("bad parameter for {name}: {detail}")]
    BadParam { name: String, detail: String },
}

pub const FIXTURE_NAMES: &[&str] = &[
    "greedy-bad",
    "greedy-bad-noeq",
    "exponential",
    "no-converge",
    "chain",
    "two-parallel",
    "random-tree",
    "random-polytree",
    "random-single-input",
    "random-general",
];

/// Builds a fixture from its name. Random families read `seed` and an
/// optional agent bound from `params`; the others read a single size.
pub fn by_name(name: &str, params: &[String], seed: u64) -> Result<Network, FixtureError> {
    use rand::SeedableRng;
    let bad = |detail: &str| FixtureError::BadParam { name: name.to_string(), detail: detail.to_string() };
    let size = |default: usize| -> Result<usize, FixtureError> {
        match params.first() {
            None => Ok(default),
            Some(s) => s.parse::<usize>().ok().filter(|&k| k >= 1).ok_or_else(|| bad("expected a positive integer")),
        }
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let spec = RandomSpec { max_agents: size(RandomSpec::default().max_agents)?, ..RandomSpec::default() };
    Ok(match name {
        "greedy-bad" => greedy_bad(params.first().map_or(GREEDY_BAD_VALUE, |s| s.as_str())),
        "greedy-bad-noeq" => greedy_bad(GREEDY_BAD_NO_EQ_VALUE),
        "exponential" => exponential(size(3)?),
        "no-converge" => no_converge(params.first().map_or("100", |s| s.as_str())),
        "chain" => chain(size(1)?),
        "two-parallel" => two_parallel(),
        "random-tree" => random_tree(&mut rng, &spec),
        "random-polytree" => random_polytree(&mut rng, &spec),
        "random-single-input" => random_single_input(&mut rng, &spec),
        "random-general" => random_general(&mut rng, &spec),
        other => return Err(FixtureError::Unknown(other.to_string())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_allocations_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let net = random_general(&mut rng, &RandomSpec::default());
            let alloc = random_feasible_allocation(&net, &mut rng);
            assert_eq!(alloc.is_feasible(&net), Ok(true));
        }
    }

    #[test]
    fn named_fixtures_validate() {
        for name in FIXTURE_NAMES {
            let net = by_name(name, &[], 7).unwrap();
            assert!(net.validate().is_empty(), "{name}: {:?}", net.validate());
        }
    }

    #[test]
    fn greedy_bad_facts() {
        let net = greedy_bad(GREEDY_BAD_VALUE);
        let a6 = net.producer(net.agent_by_name("a6").unwrap()).unwrap();
        let names: Vec<&str> = a6.inputs.iter().map(|&(g, _)| net.good_name(g)).collect();
        assert_eq!(names, ["2", "3", "4"]);
        let a3 = net.producer(net.agent_by_name("a3").unwrap()).unwrap();
        assert_eq!(a3.cost, net.resolution.money("1").unwrap());
        let g4 = net.good_by_name("4").unwrap();
        assert_eq!(net.producers_of(g4).len(), 1);
        assert_eq!(net.users_of(g4).len(), 2);
    }

    #[test]
    fn greedy_bad_allocations() {
        let net = greedy_bad(GREEDY_BAD_VALUE);
        let eff = greedy_bad_efficient(&net);
        assert!(eff.is_solution(&net).unwrap());
        assert_eq!(eff.value(&net), net.resolution.money("8").unwrap());
        let (alloc, p) = greedy_bad_dead_end(&net);
        assert!(alloc.is_valid_solution(&net, &p).unwrap());
        let dead: Vec<&str> = alloc.dead_ends(&net).iter().map(|&a| net.agent_name(a)).collect();
        assert_eq!(dead, ["a6"]);
    }

    #[test]
    fn half_price_bump_gives_a6_one_unit_of_profit() {
        let net = greedy_bad(GREEDY_BAD_VALUE);
        let mut p = greedy_bad_equilibrium_prices(&net);
        p.set(net.good_by_name("5").unwrap(), net.resolution.money("8").unwrap());
        let a6 = net.producer(net.agent_by_name("a6").unwrap()).unwrap();
        let input: Money = a6.inputs.iter().map(|&(g, _)| p.get(g)).sum();
        assert_eq!(p.get(a6.output) - input - a6.cost, net.resolution.money("1").unwrap());
    }

    #[test]
    fn exponential_shape() {
        let net = exponential(4);
        assert_eq!(net.goods.len(), 1 + 3 * 4);
        assert_eq!(net.agents.len(), 1 + 3 * 4 + 1);
        assert_eq!(exponential_script(4).rules.len(), 4);
    }

    #[test]
    fn random_families_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = RandomSpec { max_agents: 20, max_value: 3 };
        for _ in 0..300 {
            for net in [
                random_tree(&mut rng, &spec),
                random_polytree(&mut rng, &spec),
                random_single_input(&mut rng, &spec),
                random_general(&mut rng, &spec),
            ] {
                assert!(net.validate().is_empty(), "{:?}", net.validate());
                assert!(net.agents.len() <= 20);
            }
        }
    }

    #[test]
    fn trees_have_one_consumer_and_single_input_nets_no_complements() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = RandomSpec::default();
        for _ in 0..200 {
            assert!(random_tree(&mut rng, &spec).num_consumers() <= 1);
            let n = random_single_input(&mut rng, &spec);
            assert!(n.producers().all(|(_, p)| p.input_units() <= 1));
        }
    }

    #[test]
    fn polytrees_supply_every_good_within_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let spec = RandomSpec { max_agents: 20, ..RandomSpec::default() };
        for _ in 0..500 {
            let n = random_polytree(&mut rng, &spec);
            assert!(n.agents.len() <= 20);
            assert!(n.good_ids().all(|g| !n.producers_of(g).is_empty()));
        }
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert!(matches!(by_name("nope", &[], 0), Err(FixtureError::Unknown(_))));
        assert!(by_name("chain", &["x".to_string()], 0).is_err());
    }
}
