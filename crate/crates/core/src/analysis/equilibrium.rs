//! Exact and approximate competitive equilibrium checks.

use std::collections::{BTreeMap, BTreeSet};

use crate::netmodel::{AgentId, AgentKind, Allocation, GoodId, Money, Network, PriceSystem};
use crate::simkernel::RunTrace;

/// Surplus producer `a` would get by being active at `prices`.
pub fn would_be_surplus(net: &Network, prices: &PriceSystem, a: AgentId) -> Money {
    let p = net.producer(a).expect("producer");
    let inputs: Money = p.inputs.iter().map(|&(g, k)| prices.get(g) * k as i64).sum();
    prices.get(p.output) - inputs - p.cost
}

/// Best surplus agent `a` can get at `prices` over all feasible choices.
pub fn max_surplus(net: &Network, prices: &PriceSystem, a: AgentId) -> Money {
    match &net.agent(a).kind {
        AgentKind::Consumer(c) => {
            c.values.iter().map(|&(g, v)| v - prices.get(g)).max().unwrap_or(Money::ZERO).max(Money::ZERO)
        }
        AgentKind::Producer(_) => would_be_surplus(net, prices, a).max(Money::ZERO),
    }
}

/// Every agent's choice in `alloc` optimizes its surplus at `prices`, and
/// `alloc` is feasible.
pub fn check_competitive_equilibrium(net: &Network, alloc: &Allocation, prices: &PriceSystem) -> Result<(), Vec<String>> {
    let mut out = Vec::new();
    match alloc.is_feasible(net) {
        Err(e) => return Err(vec![format!("allocation: {e}")]),
        Ok(false) => out.push("allocation is not feasible".to_string()),
        Ok(true) => {}
    }
    let res = &net.resolution;
    for (i, agent) in net.agents.iter().enumerate() {
        let a = AgentId(i);
        let name = &agent.name;
        match &agent.kind {
            AgentKind::Producer(_) => {
                let s = would_be_surplus(net, prices, a);
                if alloc.provides(a) {
                    if s.is_negative() {
                        out.push(format!("active producer {name} has surplus {}", res.format(s)));
                    }
                } else {
                    if s.is_positive() {
                        out.push(format!("inactive producer {name} could earn {}", res.format(s)));
                    }
                    let paid: Money = alloc.acquired(a).map(|g| prices.get(g)).sum();
                    if paid.is_positive() {
                        out.push(format!("inactive producer {name} pays {} for inputs", res.format(paid)));
                    }
                }
            }
            AgentKind::Consumer(c) => {
                let goods: Vec<GoodId> = alloc.acquired(a).collect();
                let best = max_surplus(net, prices, a);
                if goods.is_empty() {
                    for &(g, v) in &c.values {
                        if (v - prices.get(g)).is_positive() {
                            out.push(format!("unserved consumer {name} would gain from {}", net.good_name(g)));
                        }
                    }
                    continue;
                }
                let ok = goods.iter().any(|&g| {
                    let s = net.value_of(a, g).unwrap_or(Money::ZERO) - prices.get(g);
                    !s.is_negative()
                        && s == best
                        && goods.iter().all(|&h| h == g || prices.get(h) == Money::ZERO)
                });
                if !ok {
                    out.push(format!("consumer {name} does not hold a surplus-maximizing good"));
                }
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Slack parameters of an approximate equilibrium. `lambda` is per unit of
/// each (producer, input good) pair; missing entries are zero.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LambdaParams {
    pub delta_b: Money,
    pub delta_s: Money,
    pub lambda: BTreeMap<(AgentId, GoodId), Money>,
}

impl LambdaParams {
    pub fn new(delta_b: Money, delta_s: Money) -> LambdaParams {
        LambdaParams { delta_b, delta_s, lambda: BTreeMap::new() }
    }

    /// The protocol's input slack: `max(ask - price, delta_b)` per input.
    pub fn from_quotes(net: &Network, prices: &PriceSystem, asks: &[Money], delta_b: Money, delta_s: Money) -> LambdaParams {
        let mut lambda = BTreeMap::new();
        for (a, p) in net.producers() {
            for &(g, _) in &p.inputs {
                lambda.insert((a, g), (asks[g.0] - prices.get(g)).max(delta_b));
            }
        }
        LambdaParams { delta_b, delta_s, lambda }
    }

    pub fn lambda(&self, a: AgentId, g: GoodId) -> Money {
        self.lambda.get(&(a, g)).copied().unwrap_or(Money::ZERO)
    }

    /// Sum of input slacks over every input unit of producer `a`.
    pub fn input_slack(&self, net: &Network, a: AgentId) -> Money {
        net.producer(a).expect("producer").inputs.iter().map(|&(g, k)| self.lambda(a, g) * k as i64).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LambdaDeltaReport {
    pub violations: Vec<String>,
    /// `max_surplus - surplus` per agent.
    pub slacks: Vec<Money>,
}

impl LambdaDeltaReport {
    pub fn verified(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_lambda_delta(net: &Network, alloc: &Allocation, prices: &PriceSystem, params: &LambdaParams) -> LambdaDeltaReport {
    let mut violations = Vec::new();
    if let Err(e) = alloc.check_subgraph(net) {
        return LambdaDeltaReport { violations: vec![format!("allocation: {e}")], slacks: Vec::new() };
    }
    let res = &net.resolution;
    let mut slacks = Vec::with_capacity(net.agents.len());
    for a in net.agent_ids() {
        let name = net.agent_name(a);
        let s = alloc.surplus(net, prices, a).expect("agent exists");
        let h = max_surplus(net, prices, a);
        slacks.push(h - s);
        if s.is_negative() {
            violations.push(format!("{name} has negative surplus {}", res.format(s)));
        }
        if net.agent(a).is_consumer() {
            if s < h - params.delta_b {
                violations.push(format!("consumer {name} is {} below its best surplus", res.format(h - s)));
            }
        } else {
            let allowed = params.input_slack(net, a) + params.delta_s;
            if s < h - allowed {
                violations.push(format!(
                    "producer {name} is {} below its best surplus (allowed {})",
                    res.format(h - s),
                    res.format(allowed)
                ));
            }
            if !alloc.producer_feasible(net, a) {
                violations.push(format!("producer {name} is not feasible"));
            }
        }
    }
    for (g, (provided, acquired)) in alloc.material_balance() {
        if provided != acquired {
            violations.push(format!("good {} out of balance: {provided} provided, {acquired} acquired", net.good_name(g)));
        }
    }
    LambdaDeltaReport { violations, slacks }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundReport {
    pub achieved: Money,
    pub efficient: Money,
    /// Sum over producers of input slacks plus `delta_s`, plus `delta_b` per consumer.
    pub general_bound: Money,
    /// As `general_bound` with every input slack replaced by `delta_b`.
    pub protocol_bound: Money,
}

impl BoundReport {
    pub fn gap(&self) -> Money {
        self.efficient - self.achieved
    }

    pub fn within_general(&self) -> bool {
        self.gap() <= self.general_bound
    }

    pub fn within_protocol(&self) -> bool {
        self.gap() <= self.protocol_bound
    }
}

pub fn bound_report(net: &Network, alloc: &Allocation, params: &LambdaParams, efficient: Money) -> BoundReport {
    let consumers = params.delta_b * net.num_consumers() as i64;
    let general = net.producers().map(|(a, _)| params.input_slack(net, a) + params.delta_s).sum::<Money>() + consumers;
    let protocol =
        net.producers().map(|(_, p)| params.delta_b * p.input_units() as i64 + params.delta_s).sum::<Money>() + consumers;
    BoundReport { achieved: alloc.value(net), efficient, general_bound: general, protocol_bound: protocol }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OutcomeClass {
    LambdaDeltaEquilibrium,
    ValidSolutionOnly,
    NonSolution,
}

impl OutcomeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeClass::LambdaDeltaEquilibrium => "lambda-delta-equilibrium",
            OutcomeClass::ValidSolutionOnly => "valid-solution-only",
            OutcomeClass::NonSolution => "non-solution",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classification {
    pub class: OutcomeClass,
    pub params: LambdaParams,
    pub report: LambdaDeltaReport,
    pub valid_solution: bool,
    /// Inactive producers paying a positive price for some input.
    pub priced_dead_ends: BTreeSet<AgentId>,
}

/// Classifies an outcome with input slacks read from the final quotes.
pub fn classify_outcome(
    net: &Network,
    alloc: &Allocation,
    prices: &PriceSystem,
    asks: &[Money],
    delta_b: Money,
    delta_s: Money,
) -> Classification {
    let params = LambdaParams::from_quotes(net, prices, asks, delta_b, delta_s);
    let report = check_lambda_delta(net, alloc, prices, &params);
    let valid_solution = alloc.is_valid_solution(net, prices).unwrap_or(false);
    let class = if report.verified() {
        OutcomeClass::LambdaDeltaEquilibrium
    } else if valid_solution {
        OutcomeClass::ValidSolutionOnly
    } else {
        OutcomeClass::NonSolution
    };
    Classification { class, params, report, valid_solution, priced_dead_ends: alloc.priced_dead_ends(net, prices) }
}

/// Classifies the raw cleared allocation of a run.
pub fn classify_protocol_outcome(net: &Network, trace: &RunTrace, delta_b: Money, delta_s: Money) -> Classification {
    classify_outcome(net, &trace.allocation, &trace.prices, &trace.asks, delta_b, delta_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::netmodel::Resolution;

    fn greedy() -> (Network, Allocation, PriceSystem) {
        let net = fixtures::greedy_bad(fixtures::GREEDY_BAD_VALUE);
        let alloc = fixtures::greedy_bad_efficient(&net);
        let p = fixtures::greedy_bad_equilibrium_prices(&net);
        (net, alloc, p)
    }

    #[test]
    fn greedy_bad_prices_are_an_equilibrium() {
        let (net, alloc, p) = greedy();
        assert_eq!(check_competitive_equilibrium(&net, &alloc, &p), Ok(()));
        let report = check_lambda_delta(&net, &alloc, &p, &LambdaParams::default());
        assert!(report.verified(), "{:?}", report.violations);
        assert!(report.slacks.iter().all(|s| *s == Money::ZERO));
    }

    #[test]
    fn raising_consumer_price_breaks_it() {
        let (net, alloc, mut p) = greedy();
        p.set(net.good_by_name("6").unwrap(), net.resolution.money("17").unwrap());
        let errs = check_competitive_equilibrium(&net, &alloc, &p).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("consumer cons")), "{errs:?}");
    }

    #[test]
    fn bumped_output_price_needs_slack_one() {
        let (net, alloc, mut p) = greedy();
        let res = net.resolution;
        p.set(net.good_by_name("5").unwrap(), res.money("8").unwrap());
        let a6 = net.agent_by_name("a6").unwrap();
        assert_eq!(max_surplus(&net, &p, a6), res.money("1").unwrap());
        assert!(check_competitive_equilibrium(&net, &alloc, &p).is_err());
        let mut params = LambdaParams::new(Money::ZERO, res.money("0.25").unwrap());
        for g in ["2", "3", "4"] {
            params.lambda.insert((a6, net.good_by_name(g).unwrap()), res.money("0.25").unwrap());
        }
        assert!(check_lambda_delta(&net, &alloc, &p, &params).verified());
        params.delta_s = res.money("0.2499").unwrap();
        assert!(!check_lambda_delta(&net, &alloc, &p, &params).verified());
    }

    #[test]
    fn dead_end_is_not_an_equilibrium() {
        let net = fixtures::greedy_bad(fixtures::GREEDY_BAD_VALUE);
        let (alloc, p) = fixtures::greedy_bad_dead_end(&net);
        let asks = p.prices.clone();
        let c = classify_outcome(&net, &alloc, &p, &asks, Money(100), Money(100));
        assert_eq!(c.class, OutcomeClass::ValidSolutionOnly);
        let names: Vec<&str> = c.priced_dead_ends.iter().map(|&a| net.agent_name(a)).collect();
        assert_eq!(names, ["a6"]);
    }

    #[test]
    fn unserved_with_dead_end_is_non_solution() {
        let res = Resolution::default();
        let mut net = Network::new(res);
        let a = net.add_good("a");
        let b = net.add_good("b");
        net.add_producer("src", a, &[], Money(1));
        net.add_producer("mid", b, &[(a, 1)], Money(1));
        net.add_consumer("c", &[(b, Money(1))]);
        let mut alloc = Allocation::new();
        let (src, mid) = (net.agent_by_name("src").unwrap(), net.agent_by_name("mid").unwrap());
        alloc.insert(crate::Edge::provide(src, a));
        alloc.insert(crate::Edge::acquire(mid, a, 0));
        let mut p = PriceSystem::zero(&net);
        p.set(a, Money(1));
        p.set(b, Money(5));
        let c = classify_outcome(&net, &alloc, &p, &p.prices.clone(), Money(1), Money(1));
        assert_eq!(c.class, OutcomeClass::NonSolution);
    }

    #[test]
    fn bound_arithmetic() {
        let net = fixtures::chain(2);
        let res = net.resolution;
        let params = LambdaParams::new(res.money("0.01").unwrap(), res.money("0.01").unwrap());
        let b = bound_report(&net, &Allocation::new(), &params, Money::ZERO);
        // Two producers: (0 + 0.01) and (0 + 0.01) plus one consumer.
        assert_eq!(b.general_bound, res.money("0.03").unwrap());
        // One input unit adds one delta_b.
        assert_eq!(b.protocol_bound, res.money("0.04").unwrap());
    }
}
