//! Deciding whether any price system supports an efficient allocation.
//!
//! Prices are unknowns in resolution units. Each agent's optimality becomes
//! linear inequalities; the system is solved exactly over the rationals.

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive};

use super::efficient::{efficient_optima, Mode, DEFAULT_MAX_OPTIMA};
use super::equilibrium::check_competitive_equilibrium;
use super::linear::{fourier_motzkin, q, simplex_feasible, Constraint, FmOutcome, Q};
use crate::netmodel::{AgentId, AgentKind, Allocation, GoodId, Money, Network, PriceSystem, Resolution};

/// Goods up to which infeasibility is explained by elimination.
pub const EXPLAIN_LIMIT: usize = 14;
const FM_MAX_ROWS: usize = 20_000;

fn price_term(net: &Network, terms: &[(usize, i64)]) -> String {
    let mut s = String::new();
    for (i, &(g, a)) in terms.iter().enumerate() {
        let name = format!("p({})", net.good_name(GoodId(g)));
        let mag = a.abs();
        let body = if mag == 1 { name } else { format!("{mag}*{name}") };
        match (i, a < 0) {
            (0, false) => s.push_str(&body),
            (0, true) => s.push_str(&format!("-{body}")),
            (_, false) => s.push_str(&format!(" + {body}")),
            (_, true) => s.push_str(&format!(" - {body}")),
        }
    }
    s
}

/// Optimality conditions of every agent under `alloc` as `<=` rows over
/// good prices in resolution units.
pub fn equilibrium_system(net: &Network, alloc: &Allocation) -> Vec<Constraint> {
    let res = &net.resolution;
    let mut rows = Vec::new();
    for (i, agent) in net.agents.iter().enumerate() {
        let a = AgentId(i);
        let name = &agent.name;
        match &agent.kind {
            AgentKind::Producer(p) => {
                let mut terms = vec![(p.output.0, 1i64)];
                terms.extend(p.inputs.iter().map(|&(g, k)| (g.0, -(k as i64))));
                let lhs = price_term(net, &terms);
                let k = res.format(p.cost);
                if alloc.provides(a) {
                    rows.push(Constraint::ge(&terms, p.cost.0, format!("{name} active: {lhs} >= {k}")));
                } else {
                    rows.push(Constraint::le(&terms, p.cost.0, format!("{name} inactive: {lhs} <= {k}")));
                    for g in alloc.acquired(a) {
                        let label = format!("{name} holds {} while inactive: p({}) <= 0", net.good_name(g), net.good_name(g));
                        rows.push(Constraint::le(&[(g.0, 1)], 0, label));
                    }
                }
            }
            AgentKind::Consumer(c) => {
                let held: Vec<GoodId> = alloc.acquired(a).collect();
                match held.iter().copied().max_by_key(|&g| (net.value_of(a, g), std::cmp::Reverse(g))) {
                    None => {
                        for &(g, v) in &c.values {
                            let label = format!("{name} unserved: p({}) >= {}", net.good_name(g), res.format(v));
                            rows.push(Constraint::ge(&[(g.0, 1)], v.0, label));
                        }
                    }
                    Some(g) => {
                        let v = net.value_of(a, g).unwrap_or(Money::ZERO);
                        let gn = net.good_name(g);
                        rows.push(Constraint::le(&[(g.0, 1)], v.0, format!("{name} served: p({gn}) <= {}", res.format(v))));
                        for &(h, w) in &c.values {
                            if h != g {
                                let label = format!(
                                    "{name} prefers {gn}: p({gn}) - p({}) <= {}",
                                    net.good_name(h),
                                    res.format(v - w)
                                );
                                rows.push(Constraint::le(&[(g.0, 1), (h.0, -1)], (v - w).0, label));
                            }
                        }
                        for &h in held.iter().filter(|&&h| h != g) {
                            let label = format!("{name} extra good {}: p({}) <= 0", net.good_name(h), net.good_name(h));
                            rows.push(Constraint::le(&[(h.0, 1)], 0, label));
                        }
                    }
                }
            }
        }
    }
    rows
}

/// Why one allocation admits no supporting prices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Clash {
    /// Derived `p(good) >= lower` and `p(good) <= upper`, lower > upper.
    Bounds { good: GoodId, lower: Q, upper: Q, lower_sources: Vec<String>, upper_sources: Vec<String> },
    /// A nonnegative combination of rows reduces to `0 <= negative`.
    Contradiction { sources: Vec<String> },
    /// Infeasible, but too large to explain.
    Unexplained,
}

impl Clash {
    pub fn describe(&self, net: &Network) -> String {
        let res = &net.resolution;
        match self {
            Clash::Bounds { good, lower, upper, lower_sources, upper_sources } => {
                let g = net.good_name(*good);
                format!(
                    "p({g}) >= {} from [{}]; p({g}) <= {} from [{}]",
                    format_units(res, lower),
                    lower_sources.join("; "),
                    format_units(res, upper),
                    upper_sources.join("; ")
                )
            }
            Clash::Contradiction { sources } => format!("contradiction from [{}]", sources.join("; ")),
            Clash::Unexplained => "infeasible (system too large to explain)".to_string(),
        }
    }
}

/// A rational price in resolution units as a decimal, or a fraction of
/// currency units when it is off the grid.
pub fn format_units(res: &Resolution, x: &Q) -> String {
    if x.is_integer() {
        if let Some(u) = x.to_integer().to_i64() {
            return res.format(Money(u));
        }
    }
    let (num, den) = res.to_ratio(Money(1));
    let amount = x * Q::new(BigInt::from(num), BigInt::from(den));
    format!("{}/{}", amount.numer(), amount.denom())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    /// Exact prices in resolution units.
    pub exact: Vec<Q>,
    /// The same prices on the money grid, when rounding keeps them valid.
    pub grid: Option<PriceSystem>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub allocation: Allocation,
    pub witness: Option<Witness>,
    pub clash: Option<Clash>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Existence {
    pub value: Money,
    /// One verdict per efficient allocation examined.
    pub verdicts: Vec<Verdict>,
    pub truncated: bool,
}

impl Existence {
    pub fn exists(&self) -> bool {
        self.verdicts.iter().any(|v| v.witness.is_some())
    }

    pub fn witness(&self) -> Option<(&Allocation, &Witness)> {
        self.verdicts.iter().find_map(|v| v.witness.as_ref().map(|w| (&v.allocation, w)))
    }

    /// Optima disagree: some are supported and some are not.
    pub fn disagreement(&self) -> bool {
        self.exists() && self.verdicts.iter().any(|v| v.witness.is_none())
    }

    pub fn first_clash(&self) -> Option<&Clash> {
        self.verdicts.iter().find_map(|v| v.clash.as_ref())
    }
}

pub fn competitive_equilibrium_exists(net: &Network) -> Existence {
    let optima = efficient_optima(net, Mode::Auto, DEFAULT_MAX_OPTIMA);
    let verdicts = optima.allocations.iter().map(|a| supporting_prices(net, a)).collect();
    Existence { value: optima.value, verdicts, truncated: optima.truncated }
}

/// Decides whether `alloc` is supported by some price system.
pub fn supporting_prices(net: &Network, alloc: &Allocation) -> Verdict {
    let n = net.goods.len();
    let system = equilibrium_system(net, alloc);
    match simplex_feasible(n, &system) {
        Some(x) => {
            let grid = round_to_grid(net, alloc, &x);
            Verdict { allocation: alloc.clone(), witness: Some(Witness { exact: x, grid }), clash: None }
        }
        None => {
            let clash = if n == 0 || n > EXPLAIN_LIMIT {
                Clash::Unexplained
            } else {
                let keep = net.goods_topological().last().map_or(0, |g| g.0);
                match fourier_motzkin(n, &system, keep, FM_MAX_ROWS) {
                    FmOutcome::Clash { lower, upper } => Clash::Bounds {
                        good: GoodId(keep),
                        lower: lower.value,
                        upper: upper.value,
                        lower_sources: lower.sources,
                        upper_sources: upper.sources,
                    },
                    FmOutcome::Contradiction { sources, .. } => Clash::Contradiction { sources },
                    FmOutcome::Feasible => panic!("elimination and simplex disagree"),
                    FmOutcome::TooLarge => Clash::Unexplained,
                }
            };
            Verdict { allocation: alloc.clone(), witness: None, clash: Some(clash) }
        }
    }
}

fn round_to_grid(net: &Network, alloc: &Allocation, x: &[Q]) -> Option<PriceSystem> {
    let to_money = |v: Q| v.to_integer().to_i64().map(Money);
    let roundings: [fn(&Q) -> Q; 3] = [|v| v.ceil(), |v| v.floor(), |v| v.round()];
    for f in roundings {
        let prices: Option<Vec<Money>> = x.iter().map(|v| to_money(f(v))).collect();
        let Some(prices) = prices else { continue };
        if prices.iter().any(|p| p.is_negative()) {
            continue;
        }
        let ps = PriceSystem { prices };
        if check_competitive_equilibrium(net, alloc, &ps).is_ok() {
            return Some(ps);
        }
    }
    None
}

/// True if every row of the system holds at the given grid prices.
pub fn system_holds(system: &[Constraint], prices: &PriceSystem) -> bool {
    let x: Vec<Q> = prices.prices.iter().map(|m| q(m.0)).collect();
    system.iter().all(|c| c.holds(&x)) && x.iter().all(|v| !v.is_negative())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, RandomSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_bad_without_equilibrium_clashes_on_good_six() {
        let net = fixtures::greedy_bad(fixtures::GREEDY_BAD_NO_EQ_VALUE);
        let ex = competitive_equilibrium_exists(&net);
        assert!(!ex.exists());
        assert_eq!(ex.verdicts.len(), 1);
        match ex.first_clash().unwrap() {
            Clash::Bounds { good, lower, upper, .. } => {
                assert_eq!(net.good_name(*good), "6");
                assert_eq!(format_units(&net.resolution, lower), "10");
                assert_eq!(format_units(&net.resolution, upper), "9");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn greedy_bad_with_equilibrium_has_grid_witness() {
        let net = fixtures::greedy_bad(fixtures::GREEDY_BAD_VALUE);
        let ex = competitive_equilibrium_exists(&net);
        let (alloc, w) = ex.witness().expect("equilibrium");
        assert_eq!(alloc, &fixtures::greedy_bad_efficient(&net));
        let grid = w.grid.as_ref().expect("on grid");
        assert_eq!(check_competitive_equilibrium(&net, alloc, grid), Ok(()));
        assert!(system_holds(&equilibrium_system(&net, alloc), grid));
    }

    #[test]
    fn known_prices_satisfy_the_system() {
        let net = fixtures::greedy_bad(fixtures::GREEDY_BAD_VALUE);
        let alloc = fixtures::greedy_bad_efficient(&net);
        let p = fixtures::greedy_bad_equilibrium_prices(&net);
        assert!(system_holds(&equilibrium_system(&net, &alloc), &p));
    }

    #[test]
    fn system_matches_checker_on_random_prices() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = RandomSpec { max_agents: 10, max_value: 3 };
        for _ in 0..300 {
            let net = fixtures::random_general(&mut rng, &spec);
            let (alloc, _) = crate::analysis::efficient_allocation(&net);
            let prices =
                PriceSystem { prices: (0..net.goods.len()).map(|_| Money(rng.gen_range(0..30_000))).collect() };
            let by_system = system_holds(&equilibrium_system(&net, &alloc), &prices);
            let by_checker = check_competitive_equilibrium(&net, &alloc, &prices).is_ok();
            assert_eq!(by_system, by_checker);
        }
    }

    #[test]
    fn single_input_and_polytree_networks_always_have_equilibria() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = RandomSpec { max_agents: 12, max_value: 3 };
        for _ in 0..150 {
            for net in [fixtures::random_single_input(&mut rng, &spec), fixtures::random_polytree(&mut rng, &spec)] {
                assert!(competitive_equilibrium_exists(&net).exists());
            }
        }
    }
}
