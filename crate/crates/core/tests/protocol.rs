use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use samp_core::agents::PolicyConfig;
use samp_core::fixtures::{self, RandomSpec};
use samp_core::netmodel::{GoodId, Money, Network, Resolution};
use samp_core::simkernel::{run, DelayModel, EventKind, RunConfig, RunTrace};

fn network(family: u8, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = RandomSpec { max_agents: 14, ..RandomSpec::default() };
    match family % 4 {
        0 => fixtures::random_tree(&mut rng, &spec),
        1 => fixtures::random_polytree(&mut rng, &spec),
        2 => fixtures::random_single_input(&mut rng, &spec),
        _ => fixtures::random_general(&mut rng, &spec),
    }
}

fn traced(net: &Network, seed: u64, safe: bool) -> RunTrace {
    let d = Resolution::default().money("0.01").unwrap();
    let mut policy = PolicyConfig::new(d, d);
    policy.safe = safe;
    let mut cfg = RunConfig::new(policy);
    cfg.seed = seed;
    cfg.delay = DelayModel::Uniform { min: 1, max: 4 };
    cfg.record_trace = true;
    run(net, cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quoted_price_and_ask_never_fall(family in 0u8..4, net_seed in any::<u64>(), seed in any::<u64>(), safe in any::<bool>()) {
        let net = network(family, net_seed);
        let t = traced(&net, seed, safe);
        let mut last: BTreeMap<GoodId, (Money, Money)> = BTreeMap::new();
        for e in t.events.iter().filter(|e| e.kind == EventKind::Quote) {
            let now = (e.price.unwrap(), e.ask.unwrap());
            if let Some(prev) = last.insert(e.good, now) {
                prop_assert!(now.0 >= prev.0 && now.1 >= prev.1, "good {:?}: {:?} then {:?}", e.good, prev, now);
            }
        }
    }

    #[test]
    fn accepted_offers_only_rise(family in 0u8..4, net_seed in any::<u64>(), seed in any::<u64>()) {
        let net = network(family, net_seed);
        let t = traced(&net, seed, false);
        let mut last = BTreeMap::new();
        for e in t.events.iter().filter(|e| e.kind == EventKind::BidAccept) {
            let key = (e.agent.unwrap(), e.good);
            if let Some(prev) = last.insert(key, e.prices.clone()) {
                for (old, new) in prev.iter().zip(&e.prices) {
                    prop_assert!(new >= old);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_run(family in 0u8..4, net_seed in any::<u64>(), seed in any::<u64>()) {
        let net = network(family, net_seed);
        let a = traced(&net, seed, false);
        let b = traced(&net, seed, false);
        prop_assert_eq!(a.events, b.events);
        prop_assert_eq!(a.allocation, b.allocation);
        prop_assert_eq!(a.prices, b.prices);
    }

    #[test]
    fn quasi_quiescence_precedes_quiescence(family in 0u8..4, net_seed in any::<u64>(), seed in any::<u64>(), safe in any::<bool>()) {
        let net = network(family, net_seed);
        let t = traced(&net, seed, safe);
        prop_assert!(t.quasi_quiescence_tick.unwrap() <= t.quiescence_tick);
        prop_assert!(t.violations.is_empty(), "{:?}", t.violations);
    }
}
