use crate::netmodel::{AgentKind, Network};

/// Every unit of every input and every consumer interest is one undirected
/// edge; the network is a polytree iff that multigraph is a forest.
pub fn is_polytree(net: &Network) -> bool {
    let n_goods = net.goods.len();
    let mut parent: Vec<usize> = (0..n_goods + net.agents.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut union = |a: usize, b: usize| -> bool {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            return false;
        }
        parent[ra] = rb;
        true
    };
    for (i, agent) in net.agents.iter().enumerate() {
        let node = n_goods + i;
        match &agent.kind {
            AgentKind::Consumer(c) => {
                for &(g, _) in &c.values {
                    if !union(node, g.0) {
                        return false;
                    }
                }
            }
            AgentKind::Producer(p) => {
                if !union(node, p.output.0) {
                    return false;
                }
                for &(g, k) in &p.inputs {
                    for _ in 0..k {
                        if !union(node, g.0) {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}

/// A polytree with at most one consumer.
pub fn is_tree(net: &Network) -> bool {
    net.num_consumers() <= 1 && is_polytree(net)
}

/// True if some producer needs more than one input unit.
pub fn has_input_complementarities(net: &Network) -> bool {
    net.producers().any(|(_, p)| p.input_units() > 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::netmodel::{Money, Resolution};

    #[test]
    fn chain_is_everything_simple() {
        let net = fixtures::chain(3);
        assert!(is_tree(&net));
        assert!(is_polytree(&net));
        assert!(!has_input_complementarities(&net));
    }

    #[test]
    fn two_units_break_polytree() {
        let mut net = Network::new(Resolution::default());
        let a = net.add_good("a");
        let b = net.add_good("b");
        net.add_producer("p", a, &[], Money::ZERO);
        net.add_producer("q", b, &[(a, 2)], Money::ZERO);
        assert!(!is_polytree(&net));
        assert!(has_input_complementarities(&net));
    }

    #[test]
    fn greedy_bad_has_cycles() {
        let net = fixtures::greedy_bad(fixtures::GREEDY_BAD_VALUE);
        assert!(!is_polytree(&net));
        assert!(has_input_complementarities(&net));
    }

    #[test]
    fn two_consumers_make_a_polytree_not_a_tree() {
        let mut net = fixtures::two_parallel();
        let h = net.add_good("h");
        net.add_producer("p2", h, &[], Money::ZERO);
        net.add_consumer("c2", &[(h, Money(1))]);
        assert!(is_polytree(&net));
        assert!(!is_tree(&net));
    }

    #[test]
    fn consumer_with_two_routes_to_one_source_is_a_cycle() {
        let mut net = Network::new(Resolution::default());
        let a = net.add_good("a");
        let b = net.add_good("b");
        let c = net.add_good("c");
        net.add_producer("src", a, &[], Money::ZERO);
        net.add_producer("pb", b, &[(a, 1)], Money::ZERO);
        net.add_producer("pc", c, &[(a, 1)], Money::ZERO);
        net.add_consumer("k", &[(b, Money(1)), (c, Money(1))]);
        assert!(!is_polytree(&net));
    }
}
