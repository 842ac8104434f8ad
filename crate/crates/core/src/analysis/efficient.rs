//! Maximum-value feasible allocations.
//!
//! An allocation is fixed by the set of active producers and the good each
//! consumer takes, if any; unit edges then follow canonically. Both search
//! modes walk that space, checking integer material balance per good.

use crate::netmodel::{AgentId, Allocation, Edge, GoodId, Money, Network};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Every producer subset times every consumer choice.
    Exhaustive,
    BranchAndBound,
    /// Exhaustive up to [`EXHAUSTIVE_LIMIT`] agents, branch-and-bound above.
    Auto,
}

pub const EXHAUSTIVE_LIMIT: usize = 12;
/// Optima kept when several allocations tie.
pub const DEFAULT_MAX_OPTIMA: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Optima {
    pub value: Money,
    /// Distinct allocations attaining `value`, in search order. Never empty:
    /// the empty allocation is always feasible.
    pub allocations: Vec<Allocation>,
    /// True if more optima exist than were kept.
    pub truncated: bool,
}

/// One efficient allocation and its value.
pub fn efficient_allocation(net: &Network) -> (Allocation, Money) {
    let opt = efficient_optima(net, Mode::Auto, 1);
    (opt.allocations.into_iter().next().unwrap_or_default(), opt.value)
}

pub fn efficient_optima(net: &Network, mode: Mode, max_optima: usize) -> Optima {
    let mode = match mode {
        Mode::Auto if net.agents.len() <= EXHAUSTIVE_LIMIT => Mode::Exhaustive,
        Mode::Auto => Mode::BranchAndBound,
        m => m,
    };
    let problem = Problem::new(net);
    let mut best = Best { value: Money::ZERO, choices: Vec::new(), truncated: false, max: max_optima.max(1) };
    match mode {
        Mode::Exhaustive => problem.exhaustive(&mut best),
        _ => problem.branch_and_bound(&mut best),
    }
    if best.choices.is_empty() {
        // Only the empty allocation remains when nothing positive is
        // reachable; it ties with any zero-value search hit.
        best.choices.push(Choice { active: vec![false; problem.producers.len()], take: vec![None; problem.consumers.len()] });
    }
    let allocations = best.choices.iter().map(|c| problem.allocation(c)).collect();
    Optima { value: best.value, allocations, truncated: best.truncated }
}

/// Cheapest total producer cost of a solution delivering `g` to `c`, with
/// every other consumer's demand removed. `None` if no such solution exists.
pub fn min_cost_serving(net: &Network, c: AgentId, g: GoodId) -> Option<Money> {
    net.value_of(c, g)?;
    let big = net.producers().map(|(_, p)| p.cost).sum::<Money>() + Money(1);
    let mut solo = Network::new(net.resolution);
    solo.goods = net.goods.clone();
    for (a, p) in net.producers() {
        solo.add_producer(net.agent_name(a), p.output, &p.inputs, p.cost);
    }
    solo.add_consumer(net.agent_name(c), &[(g, big)]);
    let (alloc, value) = efficient_allocation(&solo);
    if alloc.served_consumers(&solo).is_empty() {
        None
    } else {
        Some(big - value)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Choice {
    active: Vec<bool>,
    take: Vec<Option<GoodId>>,
}

struct Best {
    value: Money,
    choices: Vec<Choice>,
    truncated: bool,
    max: usize,
}

impl Best {
    fn offer(&mut self, value: Money, choice: &Choice) {
        if value > self.value {
            self.value = value;
            self.choices.clear();
            self.truncated = false;
        }
        if value == self.value {
            if self.choices.len() < self.max {
                self.choices.push(choice.clone());
            } else {
                self.truncated = true;
            }
        }
    }
}

struct Problem<'a> {
    net: &'a Network,
    producers: Vec<AgentId>,
    consumers: Vec<AgentId>,
}

impl<'a> Problem<'a> {
    fn new(net: &'a Network) -> Problem<'a> {
        Problem {
            net,
            producers: net.producers().map(|(a, _)| a).collect(),
            consumers: net.consumers().map(|(a, _)| a).collect(),
        }
    }

    fn allocation(&self, choice: &Choice) -> Allocation {
        let mut alloc = Allocation::new();
        for (i, &a) in self.producers.iter().enumerate() {
            if choice.active[i] {
                let p = self.net.producer(a).expect("producer");
                alloc.insert(Edge::provide(a, p.output));
                for &(g, k) in &p.inputs {
                    for u in 0..k {
                        alloc.insert(Edge::acquire(a, g, u));
                    }
                }
            }
        }
        for (i, &c) in self.consumers.iter().enumerate() {
            if let Some(g) = choice.take[i] {
                alloc.insert(Edge::acquire(c, g, 0));
            }
        }
        alloc
    }

    /// Net supply per good implied by a set of active producers.
    fn residual(&self, active: &[bool]) -> Vec<i64> {
        let mut r = vec![0i64; self.net.goods.len()];
        for (i, &a) in self.producers.iter().enumerate() {
            if active[i] {
                let p = self.net.producer(a).expect("producer");
                r[p.output.0] += 1;
                for &(g, k) in &p.inputs {
                    r[g.0] -= k as i64;
                }
            }
        }
        r
    }

    fn exhaustive(&self, best: &mut Best) {
        let n = self.producers.len();
        assert!(n < 63, "too many producers for exhaustive search");
        for mask in 0u64..(1u64 << n) {
            let active: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let residual = self.residual(&active);
            if residual.iter().any(|&r| r < 0) {
                continue;
            }
            let cost: Money =
                (0..n).filter(|&i| active[i]).map(|i| self.net.producer(self.producers[i]).unwrap().cost).sum();
            let mut take = vec![None; self.consumers.len()];
            self.every_consumer_choice(0, &mut take, &mut |take| {
                let mut left = residual.clone();
                let mut value = -cost;
                for (i, t) in take.iter().enumerate() {
                    if let Some(g) = *t {
                        left[g.0] -= 1;
                        value += self.net.value_of(self.consumers[i], g).expect("valued good");
                    }
                }
                if left.iter().all(|&r| r == 0) {
                    best.offer(value, &Choice { active: active.clone(), take: take.to_vec() });
                }
            });
        }
    }

    fn every_consumer_choice(&self, i: usize, take: &mut Vec<Option<GoodId>>, f: &mut dyn FnMut(&[Option<GoodId>])) {
        if i == self.consumers.len() {
            f(take);
            return;
        }
        take[i] = None;
        self.every_consumer_choice(i + 1, take, f);
        let goods: Vec<GoodId> =
            self.net.consumer(self.consumers[i]).expect("consumer").values.iter().map(|&(g, _)| g).collect();
        for g in goods {
            take[i] = Some(g);
            self.every_consumer_choice(i + 1, take, f);
        }
        take[i] = None;
    }

    fn branch_and_bound(&self, best: &mut Best) {
        let order = self.producer_order();
        let goods = self.net.goods.len();
        // Producers of each good not yet decided, indexed by search depth.
        let mut undecided = vec![vec![0i64; goods]; order.len() + 1];
        for d in (0..order.len()).rev() {
            undecided[d] = undecided[d + 1].clone();
            undecided[d][self.net.producer(self.producers[order[d]]).unwrap().output.0] += 1;
        }
        // Consumers from index i onward able to absorb each good.
        let mut takers = vec![vec![0i64; goods]; self.consumers.len() + 1];
        let mut best_tail = vec![Money::ZERO; self.consumers.len() + 1];
        for i in (0..self.consumers.len()).rev() {
            takers[i] = takers[i + 1].clone();
            let c = self.net.consumer(self.consumers[i]).unwrap();
            for &(g, _) in &c.values {
                takers[i][g.0] += 1;
            }
            best_tail[i] = best_tail[i + 1] + c.values.iter().map(|&(_, v)| v).max().unwrap_or(Money::ZERO);
        }
        let mut search = Search {
            p: self,
            order,
            undecided,
            takers,
            best_tail,
            residual: vec![0; goods],
            choice: Choice { active: vec![false; self.producers.len()], take: vec![None; self.consumers.len()] },
        };
        search.producers(0, Money::ZERO, best);
    }

    /// Downstream producers first, so demand for a good is known before
    /// deciding its suppliers.
    fn producer_order(&self) -> Vec<usize> {
        let topo = self.net.goods_topological();
        let mut rank = vec![0usize; self.net.goods.len()];
        for (i, g) in topo.iter().enumerate() {
            rank[g.0] = i;
        }
        let mut order: Vec<usize> = (0..self.producers.len()).collect();
        order.sort_by_key(|&i| {
            let p = self.net.producer(self.producers[i]).unwrap();
            (std::cmp::Reverse(rank[p.output.0]), i)
        });
        order
    }
}

struct Search<'p, 'a> {
    p: &'p Problem<'a>,
    order: Vec<usize>,
    undecided: Vec<Vec<i64>>,
    takers: Vec<Vec<i64>>,
    best_tail: Vec<Money>,
    residual: Vec<i64>,
    choice: Choice,
}

impl Search<'_, '_> {
    fn hopeless(&self, bound: Money, best: &Best) -> bool {
        bound < best.value || (bound == best.value && best.choices.len() >= best.max)
    }

    fn producers(&mut self, d: usize, value: Money, best: &mut Best) {
        if self.hopeless(value + self.best_tail[0], best) {
            return;
        }
        // Goods short of supply need that many of their producers still open.
        if self.residual.iter().zip(&self.undecided[d]).any(|(&r, &u)| r + u < 0) {
            return;
        }
        if d == self.order.len() {
            if self.residual.iter().zip(&self.takers[0]).all(|(&r, &t)| r >= 0 && r <= t) {
                self.consumers(0, value, best);
            }
            return;
        }
        let i = self.order[d];
        let prod = self.p.net.producer(self.p.producers[i]).unwrap();
        self.producers(d + 1, value, best);
        self.residual[prod.output.0] += 1;
        for &(g, k) in &prod.inputs {
            self.residual[g.0] -= k as i64;
        }
        self.choice.active[i] = true;
        self.producers(d + 1, value - prod.cost, best);
        self.choice.active[i] = false;
        self.residual[prod.output.0] -= 1;
        for &(g, k) in &prod.inputs {
            self.residual[g.0] += k as i64;
        }
    }

    fn consumers(&mut self, i: usize, value: Money, best: &mut Best) {
        if self.hopeless(value + self.best_tail[i], best) {
            return;
        }
        if self.residual.iter().zip(&self.takers[i]).any(|(&r, &t)| r > t) {
            return;
        }
        if i == self.p.consumers.len() {
            if self.residual.iter().all(|&r| r == 0) {
                best.offer(value, &self.choice);
            }
            return;
        }
        let c = self.p.consumers[i];
        let values = self.p.net.consumer(c).unwrap().values.clone();
        for (g, v) in values {
            if self.residual[g.0] > 0 {
                self.residual[g.0] -= 1;
                self.choice.take[i] = Some(g);
                self.consumers(i + 1, value + v, best);
                self.choice.take[i] = None;
                self.residual[g.0] += 1;
            }
        }
        self.consumers(i + 1, value, best);
    }
}
