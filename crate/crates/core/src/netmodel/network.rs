//! Task dependency networks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::money::{Money, Resolution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GoodId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Consumer {
    /// Value per acceptable good, sorted by good id.
    pub values: Vec<(GoodId, Money)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Producer {
    pub output: GoodId,
    /// Input goods with unit multiplicity, sorted by good id.
    pub inputs: Vec<(GoodId, u32)>,
    pub cost: Money,
}

impl Producer {
    pub fn input_units(&self) -> u32 {
        self.inputs.iter().map(|&(_, k)| k).sum()
    }

    pub fn units_of(&self, g: GoodId) -> u32 {
        self.inputs.iter().find(|&&(h, _)| h == g).map_or(0, |&(_, k)| k)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AgentKind {
    Consumer(Consumer),
    Producer(Producer),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Agent {
    pub name: String,
    pub kind: AgentKind,
    /// Per-agent bidding overrides read from the network file.
    pub overrides: PolicyOverrides,
}

/// Optional per-agent deviations from the run-wide bidding configuration.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolicyOverrides {
    pub safe: Option<bool>,
    pub include_cost: Option<bool>,
}

impl Agent {
    pub fn consumer(&self) -> Option<&Consumer> {
        match &self.kind {
            AgentKind::Consumer(c) => Some(c),
            AgentKind::Producer(_) => None,
        }
    }

    pub fn producer(&self) -> Option<&Producer> {
        match &self.kind {
            AgentKind::Producer(p) => Some(p),
            AgentKind::Consumer(_) => None,
        }
    }

    pub fn is_consumer(&self) -> bool {
        matches!(self.kind, AgentKind::Consumer(_))
    }
}

/// Direction of a unit edge relative to the good.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dir {
    /// Agent provides the good (producer output).
    Provide,
    /// Agent acquires the good (input or consumption).
    Acquire,
}

/// One subscripted unit edge between an agent and a good.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub good: GoodId,
    pub agent: AgentId,
    pub dir: Dir,
    pub unit: u32,
}

impl Edge {
    pub fn provide(agent: AgentId, good: GoodId) -> Edge {
        Edge { good, agent, dir: Dir::Provide, unit: 0 }
    }

    pub fn acquire(agent: AgentId, good: GoodId, unit: u32) -> Edge {
        Edge { good, agent, dir: Dir::Acquire, unit }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    pub resolution: Resolution,
    pub goods: Vec<String>,
    pub agents: Vec<Agent>,
    /// Free-form description carried through the file format.
    pub note: Option<String>,
    /// Run-wide bidding defaults stored with the network.
    pub policy: FilePolicy,
}

/// Bidding defaults a network file may carry; CLI flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FilePolicy {
    pub safe: Option<bool>,
    pub include_cost: Option<bool>,
    pub delta_b: Option<Money>,
    pub delta_s: Option<Money>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    OutputInInputs { agent: String, good: String },
    NegativeCost { agent: String },
    NonPositiveValue { agent: String, good: String },
    EmptyValueMap { agent: String },
    ZeroUnits { agent: String, good: String },
    UnknownGood { agent: String, index: usize },
    DuplicateName { name: String },
    Cycle { goods: Vec<String> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutputInInputs { agent, good } => write!(f, "output in input set: {agent} ({good})"),
            Violation::NegativeCost { agent } => write!(f, "negative cost: {agent}"),
            Violation::NonPositiveValue { agent, good } => write!(f, "non-positive value: {agent} for {good}"),
            Violation::EmptyValueMap { agent } => write!(f, "empty value map: {agent}"),
            Violation::ZeroUnits { agent, good } => write!(f, "zero input units: {agent} ({good})"),
            Violation::UnknownGood { agent, index } => write!(f, "unknown good #{index} referenced by {agent}"),
            Violation::DuplicateName { name } => write!(f, "duplicate identifier: {name}"),
            Violation::Cycle { goods } => write!(f, "cycle through goods {}", goods.join(" -> ")),
        }
    }
}

/// Non-fatal findings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Warning {
    /// Nobody consumes this producer's output, so it can never be active.
    InertProducer { agent: String },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::InertProducer { agent } => write!(f, "output consumed by nobody: {agent}"),
        }
    }
}

impl Network {
    pub fn new(resolution: Resolution) -> Network {
        Network { resolution, goods: Vec::new(), agents: Vec::new(), note: None, policy: FilePolicy::default() }
    }

    pub fn add_good(&mut self, name: impl Into<String>) -> GoodId {
        self.goods.push(name.into());
        GoodId(self.goods.len() - 1)
    }

    pub fn add_consumer(&mut self, name: impl Into<String>, values: &[(GoodId, Money)]) -> AgentId {
        let mut values = values.to_vec();
        values.sort_by_key(|&(g, _)| g);
        self.agents.push(Agent {
            name: name.into(),
            kind: AgentKind::Consumer(Consumer { values }),
            overrides: PolicyOverrides::default(),
        });
        AgentId(self.agents.len() - 1)
    }

    pub fn add_producer(&mut self, name: impl Into<String>, output: GoodId, inputs: &[(GoodId, u32)], cost: Money) -> AgentId {
        let mut merged: BTreeMap<GoodId, u32> = BTreeMap::new();
        for &(g, k) in inputs {
            *merged.entry(g).or_default() += k;
        }
        self.agents.push(Agent {
            name: name.into(),
            kind: AgentKind::Producer(Producer { output, inputs: merged.into_iter().collect(), cost }),
            overrides: PolicyOverrides::default(),
        });
        AgentId(self.agents.len() - 1)
    }

    pub fn good_name(&self, g: GoodId) -> &str {
        &self.goods[g.0]
    }

    pub fn agent_name(&self, a: AgentId) -> &str {
        &self.agents[a.0].name
    }

    pub fn good_by_name(&self, name: &str) -> Option<GoodId> {
        self.goods.iter().position(|g| g == name).map(GoodId)
    }

    pub fn agent_by_name(&self, name: &str) -> Option<AgentId> {
        self.agents.iter().position(|a| a.name == name).map(AgentId)
    }

    pub fn agent(&self, a: AgentId) -> &Agent {
        &self.agents[a.0]
    }

    pub fn producer(&self, a: AgentId) -> Option<&Producer> {
        self.agents[a.0].producer()
    }

    pub fn consumer(&self, a: AgentId) -> Option<&Consumer> {
        self.agents[a.0].consumer()
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = AgentId> + '_ {
        (0..self.agents.len()).map(AgentId)
    }

    pub fn good_ids(&self) -> impl Iterator<Item = GoodId> + '_ {
        (0..self.goods.len()).map(GoodId)
    }

    pub fn consumers(&self) -> impl Iterator<Item = (AgentId, &Consumer)> + '_ {
        self.agents.iter().enumerate().filter_map(|(i, a)| a.consumer().map(|c| (AgentId(i), c)))
    }

    pub fn producers(&self) -> impl Iterator<Item = (AgentId, &Producer)> + '_ {
        self.agents.iter().enumerate().filter_map(|(i, a)| a.producer().map(|p| (AgentId(i), p)))
    }

    pub fn num_consumers(&self) -> usize {
        self.consumers().count()
    }

    pub fn num_producers(&self) -> usize {
        self.producers().count()
    }

    /// Every unit edge of the network in canonical order.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            let id = AgentId(i);
            match &a.kind {
                AgentKind::Consumer(c) => {
                    for &(g, _) in &c.values {
                        out.push(Edge::acquire(id, g, 0));
                    }
                }
                AgentKind::Producer(p) => {
                    for &(g, k) in &p.inputs {
                        for u in 0..k {
                            out.push(Edge::acquire(id, g, u));
                        }
                    }
                    out.push(Edge::provide(id, p.output));
                }
            }
        }
        out.sort();
        out
    }

    pub fn has_edge(&self, e: &Edge) -> bool {
        match (&self.agents.get(e.agent.0).map(|a| &a.kind), e.dir) {
            (Some(AgentKind::Consumer(c)), Dir::Acquire) => e.unit == 0 && c.values.iter().any(|&(g, _)| g == e.good),
            (Some(AgentKind::Producer(p)), Dir::Acquire) => e.unit < p.units_of(e.good),
            (Some(AgentKind::Producer(p)), Dir::Provide) => e.unit == 0 && p.output == e.good,
            _ => false,
        }
    }

    /// Producers whose output is `g`.
    pub fn producers_of(&self, g: GoodId) -> Vec<AgentId> {
        self.producers().filter(|(_, p)| p.output == g).map(|(a, _)| a).collect()
    }

    /// Agents acquiring `g` (consumers valuing it and producers using it).
    pub fn users_of(&self, g: GoodId) -> Vec<AgentId> {
        self.agents
            .iter()
            .enumerate()
            .filter(|(_, a)| match &a.kind {
                AgentKind::Consumer(c) => c.values.iter().any(|&(h, _)| h == g),
                AgentKind::Producer(p) => p.units_of(g) > 0,
            })
            .map(|(i, _)| AgentId(i))
            .collect()
    }

    /// All agents adjacent to `g`, in id order.
    pub fn bidders_of(&self, g: GoodId) -> Vec<AgentId> {
        let mut v = self.producers_of(g);
        v.extend(self.users_of(g));
        v.sort();
        v.dedup();
        v
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.goods.len();
        let mut seen = BTreeSet::new();
        for name in self.goods.iter().chain(self.agents.iter().map(|a| &a.name)) {
            if !seen.insert(name.as_str()) {
                out.push(Violation::DuplicateName { name: name.clone() });
            }
        }
        let gname = |g: GoodId| self.goods.get(g.0).cloned().unwrap_or_else(|| format!("#{}", g.0));
        for a in &self.agents {
            match &a.kind {
                AgentKind::Consumer(c) => {
                    if c.values.is_empty() {
                        out.push(Violation::EmptyValueMap { agent: a.name.clone() });
                    }
                    for &(g, v) in &c.values {
                        if g.0 >= n {
                            out.push(Violation::UnknownGood { agent: a.name.clone(), index: g.0 });
                        } else if !v.is_positive() {
                            out.push(Violation::NonPositiveValue { agent: a.name.clone(), good: gname(g) });
                        }
                    }
                }
                AgentKind::Producer(p) => {
                    if p.output.0 >= n {
                        out.push(Violation::UnknownGood { agent: a.name.clone(), index: p.output.0 });
                    }
                    if p.cost.is_negative() {
                        out.push(Violation::NegativeCost { agent: a.name.clone() });
                    }
                    for &(g, k) in &p.inputs {
                        if g.0 >= n {
                            out.push(Violation::UnknownGood { agent: a.name.clone(), index: g.0 });
                        }
                        if k == 0 {
                            out.push(Violation::ZeroUnits { agent: a.name.clone(), good: gname(g) });
                        }
                        if g == p.output {
                            out.push(Violation::OutputInInputs { agent: a.name.clone(), good: gname(g) });
                        }
                    }
                }
            }
        }
        if out.iter().any(|v| matches!(v, Violation::UnknownGood { .. })) {
            return out;
        }
        if let Some(cycle) = self.find_cycle() {
            // A self-loop is already reported as output-in-inputs.
            if cycle.len() > 1 {
                out.push(Violation::Cycle { goods: cycle.into_iter().map(gname).collect() });
            }
        }
        out
    }

    pub fn warnings(&self) -> Vec<Warning> {
        self.producers()
            .filter(|(_, p)| self.users_of(p.output).is_empty())
            .map(|(a, _)| Warning::InertProducer { agent: self.agent_name(a).to_string() })
            .collect()
    }

    /// Good-level successor lists: `g -> output of every producer using g`.
    fn good_successors(&self) -> Vec<Vec<GoodId>> {
        let mut succ = vec![Vec::new(); self.goods.len()];
        for (_, p) in self.producers() {
            for &(g, _) in &p.inputs {
                succ[g.0].push(p.output);
            }
        }
        for s in &mut succ {
            s.sort();
            s.dedup();
        }
        succ
    }

    fn find_cycle(&self) -> Option<Vec<GoodId>> {
        let succ = self.good_successors();
        let n = self.goods.len();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut color = vec![0u8; n];
        let mut parent = vec![usize::MAX; n];
        for root in 0..n {
            if color[root] != 0 {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            color[root] = 1;
            while let Some(&mut (v, ref mut i)) = stack.last_mut() {
                if *i < succ[v].len() {
                    let w = succ[v][*i].0;
                    *i += 1;
                    if color[w] == 1 {
                        let mut cyc = vec![GoodId(w)];
                        let mut x = v;
                        while x != w {
                            cyc.push(GoodId(x));
                            x = parent[x];
                        }
                        cyc.push(GoodId(w));
                        cyc.reverse();
                        return Some(cyc);
                    }
                    if color[w] == 0 {
                        color[w] = 1;
                        parent[w] = v;
                        stack.push((w, 0));
                    }
                } else {
                    color[v] = 2;
                    stack.pop();
                }
            }
        }
        None
    }

    /// Goods ordered so every input precedes the outputs made from it.
    pub fn goods_topological(&self) -> Vec<GoodId> {
        let succ = self.good_successors();
        let n = self.goods.len();
        let mut indeg = vec![0usize; n];
        for s in &succ {
            for g in s {
                indeg[g.0] += 1;
            }
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&g| indeg[g] == 0).collect();
        let mut out = Vec::with_capacity(n);
        while let Some(g) = ready.pop_first() {
            out.push(GoodId(g));
            for h in &succ[g] {
                indeg[h.0] -= 1;
                if indeg[h.0] == 0 {
                    ready.insert(h.0);
                }
            }
        }
        assert_eq!(out.len(), n, "network is cyclic");
        out
    }

    /// Distance from a producer to the furthest consumer; `None` when nobody
    /// consumes its output.
    pub fn c_level(&self, a: AgentId) -> Option<u32> {
        let levels = self.c_levels();
        levels[a.0]
    }

    fn c_levels(&self) -> Vec<Option<u32>> {
        let mut level: Vec<Option<u32>> = vec![None; self.agents.len()];
        let order = self.goods_topological();
        // Visit outputs downstream first.
        for &g in order.iter().rev() {
            for a in self.producers_of(g) {
                let mut best: Option<u32> = None;
                let mut consumed = false;
                for u in self.users_of(g) {
                    consumed = true;
                    if self.agents[u.0].producer().is_some() {
                        if let Some(l) = level[u.0] {
                            best = Some(best.map_or(l, |b: u32| b.max(l)));
                        }
                    }
                }
                level[a.0] = match best {
                    Some(l) => Some(l + 1),
                    None if consumed && self.users_of(g).iter().any(|u| self.agents[u.0].is_consumer()) => Some(1),
                    None => None,
                };
            }
        }
        level
    }

    /// Distance from a producer to the furthest input-less producer upstream.
    pub fn s_level(&self, a: AgentId) -> Option<u32> {
        let p = self.producer(a)?;
        let mut memo = vec![None; self.agents.len()];
        Some(self.s_level_rec(a, p, &mut memo))
    }

    fn s_level_rec(&self, a: AgentId, p: &Producer, memo: &mut Vec<Option<u32>>) -> u32 {
        if let Some(l) = memo[a.0] {
            return l;
        }
        let mut best = 0;
        let mut any = false;
        for &(g, _) in &p.inputs {
            for b in self.producers_of(g) {
                let q = self.producer(b).expect("producer");
                let l = self.s_level_rec(b, q, memo);
                best = best.max(l + 1);
                any = true;
            }
        }
        // An input with no producer still counts as one step upstream.
        let l = if p.inputs.is_empty() { 0 } else if any { best } else { 1 };
        memo[a.0] = Some(l);
        l
    }

    pub fn params(&self) -> NetworkParams {
        let levels = self.c_levels();
        NetworkParams {
            max_c_level: levels.iter().flatten().copied().max().unwrap_or(0),
            max_inputs: self.producers().map(|(_, p)| p.input_units()).max().unwrap_or(0),
            max_goods_per_consumer: self.consumers().map(|(_, c)| c.values.len() as u32).max().unwrap_or(0),
            max_value: self.consumers().flat_map(|(_, c)| c.values.iter().map(|&(_, v)| v)).max().unwrap_or(Money::ZERO),
        }
    }

    pub fn value_of(&self, c: AgentId, g: GoodId) -> Option<Money> {
        self.consumer(c)?.values.iter().find(|&&(h, _)| h == g).map(|&(_, v)| v)
    }
}

/// Structural maxima used by the bid-count and bid-size bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkParams {
    /// Largest defined C-level.
    pub max_c_level: u32,
    /// Largest number of input units of any producer.
    pub max_inputs: u32,
    /// Largest number of goods any consumer values.
    pub max_goods_per_consumer: u32,
    /// Largest consumer value.
    pub max_value: Money,
}

impl NetworkParams {
    /// Ceiling on any buy offer: `R + 2 * phi * delta_b`.
    pub fn max_buy_offer(&self, delta_b: Money) -> Money {
        self.max_value + delta_b * (2 * self.max_c_level as i64)
    }

    /// Ceiling on the number of buy offers one agent places.
    ///
    /// Consumers bid on one good at a time but may cycle over all of theirs,
    /// so the multiplier is the larger of the input count and the widest
    /// consumer preference set.
    pub fn max_buy_offers_per_agent(&self, delta_b: Money) -> i64 {
        let width = self.max_inputs.max(self.max_goods_per_consumer).max(1) as i64;
        width * (self.max_buy_offer(delta_b).units() / delta_b.units().max(1)) + width
    }

    /// Ceiling on the number of output offers one producer places.
    pub fn max_output_offers(&self, delta_b: Money, delta_s: Money) -> i64 {
        let step = delta_b.max(delta_s).units().max(1);
        self.max_buy_offer(delta_b).units() / step + 1
    }
}
