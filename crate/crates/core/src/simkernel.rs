//! Deterministic discrete-event execution of the auction protocol.
//!
//! Time advances in integer ticks. Every message carries a delay of at least
//! one tick drawn from the delay model; a channel (one agent, one auction,
//! one direction) never reorders. Auctions and agents handle everything
//! delivered in a tick as a batch and answer in the same tick. The kernel
//! watches the whole system, so quiescence is simply an empty queue.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{is_active, AgentState, PolicyConfig};
use crate::auction::{AuctionState, BidMessage, Clearing, PriceQuote, Rejection, Side};
use crate::netmodel::{AgentId, AgentKind, Allocation, Edge, GoodId, Money, Network, PriceSystem};

pub const DEFAULT_EVENT_CAP: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Bid,
    Quote,
}

/// One delay rule; unset fields match anything.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<MessageKind>,
    /// Agent name at either end of the message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub good: Option<String>,
    /// Inclusive lower bound on the send tick.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_tick: Option<u64>,
    /// Exclusive upper bound on the send tick.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until_tick: Option<u64>,
    pub delay: u64,
}

/// Scripted delays: the first matching rule wins, else `default`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayScript {
    #[serde(default = "one")]
    pub default: u64,
    #[serde(default)]
    pub rules: Vec<DelayRule>,
}

fn one() -> u64 {
    1
}

impl DelayScript {
    fn delay(&self, net: &Network, kind: MessageKind, agent: AgentId, good: GoodId, tick: u64) -> u64 {
        let hit = self.rules.iter().find(|r| {
            r.kind.is_none_or(|k| k == kind)
                && r.agent.as_deref().is_none_or(|n| n == net.agent_name(agent))
                && r.good.as_deref().is_none_or(|n| n == net.good_name(good))
                && r.from_tick.is_none_or(|t| tick >= t)
                && r.until_tick.is_none_or(|t| tick < t)
        });
        hit.map_or(self.default, |r| r.delay).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DelayModel {
    Sync,
    /// Inclusive range of ticks, drawn from the run's seeded generator.
    Uniform { min: u64, max: u64 },
    Script(DelayScript),
}

impl DelayModel {
    /// Parses `sync` or `uniform:MIN,MAX`. Scripts are loaded separately.
    pub fn parse(text: &str) -> Option<DelayModel> {
        if text == "sync" {
            return Some(DelayModel::Sync);
        }
        let rest = text.strip_prefix("uniform:").or_else(|| text.strip_prefix("uniform"))?;
        let rest = rest.trim_start_matches('(').trim_end_matches(')');
        let (a, b) = rest.split_once(',')?;
        let min: u64 = a.trim().parse().ok()?;
        let max: u64 = b.trim().parse().ok()?;
        (min >= 1 && min <= max).then_some(DelayModel::Uniform { min, max })
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub policy: PolicyConfig,
    pub delay: DelayModel,
    pub seed: u64,
    pub event_cap: u64,
    pub record_trace: bool,
    /// Check quasi-quiescence every tick and assert its consequences.
    pub monitor: bool,
    pub decommit: bool,
}

impl RunConfig {
    pub fn new(policy: PolicyConfig) -> RunConfig {
        RunConfig {
            policy,
            delay: DelayModel::Sync,
            seed: 0,
            event_cap: DEFAULT_EVENT_CAP,
            record_trace: false,
            monitor: true,
            decommit: false,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("event cap of {cap} exceeded at tick {tick}")]
    EventCap { cap: u64, tick: u64 },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Bid(BidMessage),
    Quote(PriceQuote),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub id: u64,
    /// The agent end of the channel; auctions are named by `good`.
    pub agent: AgentId,
    pub good: GoodId,
    pub payload: Payload,
    pub sent: u64,
    pub delivery: u64,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::Bid(_) => MessageKind::Bid,
            Payload::Quote(_) => MessageKind::Quote,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    BidAccept,
    BidReject,
    Quote,
    Clear,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub seq: u64,
    pub tick: u64,
    pub good: GoodId,
    pub kind: EventKind,
    pub agent: Option<AgentId>,
    pub bid_id: Option<u64>,
    pub prices: Vec<Money>,
    pub price: Option<Money>,
    pub ask: Option<Money>,
    pub winning: Vec<u32>,
    pub reason: Option<Rejection>,
}

/// A trade from the final clearing; every unit trades at the auction price.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Contract {
    pub good: GoodId,
    pub buyer: AgentId,
    pub unit: u32,
    pub seller: AgentId,
    pub price: Money,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecommitEntry {
    /// Inactive producer dropping the contract.
    pub producer: AgentId,
    pub contract: Contract,
    /// Zero for dead ends of the cleared allocation, one more per cascade step.
    pub round: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecommitOutcome {
    pub allocation: Allocation,
    pub contracts: Vec<Contract>,
    pub log: Vec<DecommitEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BidCounts {
    /// Bid messages sent.
    pub messages: u64,
    /// Bid messages sent while a consumer or an active producer.
    pub meaningful: u64,
    /// Individual buy offer prices placed, one per unit changed.
    pub buy_offers: u64,
    /// Sell offers placed, not counting the empty registration.
    pub sell_offers: u64,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub events: Vec<TraceEvent>,
    pub bids: Vec<BidCounts>,
    pub delivered: u64,
    pub rejections: u64,
    pub max_buy_offer: Money,
    pub quasi_quiescence_tick: Option<u64>,
    pub quiescence_tick: u64,
    pub first_quasi_state: Option<(PriceSystem, Allocation)>,
    pub prices: PriceSystem,
    pub asks: Vec<Money>,
    pub allocation: Allocation,
    pub contracts: Vec<Contract>,
    pub dead_ends: BTreeSet<AgentId>,
    pub decommit: Option<DecommitOutcome>,
    /// Human-readable failures of the runtime property monitors.
    pub violations: Vec<String>,
    /// Quasi-quiescent ticks that are not valid solutions while some
    /// consumer's price is below its value but within `delta_b` of it.
    pub near_value_states: u64,
}

impl RunTrace {
    pub fn total_bids(&self) -> u64 {
        self.bids.iter().map(|b| b.messages).sum()
    }
}

/// Bids sent by consumers and by producers active when they sent them.
pub fn count_meaningful_bids(trace: &RunTrace) -> u64 {
    trace.bids.iter().map(|b| b.meaningful).sum()
}

/// Allocation and contracts implied by a set of clearings.
pub fn allocation_of(clearings: &[Clearing]) -> (Allocation, Vec<Contract>) {
    let mut alloc = Allocation::new();
    let mut contracts = Vec::new();
    for (g, c) in clearings.iter().enumerate() {
        let good = GoodId(g);
        for m in &c.matches {
            alloc.insert(Edge::acquire(m.buy.bidder, good, m.buy.rank));
            alloc.insert(Edge::provide(m.sell.bidder, good));
            contracts.push(Contract { good, buyer: m.buy.bidder, unit: m.buy.rank, seller: m.sell.bidder, price: c.price });
        }
    }
    contracts.sort();
    (alloc, contracts)
}

fn allocation_from_contracts(contracts: &[Contract]) -> Allocation {
    Allocation::from_edges(
        contracts.iter().flat_map(|c| [Edge::acquire(c.buyer, c.good, c.unit), Edge::provide(c.seller, c.good)]),
    )
}

/// Inactive producers drop their positive-price input contracts; sellers
/// that lose their only output contract this way are processed next.
pub fn decommit(net: &Network, contracts: &[Contract]) -> DecommitOutcome {
    let mut live: Vec<Contract> = contracts.to_vec();
    let mut log = Vec::new();
    let mut round = 0;
    loop {
        let sellers: BTreeSet<AgentId> = live.iter().map(|c| c.seller).collect();
        let inactive = |a: AgentId| net.producer(a).is_some() && !sellers.contains(&a);
        let (drop, keep): (Vec<Contract>, Vec<Contract>) =
            live.iter().partition(|c| inactive(c.buyer) && c.price.is_positive());
        if drop.is_empty() {
            break;
        }
        log.extend(drop.iter().map(|&c| DecommitEntry { producer: c.buyer, contract: c, round }));
        live = keep;
        round += 1;
    }
    DecommitOutcome { allocation: allocation_from_contracts(&live), contracts: live, log }
}

/// Step-wise kernel. [`run`] drives it to quiescence.
pub struct Kernel<'a> {
    net: &'a Network,
    cfg: RunConfig,
    agents: Vec<AgentState>,
    auctions: Vec<AuctionState>,
    clearings: Vec<Clearing>,
    queue: BTreeMap<(u64, u64), Message>,
    channel_last: HashMap<(AgentId, GoodId, MessageKind), u64>,
    inflight_bids: Vec<u32>,
    inflight_input_bids: Vec<u32>,
    inflight_quotes: Vec<BTreeMap<(u64, u64), PriceQuote>>,
    rng: ChaCha8Rng,
    next_msg: u64,
    next_seq: u64,
    tick: u64,
    trace: RunTrace,
}

impl<'a> Kernel<'a> {
    /// Builds the kernel and sends every agent's opening bids at tick 0.
    pub fn new(net: &'a Network, cfg: RunConfig) -> Result<Kernel<'a>, KernelError> {
        let violations = net.validate();
        if let Some(v) = violations.first() {
            return Err(KernelError::InvalidNetwork(v.to_string()));
        }
        let policy = cfg.policy;
        let agents: Vec<AgentState> = net.agent_ids().map(|a| AgentState::new(net, a, &policy)).collect();
        let auctions = net
            .good_ids()
            .map(|g| AuctionState::new(g, net.bidders_of(g), policy.delta_b, policy.delta_s))
            .collect();
        let n = net.agents.len();
        let mut k = Kernel {
            net,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            agents,
            auctions,
            clearings: vec![Clearing { price: Money::ZERO, ask: Money::ZERO, matches: Vec::new() }; net.goods.len()],
            queue: BTreeMap::new(),
            channel_last: HashMap::new(),
            inflight_bids: vec![0; n],
            inflight_input_bids: vec![0; n],
            inflight_quotes: vec![BTreeMap::new(); n],
            next_msg: 0,
            next_seq: 0,
            tick: 0,
            trace: RunTrace {
                events: Vec::new(),
                bids: vec![BidCounts::default(); n],
                delivered: 0,
                rejections: 0,
                max_buy_offer: Money::ZERO,
                quasi_quiescence_tick: None,
                quiescence_tick: 0,
                first_quasi_state: None,
                prices: PriceSystem::zero(net),
                asks: vec![Money::ZERO; net.goods.len()],
                allocation: Allocation::new(),
                contracts: Vec::new(),
                dead_ends: BTreeSet::new(),
                decommit: None,
                violations: Vec::new(),
                near_value_states: 0,
            },
        };
        for a in 0..n {
            let bids = k.agents[a].initial_bids();
            for b in bids {
                k.send_bid(b, None);
            }
        }
        Ok(k)
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn auctions(&self) -> &[AuctionState] {
        &self.auctions
    }

    pub fn clearings(&self) -> &[Clearing] {
        &self.clearings
    }

    pub fn in_flight(&self) -> impl Iterator<Item = &Message> {
        self.queue.values()
    }

    fn delay(&mut self, kind: MessageKind, agent: AgentId, good: GoodId) -> u64 {
        match &self.cfg.delay {
            DelayModel::Sync => 1,
            DelayModel::Uniform { min, max } => self.rng.gen_range(*min..=*max),
            DelayModel::Script(s) => s.delay(self.net, kind, agent, good, self.tick),
        }
    }

    fn enqueue(&mut self, agent: AgentId, good: GoodId, payload: Payload) {
        self.next_msg += 1;
        let id = self.next_msg;
        let kind = match payload {
            Payload::Bid(_) => MessageKind::Bid,
            Payload::Quote(_) => MessageKind::Quote,
        };
        let d = self.delay(kind, agent, good);
        let last = self.channel_last.entry((agent, good, kind)).or_insert(0);
        let delivery = (self.tick + d).max(*last);
        *last = delivery;
        match &payload {
            Payload::Bid(_) => {
                self.inflight_bids[agent.0] += 1;
                if self.is_input_bid(agent, good) {
                    self.inflight_input_bids[agent.0] += 1;
                }
            }
            Payload::Quote(q) => {
                self.inflight_quotes[agent.0].insert((delivery, id), q.clone());
            }
        }
        self.queue.insert((delivery, id), Message { id, agent, good, payload, sent: self.tick, delivery });
    }

    fn producer_active(&self, a: AgentId) -> bool {
        match self.net.producer(a) {
            Some(p) => is_active(&self.clearings[p.output.0], a),
            None => false,
        }
    }

    fn send_bid(&mut self, bid: BidMessage, previous: Option<&[Money]>) {
        let a = bid.bidder;
        let meaningful = self.net.agent(a).is_consumer() || self.producer_active(a);
        let counts = &mut self.trace.bids[a.0];
        counts.messages += 1;
        if meaningful {
            counts.meaningful += 1;
        }
        let changed = bid.prices.iter().enumerate().filter(|(i, p)| previous.and_then(|v| v.get(*i)) != Some(p)).count() as u64;
        match bid.side {
            Side::Buy => counts.buy_offers += changed,
            Side::Sell => counts.sell_offers += changed,
        }
        if bid.side == Side::Buy {
            if let Some(&m) = bid.prices.iter().max() {
                self.trace.max_buy_offer = self.trace.max_buy_offer.max(m);
            }
        }
        self.enqueue(a, bid.good, Payload::Bid(bid));
    }

    fn log(&mut self, mut ev: TraceEvent) {
        if self.cfg.record_trace {
            self.next_seq += 1;
            ev.seq = self.next_seq;
            self.trace.events.push(ev);
        }
    }

    fn event(&self, good: GoodId, kind: EventKind) -> TraceEvent {
        TraceEvent {
            seq: 0,
            tick: self.tick,
            good,
            kind,
            agent: None,
            bid_id: None,
            prices: Vec::new(),
            price: None,
            ask: None,
            winning: Vec::new(),
            reason: None,
        }
    }

    pub fn is_quiescent(&self) -> bool {
        self.queue.is_empty()
    }

    fn is_input_bid(&self, agent: AgentId, good: GoodId) -> bool {
        self.net.producer(agent).is_some_and(|p| p.output != good)
    }

    /// Every consumer and active producer has had its bids received and
    /// answered, and would not rebid on any quote it holds or that is on
    /// its way. Inactive producers may still move their output offers, but
    /// an input offer sent while active must have arrived.
    pub fn is_quasi_quiescent(&self) -> bool {
        let policy = self.cfg.policy;
        self.net.agent_ids().all(|a| {
            if !self.net.agent(a).is_consumer() && !self.producer_active(a) {
                return self.inflight_input_bids[a.0] == 0;
            }
            if self.inflight_bids[a.0] > 0 {
                return false;
            }
            let mut probe = self.agents[a.0].clone();
            if !probe.react(&policy).is_empty() {
                return false;
            }
            self.inflight_quotes[a.0].values().all(|q| !probe.receive(q) || probe.react(&policy).is_empty())
                && probe.settled()
        })
    }

    fn current_state(&self) -> (PriceSystem, Allocation) {
        let prices = PriceSystem { prices: self.clearings.iter().map(|c| c.price).collect() };
        (prices, allocation_of(&self.clearings).0)
    }

    fn monitor(&mut self) {
        let qq = self.is_quasi_quiescent();
        match (&self.trace.first_quasi_state, qq) {
            (None, true) => {
                self.trace.quasi_quiescence_tick = Some(self.tick);
                let state = self.current_state();
                self.trace.first_quasi_state = Some(state);
            }
            (Some(_), false) => {
                let msg = format!("quasi-quiescence lost at tick {}", self.tick);
                self.trace.violations.push(msg);
            }
            _ => {}
        }
        if qq {
            let (prices, alloc) = self.current_state();
            if let Some((p0, a0)) = &self.trace.first_quasi_state {
                if *p0 != prices || *a0 != alloc {
                    let msg = format!("prices or allocation moved after quasi-quiescence at tick {}", self.tick);
                    self.trace.violations.push(msg);
                }
            }
            let net = self.net;
            let db = self.cfg.policy.delta_b;
            let below = |slack: Money| {
                net.consumers().any(|(_, c)| c.values.iter().any(|&(g, v)| prices.get(g) + slack < v))
            };
            // A consumer within delta_b of its value stops bidding without
            // winning, so only a price at least delta_b below value forces a win.
            let affordable = below(db - Money(1));
            if below(Money(0)) && !alloc.is_valid_solution(net, &prices).unwrap_or(false) {
                if affordable {
                    let msg = format!("quasi-quiescent state at tick {} with an affordable good is not a valid solution", self.tick);
                    self.trace.violations.push(msg);
                } else {
                    self.trace.near_value_states += 1;
                }
            }
        }
    }

    /// Delivers every message due at the next tick and lets recipients
    /// answer. Returns false once quiescent.
    pub fn step(&mut self) -> Result<bool, KernelError> {
        let Some((&(t, _), _)) = self.queue.first_key_value() else {
            return Ok(false);
        };
        self.tick = t;
        let mut dirty_auctions = BTreeSet::new();
        let mut dirty_agents = BTreeSet::new();
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 != t {
                break;
            }
            let msg = entry.remove();
            self.trace.delivered += 1;
            if self.trace.delivered > self.cfg.event_cap {
                return Err(KernelError::EventCap { cap: self.cfg.event_cap, tick: t });
            }
            match msg.payload {
                Payload::Bid(bid) => {
                    self.inflight_bids[msg.agent.0] -= 1;
                    if self.is_input_bid(msg.agent, msg.good) {
                        self.inflight_input_bids[msg.agent.0] -= 1;
                    }
                    let result = self.auctions[msg.good.0].submit_bid(&bid);
                    let mut ev = self.event(msg.good, EventKind::BidAccept);
                    ev.agent = Some(bid.bidder);
                    ev.bid_id = Some(bid.bid_id);
                    ev.prices = bid.prices.clone();
                    match result {
                        Ok(_) => {
                            if self.auctions[msg.good.0].is_open() {
                                dirty_auctions.insert(msg.good);
                            }
                        }
                        Err(r) => {
                            self.trace.rejections += 1;
                            ev.kind = EventKind::BidReject;
                            ev.reason = Some(r);
                        }
                    }
                    self.log(ev);
                }
                Payload::Quote(q) => {
                    self.inflight_quotes[msg.agent.0].remove(&(msg.delivery, msg.id));
                    if self.agents[msg.agent.0].receive(&q) {
                        dirty_agents.insert(msg.agent);
                    }
                }
            }
        }
        for g in dirty_auctions {
            let clearing = self.auctions[g.0].compute_clearing();
            let bidders: Vec<AgentId> = self.auctions[g.0].bidders().collect();
            for a in bidders {
                let q = self.auctions[g.0].quote_with(&clearing, a);
                let mut ev = self.event(g, EventKind::Quote);
                ev.agent = Some(a);
                ev.bid_id = Some(q.bid_id);
                ev.price = Some(q.price);
                ev.ask = Some(q.ask);
                ev.winning = q.winning.clone();
                self.log(ev);
                self.enqueue(a, g, Payload::Quote(q));
            }
            self.clearings[g.0] = clearing;
        }
        let policy = self.cfg.policy;
        for a in dirty_agents {
            let before: Vec<(GoodId, Vec<Money>)> =
                self.agents[a.0].slots().iter().map(|s| (s.good, s.prices.clone())).collect();
            let bids = self.agents[a.0].react(&policy);
            for b in bids {
                let prev = before.iter().find(|(g, _)| *g == b.good).map(|(_, p)| p.clone());
                self.send_bid(b, prev.as_deref());
            }
        }
        if self.cfg.monitor {
            self.monitor();
        }
        Ok(true)
    }

    /// Clears every auction and assembles the trace. Panics unless quiescent.
    pub fn finish(mut self) -> RunTrace {
        assert!(self.is_quiescent(), "finish requires quiescence");
        let net = self.net;
        let mut clearings = Vec::with_capacity(self.auctions.len());
        for g in net.good_ids() {
            let c = self.auctions[g.0].clear(true).expect("quiescent");
            let mut ev = self.event(g, EventKind::Clear);
            ev.price = Some(c.price);
            ev.ask = Some(c.ask);
            self.log(ev);
            clearings.push(c);
        }
        if self.cfg.monitor {
            if !self.is_quasi_quiescent() {
                self.trace.violations.push("quiescent state is not quasi-quiescent".to_string());
            }
            if self.trace.quasi_quiescence_tick.is_none() {
                // Reached without any tick passing, e.g. an empty network.
                self.trace.quasi_quiescence_tick = Some(self.tick);
                self.trace.first_quasi_state = Some(self.current_state());
            }
        }
        let (alloc, contracts) = allocation_of(&clearings);
        let prices = PriceSystem { prices: clearings.iter().map(|c| c.price).collect() };
        if self.cfg.monitor {
            if let Some((p0, a0)) = &self.trace.first_quasi_state {
                if *p0 != prices || *a0 != alloc {
                    self.trace.violations.push("final state differs from the first quasi-quiescent state".to_string());
                }
            }
        }
        self.trace.quiescence_tick = self.tick;
        self.trace.asks = clearings.iter().map(|c| c.ask).collect();
        self.trace.dead_ends = alloc.dead_ends(net);
        if self.cfg.decommit {
            self.trace.decommit = Some(decommit(net, &contracts));
        }
        self.trace.prices = prices;
        self.trace.allocation = alloc;
        self.trace.contracts = contracts;
        self.trace
    }
}

/// Runs the protocol to quiescence.
pub fn run(net: &Network, cfg: RunConfig) -> Result<RunTrace, KernelError> {
    let mut k = Kernel::new(net, cfg)?;
    if k.cfg.monitor {
        k.monitor();
    }
    while k.step()? {}
    Ok(k.finish())
}

#[derive(Serialize)]
struct TraceLine<'a> {
    seq: u64,
    tick: u64,
    good: &'a str,
    kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    agent: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bid_id: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    prices: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    price: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ask: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    winning: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'static str>,
}

#[derive(Serialize)]
struct SummaryLine {
    kind: &'static str,
    quasi_quiescence_tick: Option<u64>,
    quiescence_tick: u64,
    delivered: u64,
    bids: u64,
    meaningful_bids: u64,
    rejections: u64,
    prices: BTreeMap<String, String>,
    allocation: Vec<crate::netmodel::io::EdgeDoc>,
    violations: Vec<String>,
}

/// Line-delimited JSON: one record per event, then a summary record.
pub fn trace_lines(net: &Network, trace: &RunTrace) -> String {
    let res = &net.resolution;
    let mut out = String::new();
    for ev in &trace.events {
        let line = TraceLine {
            seq: ev.seq,
            tick: ev.tick,
            good: net.good_name(ev.good),
            kind: ev.kind,
            agent: ev.agent.map(|a| net.agent_name(a)),
            bid_id: ev.bid_id,
            prices: ev.prices.iter().map(|&p| res.format(p)).collect(),
            price: ev.price.map(|p| res.format(p)),
            ask: ev.ask.map(|p| res.format(p)),
            winning: ev.winning.clone(),
            reason: ev.reason.map(|r| r.as_str()),
        };
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
    }
    let summary = SummaryLine {
        kind: "summary",
        quasi_quiescence_tick: trace.quasi_quiescence_tick,
        quiescence_tick: trace.quiescence_tick,
        delivered: trace.delivered,
        bids: trace.total_bids(),
        meaningful_bids: count_meaningful_bids(trace),
        rejections: trace.rejections,
        prices: crate::netmodel::io::prices_doc(net, &trace.prices),
        allocation: crate::netmodel::io::allocation_docs(net, &trace.allocation),
        violations: trace.violations.clone(),
    };
    out.push_str(&serde_json::to_string(&summary).expect("serializable"));
    out.push('\n');
    out
}

/// Producers that hold inputs but sell nothing in the contract list.
pub fn inactive_buyers(net: &Network, contracts: &[Contract]) -> BTreeSet<AgentId> {
    let sellers: BTreeSet<AgentId> = contracts.iter().map(|c| c.seller).collect();
    contracts
        .iter()
        .map(|c| c.buyer)
        .filter(|&b| matches!(net.agent(b).kind, AgentKind::Producer(_)) && !sellers.contains(&b))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::Resolution;

    fn res() -> Resolution {
        Resolution::parse("0.01").unwrap()
    }

    fn m(s: &str) -> Money {
        res().money(s).unwrap()
    }

    fn cfg(db: &str, ds: &str) -> RunConfig {
        RunConfig::new(PolicyConfig::new(m(db), m(ds)))
    }

    fn two_agent(value: &str, cost: &str) -> Network {
        let mut n = Network::new(res());
        let g = n.add_good("g");
        n.add_consumer("c", &[(g, m(value))]);
        n.add_producer("p", g, &[], m(cost));
        n
    }

    #[test]
    fn two_agent_trade() {
        let net = two_agent("5", "2");
        let t = run(&net, cfg("1", "1")).unwrap();
        assert_eq!(t.allocation.edges.len(), 2);
        assert!(t.prices.get(GoodId(0)) >= m("2"));
        assert!(t.prices.get(GoodId(0)) <= m("5"));
        assert!(t.violations.is_empty(), "{:?}", t.violations);
        assert!(t.quasi_quiescence_tick.unwrap() <= t.quiescence_tick);
    }

    #[test]
    fn two_agent_bid_count_by_hand() {
        // Opening: consumer bids 0 and the input-less producer offers 2 at
        // once; the consumer raises 0 -> 1 -> 2 -> 3 where it wins.
        let net = two_agent("5", "2");
        let t = run(&net, cfg("1", "1")).unwrap();
        assert_eq!(t.bids[0].messages, 4);
        assert_eq!(t.bids[1].messages, 1);
        assert_eq!(t.prices.get(GoodId(0)), m("2"));
        assert_eq!(count_meaningful_bids(&t), 4);
    }

    #[test]
    fn costs_above_value_leave_nothing_allocated() {
        let net = two_agent("1", "3");
        let t = run(&net, cfg("0.5", "0.5")).unwrap();
        assert!(t.allocation.is_empty());
        assert!(t.violations.is_empty(), "{:?}", t.violations);
    }

    #[test]
    fn identical_seeds_identical_traces() {
        let net = two_agent("5", "2");
        let mut c = cfg("0.25", "0.25");
        c.delay = DelayModel::Uniform { min: 1, max: 7 };
        c.record_trace = true;
        c.seed = 42;
        let a = run(&net, c.clone()).unwrap();
        let b = run(&net, c).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(trace_lines(&net, &a), trace_lines(&net, &b));
    }

    #[test]
    fn fresh_kernel_is_not_quiescent() {
        let net = two_agent("5", "2");
        let k = Kernel::new(&net, cfg("1", "1")).unwrap();
        assert!(!k.is_quiescent());
        assert!(!k.is_quasi_quiescent());
    }

    #[test]
    fn losing_unserved_consumer_is_not_quasi_quiescent() {
        let net = two_agent("5", "2");
        let mut k = Kernel::new(&net, cfg("1", "1")).unwrap();
        // Run until the producer's first real offer is quoted to the consumer.
        while k.step().unwrap() {
            let c = &k.agents()[0];
            if let AgentState::Consumer(s) = c {
                if s.slots[0].quote.as_ref().is_some_and(|q| q.price > Money::ZERO) && !s.slots[0].wins(0) {
                    break;
                }
            }
        }
        assert!(!k.is_quasi_quiescent());
    }

    #[test]
    fn channel_order_is_preserved() {
        let net = two_agent("5", "2");
        let script = DelayScript {
            default: 1,
            rules: vec![DelayRule { kind: Some(MessageKind::Quote), agent: None, good: None, from_tick: None, until_tick: Some(2), delay: 9 }],
        };
        let mut c = cfg("1", "1");
        c.delay = DelayModel::Script(script);
        let mut k = Kernel::new(&net, c).unwrap();
        let mut last: HashMap<(AgentId, MessageKind), (u64, u64)> = HashMap::new();
        loop {
            for msg in k.in_flight() {
                let key = (msg.agent, msg.kind());
                if let Some(&(d, id)) = last.get(&key) {
                    if id < msg.id {
                        assert!(d <= msg.delivery);
                    }
                }
            }
            for msg in k.in_flight() {
                last.insert((msg.agent, msg.kind()), (msg.delivery, msg.id));
            }
            if !k.step().unwrap() {
                break;
            }
        }
    }

    #[test]
    fn event_cap_is_a_hard_failure() {
        let net = two_agent("50", "2");
        let mut c = cfg("0.01", "0.01");
        c.event_cap = 10;
        assert!(matches!(run(&net, c), Err(KernelError::EventCap { cap: 10, .. })));
    }

    #[test]
    fn delay_parsing() {
        assert_eq!(DelayModel::parse("sync"), Some(DelayModel::Sync));
        assert_eq!(DelayModel::parse("uniform:1,5"), Some(DelayModel::Uniform { min: 1, max: 5 }));
        assert_eq!(DelayModel::parse("uniform(2,3)"), Some(DelayModel::Uniform { min: 2, max: 3 }));
        assert_eq!(DelayModel::parse("uniform:0,5"), None);
        assert_eq!(DelayModel::parse("fast"), None);
    }

    fn contract(good: usize, buyer: usize, seller: usize, price: i64) -> Contract {
        Contract { good: GoodId(good), buyer: AgentId(buyer), unit: 0, seller: AgentId(seller), price: Money(price) }
    }

    /// Goods 0..3 in a line; producer i makes good i from good i-1; the
    /// consumer buys nothing from the top of the line.
    fn holder_chain() -> Network {
        let mut n = Network::new(res());
        let g: Vec<GoodId> = (0..4).map(|i| n.add_good(format!("g{i}"))).collect();
        n.add_consumer("c", &[(g[3], m("10"))]);
        n.add_producer("p0", g[0], &[], m("1"));
        for i in 1..4 {
            n.add_producer(format!("p{i}"), g[i], &[(g[i - 1], 1)], m("1"));
        }
        n
    }

    #[test]
    fn decommit_cascades_through_a_chain() {
        let net = holder_chain();
        // p3 holds g2 but sells nothing: p3 drops g2, then p2 drops g1, then p1 drops g0.
        let contracts = vec![contract(0, 2, 1, 100), contract(1, 3, 2, 200), contract(2, 4, 3, 300)];
        let out = decommit(&net, &contracts);
        assert!(out.contracts.is_empty());
        assert_eq!(out.log.len(), 3);
        assert_eq!(out.log.iter().map(|e| e.round).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(out.allocation.is_empty());
    }

    #[test]
    fn decommit_leaves_active_chains_alone() {
        let net = holder_chain();
        let contracts = vec![contract(0, 2, 1, 100), contract(1, 3, 2, 200), contract(2, 4, 3, 300), contract(3, 0, 4, 400)];
        let out = decommit(&net, &contracts);
        assert_eq!(out.contracts, contracts);
        assert!(out.log.is_empty());
    }

    #[test]
    fn decommit_keeps_zero_price_holdings() {
        let net = holder_chain();
        let contracts = vec![contract(0, 2, 1, 0)];
        let out = decommit(&net, &contracts);
        assert_eq!(out.contracts, contracts);
    }
}
