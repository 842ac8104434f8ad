//! Myopic bidding policies for consumers and producers.
//!
//! Agents only act on quotes that echo their latest bid in that auction.
//! [`AgentState::react`] is idempotent: calling it again without new quotes
//! produces no further bids, which lets the kernel ask whether an agent
//! would rebid by reacting on a clone.

use crate::auction::{BidMessage, Clearing, PriceQuote, Side};
use crate::netmodel::{AgentId, AgentKind, GoodId, Money, Network};

/// Run-wide bidding configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyConfig {
    /// Gate input raises on a settled, winning output offer.
    pub safe: bool,
    /// Add the production cost to the output offer.
    pub include_cost: bool,
    /// Re-offer the output on any rise in perceived cost, even one that
    /// stays below the standing offer. Off by default: the output then moves
    /// only once perceived cost exceeds the standing offer.
    pub reoffer_on_any_rise: bool,
    pub delta_b: Money,
    pub delta_s: Money,
}

impl PolicyConfig {
    pub fn new(delta_b: Money, delta_s: Money) -> PolicyConfig {
        PolicyConfig { safe: false, include_cost: true, reoffer_on_any_rise: false, delta_b, delta_s }
    }

    /// Applies network-file defaults; explicit settings are left alone by
    /// callers that build the config after reading the file.
    pub fn with_file_defaults(mut self, net: &Network) -> PolicyConfig {
        let p = &net.policy;
        if let Some(s) = p.safe {
            self.safe = s;
        }
        if let Some(c) = p.include_cost {
            self.include_cost = c;
        }
        if let Some(d) = p.delta_b {
            self.delta_b = d;
        }
        if let Some(d) = p.delta_s {
            self.delta_s = d;
        }
        self
    }
}

/// Price an input unit is expected to cost given the latest quote.
pub fn perceived_cost(winning: bool, quote: &PriceQuote, delta_b: Money) -> Money {
    if winning {
        quote.price
    } else {
        quote.ask.max(quote.price + delta_b)
    }
}

/// An agent's position in one auction.
#[derive(Clone, Debug)]
pub struct Slot {
    pub good: GoodId,
    pub side: Side,
    pub prices: Vec<Money>,
    /// Id of the latest bid sent here.
    pub bid_id: u64,
    /// Latest quote echoing `bid_id`, or the last such quote before it.
    pub quote: Option<PriceQuote>,
    /// A bid was sent and no quote has acknowledged it yet.
    pub pending: bool,
}

impl Slot {
    fn new(good: GoodId, side: Side, prices: Vec<Money>) -> Slot {
        Slot { good, side, prices, bid_id: 0, quote: None, pending: false }
    }

    fn settled_quote(&self) -> Option<&PriceQuote> {
        if self.pending {
            None
        } else {
            self.quote.as_ref()
        }
    }

    pub fn wins(&self, rank: usize) -> bool {
        self.quote.as_ref().is_some_and(|q| q.wins(rank))
    }
}

#[derive(Clone, Debug)]
pub struct ConsumerState {
    pub id: AgentId,
    pub values: Vec<(GoodId, Money)>,
    pub slots: Vec<Slot>,
    pub stopped: bool,
    next_bid: u64,
}

#[derive(Clone, Debug)]
pub struct ProducerState {
    pub id: AgentId,
    pub cost: Money,
    /// One slot per input good; `prices` holds one offer per unit.
    pub inputs: Vec<Slot>,
    pub output: Slot,
    pub safe: bool,
    pub include_cost: bool,
    /// Perceived total behind the latest output offer.
    pub offered_cost: Option<Money>,
    next_bid: u64,
}

#[derive(Clone, Debug)]
pub enum AgentState {
    Consumer(ConsumerState),
    Producer(ProducerState),
}

fn message(id: AgentId, next_bid: &mut u64, slot: &mut Slot) -> BidMessage {
    *next_bid += 1;
    slot.bid_id = *next_bid;
    slot.pending = true;
    BidMessage { bidder: id, good: slot.good, side: slot.side, prices: slot.prices.clone(), bid_id: *next_bid }
}

impl ConsumerState {
    /// Bid for the best affordable good, or stop when none is affordable.
    fn react(&mut self, cfg: &PolicyConfig) -> Vec<BidMessage> {
        if self.slots.iter().any(|s| s.settled_quote().is_none()) {
            return Vec::new();
        }
        if self.slots.iter().any(|s| s.wins(0)) {
            return Vec::new();
        }
        let mut best: Option<(usize, Money)> = None;
        for (i, s) in self.slots.iter().enumerate() {
            let q = s.quote.as_ref().expect("settled");
            let v = self.values[i].1;
            let surplus = v - q.price - cfg.delta_b;
            // Slots are in good-id order, so strict comparison keeps the lowest id on ties.
            if best.is_none_or(|(_, b)| surplus > b) {
                best = Some((i, surplus));
            }
        }
        match best {
            Some((i, surplus)) if !surplus.is_negative() => {
                self.stopped = false;
                let slot = &mut self.slots[i];
                let price = slot.quote.as_ref().expect("settled").price + cfg.delta_b;
                slot.prices = vec![price];
                vec![message(self.id, &mut self.next_bid, slot)]
            }
            _ => {
                self.stopped = true;
                Vec::new()
            }
        }
    }
}

impl ProducerState {
    /// Sum of per-unit perceived input costs, plus cost when configured.
    pub fn perceived_total(&self, delta_b: Money) -> Option<Money> {
        let mut total = if self.include_cost { self.cost } else { Money::ZERO };
        for s in &self.inputs {
            let q = s.quote.as_ref()?;
            for rank in 0..s.prices.len() {
                total += perceived_cost(q.wins(rank), q, delta_b);
            }
        }
        Some(total)
    }

    fn output_winning(&self) -> bool {
        self.output.settled_quote().is_some_and(|q| q.wins(0))
    }

    fn react(&mut self, cfg: &PolicyConfig) -> Vec<BidMessage> {
        let mut out = Vec::new();
        let Some(total) = self.perceived_total(cfg.delta_b) else {
            return out;
        };
        let new_output = match (self.output.prices.first(), self.offered_cost) {
            (None, _) => Some(total.max(Money::ZERO)),
            (Some(&beta), Some(prev)) if cfg.reoffer_on_any_rise && total > prev => {
                Some((beta + cfg.delta_s).max(total))
            }
            (Some(&beta), _) if !cfg.reoffer_on_any_rise && total > beta => Some((beta + cfg.delta_s).max(total)),
            _ => None,
        };
        let raise = self.output_winning() && !(self.safe && new_output.is_some());
        if raise {
            for i in 0..self.inputs.len() {
                let slot = &mut self.inputs[i];
                let Some(q) = slot.settled_quote() else { continue };
                let losing: Vec<usize> = (0..slot.prices.len()).filter(|&r| !q.wins(r)).collect();
                if losing.is_empty() {
                    continue;
                }
                for r in losing {
                    slot.prices[r] += cfg.delta_b;
                }
                out.push(message(self.id, &mut self.next_bid, slot));
            }
        }
        if let Some(price) = new_output {
            self.offered_cost = Some(total);
            self.output.prices = vec![price];
            out.push(message(self.id, &mut self.next_bid, &mut self.output));
        }
        out
    }
}

impl AgentState {
    pub fn new(net: &Network, id: AgentId, cfg: &PolicyConfig) -> AgentState {
        let agent = net.agent(id);
        match &agent.kind {
            AgentKind::Consumer(c) => AgentState::Consumer(ConsumerState {
                id,
                values: c.values.clone(),
                slots: c.values.iter().map(|&(g, _)| Slot::new(g, Side::Buy, vec![Money::ZERO])).collect(),
                stopped: false,
                next_bid: 0,
            }),
            AgentKind::Producer(p) => AgentState::Producer(ProducerState {
                id,
                cost: p.cost,
                inputs: p.inputs.iter().map(|&(g, k)| Slot::new(g, Side::Buy, vec![Money::ZERO; k as usize])).collect(),
                output: Slot::new(p.output, Side::Sell, Vec::new()),
                safe: agent.overrides.safe.unwrap_or(cfg.safe),
                include_cost: agent.overrides.include_cost.unwrap_or(cfg.include_cost),
                offered_cost: None,
                next_bid: 0,
            }),
        }
    }

    pub fn id(&self) -> AgentId {
        match self {
            AgentState::Consumer(c) => c.id,
            AgentState::Producer(p) => p.id,
        }
    }

    pub fn is_consumer(&self) -> bool {
        matches!(self, AgentState::Consumer(_))
    }

    pub fn slots(&self) -> Vec<&Slot> {
        match self {
            AgentState::Consumer(c) => c.slots.iter().collect(),
            AgentState::Producer(p) => p.inputs.iter().chain(std::iter::once(&p.output)).collect(),
        }
    }

    fn slot_mut(&mut self, good: GoodId) -> Option<&mut Slot> {
        match self {
            AgentState::Consumer(c) => c.slots.iter_mut().find(|s| s.good == good),
            AgentState::Producer(p) => {
                if p.output.good == good {
                    Some(&mut p.output)
                } else {
                    p.inputs.iter_mut().find(|s| s.good == good)
                }
            }
        }
    }

    /// Opening bids: zero on every wanted unit, and an empty registration
    /// in a producer's output auction. A producer without inputs already
    /// knows its perceived cost and offers it at once.
    pub fn initial_bids(&mut self) -> Vec<BidMessage> {
        match self {
            AgentState::Consumer(c) => {
                let id = c.id;
                c.slots.iter_mut().map(|s| message(id, &mut c.next_bid, s)).collect()
            }
            AgentState::Producer(p) => {
                let id = p.id;
                let mut out: Vec<BidMessage> = p.inputs.iter_mut().map(|s| message(id, &mut p.next_bid, s)).collect();
                if p.inputs.is_empty() {
                    let total = if p.include_cost { p.cost } else { Money::ZERO };
                    p.output.prices = vec![total];
                    p.offered_cost = Some(total);
                }
                out.push(message(id, &mut p.next_bid, &mut p.output));
                out
            }
        }
    }

    /// Stores a quote if it echoes the latest bid; returns whether it did.
    pub fn receive(&mut self, quote: &PriceQuote) -> bool {
        let Some(slot) = self.slot_mut(quote.good) else { return false };
        if quote.bid_id != slot.bid_id {
            return false;
        }
        slot.pending = false;
        slot.quote = Some(quote.clone());
        true
    }

    pub fn react(&mut self, cfg: &PolicyConfig) -> Vec<BidMessage> {
        match self {
            AgentState::Consumer(c) => c.react(cfg),
            AgentState::Producer(p) => p.react(cfg),
        }
    }

    /// Whether reacting now would emit a bid.
    pub fn would_rebid(&self, cfg: &PolicyConfig) -> bool {
        !self.clone().react(cfg).is_empty()
    }

    /// True when every bid this agent sent has been acknowledged.
    pub fn settled(&self) -> bool {
        self.slots().iter().all(|s| !s.pending)
    }
}

/// A producer is active iff its output offer trades.
pub fn is_active(clearing_of_output: &Clearing, producer: AgentId) -> bool {
    clearing_of_output.matches.iter().any(|m| m.sell.bidder == producer)
}

/// Total price a producer owes for inputs it won while its output did not trade.
pub fn exposure(net: &Network, clearings: &[Clearing], producer: AgentId) -> Money {
    let Some(p) = net.producer(producer) else { return Money::ZERO };
    if is_active(&clearings[p.output.0], producer) {
        return Money::ZERO;
    }
    p.inputs
        .iter()
        .map(|&(g, _)| {
            let c = &clearings[g.0];
            c.price * c.matches.iter().filter(|m| m.buy.bidder == producer).count() as i64
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{clear_book, Offer};
    use crate::netmodel::Resolution;

    fn m(s: &str) -> Money {
        Resolution::default().money(s).unwrap()
    }

    fn quote(good: GoodId, price: &str, ask: &str, winning: Vec<u32>, bid_id: u64) -> PriceQuote {
        PriceQuote { good, price: m(price), ask: m(ask), winning, bid_id }
    }

    fn cfg(db: &str, ds: &str) -> PolicyConfig {
        PolicyConfig::new(m(db), m(ds))
    }

    fn consumer_net(values: &[(&str, &str)]) -> Network {
        let mut n = Network::new(Resolution::default());
        let vals: Vec<(GoodId, Money)> = values.iter().map(|(g, v)| (n.add_good(*g), m(v))).collect();
        n.add_consumer("c", &vals);
        n
    }

    #[test]
    fn consumer_opens_at_zero() {
        let n = consumer_net(&[("g1", "10")]);
        let mut a = AgentState::new(&n, AgentId(0), &cfg("1", "1"));
        let bids = a.initial_bids();
        assert_eq!(bids.len(), 1);
        assert_eq!(bids[0].prices, vec![Money::ZERO]);
    }

    #[test]
    fn consumer_picks_best_surplus() {
        let n = consumer_net(&[("g1", "10"), ("g2", "8")]);
        let c = cfg("1", "1");
        let mut a = AgentState::new(&n, AgentId(0), &c);
        a.initial_bids();
        assert!(a.receive(&quote(GoodId(0), "9.5", "9.5", vec![0], 1)));
        assert!(a.react(&c).is_empty(), "waits for the other quote");
        assert!(a.receive(&quote(GoodId(1), "7", "7", vec![0], 2)));
        let bids = a.react(&c);
        assert_eq!(bids.len(), 1);
        assert_eq!((bids[0].good, bids[0].prices[0]), (GoodId(1), m("8")));
        assert!(a.react(&c).is_empty(), "idempotent while pending");
    }

    #[test]
    fn consumer_stops_when_priced_out() {
        let n = consumer_net(&[("g1", "10")]);
        let c = cfg("1", "1");
        let mut a = AgentState::new(&n, AgentId(0), &c);
        a.initial_bids();
        a.receive(&quote(GoodId(0), "9.5", "9.5", vec![0], 1));
        assert!(a.react(&c).is_empty());
        let AgentState::Consumer(s) = &a else { unreachable!() };
        assert!(s.stopped);
    }

    #[test]
    fn consumer_holds_while_winning_and_ignores_stale_quotes() {
        let n = consumer_net(&[("g1", "10")]);
        let c = cfg("1", "1");
        let mut a = AgentState::new(&n, AgentId(0), &c);
        a.initial_bids();
        assert!(!a.receive(&quote(GoodId(0), "0", "0", vec![0], 0)), "stale");
        a.receive(&quote(GoodId(0), "0", "3", vec![1], 1));
        assert!(a.react(&c).is_empty());
    }

    #[test]
    fn perceived_costs() {
        let db = m("1");
        assert_eq!(perceived_cost(true, &quote(GoodId(0), "5", "7", vec![1], 0), db), m("5"));
        assert_eq!(perceived_cost(false, &quote(GoodId(0), "5", "7", vec![0], 0), db), m("7"));
        assert_eq!(perceived_cost(false, &quote(GoodId(0), "5", "5", vec![0], 0), db), m("6"));
    }

    fn producer_net(cost: &str, units: u32) -> Network {
        let mut n = Network::new(Resolution::default());
        let i = n.add_good("in");
        let o = n.add_good("out");
        n.add_producer("p", o, &[(i, units)], m(cost));
        n
    }

    #[test]
    fn first_output_offer_after_all_input_quotes() {
        let n = producer_net("2", 1);
        for (include, expect) in [(true, "2.01"), (false, "0.01")] {
            let mut c = cfg("0.01", "0.01");
            c.include_cost = include;
            let mut a = AgentState::new(&n, AgentId(0), &c);
            let init = a.initial_bids();
            assert_eq!(init.len(), 2);
            assert!(init[1].prices.is_empty(), "output registration is empty");
            assert!(a.react(&c).is_empty());
            a.receive(&quote(GoodId(0), "0", "0", vec![0], 1));
            let bids = a.react(&c);
            assert_eq!(bids.len(), 1);
            assert_eq!(bids[0].good, GoodId(1));
            assert_eq!(bids[0].prices, vec![m(expect)]);
        }
    }

    #[test]
    fn any_rise_trigger_steps_output_by_delta_s_below_beta() {
        let n = producer_net("0", 1);
        let mut c = cfg("0.01", "0.01");
        c.include_cost = false;
        c.reoffer_on_any_rise = true;
        let mut a = AgentState::new(&n, AgentId(0), &c);
        a.initial_bids();
        a.receive(&quote(GoodId(0), "0", "8.99", vec![0], 1));
        let first = a.react(&c);
        assert_eq!(first[0].prices, vec![m("8.99")]);
        let AgentState::Producer(p) = &mut a else { unreachable!() };
        p.output.prices = vec![m("10")];
        p.output.pending = false;
        // Perceived cost rises to 9 while beta is 10.
        a.receive(&quote(GoodId(0), "0", "9", vec![0], 1));
        let bids = a.react(&c);
        assert_eq!(bids.len(), 1);
        assert_eq!(bids[0].prices, vec![m("10.01")]);
    }

    #[test]
    fn output_holds_until_perceived_cost_passes_beta() {
        let n = producer_net("0", 1);
        let mut c = cfg("0.01", "0.01");
        c.include_cost = false;
        let mut a = AgentState::new(&n, AgentId(0), &c);
        a.initial_bids();
        a.receive(&quote(GoodId(0), "0", "8.99", vec![0], 1));
        a.react(&c);
        let AgentState::Producer(p) = &mut a else { unreachable!() };
        p.output.prices = vec![m("10")];
        p.output.pending = false;
        a.receive(&quote(GoodId(0), "0", "9", vec![0], 1));
        assert!(a.react(&c).iter().all(|b| b.good != GoodId(1)));
        a.receive(&quote(GoodId(0), "0", "10.005", vec![0], 1));
        let bids: Vec<_> = a.react(&c).into_iter().filter(|b| b.good == GoodId(1)).collect();
        assert_eq!(bids.len(), 1);
        assert_eq!(bids[0].prices, vec![m("10.01")]);
    }

    #[test]
    fn no_input_raise_while_losing_output() {
        let n = producer_net("0", 2);
        let c = cfg("1", "1");
        let mut a = AgentState::new(&n, AgentId(0), &c);
        a.initial_bids();
        a.receive(&quote(GoodId(0), "0", "0", vec![0, 0], 1));
        let out = a.react(&c);
        assert_eq!(out.len(), 1);
        a.receive(&quote(GoodId(1), "0", "2", vec![0], out[0].bid_id));
        assert!(a.react(&c).is_empty());
        // Now winning the output: both losing units rise by one step.
        a.receive(&quote(GoodId(1), "2", "3", vec![1], out[0].bid_id));
        let bids = a.react(&c);
        assert_eq!(bids.len(), 1);
        assert_eq!(bids[0].prices, vec![m("1"), m("1")]);
    }

    #[test]
    fn safe_variant_defers_input_raise_when_output_moves() {
        let n = producer_net("0", 1);
        for safe in [false, true] {
            let mut c = cfg("1", "1");
            c.safe = safe;
            let mut a = AgentState::new(&n, AgentId(0), &c);
            a.initial_bids();
            a.receive(&quote(GoodId(0), "0", "0", vec![0], 1));
            let out = a.react(&c);
            a.receive(&quote(GoodId(1), "1", "2", vec![1], out[0].bid_id));
            // A higher ask raises the perceived cost, so the output must move.
            a.receive(&quote(GoodId(0), "0", "3", vec![0], 1));
            let bids = a.react(&c);
            let raised = bids.iter().any(|b| b.good == GoodId(0));
            assert_eq!(raised, !safe);
            assert!(bids.iter().any(|b| b.good == GoodId(1)));
        }
    }

    #[test]
    fn activity_and_exposure() {
        let n = producer_net("0", 1);
        let p = AgentId(0);
        let seller = AgentId(5);
        let buyer = AgentId(6);
        let input = clear_book(&[
            Offer { bidder: p, side: Side::Buy, price: m("2"), rank: 0, arrival_seq: 1 },
            Offer { bidder: seller, side: Side::Sell, price: m("1"), rank: 0, arrival_seq: 2 },
        ]);
        let lost = clear_book(&[Offer { bidder: p, side: Side::Sell, price: m("5"), rank: 0, arrival_seq: 1 }]);
        assert!(!is_active(&lost, p));
        assert_eq!(exposure(&n, &[input.clone(), lost], p), m("1"));
        let won = clear_book(&[
            Offer { bidder: p, side: Side::Sell, price: m("5"), rank: 0, arrival_seq: 1 },
            Offer { bidder: buyer, side: Side::Buy, price: m("6"), rank: 0, arrival_seq: 2 },
        ]);
        assert!(is_active(&won, p));
        assert_eq!(exposure(&n, &[input, won], p), Money::ZERO);
        let nothing = clear_book(&[]);
        assert_eq!(exposure(&n, &[nothing.clone(), nothing], p), Money::ZERO);
    }
}
