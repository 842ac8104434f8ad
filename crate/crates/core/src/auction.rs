//! One (M+1)st-price ascending double auction per good.
//!
//! Every offer is for a single unit. With `M` sell offers in the book, the
//! price is the (M+1)st highest offer and the ask is the Mth highest, both
//! over all offers with zero-price padding. Sells strictly below the price
//! and buys strictly above it win; offers tied at the price fill the shorter
//! side in arrival order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{AgentId, GoodId, Money};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Offer {
    pub bidder: AgentId,
    pub side: Side,
    pub price: Money,
    /// Position of this offer within the bidder's bid.
    pub rank: u32,
    /// Temporal precedence; smaller arrived earlier.
    pub arrival_seq: u64,
}

/// Replaces the bidder's standing offers in one auction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BidMessage {
    pub bidder: AgentId,
    pub good: GoodId,
    pub side: Side,
    /// Unit offer prices by rank.
    pub prices: Vec<Money>,
    pub bid_id: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriceQuote {
    pub good: GoodId,
    pub price: Money,
    pub ask: Money,
    /// Units won by each of the recipient's standing offers, by rank.
    pub winning: Vec<u32>,
    /// Latest bid id received from the recipient.
    pub bid_id: u64,
}

impl PriceQuote {
    pub fn wins(&self, rank: usize) -> bool {
        self.winning.get(rank).copied().unwrap_or(0) > 0
    }

    pub fn total_won(&self) -> u32 {
        self.winning.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
pub enum Rejection {
    #[error("ascending-violation")]
    AscendingViolation,
    #[error("unregistered-after-open")]
    UnregisteredAfterOpen,
    #[error("mixed-sides")]
    MixedSides,
}

impl Rejection {
    pub fn as_str(&self) -> &'static str {
        match self {
            Rejection::AscendingViolation => "ascending-violation",
            Rejection::UnregisteredAfterOpen => "unregistered-after-open",
            Rejection::MixedSides => "mixed-sides",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("auction cannot clear before quiescence")]
pub struct NotQuiescent;

/// A binding buy/sell pairing at the clearing price.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Match {
    pub buy: Offer,
    pub sell: Offer,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clearing {
    pub price: Money,
    pub ask: Money,
    pub matches: Vec<Match>,
}

impl Clearing {
    /// (bidder, rank) keys of every winning offer.
    pub fn winners(&self) -> BTreeSet<(AgentId, u32)> {
        self.matches.iter().flat_map(|m| [(m.buy.bidder, m.buy.rank), (m.sell.bidder, m.sell.rank)]).collect()
    }
}

#[derive(Clone, Debug)]
struct Standing {
    side: Side,
    offers: Vec<Offer>,
    bid_id: u64,
}

#[derive(Clone, Debug)]
pub struct AuctionState {
    pub good: GoodId,
    pub delta_b: Money,
    pub delta_s: Money,
    registered: BTreeSet<AgentId>,
    standing: BTreeMap<AgentId, Standing>,
    opened: bool,
    next_seq: u64,
}

/// Price and ask of a book: (M+1)st and Mth highest with zero padding.
pub fn price_and_ask(offers: &[Offer]) -> (Money, Money) {
    let m = offers.iter().filter(|o| o.side == Side::Sell).count();
    let mut prices: Vec<Money> = offers.iter().map(|o| o.price).collect();
    prices.sort_by(|a, b| b.cmp(a));
    let at = |i: usize| prices.get(i).copied().unwrap_or(Money::ZERO);
    let price = at(m);
    // With no sell offers there is nothing to buy; report the ask at the price.
    let ask = if m == 0 { price } else { at(m - 1) };
    (price, ask)
}

/// Clearing of an arbitrary book.
pub fn clear_book(offers: &[Offer]) -> Clearing {
    let (price, ask) = price_and_ask(offers);
    let by_arrival = |a: &&Offer, b: &&Offer| a.arrival_seq.cmp(&b.arrival_seq);
    let mut buys: Vec<&Offer> = offers.iter().filter(|o| o.side == Side::Buy && o.price > price).collect();
    let mut sells: Vec<&Offer> = offers.iter().filter(|o| o.side == Side::Sell && o.price < price).collect();
    let mut tied_buys: Vec<&Offer> = offers.iter().filter(|o| o.side == Side::Buy && o.price == price).collect();
    let mut tied_sells: Vec<&Offer> = offers.iter().filter(|o| o.side == Side::Sell && o.price == price).collect();
    tied_buys.sort_by(by_arrival);
    tied_sells.sort_by(by_arrival);
    if buys.len() > sells.len() {
        let need = buys.len() - sells.len();
        assert!(need <= tied_sells.len(), "equalization has enough tied sells");
        sells.extend(tied_sells.into_iter().take(need));
    } else if sells.len() > buys.len() {
        let need = sells.len() - buys.len();
        assert!(need <= tied_buys.len(), "equalization has enough tied buys");
        buys.extend(tied_buys.into_iter().take(need));
    }
    // Highest buy with lowest sell; ties by arrival.
    buys.sort_by(|a, b| b.price.cmp(&a.price).then(a.arrival_seq.cmp(&b.arrival_seq)));
    sells.sort_by(|a, b| a.price.cmp(&b.price).then(a.arrival_seq.cmp(&b.arrival_seq)));
    let matches = buys.into_iter().zip(sells).map(|(b, s)| Match { buy: *b, sell: *s }).collect();
    Clearing { price, ask, matches }
}

impl AuctionState {
    pub fn new(good: GoodId, registered: impl IntoIterator<Item = AgentId>, delta_b: Money, delta_s: Money) -> AuctionState {
        AuctionState {
            good,
            delta_b,
            delta_s,
            registered: registered.into_iter().collect(),
            standing: BTreeMap::new(),
            opened: false,
            next_seq: 0,
        }
    }

    pub fn is_open(&self) -> bool {
        self.opened
    }

    pub fn bidders(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.standing.keys().copied()
    }

    pub fn registered(&self) -> &BTreeSet<AgentId> {
        &self.registered
    }

    /// The book. A seller registered without a price counts as one unit
    /// offered at zero, behind every real offer at that price, so the number
    /// of sell units never changes and quotes only rise.
    pub fn offers(&self) -> Vec<Offer> {
        self.standing
            .iter()
            .flat_map(|(&bidder, s)| {
                let placeholder = (s.side == Side::Sell && s.offers.is_empty())
                    .then_some(Offer { bidder, side: Side::Sell, price: Money::ZERO, rank: 0, arrival_seq: u64::MAX });
                s.offers.iter().copied().chain(placeholder)
            })
            .collect()
    }

    pub fn standing_prices(&self, bidder: AgentId) -> Vec<Money> {
        self.standing.get(&bidder).map(|s| s.offers.iter().map(|o| o.price).collect()).unwrap_or_default()
    }

    /// Validates and applies a bid. Returns `Ok(true)` when this bid opened
    /// the auction.
    pub fn submit_bid(&mut self, msg: &BidMessage) -> Result<bool, Rejection> {
        let known = self.registered.contains(&msg.bidder);
        if self.opened && !known {
            return Err(Rejection::UnregisteredAfterOpen);
        }
        let step = match msg.side {
            Side::Buy => self.delta_b,
            Side::Sell => self.delta_s,
        };
        let mut offers = Vec::with_capacity(msg.prices.len());
        if let Some(prev) = self.standing.get(&msg.bidder) {
            if prev.side != msg.side && !prev.offers.is_empty() {
                return Err(Rejection::MixedSides);
            }
            if msg.prices.len() < prev.offers.len() {
                return Err(Rejection::AscendingViolation);
            }
            for (rank, &price) in msg.prices.iter().enumerate() {
                match prev.offers.get(rank) {
                    Some(old) if old.price == price => offers.push(*old),
                    Some(old) if price < old.price + step => return Err(Rejection::AscendingViolation),
                    _ => offers.push(Offer { bidder: msg.bidder, side: msg.side, price, rank: rank as u32, arrival_seq: 0 }),
                }
            }
        } else {
            for (rank, &price) in msg.prices.iter().enumerate() {
                offers.push(Offer { bidder: msg.bidder, side: msg.side, price, rank: rank as u32, arrival_seq: 0 });
            }
        }
        if msg.prices.iter().any(|p| p.is_negative()) {
            return Err(Rejection::AscendingViolation);
        }
        for o in &mut offers {
            if o.arrival_seq == 0 {
                self.next_seq += 1;
                o.arrival_seq = self.next_seq;
            }
        }
        self.standing.insert(msg.bidder, Standing { side: msg.side, offers, bid_id: msg.bid_id });
        if !known {
            self.registered.insert(msg.bidder);
        }
        if !self.opened && self.registered.iter().all(|a| self.standing.contains_key(a)) {
            self.opened = true;
            return Ok(true);
        }
        Ok(false)
    }

    pub fn compute_clearing(&self) -> Clearing {
        clear_book(&self.offers())
    }

    /// Quote for one bidder against an already computed clearing.
    pub fn quote_with(&self, clearing: &Clearing, recipient: AgentId) -> PriceQuote {
        let winners = clearing.winners();
        let (winning, bid_id) = match self.standing.get(&recipient) {
            Some(s) => (s.offers.iter().map(|o| u32::from(winners.contains(&(recipient, o.rank)))).collect(), s.bid_id),
            None => (Vec::new(), 0),
        };
        PriceQuote { good: self.good, price: clearing.price, ask: clearing.ask, winning, bid_id }
    }

    pub fn quote_for(&self, recipient: AgentId) -> PriceQuote {
        self.quote_with(&self.compute_clearing(), recipient)
    }

    /// Final contracts; refused unless the kernel reports quiescence.
    pub fn clear(&self, quiescent: bool) -> Result<Clearing, NotQuiescent> {
        if !quiescent {
            return Err(NotQuiescent);
        }
        Ok(self.compute_clearing())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(x: i64) -> Money {
        Money(x)
    }

    fn bid(bidder: usize, side: Side, prices: &[i64], id: u64) -> BidMessage {
        BidMessage { bidder: AgentId(bidder), good: GoodId(0), side, prices: prices.iter().map(|&p| m(p)).collect(), bid_id: id }
    }

    fn offer(bidder: usize, side: Side, price: i64, seq: u64) -> Offer {
        Offer { bidder: AgentId(bidder), side, price: m(price), rank: 0, arrival_seq: seq }
    }

    #[test]
    fn worked_book_prices() {
        let book = [
            offer(0, Side::Buy, 12, 1),
            offer(1, Side::Buy, 10, 2),
            offer(2, Side::Buy, 6, 3),
            offer(3, Side::Sell, 15, 4),
            offer(4, Side::Sell, 11, 5),
            offer(5, Side::Sell, 8, 6),
        ];
        let c = clear_book(&book);
        assert_eq!((c.price, c.ask), (m(10), m(11)));
        // The winner rule admits one pairing only: buy 12 with sell 8.
        assert_eq!(c.matches.len(), 1);
        assert_eq!((c.matches[0].buy.price, c.matches[0].sell.price), (m(12), m(8)));
    }

    #[test]
    fn empty_book() {
        let c = clear_book(&[]);
        assert_eq!((c.price, c.ask), (Money::ZERO, Money::ZERO));
        assert!(c.matches.is_empty());
    }

    #[test]
    fn single_pair() {
        let c = clear_book(&[offer(0, Side::Buy, 7, 1), offer(1, Side::Sell, 3, 2)]);
        assert_eq!((c.price, c.ask), (m(3), m(7)));
        assert_eq!(c.matches.len(), 1);
    }

    #[test]
    fn sells_above_buys_do_not_trade() {
        let c = clear_book(&[offer(0, Side::Buy, 2, 1), offer(1, Side::Sell, 5, 2), offer(2, Side::Sell, 6, 3)]);
        assert!(c.matches.is_empty());
        assert_eq!((c.price, c.ask), (m(2), m(5)));
        let c = clear_book(&[offer(0, Side::Buy, 2, 1), offer(1, Side::Sell, 5, 2)]);
        assert!(c.matches.is_empty());
        assert_eq!((c.price, c.ask), (m(2), m(5)));
    }

    #[test]
    fn earlier_tie_wins() {
        // Two buys tied at the price; the earlier one fills the single sell.
        let c = clear_book(&[offer(0, Side::Buy, 5, 2), offer(1, Side::Buy, 5, 1), offer(2, Side::Sell, 3, 3)]);
        assert_eq!(c.price, m(5));
        assert_eq!(c.matches.len(), 1);
        assert_eq!(c.matches[0].buy.bidder, AgentId(1));
    }

    #[test]
    fn gating_and_rejections() {
        let mut a = AuctionState::new(GoodId(0), [AgentId(0), AgentId(1)], m(1), m(1));
        assert_eq!(a.submit_bid(&bid(0, Side::Buy, &[5], 1)), Ok(false));
        assert!(!a.is_open());
        assert_eq!(a.submit_bid(&bid(1, Side::Sell, &[3], 1)), Ok(true));
        assert!(a.is_open());
        assert_eq!(a.submit_bid(&bid(0, Side::Buy, &[5], 2)), Ok(false), "unchanged offer is allowed");
        assert_eq!(a.submit_bid(&bid(0, Side::Buy, &[5, 0], 3)), Ok(false), "new rank is free");
        assert_eq!(a.submit_bid(&bid(0, Side::Buy, &[5], 4)), Err(Rejection::AscendingViolation), "no withdrawal");
        let mut b = AuctionState::new(GoodId(0), [AgentId(0)], m(1), m(1));
        b.submit_bid(&bid(0, Side::Buy, &[5], 1)).unwrap();
        assert_eq!(b.submit_bid(&bid(0, Side::Buy, &[5, 0], 2)), Ok(false));
        assert_eq!(b.submit_bid(&bid(0, Side::Buy, &[5, 0], 2)), Ok(false));
        let mut c = AuctionState::new(GoodId(0), [AgentId(0)], m(100), m(1));
        c.submit_bid(&bid(0, Side::Buy, &[500], 1)).unwrap();
        assert_eq!(c.submit_bid(&bid(0, Side::Buy, &[500 + 99], 2)), Err(Rejection::AscendingViolation));
        assert_eq!(c.submit_bid(&bid(0, Side::Sell, &[600], 3)), Err(Rejection::MixedSides));
        assert_eq!(c.submit_bid(&bid(7, Side::Buy, &[1], 1)), Err(Rejection::UnregisteredAfterOpen));
    }

    #[test]
    fn new_bidder_before_open_is_registered() {
        let mut a = AuctionState::new(GoodId(0), [AgentId(0)], m(1), m(1));
        assert_eq!(a.submit_bid(&bid(9, Side::Buy, &[1], 1)), Ok(false));
        assert!(a.registered().contains(&AgentId(9)));
        assert_eq!(a.submit_bid(&bid(0, Side::Sell, &[1], 1)), Ok(true));
    }

    #[test]
    fn quotes_share_prices_but_not_winning_state() {
        let mut a = AuctionState::new(GoodId(0), (0..6).map(AgentId), m(1), m(1));
        for (i, (s, p)) in
            [(Side::Buy, 12), (Side::Buy, 10), (Side::Buy, 6), (Side::Sell, 15), (Side::Sell, 11), (Side::Sell, 8)].iter().enumerate()
        {
            a.submit_bid(&bid(i, *s, &[*p], 1)).unwrap();
        }
        let q0 = a.quote_for(AgentId(0));
        let q1 = a.quote_for(AgentId(1));
        assert_eq!((q0.price, q0.ask), (q1.price, q1.ask));
        assert_eq!(q0.winning, vec![1]);
        assert_eq!(q1.winning, vec![0]);
        assert_eq!(q0.bid_id, 1);
        assert!(a.clear(false).is_err());
        let c = a.clear(true).unwrap();
        assert_eq!(c.price, m(10));
        assert_eq!(c.matches.len(), 1);
    }

    #[test]
    fn unchanged_offers_keep_precedence() {
        let mut a = AuctionState::new(GoodId(0), [AgentId(0), AgentId(1), AgentId(2)], m(1), m(1));
        a.submit_bid(&bid(0, Side::Buy, &[5], 1)).unwrap();
        a.submit_bid(&bid(1, Side::Buy, &[5], 1)).unwrap();
        a.submit_bid(&bid(2, Side::Sell, &[3], 1)).unwrap();
        // Resubmitting the same price must not lose the earlier arrival.
        a.submit_bid(&bid(0, Side::Buy, &[5], 2)).unwrap();
        let c = a.compute_clearing();
        assert_eq!(c.matches[0].buy.bidder, AgentId(0));
    }

    #[test]
    fn unpriced_seller_holds_a_zero_unit() {
        let mut a = AuctionState::new(GoodId(0), (0..3).map(AgentId), m(1), m(1));
        a.submit_bid(&bid(0, Side::Buy, &[0], 1)).unwrap();
        a.submit_bid(&bid(1, Side::Sell, &[], 1)).unwrap();
        a.submit_bid(&bid(2, Side::Sell, &[11095], 1)).unwrap();
        assert!(a.is_open());
        let before = a.compute_clearing();
        assert_eq!((before.price, before.ask), (m(0), m(0)));
        assert!(a.quote_for(AgentId(1)).winning.is_empty());
        // The late first offer cannot pull the ask down.
        a.submit_bid(&bid(1, Side::Sell, &[2845], 2)).unwrap();
        let after = a.compute_clearing();
        assert_eq!((after.price, after.ask), (m(0), m(2845)));
    }
}
