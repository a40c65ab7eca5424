//! Trade book, validation, repo rates and pairwise netting of second-leg flows.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::{Money, Price};

/// Units of the collateral security.
pub type Quantity = u64;

/// Identifier of a market participant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        AgentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_string())
    }
}

impl From<String> for AgentId {
    fn from(s: String) -> Self {
        AgentId(s)
    }
}

/// Identifier of an initial repo contract.
///
/// Ordering is numeric-aware: purely numeric ids compare by value, so "2" sorts
/// before "10", and all numeric ids sort before non-numeric ones.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TradeId(String);

impl TradeId {
    pub fn new(id: impl Into<String>) -> Self {
        TradeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn numeric(&self) -> Option<u128> {
        if !self.0.is_empty() && self.0.len() <= 38 && self.0.bytes().all(|b| b.is_ascii_digit()) {
            self.0.parse().ok()
        } else {
            None
        }
    }
}

impl Ord for TradeId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.numeric(), other.numeric()) {
            (Some(a), Some(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for TradeId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for TradeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TradeId {
    fn from(s: &str) -> Self {
        TradeId(s.to_string())
    }
}

/// One initial bilateral repo contract.
///
/// The lender pays `first_leg_price * quantity` at the first leg and receives the
/// security; at the second leg the lender returns the security and receives
/// `second_leg_price * quantity`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoTrade {
    pub trade_id: TradeId,
    pub lender: AgentId,
    pub borrower: AgentId,
    pub first_leg_price: Price,
    pub second_leg_price: Price,
    /// Signed so that ingestion can report non-positive quantities instead of
    /// failing to parse them.
    pub quantity: i64,
}

impl RepoTrade {
    pub fn new(
        trade_id: impl Into<String>,
        lender: impl Into<String>,
        borrower: impl Into<String>,
        first_leg_price: Price,
        second_leg_price: Price,
        quantity: i64,
    ) -> Self {
        RepoTrade {
            trade_id: TradeId::new(trade_id),
            lender: AgentId::new(lender),
            borrower: AgentId::new(borrower),
            first_leg_price,
            second_leg_price,
            quantity,
        }
    }

    /// Quantity of a validated trade.
    pub fn qty(&self) -> Quantity {
        self.quantity.max(0) as Quantity
    }

    pub fn first_leg_money(&self) -> Money {
        self.first_leg_price.times(self.qty())
    }

    pub fn second_leg_money(&self) -> Money {
        self.second_leg_price.times(self.qty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BookError {
    #[error("duplicate trade id {0}")]
    DuplicateTradeId(TradeId),
    #[error("trade {0}: lender and borrower are the same agent")]
    SelfTrade(TradeId),
    #[error("trade {0}: quantity must be positive")]
    NonPositiveQuantity(TradeId),
    #[error("trade {trade_id}: {field} must be {requirement}")]
    NonPositivePrice {
        trade_id: TradeId,
        field: &'static str,
        requirement: &'static str,
    },
    #[error("trade {0}: agent ids must be non-empty")]
    EmptyAgentId(TradeId),
    #[error("trade id must be non-empty")]
    EmptyTradeId,
}

/// A trade book whose every contract satisfies the book invariants, sorted by
/// trade id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidatedBook {
    trades: Vec<RepoTrade>,
}

impl ValidatedBook {
    pub fn trades(&self) -> &[RepoTrade] {
        &self.trades
    }

    pub fn len(&self) -> usize {
        self.trades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trades.is_empty()
    }

    pub fn get(&self, id: &TradeId) -> Option<&RepoTrade> {
        self.trades
            .binary_search_by(|t| t.trade_id.cmp(id))
            .ok()
            .map(|i| &self.trades[i])
    }

    pub fn agents(&self) -> BTreeSet<AgentId> {
        self.trades
            .iter()
            .flat_map(|t| [t.lender.clone(), t.borrower.clone()])
            .collect()
    }
}

/// Checks every trade and returns the book ordered by trade id.
pub fn validate_book(trades: Vec<RepoTrade>) -> Result<ValidatedBook, BookError> {
    let mut seen = BTreeSet::new();
    for t in &trades {
        if t.trade_id.as_str().is_empty() {
            return Err(BookError::EmptyTradeId);
        }
        if !seen.insert(t.trade_id.clone()) {
            return Err(BookError::DuplicateTradeId(t.trade_id.clone()));
        }
        if t.lender.as_str().is_empty() || t.borrower.as_str().is_empty() {
            return Err(BookError::EmptyAgentId(t.trade_id.clone()));
        }
        if t.lender == t.borrower {
            return Err(BookError::SelfTrade(t.trade_id.clone()));
        }
        if t.quantity <= 0 {
            return Err(BookError::NonPositiveQuantity(t.trade_id.clone()));
        }
        if !t.first_leg_price.is_positive() {
            return Err(BookError::NonPositivePrice {
                trade_id: t.trade_id.clone(),
                field: "first_leg_price",
                requirement: "positive",
            });
        }
        if t.second_leg_price.is_negative() {
            return Err(BookError::NonPositivePrice {
                trade_id: t.trade_id.clone(),
                field: "second_leg_price",
                requirement: "non-negative",
            });
        }
    }
    let mut trades = trades;
    trades.sort_by(|a, b| a.trade_id.cmp(&b.trade_id));
    Ok(ValidatedBook { trades })
}

/// Exact repo rate `(p2 - p1) / p1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RepoRate(Ratio<i64>);

impl RepoRate {
    pub fn ratio(self) -> Ratio<i64> {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl fmt::Display for RepoRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

/// Repo rate earned by the lender of `trade`.
pub fn repo_rate(trade: &RepoTrade) -> RepoRate {
    let p1 = trade.first_leg_price.ticks();
    assert!(p1 > 0, "repo rate requires a positive first-leg price");
    RepoRate(Ratio::new(trade.second_leg_price.ticks() - p1, p1))
}

/// Signed participation of an initial trade in a netted edge. Trades whose
/// lender is the edge's sender enter positively, reverse trades negatively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeAllocation {
    pub trade_id: TradeId,
    pub qty: i64,
}

/// Block of netted units on one edge with uniform per-unit terms.
///
/// A lot built from a single trade carries that trade's prices exactly. When a
/// pair traded in both directions, all of its trades are merged into one
/// composite lot whose money is the signed sum over the trades; slices of a
/// composite lot receive money pro rata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lot {
    pub id: u32,
    pub trades: Vec<TradeAllocation>,
    pub qty: Quantity,
    pub m2: Money,
    pub m1: Money,
}

impl Lot {
    /// Smallest constituent trade id.
    pub fn lead_trade(&self) -> &TradeId {
        self.trades
            .iter()
            .map(|t| &t.trade_id)
            .min()
            .expect("lot without trades")
    }

    pub fn trade_ids(&self) -> Vec<TradeId> {
        self.trades.iter().map(|t| t.trade_id.clone()).collect()
    }

    /// Ordering used wherever units are selected by price: ascending first-leg
    /// unit price, then trade id, then lot id.
    pub fn price_order(&self, other: &Lot) -> Ordering {
        let lhs = self.m1.ticks() as i128 * other.qty as i128;
        let rhs = other.m1.ticks() as i128 * self.qty as i128;
        lhs.cmp(&rhs)
            .then_with(|| self.lead_trade().cmp(other.lead_trade()))
            .then_with(|| self.id.cmp(&other.id))
    }

    /// Cumulative money of the first `units` units.
    fn cumulative(&self, units: Quantity) -> (Money, Money) {
        (self.m2.pro_rata(units, self.qty), self.m1.pro_rata(units, self.qty))
    }

    /// Money carried by units `[offset, offset + qty)`. Adjacent slices sum to
    /// the lot total exactly.
    pub fn slice_money(&self, offset: Quantity, qty: Quantity) -> (Money, Money) {
        assert!(offset + qty <= self.qty, "slice outside lot");
        let (a2, a1) = self.cumulative(offset);
        let (b2, b1) = self.cumulative(offset + qty);
        (b2 - a2, b1 - a1)
    }

    pub fn whole(&self) -> Allocation {
        Allocation::new(self.clone(), 0, self.qty)
    }
}

/// A contiguous range of units taken from a lot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub lot: Lot,
    pub offset: Quantity,
    pub qty: Quantity,
    pub m2: Money,
    pub m1: Money,
}

impl Allocation {
    pub fn new(lot: Lot, offset: Quantity, qty: Quantity) -> Self {
        let (m2, m1) = lot.slice_money(offset, qty);
        Allocation {
            lot,
            offset,
            qty,
            m2,
            m1,
        }
    }

    /// Splits off the first `units` units. Returns `(head, tail)`.
    pub fn split_front(&self, units: Quantity) -> (Allocation, Option<Allocation>) {
        assert!(units > 0 && units <= self.qty);
        let head = Allocation::new(self.lot.clone(), self.offset, units);
        let tail = (units < self.qty).then(|| Allocation::new(self.lot.clone(), self.offset + units, self.qty - units));
        (head, tail)
    }

    pub fn price_order(&self, other: &Allocation) -> Ordering {
        self.lot
            .price_order(&other.lot)
            .then_with(|| self.offset.cmp(&other.offset))
    }
}

/// Net second-leg flow between an ordered agent pair after bilateral netting.
///
/// `from` is the net sender of the security at the second leg (the net repo
/// lender). `m2` is the net second-leg money owed by `to` to `from`; `m1` is the
/// net first-leg money paid by `from` to `to`. Both may be negative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NettedEdge {
    pub from: AgentId,
    pub to: AgentId,
    pub qty: Quantity,
    pub m2: Money,
    pub m1: Money,
    pub allocations: Vec<TradeAllocation>,
    /// Lots in ascending price order.
    pub lots: Vec<Lot>,
}

/// A pair whose security flows cancelled exactly but whose money did not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CashResidual {
    /// Agent receiving `m2` at the second leg.
    pub payee: AgentId,
    pub payer: AgentId,
    pub m2: Money,
    /// First-leg money paid by `payee` to `payer`.
    pub m1: Money,
    pub allocations: Vec<TradeAllocation>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NettingResult {
    pub edges: Vec<NettedEdge>,
    pub cash_residuals: Vec<CashResidual>,
}

/// Nets all second-leg flows of each unordered agent pair into at most one
/// directed edge. Edges are ordered by `(from, to)`.
pub fn bilateral_net(book: &ValidatedBook) -> NettingResult {
    let mut pairs: BTreeMap<(AgentId, AgentId), Vec<&RepoTrade>> = BTreeMap::new();
    for t in book.trades() {
        let key = if t.lender < t.borrower {
            (t.lender.clone(), t.borrower.clone())
        } else {
            (t.borrower.clone(), t.lender.clone())
        };
        pairs.entry(key).or_default().push(t);
    }

    let mut result = NettingResult::default();
    let mut next_lot = 0u32;
    for ((a, b), trades) in pairs {
        // signed from a's perspective as sender
        let lead = a.clone();
        let sign = |t: &RepoTrade| if t.lender == lead { 1i64 } else { -1 };
        let net_qty: i64 = trades.iter().map(|t| sign(t) * t.quantity).sum();
        let net_m2: Money = trades.iter().map(|t| t.second_leg_money().times_signed(sign(t))).sum();
        let net_m1: Money = trades.iter().map(|t| t.first_leg_money().times_signed(sign(t))).sum();

        let (from, to, dir) = match net_qty.cmp(&0) {
            Ordering::Greater => (a, b, 1i64),
            Ordering::Less => (b, a, -1i64),
            Ordering::Equal => {
                if !net_m2.is_zero() || !net_m1.is_zero() {
                    let (payee, payer, s) = if net_m2.is_negative() { (b, a, -1) } else { (a, b, 1) };
                    result.cash_residuals.push(CashResidual {
                        payee,
                        payer,
                        m2: net_m2.times_signed(s),
                        m1: net_m1.times_signed(s),
                        allocations: trades
                            .iter()
                            .map(|t| TradeAllocation {
                                trade_id: t.trade_id.clone(),
                                qty: sign(t) * s * t.quantity,
                            })
                            .collect(),
                    });
                }
                continue;
            }
        };
        let allocations: Vec<TradeAllocation> = trades
            .iter()
            .map(|t| TradeAllocation {
                trade_id: t.trade_id.clone(),
                qty: sign(t) * dir * t.quantity,
            })
            .collect();
        let one_way = allocations.iter().all(|x| x.qty > 0);
        let mut lots: Vec<Lot> = if one_way {
            trades
                .iter()
                .zip(&allocations)
                .map(|(t, alloc)| Lot {
                    id: 0,
                    trades: vec![alloc.clone()],
                    qty: t.qty(),
                    m2: t.second_leg_money(),
                    m1: t.first_leg_money(),
                })
                .collect()
        } else {
            vec![Lot {
                id: 0,
                trades: allocations.clone(),
                qty: (net_qty * dir) as Quantity,
                m2: net_m2.times_signed(dir),
                m1: net_m1.times_signed(dir),
            }]
        };
        lots.sort_by(|x, y| x.price_order(y));
        for lot in &mut lots {
            lot.id = next_lot;
            next_lot += 1;
        }
        result.edges.push(NettedEdge {
            from,
            to,
            qty: (net_qty * dir) as Quantity,
            m2: net_m2.times_signed(dir),
            m1: net_m1.times_signed(dir),
            allocations,
            lots,
        });
    }
    result.edges.sort_by(|x, y| (&x.from, &x.to).cmp(&(&y.from, &y.to)));
    result
}
