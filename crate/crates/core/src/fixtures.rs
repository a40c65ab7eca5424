//! The seven-agent, eleven-trade example book and its excess allocation.

use std::collections::BTreeMap;

use crate::network::{ExcessPick, SplitPolicy};
use crate::trade::{AgentId, RepoTrade};

/// Rows: trade id, lender, borrower, first-leg price, second-leg price, units.
pub const EXAMPLE_BOOK: [(&str, &str, &str, &str, &str, i64); 11] = [
    ("1", "h", "i", "4.90", "5.25", 5),
    ("2", "k", "i", "5.80", "6.30", 3),
    ("3", "i", "j", "6.10", "6.55", 5),
    ("4", "i", "g", "3.00", "3.00", 4),
    ("5", "g", "j", "5.40", "5.95", 10),
    ("6", "l", "g", "5.40", "5.95", 6),
    ("7", "h", "f", "3.00", "3.30", 10),
    ("8", "f", "h", "3.00", "3.10", 8),
    ("9", "k", "g", "2.90", "3.77", 8),
    ("10", "g", "f", "6.22", "6.53", 10),
    ("11", "f", "i", "4.60", "5.12", 6),
];

pub fn example_book() -> Vec<RepoTrade> {
    EXAMPLE_BOOK
        .iter()
        .map(|&(id, lender, borrower, p1, p2, qty)| {
            RepoTrade::new(id, lender, borrower, p1.parse().unwrap(), p2.parse().unwrap(), qty)
        })
        .collect()
}

/// Excess volumes for the example book: g's excess outflow sits on its edge to
/// f, f's excess inflow on the edge from g, and i's excess inflow on the edges
/// from k and f.
pub fn example_assignment() -> SplitPolicy {
    let pick = |cp: &str, qty| ExcessPick {
        counterparty: AgentId::from(cp),
        qty,
    };
    let mut map = BTreeMap::new();
    map.insert(AgentId::from("g"), vec![pick("f", 2)]);
    map.insert(AgentId::from("f"), vec![pick("g", 6)]);
    map.insert(AgentId::from("i"), vec![pick("k", 3), pick("f", 2)]);
    SplitPolicy::Explicit(map)
}
