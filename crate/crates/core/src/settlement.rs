//! Replacement contracts, nonperformance cascades and end-node margin.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::{pair_totals, Decomposition, PairTotals, Structure, StructureKind};
use crate::fixed::{Decimal4, Money, Price};
use crate::network::{EdgeSegment, SplitNode};
use crate::trade::TradeId;

/// Net flows of one node on one structure, outflow positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NetObligation {
    pub t_net: i64,
    pub m_net: Money,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractStatus {
    Active,
    /// Replaced by smaller structures after a nonperformance event.
    Terminated,
    /// Bilateral structure whose node failed; nothing left to decompose.
    Defaulted,
}

impl fmt::Display for ContractStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContractStatus::Active => "active",
            ContractStatus::Terminated => "terminated",
            ContractStatus::Defaulted => "defaulted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementContract {
    pub structure_id: String,
    pub obligations: BTreeMap<SplitNode, NetObligation>,
    pub status: ContractStatus,
}

/// Per-node net security and money flows on `s`.
pub fn net_obligations(s: &Structure) -> BTreeMap<SplitNode, NetObligation> {
    let mut out: BTreeMap<SplitNode, NetObligation> =
        s.nodes.iter().map(|n| (n.clone(), NetObligation::default())).collect();
    for e in &s.edges {
        let q = e.qty as i64;
        let from = out.get_mut(&e.from).unwrap();
        from.t_net += q;
        from.m_net -= e.m2;
        let to = out.get_mut(&e.to).unwrap();
        to.t_net -= q;
        to.m_net += e.m2;
    }
    out
}

pub fn replacement_contract(s: &Structure) -> ReplacementContract {
    ReplacementContract {
        structure_id: s.id.clone(),
        obligations: net_obligations(s),
        status: ContractStatus::Active,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailedObject {
    #[serde(rename = "T", alias = "security")]
    Security,
    #[serde(rename = "M", alias = "money", alias = "cash")]
    Money,
}

impl fmt::Display for FailedObject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailedObject::Security => "T",
            FailedObject::Money => "M",
        })
    }
}

impl FromStr for FailedObject {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "T" | "security" => Ok(FailedObject::Security),
            "M" | "money" | "cash" => Ok(FailedObject::Money),
            _ => Err(format!("unknown object {s:?}; expected T or M")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonperformanceEvent {
    pub structure: String,
    pub node: SplitNode,
    pub object: FailedObject,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SettlementError {
    #[error("unknown structure {0}")]
    UnknownStructure(String),
    #[error("structure {0} is no longer active")]
    NotActive(String),
    #[error("{node} is not on structure {structure}")]
    NodeNotInStructure { structure: String, node: SplitNode },
    #[error("{node} owes no {object} on structure {structure}")]
    InvalidEvent {
        structure: String,
        node: SplitNode,
        object: FailedObject,
    },
}

/// Outcome of one nonperformance event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// The structure was terminated and replaced by `children`; `recovered` is
    /// the id of the bilateral child restored to initial terms.
    Split {
        terminated: String,
        children: Vec<String>,
        recovered: String,
    },
    /// A bilateral structure failed; no further decomposition is possible.
    FinalDefault { structure: String },
}

/// Index of the edge on which `node` sends `object`, or `None`.
fn failing_edge(s: &Structure, node: &SplitNode, object: FailedObject) -> Option<usize> {
    let amount = |e: &EdgeSegment| -> Option<i64> {
        match object {
            FailedObject::Security => (&e.from == node).then_some(e.qty as i64),
            FailedObject::Money => {
                if &e.to == node && e.m2.is_positive() || &e.from == node && e.m2.is_negative() {
                    Some(e.m2.abs().ticks())
                } else {
                    None
                }
            }
        }
    };
    let mut best: Option<(usize, i64)> = None;
    for (i, e) in s.edges.iter().enumerate() {
        if let Some(a) = amount(e) {
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((i, a));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn child_id(parent: &str, n: usize) -> String {
    let letter = (b'a' + (n % 26) as u8) as char;
    if n < 26 {
        format!("{parent}{letter}")
    } else {
        format!("{parent}{letter}{}", n / 26)
    }
}

/// Splits `s` after `node` fails to send `object`. Returns the children in the
/// order (left remainder, right remainder, recovered bilateral), or `None` for a
/// single-edge structure.
pub fn simulate_nonperformance(
    s: &Structure,
    node: &SplitNode,
    object: FailedObject,
) -> Result<Option<Vec<Structure>>, SettlementError> {
    if !s.contains(node) {
        return Err(SettlementError::NodeNotInStructure {
            structure: s.id.clone(),
            node: node.clone(),
        });
    }
    let ob = net_obligations(s)[node];
    let owes = match object {
        FailedObject::Security => ob.t_net > 0,
        FailedObject::Money => ob.m_net.is_positive(),
    };
    let pulled = failing_edge(s, node, object).filter(|_| owes);
    let Some(k) = pulled else {
        return Err(SettlementError::InvalidEvent {
            structure: s.id.clone(),
            node: node.clone(),
            object,
        });
    };
    if s.edges.len() == 1 {
        return Ok(None);
    }
    let mut parts: Vec<(StructureKind, Vec<EdgeSegment>)> = Vec::new();
    if s.is_closed() {
        let mut rest = s.edges[k + 1..].to_vec();
        rest.extend_from_slice(&s.edges[..k]);
        parts.push((StructureKind::Remainder, rest));
    } else {
        let left = s.edges[..k].to_vec();
        let right = s.edges[k + 1..].to_vec();
        if !left.is_empty() {
            parts.push((StructureKind::Remainder, left));
        }
        if !right.is_empty() {
            parts.push((StructureKind::Remainder, right));
        }
    }
    parts.push((StructureKind::RecoveredBilateral, vec![s.edges[k].clone()]));
    Ok(Some(
        parts
            .into_iter()
            .enumerate()
            .map(|(i, (kind, edges))| Structure::from_edges(child_id(&s.id, i), kind, edges))
            .collect(),
    ))
}

/// Bilateral contract restored after a failure, quoted on initial terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveredBilateral {
    pub from: SplitNode,
    pub to: SplitNode,
    pub qty: u64,
    pub m2: Money,
    pub m1: Money,
    pub unit_price: Price,
    pub source_trade_ids: Vec<TradeId>,
}

impl RecoveredBilateral {
    pub fn from_structure(s: &Structure) -> Self {
        let e = &s.edges[0];
        let mut ids: Vec<TradeId> = e.allocations.iter().flat_map(|a| a.lot.trade_ids()).collect();
        ids.sort();
        ids.dedup();
        RecoveredBilateral {
            from: e.from.clone(),
            to: e.to.clone(),
            qty: e.qty,
            m2: e.m2,
            m1: e.m1,
            unit_price: e.m2.per_unit(e.qty),
            source_trade_ids: ids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeEntry {
    pub structure: Structure,
    pub status: ContractStatus,
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub event: NonperformanceEvent,
    pub outcome: Outcome,
}

/// Live state of a default scenario over a whole decomposition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeState {
    pub entries: Vec<CascadeEntry>,
    pub log: Vec<LogEntry>,
}

impl CascadeState {
    pub fn new(d: &Decomposition) -> Self {
        CascadeState {
            entries: d
                .structures()
                .map(|s| CascadeEntry {
                    structure: s.clone(),
                    status: ContractStatus::Active,
                    parent: None,
                })
                .collect(),
            log: Vec::new(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&CascadeEntry> {
        self.entries.iter().find(|e| e.structure.id == id)
    }

    pub fn active(&self) -> impl Iterator<Item = &Structure> {
        self.entries
            .iter()
            .filter(|e| e.status == ContractStatus::Active)
            .map(|e| &e.structure)
    }

    /// Structures still carrying flow: active ones plus final defaults.
    pub fn live(&self) -> impl Iterator<Item = &Structure> {
        self.entries
            .iter()
            .filter(|e| e.status != ContractStatus::Terminated)
            .map(|e| &e.structure)
    }

    pub fn pair_totals(&self) -> PairTotals {
        pair_totals(self.live().flat_map(|s| &s.edges))
    }

    pub fn apply(&mut self, event: &NonperformanceEvent) -> Result<&Outcome, SettlementError> {
        let idx = self
            .entries
            .iter()
            .position(|e| e.structure.id == event.structure)
            .ok_or_else(|| SettlementError::UnknownStructure(event.structure.clone()))?;
        if self.entries[idx].status != ContractStatus::Active {
            return Err(SettlementError::NotActive(event.structure.clone()));
        }
        let parent = &self.entries[idx].structure;
        let outcome = match simulate_nonperformance(parent, &event.node, event.object)? {
            None => {
                self.entries[idx].status = ContractStatus::Defaulted;
                Outcome::FinalDefault {
                    structure: event.structure.clone(),
                }
            }
            Some(children) => {
                let parent_id = parent.id.clone();
                self.entries[idx].status = ContractStatus::Terminated;
                let ids: Vec<String> = children.iter().map(|c| c.id.clone()).collect();
                let recovered = ids.last().unwrap().clone();
                for c in children {
                    self.entries.push(CascadeEntry {
                        structure: c,
                        status: ContractStatus::Active,
                        parent: Some(parent_id.clone()),
                    });
                }
                Outcome::Split {
                    terminated: parent_id,
                    children: ids,
                    recovered,
                }
            }
        };
        self.log.push(LogEntry {
            event: event.clone(),
            outcome,
        });
        Ok(&self.log.last().unwrap().outcome)
    }

    /// All events that would be valid right now, in structure then node order.
    pub fn valid_events(&self) -> Vec<NonperformanceEvent> {
        let mut out = Vec::new();
        for s in self.active() {
            for (node, ob) in net_obligations(s) {
                if ob.t_net > 0 {
                    out.push(NonperformanceEvent {
                        structure: s.id.clone(),
                        node: node.clone(),
                        object: FailedObject::Security,
                    });
                }
                if ob.m_net.is_positive() {
                    out.push(NonperformanceEvent {
                        structure: s.id.clone(),
                        node,
                        object: FailedObject::Money,
                    });
                }
            }
        }
        out
    }
}

/// Market moves driving end-node margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MarginInputs {
    pub delta_price: Price,
    pub delta_vol: Decimal4,
    pub vol_coeff: Decimal4,
}

/// Escrow posted per node: net security position times the per-unit move.
/// Interior chain nodes and all cycle nodes have zero net position and post
/// nothing.
pub fn margin_requirements(s: &Structure, m: MarginInputs) -> BTreeMap<SplitNode, Money> {
    let per_unit = m.delta_price.ticks() + m.vol_coeff.mul_round(m.delta_vol).ticks();
    net_obligations(s)
        .into_iter()
        .map(|(n, ob)| (n, Money::from_ticks(ob.t_net * per_unit)))
        .collect()
}
