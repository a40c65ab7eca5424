//! Second-leg flow network and parent-to-children node splitting.
//!
//! Every agent with a net second-leg imbalance gets one excess child: `MM` for a
//! net sender of the security (net repo lender), `RM` for a net receiver (net
//! repo borrower). Whatever volume is left over stays on a balanced `BT` child
//! whose inflow equals its outflow.
//!
//! Units on a netted edge are laid out lot by lot. A sending agent detaches its
//! excess units from the front of a lot and a receiving agent from the back, so
//! a segment between two excess children only appears when both sides need more
//! units of the same lot than it can give separately. Each agent's choice only
//! depends on its own edges, which makes the result independent of the order in
//! which agents are split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::fixed::Money;
use crate::trade::{AgentId, Allocation, NettedEdge, Quantity};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("invalid excess assignment for {agent}: {reason}")]
    InvalidAssignment { agent: AgentId, reason: String },
}

/// Directed second-leg security flows between agents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowNetwork {
    pub nodes: BTreeSet<AgentId>,
    pub edges: Vec<NettedEdge>,
}

pub fn build_flow_network(edges: &[NettedEdge]) -> FlowNetwork {
    let mut edges = edges.to_vec();
    edges.sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));
    let nodes = edges.iter().flat_map(|e| [e.from.clone(), e.to.clone()]).collect();
    FlowNetwork { nodes, edges }
}

impl FlowNetwork {
    /// Security outflow minus inflow at the second leg.
    pub fn net_position(&self, agent: &AgentId) -> Result<i64, NetworkError> {
        if !self.nodes.contains(agent) {
            return Err(NetworkError::UnknownAgent(agent.clone()));
        }
        Ok(self
            .edges
            .iter()
            .map(|e| {
                if &e.from == agent {
                    e.qty as i64
                } else if &e.to == agent {
                    -(e.qty as i64)
                } else {
                    0
                }
            })
            .sum())
    }

    pub fn net_positions(&self) -> BTreeMap<AgentId, i64> {
        let mut out: BTreeMap<AgentId, i64> = self.nodes.iter().map(|a| (a.clone(), 0)).collect();
        for e in &self.edges {
            *out.get_mut(&e.from).unwrap() += e.qty as i64;
            *out.get_mut(&e.to).unwrap() -= e.qty as i64;
        }
        out
    }

    fn edge_index(&self, from: &AgentId, to: &AgentId) -> Option<usize> {
        self.edges.iter().position(|e| &e.from == from && &e.to == to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Net sender of the security at the second leg (ultimate repo lender).
    #[serde(rename = "MM")]
    Mm,
    /// Balanced, matched-trade intermediary.
    #[serde(rename = "BT")]
    Bt,
    /// Net receiver of the security at the second leg (ultimate repo borrower).
    #[serde(rename = "RM")]
    Rm,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Mm => "MM",
            Role::Bt => "BT",
            Role::Rm => "RM",
        })
    }
}

/// Child node of an agent, written `MM_g`, `BT_f`, `RM_i`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SplitNode {
    pub agent: AgentId,
    pub role: Role,
}

impl SplitNode {
    pub fn new(agent: impl Into<AgentId>, role: Role) -> Self {
        SplitNode {
            agent: agent.into(),
            role,
        }
    }
}

impl fmt::Display for SplitNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.role, self.agent)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid split node label {0:?}; expected MM_<agent>, BT_<agent> or RM_<agent>")]
pub struct ParseSplitNodeError(String);

impl FromStr for SplitNode {
    type Err = ParseSplitNodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseSplitNodeError(s.to_string());
        let (role, agent) = s.split_once('_').ok_or_else(err)?;
        let role = match role {
            "MM" => Role::Mm,
            "BT" => Role::Bt,
            "RM" => Role::Rm,
            _ => return Err(err()),
        };
        if agent.is_empty() {
            return Err(err());
        }
        Ok(SplitNode::new(agent, role))
    }
}

impl Serialize for SplitNode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SplitNode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Part of a netted edge connecting two child nodes.
///
/// The security moves `from -> to` at the second leg; `m2` is owed by `to` to
/// `from`, `m1` was paid by `from` to `to` at the first leg.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSegment {
    pub from: SplitNode,
    pub to: SplitNode,
    pub qty: Quantity,
    pub m2: Money,
    pub m1: Money,
    pub allocations: Vec<Allocation>,
}

impl EdgeSegment {
    pub fn from_allocations(from: SplitNode, to: SplitNode, allocations: Vec<Allocation>) -> Self {
        let qty = allocations.iter().map(|a| a.qty).sum();
        let m2 = allocations.iter().map(|a| a.m2).sum();
        let m1 = allocations.iter().map(|a| a.m1).sum();
        EdgeSegment {
            from,
            to,
            qty,
            m2,
            m1,
            allocations,
        }
    }

    pub fn parents(&self) -> (&AgentId, &AgentId) {
        (&self.from.agent, &self.to.agent)
    }
}

/// Split-node graph carrying every netted unit exactly once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeFlowNetwork {
    pub nodes: BTreeSet<SplitNode>,
    pub segments: Vec<EdgeSegment>,
}

impl TradeFlowNetwork {
    /// `(inflow, outflow)` of a split node.
    pub fn throughput(&self, node: &SplitNode) -> (Quantity, Quantity) {
        let inflow = self.segments.iter().filter(|s| &s.to == node).map(|s| s.qty).sum();
        let outflow = self.segments.iter().filter(|s| &s.from == node).map(|s| s.qty).sum();
        (inflow, outflow)
    }

    pub fn excess(&self, role: Role) -> BTreeMap<AgentId, Quantity> {
        let mut out = BTreeMap::new();
        for s in &self.segments {
            if role == Role::Mm && s.from.role == Role::Mm {
                *out.entry(s.from.agent.clone()).or_insert(0) += s.qty;
            }
            if role == Role::Rm && s.to.role == Role::Rm {
                *out.entry(s.to.agent.clone()).or_insert(0) += s.qty;
            }
        }
        out
    }

    /// BT nodes whose inflow differs from their outflow.
    pub fn unbalanced_nodes(&self) -> Vec<SplitNode> {
        self.nodes
            .iter()
            .filter(|n| n.role == Role::Bt)
            .filter(|n| {
                let (i, o) = self.throughput(n);
                i != o
            })
            .cloned()
            .collect()
    }

    /// Excess picks that reproduce this network's split when fed back through
    /// [`split_nodes`].
    pub fn to_assignment(&self) -> SplitPolicy {
        let mut map: BTreeMap<AgentId, BTreeMap<AgentId, Quantity>> = BTreeMap::new();
        for s in &self.segments {
            if s.from.role == Role::Mm {
                *map.entry(s.from.agent.clone())
                    .or_default()
                    .entry(s.to.agent.clone())
                    .or_insert(0) += s.qty;
            }
            if s.to.role == Role::Rm {
                *map.entry(s.to.agent.clone())
                    .or_default()
                    .entry(s.from.agent.clone())
                    .or_insert(0) += s.qty;
            }
        }
        SplitPolicy::Explicit(
            map.into_iter()
                .map(|(agent, picks)| {
                    let picks = picks
                        .into_iter()
                        .map(|(counterparty, qty)| ExcessPick { counterparty, qty })
                        .collect();
                    (agent, picks)
                })
                .collect(),
        )
    }
}

/// Units of an agent's excess taken from its edge with `counterparty`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcessPick {
    pub counterparty: AgentId,
    pub qty: Quantity,
}

/// How excess units are chosen when an agent is split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// Detach excess units in ascending order of first-leg unit price, ties by
    /// trade id.
    #[default]
    AscendingFirstLegUnitPrice,
    /// Per-agent edge picks. Agents without an entry fall back to the
    /// ascending-price rule; an entry must cover the agent's whole excess.
    Explicit(BTreeMap<AgentId, Vec<ExcessPick>>),
}

#[derive(Deserialize)]
struct AssignmentFile {
    excess: BTreeMap<AgentId, Vec<ExcessPick>>,
}

impl SplitPolicy {
    /// Parses an assignment document: either `{"excess": {agent: [picks]}}` or a
    /// trade-flow-network dump, whose excess segments become the picks.
    pub fn from_json(text: &str) -> Result<SplitPolicy, serde_json::Error> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("segments").is_some() {
            let tfn: TradeFlowNetwork = serde_json::from_value(value)?;
            Ok(tfn.to_assignment())
        } else {
            let file: AssignmentFile = serde_json::from_value(value)?;
            Ok(SplitPolicy::Explicit(file.excess))
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            SplitPolicy::AscendingFirstLegUnitPrice => serde_json::json!({ "excess": {} }),
            SplitPolicy::Explicit(map) => serde_json::json!({ "excess": map }),
        }
    }
}

/// Units detached per `(edge, lot)`.
type Takes = Vec<Vec<Quantity>>;

fn take_ascending(
    network: &FlowNetwork,
    candidates: &[(usize, usize)],
    mut need: Quantity,
    takes: &mut Takes,
) -> Quantity {
    let mut order = candidates.to_vec();
    order.sort_by(|&(e1, l1), &(e2, l2)| network.edges[e1].lots[l1].price_order(&network.edges[e2].lots[l2]));
    for (e, l) in order {
        if need == 0 {
            break;
        }
        let lot = &network.edges[e].lots[l];
        let free = lot.qty - takes[e][l];
        let k = free.min(need);
        takes[e][l] += k;
        need -= k;
    }
    need
}

/// Splits every agent into its excess and balanced children.
pub fn split_nodes(network: &FlowNetwork, policy: &SplitPolicy) -> Result<TradeFlowNetwork, NetworkError> {
    let positions = network.net_positions();
    let mut sender_takes: Takes = network.edges.iter().map(|e| vec![0; e.lots.len()]).collect();
    let mut receiver_takes: Takes = sender_takes.clone();

    let explicit = match policy {
        SplitPolicy::AscendingFirstLegUnitPrice => None,
        SplitPolicy::Explicit(map) => {
            if let Some(agent) = map.keys().find(|a| !network.nodes.contains(*a)) {
                return Err(NetworkError::UnknownAgent(agent.clone()));
            }
            Some(map)
        }
    };

    for (agent, &net) in &positions {
        if net == 0 {
            if let Some(picks) = explicit.and_then(|m| m.get(agent)) {
                if picks.iter().any(|p| p.qty > 0) {
                    return Err(NetworkError::InvalidAssignment {
                        agent: agent.clone(),
                        reason: "agent has no excess volume".into(),
                    });
                }
            }
            continue;
        }
        let sending = net > 0;
        let need = net.unsigned_abs();
        let takes = if sending {
            &mut sender_takes
        } else {
            &mut receiver_takes
        };
        match explicit.and_then(|m| m.get(agent)) {
            Some(picks) => {
                let total: Quantity = picks.iter().map(|p| p.qty).sum();
                if total != need {
                    return Err(NetworkError::InvalidAssignment {
                        agent: agent.clone(),
                        reason: format!("picks cover {total} units but the excess is {need}"),
                    });
                }
                for pick in picks {
                    let (from, to) = if sending {
                        (agent, &pick.counterparty)
                    } else {
                        (&pick.counterparty, agent)
                    };
                    let e = network
                        .edge_index(from, to)
                        .ok_or_else(|| NetworkError::InvalidAssignment {
                            agent: agent.clone(),
                            reason: format!(
                                "no {} edge {from} -> {to}",
                                if sending { "outgoing" } else { "incoming" }
                            ),
                        })?;
                    let lots: Vec<(usize, usize)> = (0..network.edges[e].lots.len()).map(|l| (e, l)).collect();
                    if take_ascending(network, &lots, pick.qty, takes) > 0 {
                        return Err(NetworkError::InvalidAssignment {
                            agent: agent.clone(),
                            reason: format!("edge {from} -> {to} carries fewer than the picked units"),
                        });
                    }
                }
            }
            None => {
                let lots: Vec<(usize, usize)> = network
                    .edges
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| if sending { &e.from == agent } else { &e.to == agent })
                    .flat_map(|(i, e)| (0..e.lots.len()).map(move |l| (i, l)))
                    .collect();
                let left = take_ascending(network, &lots, need, takes);
                debug_assert_eq!(left, 0);
            }
        }
    }

    let mut segments = Vec::new();
    for (e, edge) in network.edges.iter().enumerate() {
        let from_is_mm = positions[&edge.from] > 0;
        let to_is_rm = positions[&edge.to] < 0;
        let mut per_pair: BTreeMap<(Role, Role), Vec<Allocation>> = BTreeMap::new();
        for (l, lot) in edge.lots.iter().enumerate() {
            let s = sender_takes[e][l];
            let r = lot.qty - receiver_takes[e][l];
            let mut cuts = vec![0, s, r, lot.qty];
            cuts.sort_unstable();
            cuts.dedup();
            for w in cuts.windows(2) {
                let (a, b) = (w[0], w[1]);
                let from_role = if from_is_mm && a < s { Role::Mm } else { Role::Bt };
                let to_role = if to_is_rm && a >= r { Role::Rm } else { Role::Bt };
                per_pair
                    .entry((from_role, to_role))
                    .or_default()
                    .push(Allocation::new(lot.clone(), a, b - a));
            }
        }
        for ((fr, tr), allocs) in per_pair {
            segments.push(EdgeSegment::from_allocations(
                SplitNode::new(edge.from.clone(), fr),
                SplitNode::new(edge.to.clone(), tr),
                allocs,
            ));
        }
    }
    let nodes = segments.iter().flat_map(|s| [s.from.clone(), s.to.clone()]).collect();
    Ok(TradeFlowNetwork { nodes, segments })
}
