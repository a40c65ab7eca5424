//! Decomposition of a trade flow network into chains and cycles.
//!
//! Chains are peeled first. Each step takes the shortest `MM -> ... -> RM` path
//! in the residual network; among equally short paths the one whose sequence of
//! edges is smallest under the (first-leg unit price, trade id) order wins. The
//! peeled quantity is the smallest front allocation along the path, so every
//! chain edge carries a single slice of one lot and a uniform quantity.
//!
//! Once no excess remains, the leftover flow is a circulation on BT nodes. The
//! cheapest remaining segment is closed into a cycle through the shortest path
//! back to its start, and this repeats until the residual is empty.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::Money;
use crate::network::{EdgeSegment, Role, SplitNode, TradeFlowNetwork};
use crate::trade::{AgentId, Allocation, Quantity};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecomposeError {
    #[error("malformed trade flow network: {0}")]
    MalformedTfn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    /// Open path from an MM node to an RM node.
    Chain,
    /// Closed loop of BT nodes.
    Cycle,
    /// Open path left over after a nonperformance split. Its ends need not be
    /// excess nodes.
    Remainder,
    /// Single edge restored to the initial contract terms after a failure.
    RecoveredBilateral,
}

impl StructureKind {
    pub fn is_closed(self) -> bool {
        self == StructureKind::Cycle
    }
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StructureKind::Chain => "chain",
            StructureKind::Cycle => "cycle",
            StructureKind::Remainder => "remainder",
            StructureKind::RecoveredBilateral => "recovered_bilateral",
        })
    }
}

/// A chain, cycle or post-failure fragment carrying a uniform quantity.
///
/// For open structures `nodes` has one more entry than `edges`; for a cycle the
/// two have the same length and the last edge returns to `nodes[0]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structure {
    pub id: String,
    pub kind: StructureKind,
    pub nodes: Vec<SplitNode>,
    pub edges: Vec<EdgeSegment>,
}

impl Structure {
    pub fn from_edges(id: impl Into<String>, kind: StructureKind, edges: Vec<EdgeSegment>) -> Self {
        assert!(!edges.is_empty(), "structure without edges");
        let mut nodes: Vec<SplitNode> = edges.iter().map(|e| e.from.clone()).collect();
        if !kind.is_closed() {
            nodes.push(edges.last().unwrap().to.clone());
        }
        Structure {
            id: id.into(),
            kind,
            nodes,
            edges,
        }
    }

    pub fn qty(&self) -> Quantity {
        self.edges[0].qty
    }

    pub fn is_closed(&self) -> bool {
        self.kind.is_closed()
    }

    pub fn contains(&self, node: &SplitNode) -> bool {
        self.nodes.contains(node)
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}T]: {}", self.id, self.qty(), self.nodes[0])?;
        for e in &self.edges {
            write!(f, " -({})-> {}", e.m2, e.to)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub chains: Vec<Structure>,
    pub cycles: Vec<Structure>,
}

/// `(qty, m2, m1)` totals per ordered parent pair.
pub type PairTotals = BTreeMap<(AgentId, AgentId), (Quantity, Money, Money)>;

pub fn pair_totals<'a>(segments: impl IntoIterator<Item = &'a EdgeSegment>) -> PairTotals {
    let mut out = PairTotals::new();
    for s in segments {
        let e = out
            .entry((s.from.agent.clone(), s.to.agent.clone()))
            .or_insert((0, Money::ZERO, Money::ZERO));
        e.0 += s.qty;
        e.1 += s.m2;
        e.2 += s.m1;
    }
    out
}

impl Decomposition {
    pub fn structures(&self) -> impl Iterator<Item = &Structure> {
        self.chains.iter().chain(&self.cycles)
    }

    pub fn find(&self, id: &str) -> Option<&Structure> {
        self.structures().find(|s| s.id == id)
    }

    pub fn pair_totals(&self) -> PairTotals {
        pair_totals(self.structures().flat_map(|s| &s.edges))
    }
}

struct Residual {
    from: usize,
    to: usize,
    queue: VecDeque<Allocation>,
}

impl Residual {
    fn qty(&self) -> Quantity {
        self.queue.iter().map(|a| a.qty).sum()
    }

    fn front_qty(&self) -> Quantity {
        self.queue.front().map_or(0, |a| a.qty)
    }

    fn take_front(&mut self, units: Quantity) -> Allocation {
        let front = self.queue.pop_front().expect("peel from empty segment");
        let (head, tail) = front.split_front(units);
        if let Some(tail) = tail {
            self.queue.push_front(tail);
        }
        head
    }
}

struct Peeler {
    nodes: Vec<SplitNode>,
    residual: Vec<Residual>,
}

impl Peeler {
    fn new(tfn: &TradeFlowNetwork) -> Self {
        let nodes: Vec<SplitNode> = tfn.nodes.iter().cloned().collect();
        let index: BTreeMap<&SplitNode, usize> = nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
        let residual = tfn
            .segments
            .iter()
            .map(|s| {
                let mut allocs = s.allocations.clone();
                allocs.sort_by(|a, b| a.price_order(b));
                Residual {
                    from: index[&s.from],
                    to: index[&s.to],
                    queue: allocs.into(),
                }
            })
            .collect();
        Peeler { nodes, residual }
    }

    /// Rank of every live segment under the (price, trade id, position) order.
    fn ranks(&self) -> Vec<usize> {
        let mut live: Vec<usize> = (0..self.residual.len())
            .filter(|&i| self.residual[i].front_qty() > 0)
            .collect();
        live.sort_by(|&a, &b| {
            let fa = self.residual[a].queue.front().unwrap();
            let fb = self.residual[b].queue.front().unwrap();
            fa.lot.price_order(&fb.lot).then(a.cmp(&b))
        });
        let mut rank = vec![usize::MAX; self.residual.len()];
        for (r, i) in live.into_iter().enumerate() {
            rank[i] = r;
        }
        rank
    }

    /// Shortest path from any source to any target, ties broken by the
    /// lexicographically smallest sequence of segment ranks. Returns segment
    /// indices.
    fn best_path(&self, sources: &[usize], is_target: impl Fn(usize) -> bool) -> Option<Vec<usize>> {
        let rank = self.ranks();
        let n = self.nodes.len();
        let mut label: Vec<Option<Vec<usize>>> = vec![None; n];
        let mut pred: Vec<Option<usize>> = vec![None; n];
        let mut frontier: Vec<usize> = Vec::new();
        for &s in sources {
            if label[s].is_none() {
                label[s] = Some(Vec::new());
                frontier.push(s);
            }
        }
        while !frontier.is_empty() {
            let mut next: BTreeMap<usize, (Vec<usize>, usize)> = BTreeMap::new();
            for &u in &frontier {
                let base = label[u].as_ref().unwrap();
                for (i, r) in self.residual.iter().enumerate() {
                    if r.from != u || r.front_qty() == 0 || label[r.to].is_some() {
                        continue;
                    }
                    let mut cand = base.clone();
                    cand.push(rank[i]);
                    match next.get(&r.to) {
                        Some((best, _)) if *best <= cand => {}
                        _ => {
                            next.insert(r.to, (cand, i));
                        }
                    }
                }
            }
            let mut reached: Option<(Vec<usize>, usize)> = None;
            for (&v, (l, seg)) in &next {
                label[v] = Some(l.clone());
                pred[v] = Some(*seg);
                if is_target(v) && reached.as_ref().is_none_or(|(best, _)| l < best) {
                    reached = Some((l.clone(), v));
                }
            }
            if let Some((_, mut v)) = reached {
                let mut path = Vec::new();
                while let Some(seg) = pred[v] {
                    path.push(seg);
                    v = self.residual[seg].from;
                }
                path.reverse();
                return Some(path);
            }
            frontier = next.into_keys().collect();
        }
        None
    }

    fn peel(&mut self, path: &[usize]) -> Vec<EdgeSegment> {
        let units = path.iter().map(|&i| self.residual[i].front_qty()).min().unwrap();
        path.iter()
            .map(|&i| {
                let head = self.residual[i].take_front(units);
                let r = &self.residual[i];
                EdgeSegment::from_allocations(self.nodes[r.from].clone(), self.nodes[r.to].clone(), vec![head])
            })
            .collect()
    }

    fn role(&self, node: usize) -> Role {
        self.nodes[node].role
    }
}

/// Decomposes `tfn` completely into chains and cycles.
pub fn decompose(tfn: &TradeFlowNetwork) -> Result<Decomposition, DecomposeError> {
    let unbalanced = tfn.unbalanced_nodes();
    if !unbalanced.is_empty() {
        let labels: Vec<String> = unbalanced.iter().map(|n| n.to_string()).collect();
        return Err(DecomposeError::MalformedTfn(format!(
            "unbalanced BT nodes {}",
            labels.join(", ")
        )));
    }
    if let Some(s) = tfn
        .segments
        .iter()
        .find(|s| s.from.role == Role::Rm || s.to.role == Role::Mm)
    {
        return Err(DecomposeError::MalformedTfn(format!(
            "segment {} -> {} runs against excess roles",
            s.from, s.to
        )));
    }
    let mut peeler = Peeler::new(tfn);
    let mut out = Decomposition::default();

    loop {
        let sources: Vec<usize> = peeler
            .residual
            .iter()
            .filter(|r| r.front_qty() > 0 && peeler.role(r.from) == Role::Mm)
            .map(|r| r.from)
            .collect();
        if sources.is_empty() {
            break;
        }
        let path = peeler
            .best_path(&sources, |v| peeler.role(v) == Role::Rm)
            .ok_or_else(|| DecomposeError::MalformedTfn("excess flow does not reach an RM node".into()))?;
        let edges = peeler.peel(&path);
        let id = format!("chain-{}", out.chains.len() + 1);
        out.chains.push(Structure::from_edges(id, StructureKind::Chain, edges));
    }

    loop {
        let rank = peeler.ranks();
        let Some(start) = (0..peeler.residual.len())
            .filter(|&i| rank[i] != usize::MAX)
            .min_by_key(|&i| rank[i])
        else {
            break;
        };
        let (s_from, s_to) = (peeler.residual[start].from, peeler.residual[start].to);
        let back = peeler
            .best_path(&[s_to], |v| v == s_from)
            .ok_or_else(|| DecomposeError::MalformedTfn("balanced flow does not close into a cycle".into()))?;
        let mut path = vec![start];
        path.extend(back);
        let edges = peeler.peel(&path);
        let id = format!("cycle-{}", out.cycles.len() + 1);
        out.cycles.push(Structure::from_edges(id, StructureKind::Cycle, edges));
    }

    debug_assert!(peeler.residual.iter().all(|r| r.qty() == 0));
    Ok(out)
}

/// One edge of a first-leg structure: the security moves from the second-leg
/// receiver back to the lender, and the lender pays the first-leg money.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorEdge {
    pub security_from: SplitNode,
    pub security_to: SplitNode,
    pub qty: Quantity,
    /// Paid by `security_to` to `security_from`.
    pub money: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorStructure {
    pub id: String,
    pub kind: StructureKind,
    pub edges: Vec<MirrorEdge>,
}

pub fn mirror_structure(s: &Structure) -> MirrorStructure {
    MirrorStructure {
        id: s.id.clone(),
        kind: s.kind,
        edges: s
            .edges
            .iter()
            .map(|e| MirrorEdge {
                security_from: e.to.clone(),
                security_to: e.from.clone(),
                qty: e.qty,
                money: e.m1,
            })
            .collect(),
    }
}

/// First-leg counterpart of every chain and cycle.
pub fn mirror_first_leg(d: &Decomposition) -> Vec<MirrorStructure> {
    d.structures().map(mirror_structure).collect()
}
