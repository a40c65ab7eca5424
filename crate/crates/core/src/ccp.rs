//! Central-clearing comparator.
//!
//! Every trade flow network segment is novated to a single central
//! counterparty. Each agent's matched (BT) volume collapses to one net money
//! amount against the CCP, while excess volume stays a repo with the CCP on its
//! original terms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::accounting::{
    impact_repomech, matched_fmv, positions_from_segments, AccountingOptions, AccountingRegime, AgentPosition,
    BalanceSheetDelta, EndNodePolicy, RoleFlows,
};
use crate::fixed::{Money, Price};
use crate::network::{EdgeSegment, Role, TradeFlowNetwork};
use crate::trade::{AgentId, Quantity};

pub const CCP_ID: &str = "CCP";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcpPosition {
    pub agent: AgentId,
    /// Matched flows, now all facing the CCP.
    pub matched: RoleFlows,
    pub excess_role: Option<Role>,
    pub excess: RoleFlows,
}

impl CcpPosition {
    pub fn matched_qty(&self) -> Quantity {
        self.matched.qty_in
    }

    pub fn excess_qty(&self) -> Quantity {
        self.excess.qty_in + self.excess.qty_out
    }

    /// Net second-leg money receivable from the CCP over all volume.
    pub fn net_second_leg(&self) -> Money {
        self.matched.second_leg_net() + self.excess.second_leg_net()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcpBook {
    pub ccp: AgentId,
    pub positions: BTreeMap<AgentId, CcpPosition>,
    /// BT-to-BT segments replaced by the per-agent net amounts.
    pub extinguished: Vec<EdgeSegment>,
    /// CCP security outflow minus inflow.
    pub ccp_t_net: i64,
    /// CCP second-leg money outflow minus inflow.
    pub ccp_m_net: Money,
}

pub fn central_clear(tfn: &TradeFlowNetwork) -> CcpBook {
    let positions: BTreeMap<AgentId, CcpPosition> = positions_from_segments(&tfn.segments)
        .into_iter()
        .map(|(agent, p)| {
            let (excess_role, excess) = if !p.mm.is_empty() {
                (Some(Role::Mm), p.mm)
            } else if !p.rm.is_empty() {
                (Some(Role::Rm), p.rm)
            } else {
                (None, RoleFlows::default())
            };
            let pos = CcpPosition {
                agent: agent.clone(),
                matched: p.bt,
                excess_role,
                excess,
            };
            (agent, pos)
        })
        .collect();
    let mut ccp_t_net = 0i64;
    let mut ccp_m_net = Money::ZERO;
    for p in positions.values() {
        ccp_t_net += p.excess.qty_in as i64 - p.excess.qty_out as i64;
        ccp_t_net += p.matched.qty_in as i64 - p.matched.qty_out as i64;
        ccp_m_net += p.net_second_leg();
    }
    CcpBook {
        ccp: AgentId::from(CCP_ID),
        positions,
        extinguished: tfn
            .segments
            .iter()
            .filter(|s| s.from.role == Role::Bt && s.to.role == Role::Bt)
            .cloned()
            .collect(),
        ccp_t_net,
        ccp_m_net,
    }
}

/// Matched volume is a final sale against the CCP; excess volume is a secured
/// financing.
pub fn impact_central_clearing(pos: &CcpPosition, opts: &AccountingOptions) -> BalanceSheetDelta {
    let mut d = BalanceSheetDelta::new(AccountingRegime::CentralClearing);
    if !pos.matched.is_empty() {
        let fmv = matched_fmv(pos.matched.second_leg_net(), opts.fmv_adjustment);
        d.final_sale("matched", pos.matched.first_leg_net(), fmv, opts.posting);
    }
    if pos.excess_role == Some(Role::Rm) {
        d.secured_borrowing("excess", &pos.excess);
    }
    d
}

/// Optional clearing fee on every unit the agent novates.
pub fn clearing_fee(pos: &CcpPosition, fee_per_unit: Price) -> Money {
    fee_per_unit.times(pos.matched.qty_in + pos.matched.qty_out + pos.excess_qty())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetGrowthRow {
    pub agent: AgentId,
    pub policy: EndNodePolicy,
    pub repomech_d_assets: Money,
    pub ccp_d_assets: Money,
    pub holds: bool,
}

/// Compares RepoMech and central-clearing asset growth agent by agent under
/// common accounting options.
pub fn compare_asset_growth(
    repomech: &BTreeMap<AgentId, AgentPosition>,
    book: &CcpBook,
    opts: &AccountingOptions,
) -> Vec<AssetGrowthRow> {
    let agents: std::collections::BTreeSet<&AgentId> = repomech.keys().chain(book.positions.keys()).collect();
    agents
        .into_iter()
        .map(|a| {
            let rm = repomech
                .get(a)
                .map_or(Money::ZERO, |p| impact_repomech(p, opts).d_assets);
            let cc = book
                .positions
                .get(a)
                .map_or(Money::ZERO, |p| impact_central_clearing(p, opts).d_assets);
            AssetGrowthRow {
                agent: a.clone(),
                policy: opts.end_node,
                repomech_d_assets: rm,
                ccp_d_assets: cc,
                holds: rm <= cc,
            }
        })
        .collect()
}
