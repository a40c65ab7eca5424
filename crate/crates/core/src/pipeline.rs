//! End-to-end pipeline and the serializable report bundle.
//!
//! Report types use node labels such as `MM_g` and keep every collection in a
//! fixed order, so identical inputs serialize to identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::{
    impact_post_reform, impact_pre_reform, impact_repomech, positions, pre_reform_fmv, slr_check, AccountingOptions,
    AgentPosition, Component, EndNodePolicy, SlrError, SlrOutcome, SlrState,
};
use crate::ccp::{central_clear, clearing_fee, compare_asset_growth, impact_central_clearing};
use crate::decompose::{
    decompose, mirror_first_leg, DecomposeError, Decomposition, MirrorStructure, Structure, StructureKind,
};
use crate::fixed::{Money, Price};
use crate::network::{
    build_flow_network, split_nodes, FlowNetwork, NetworkError, Role, SplitNode, SplitPolicy, TradeFlowNetwork,
};
use crate::settlement::{
    margin_requirements, net_obligations, CascadeState, ContractStatus, MarginInputs, NetObligation,
    NonperformanceEvent, Outcome, RecoveredBilateral, SettlementError,
};
use crate::trade::{
    bilateral_net, validate_book, AgentId, BookError, NettingResult, RepoTrade, TradeId, ValidatedBook,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Book(#[from] BookError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Settlement(#[from] SettlementError),
    #[error(transparent)]
    Slr(#[from] SlrError),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub policy: SplitPolicy,
    pub accounting: AccountingOptions,
    pub slr: Option<SlrState>,
    pub fee_per_unit: Option<Price>,
    pub margin: MarginInputs,
    pub market_price: Option<Price>,
}

/// Intermediate results of the graph stages.
#[derive(Debug, Clone)]
pub struct Stages {
    pub book: ValidatedBook,
    pub netting: NettingResult,
    pub network: FlowNetwork,
    pub tfn: TradeFlowNetwork,
    pub decomposition: Decomposition,
}

pub fn run_stages(trades: Vec<RepoTrade>, policy: &SplitPolicy) -> Result<Stages, PipelineError> {
    let book = validate_book(trades)?;
    let netting = bilateral_net(&book);
    let network = build_flow_network(&netting.edges);
    let tfn = split_nodes(&network, policy)?;
    let decomposition = decompose(&tfn)?;
    Ok(Stages {
        book,
        netting,
        network,
        tfn,
        decomposition,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeView {
    pub from: SplitNode,
    pub to: SplitNode,
    pub qty: u64,
    pub m2: Money,
    pub m1: Money,
    pub trades: Vec<TradeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureView {
    pub id: String,
    pub kind: StructureKind,
    pub qty: u64,
    pub nodes: Vec<SplitNode>,
    pub edges: Vec<EdgeView>,
}

impl From<&Structure> for StructureView {
    fn from(s: &Structure) -> Self {
        StructureView {
            id: s.id.clone(),
            kind: s.kind,
            qty: s.qty(),
            nodes: s.nodes.clone(),
            edges: s
                .edges
                .iter()
                .map(|e| {
                    let mut trades: Vec<TradeId> = e.allocations.iter().flat_map(|a| a.lot.trade_ids()).collect();
                    trades.sort();
                    trades.dedup();
                    EdgeView {
                        from: e.from.clone(),
                        to: e.to.clone(),
                        qty: e.qty,
                        m2: e.m2,
                        m1: e.m1,
                        trades,
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionView {
    pub chains: Vec<StructureView>,
    pub cycles: Vec<StructureView>,
}

impl From<&Decomposition> for DecompositionView {
    fn from(d: &Decomposition) -> Self {
        DecompositionView {
            chains: d.chains.iter().map(StructureView::from).collect(),
            cycles: d.cycles.iter().map(StructureView::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractView {
    pub structure_id: String,
    pub kind: StructureKind,
    pub status: ContractStatus,
    pub obligations: BTreeMap<SplitNode, NetObligation>,
    pub margin: BTreeMap<SplitNode, Money>,
}

pub fn contract_view(s: &Structure, status: ContractStatus, margin: MarginInputs) -> ContractView {
    ContractView {
        structure_id: s.id.clone(),
        kind: s.kind,
        status,
        obligations: net_obligations(s),
        margin: margin_requirements(s, margin),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountingRow {
    pub agent: AgentId,
    pub roles: Vec<Role>,
    pub regime: String,
    pub d_assets: Money,
    pub d_liabilities: Money,
    pub components: Vec<Component>,
    pub slr_before: Option<SlrOutcome>,
    pub slr_after: Option<SlrOutcome>,
    pub haircut: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcpRow {
    pub agent: AgentId,
    pub matched_qty: u64,
    pub excess_role: Option<Role>,
    pub excess_qty: u64,
    pub repomech_d_assets: Money,
    pub repomech_d_liabilities: Money,
    pub ccp_d_assets: Money,
    pub ccp_d_liabilities: Money,
    pub holds: bool,
    pub fee: Option<Money>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcpComparison {
    pub end_node_policy: EndNodePolicy,
    pub ccp_t_net: i64,
    pub ccp_m_net: Money,
    pub extinguished_segments: usize,
    pub rows: Vec<CcpRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub trades: usize,
    pub netting: NettingResult,
    pub tfn: TradeFlowNetwork,
    pub decomposition: DecompositionView,
    pub first_leg: Vec<MirrorStructure>,
    pub contracts: Vec<ContractView>,
    pub accounting: Vec<AccountingRow>,
    pub ccp: CcpComparison,
}

fn roles_of(p: &AgentPosition) -> Vec<Role> {
    [Role::Mm, Role::Bt, Role::Rm]
        .into_iter()
        .filter(|&r| !p.role(r).is_empty())
        .collect()
}

pub fn accounting_rows(
    positions: &BTreeMap<AgentId, AgentPosition>,
    config: &PipelineConfig,
) -> Result<Vec<AccountingRow>, PipelineError> {
    let mut rows = Vec::new();
    for p in positions.values() {
        let mut p = p.clone();
        p.market_price = config.market_price;
        let deltas = [
            impact_pre_reform(
                &p,
                pre_reform_fmv(&p, config.accounting.fmv_adjustment),
                config.accounting.posting,
            ),
            impact_post_reform(&p),
            impact_repomech(&p, &config.accounting),
        ];
        for d in deltas {
            let (before, after) = match &config.slr {
                Some(st) => (Some(slr_check(st, Money::ZERO)?), Some(slr_check(st, d.d_assets)?)),
                None => (None, None),
            };
            rows.push(AccountingRow {
                agent: p.agent.clone(),
                roles: roles_of(&p),
                regime: d.regime.to_string(),
                d_assets: d.d_assets,
                d_liabilities: d.d_liabilities,
                components: d.components,
                slr_before: before,
                slr_after: after,
                haircut: p.haircut(),
            });
        }
    }
    Ok(rows)
}

pub fn ccp_comparison(tfn: &TradeFlowNetwork, d: &Decomposition, config: &PipelineConfig) -> CcpComparison {
    let book = central_clear(tfn);
    let pos = positions(d);
    let opts = &config.accounting;
    let prop = compare_asset_growth(&pos, &book, opts);
    let rows = prop
        .into_iter()
        .map(|r| {
            let rm = pos.get(&r.agent).map(|p| impact_repomech(p, opts));
            let cp = book.positions.get(&r.agent);
            let cc = cp.map(|p| impact_central_clearing(p, opts));
            CcpRow {
                agent: r.agent.clone(),
                matched_qty: cp.map_or(0, |p| p.matched_qty()),
                excess_role: cp.and_then(|p| p.excess_role),
                excess_qty: cp.map_or(0, |p| p.excess_qty()),
                repomech_d_assets: r.repomech_d_assets,
                repomech_d_liabilities: rm.map_or(Money::ZERO, |x| x.d_liabilities),
                ccp_d_assets: r.ccp_d_assets,
                ccp_d_liabilities: cc.map_or(Money::ZERO, |x| x.d_liabilities),
                holds: r.holds,
                fee: config.fee_per_unit.zip(cp).map(|(f, p)| clearing_fee(p, f)),
            }
        })
        .collect();
    CcpComparison {
        end_node_policy: opts.end_node,
        ccp_t_net: book.ccp_t_net,
        ccp_m_net: book.ccp_m_net,
        extinguished_segments: book.extinguished.len(),
        rows,
    }
}

pub fn run_pipeline(trades: Vec<RepoTrade>, config: &PipelineConfig) -> Result<Report, PipelineError> {
    let st = run_stages(trades, &config.policy)?;
    let contracts = st
        .decomposition
        .structures()
        .map(|s| contract_view(s, ContractStatus::Active, config.margin))
        .collect();
    let accounting = accounting_rows(&positions(&st.decomposition), config)?;
    let ccp = ccp_comparison(&st.tfn, &st.decomposition, config);
    Ok(Report {
        trades: st.book.len(),
        first_leg: mirror_first_leg(&st.decomposition),
        decomposition: DecompositionView::from(&st.decomposition),
        netting: st.netting,
        tfn: st.tfn,
        contracts,
        accounting,
        ccp,
    })
}

/// A default scenario: an ordered list of failures, plus optional defaults
/// for the book and split policy.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Scenario {
    /// Trade book, relative to the scenario file.
    #[serde(default)]
    pub input: Option<PathBuf>,
    /// `ascending` or `explicit:<file>`, relative to the scenario file.
    #[serde(default)]
    pub policy: Option<String>,
    #[serde(default)]
    pub margin: MarginInputs,
    pub events: Vec<NonperformanceEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioStep {
    pub event: NonperformanceEvent,
    pub outcome: Outcome,
    pub new_structures: Vec<StructureView>,
    pub recovered: Option<RecoveredBilateral>,
    pub contracts: Vec<ContractView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub steps: Vec<ScenarioStep>,
    pub final_status: BTreeMap<String, ContractStatus>,
}

/// Applies `events` in order. The first invalid event aborts the run.
pub fn run_scenario(
    d: &Decomposition,
    events: &[NonperformanceEvent],
    margin: MarginInputs,
) -> Result<ScenarioReport, PipelineError> {
    let mut state = CascadeState::new(d);
    let mut steps = Vec::new();
    for ev in events {
        let outcome = state.apply(ev)?.clone();
        let (new_structures, recovered) = match &outcome {
            Outcome::Split {
                children, recovered, ..
            } => {
                let views = children
                    .iter()
                    .map(|id| StructureView::from(&state.get(id).unwrap().structure))
                    .collect();
                let rec = RecoveredBilateral::from_structure(&state.get(recovered).unwrap().structure);
                (views, Some(rec))
            }
            Outcome::FinalDefault { .. } => (Vec::new(), None),
        };
        let contracts = match &outcome {
            Outcome::Split { children, .. } => children
                .iter()
                .map(|id| {
                    let e = state.get(id).unwrap();
                    contract_view(&e.structure, e.status, margin)
                })
                .collect(),
            Outcome::FinalDefault { .. } => Vec::new(),
        };
        steps.push(ScenarioStep {
            event: ev.clone(),
            outcome,
            new_structures,
            recovered,
            contracts,
        });
    }
    let final_status = state
        .entries
        .iter()
        .map(|e| (e.structure.id.clone(), e.status))
        .collect();
    Ok(ScenarioReport { steps, final_status })
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types always serialize");
    s.push('\n');
    s
}

/// Writes every section of `report` as `<name>.json` and `<name>.txt` under
/// `dir`, plus the whole bundle as `report.json`.
pub fn write_bundle(report: &Report, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    use crate::report as text;
    std::fs::create_dir_all(dir)?;
    let sections: Vec<(&str, String, Option<String>)> = vec![
        ("netted", to_json(&report.netting), Some(text::netting(&report.netting))),
        ("tfn", to_json(&report.tfn), Some(text::tfn(&report.tfn))),
        (
            "decomposition",
            to_json(&report.decomposition),
            Some(text::decomposition(&report.decomposition)),
        ),
        (
            "first_leg",
            to_json(&report.first_leg),
            Some(text::first_leg(&report.first_leg)),
        ),
        (
            "contracts",
            to_json(&report.contracts),
            Some(text::contracts(&report.contracts)),
        ),
        (
            "accounting",
            to_json(&report.accounting),
            Some(text::accounting(&report.accounting)),
        ),
        ("ccp", to_json(&report.ccp), Some(text::ccp(&report.ccp))),
        ("report", to_json(report), None),
    ];
    let mut written = Vec::new();
    for (name, json, txt) in sections {
        let path = dir.join(format!("{name}.json"));
        std::fs::write(&path, json)?;
        written.push(path);
        if let Some(txt) = txt {
            let path = dir.join(format!("{name}.txt"));
            std::fs::write(&path, txt)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{example_assignment, example_book};
    use crate::settlement::FailedObject;

    #[test]
    fn fixture_pipeline_is_deterministic() {
        let config = PipelineConfig {
            policy: example_assignment(),
            ..Default::default()
        };
        let a = to_json(&run_pipeline(example_book(), &config).unwrap());
        let b = to_json(&run_pipeline(example_book(), &config).unwrap());
        assert_eq!(a, b);
        assert!(a.contains("\"MM_g\""));
    }

    #[test]
    fn empty_book_runs() {
        let r = run_pipeline(vec![], &PipelineConfig::default()).unwrap();
        assert_eq!(r.trades, 0);
        assert!(r.decomposition.chains.is_empty() && r.accounting.is_empty() && r.ccp.rows.is_empty());
    }

    #[test]
    fn scenario_logs_children() {
        let st = run_stages(example_book(), &example_assignment()).unwrap();
        let ev = NonperformanceEvent {
            structure: "chain-7".into(),
            node: "BT_i".parse().unwrap(),
            object: FailedObject::Money,
        };
        let rep = run_scenario(&st.decomposition, &[ev], MarginInputs::default()).unwrap();
        let step = &rep.steps[0];
        let ids: Vec<&str> = step.new_structures.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["chain-7a", "chain-7b", "chain-7c"]);
        assert_eq!(step.recovered.as_ref().unwrap().unit_price.to_string(), "5.12");
        assert_eq!(rep.final_status["chain-7"], ContractStatus::Terminated);
    }

    #[test]
    fn scenario_file_parses() {
        let text = r#"{"input":"example_book.csv","policy":"explicit:example_assignment.json",
            "margin":{"delta_price":"0.50","delta_vol":"0","vol_coeff":"0"},
            "events":[{"structure":"chain-7","node":"BT_i","object":"M"}]}"#;
        let s: Scenario = serde_json::from_str(text).unwrap();
        assert_eq!(s.events[0].object, FailedObject::Money);
        assert_eq!(s.margin.delta_price.to_string(), "0.50");
    }
}
