//! Plain-text tables for the report sections.

use std::fmt::Write;

use crate::decompose::MirrorStructure;
use crate::network::TradeFlowNetwork;
use crate::pipeline::{AccountingRow, CcpComparison, ContractView, DecompositionView, ScenarioReport, StructureView};
use crate::trade::NettingResult;

/// Column-aligned table. Numeric-looking cells are right-aligned.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<I, S>(header: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.rows.push(cells.into_iter().map(Into::into).collect());
    }

    pub fn render(&self) -> String {
        let n = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (i, c) in r.iter().enumerate().take(n) {
                widths[i] = widths[i].max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let mut s = String::new();
            for (i, w) in widths.iter().enumerate() {
                let c = cells.get(i).map_or("", String::as_str);
                if i > 0 {
                    s.push_str("  ");
                }
                if is_numeric(c) {
                    let _ = write!(s, "{c:>w$}");
                } else {
                    let _ = write!(s, "{c:<w$}");
                }
            }
            out.push_str(s.trim_end());
            out.push('\n');
        };
        line(&mut out, &self.header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule);
        for r in &self.rows {
            line(&mut out, r);
        }
        out
    }
}

fn is_numeric(s: &str) -> bool {
    !s.is_empty() && s.parse::<f64>().is_ok()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

pub fn netting(n: &NettingResult) -> String {
    let mut t = Table::new(["from", "to", "qty", "m2", "m1", "trades"]);
    for e in &n.edges {
        let ids: Vec<String> = e.allocations.iter().map(|a| a.trade_id.to_string()).collect();
        t.row([
            e.from.to_string(),
            e.to.to_string(),
            e.qty.to_string(),
            e.m2.to_string(),
            e.m1.to_string(),
            ids.join(","),
        ]);
    }
    let mut out = t.render();
    if !n.cash_residuals.is_empty() {
        let mut c = Table::new(["payee", "payer", "m2", "m1"]);
        for r in &n.cash_residuals {
            c.row([
                r.payee.to_string(),
                r.payer.to_string(),
                r.m2.to_string(),
                r.m1.to_string(),
            ]);
        }
        out.push_str("\ncash residuals\n");
        out.push_str(&c.render());
    }
    out
}

pub fn tfn(tfn: &TradeFlowNetwork) -> String {
    let mut t = Table::new(["from", "to", "qty", "m2", "m1"]);
    for s in &tfn.segments {
        t.row([
            s.from.to_string(),
            s.to.to_string(),
            s.qty.to_string(),
            s.m2.to_string(),
            s.m1.to_string(),
        ]);
    }
    t.render()
}

fn structures(out: &mut String, list: &[StructureView]) {
    for s in list {
        let _ = write!(out, "{} ({}, {}T): {}", s.id, s.kind, s.qty, s.nodes[0]);
        for e in &s.edges {
            let _ = write!(out, " -({})-> {}", e.m2, e.to);
        }
        out.push('\n');
        let mut t = Table::new(["  from", "to", "qty", "m2", "m1", "trades"]);
        for e in &s.edges {
            let ids: Vec<String> = e.trades.iter().map(ToString::to_string).collect();
            t.row([
                format!("  {}", e.from),
                e.to.to_string(),
                e.qty.to_string(),
                e.m2.to_string(),
                e.m1.to_string(),
                ids.join(","),
            ]);
        }
        out.push_str(&t.render());
        out.push('\n');
    }
}

pub fn decomposition(d: &DecompositionView) -> String {
    let mut out = String::new();
    structures(&mut out, &d.chains);
    structures(&mut out, &d.cycles);
    out
}

pub fn first_leg(list: &[MirrorStructure]) -> String {
    let mut t = Table::new(["structure", "security from", "security to", "qty", "money"]);
    for m in list {
        for e in &m.edges {
            t.row([
                m.id.clone(),
                e.security_from.to_string(),
                e.security_to.to_string(),
                e.qty.to_string(),
                e.money.to_string(),
            ]);
        }
    }
    t.render()
}

pub fn contracts(list: &[ContractView]) -> String {
    let mut t = Table::new(["structure", "status", "node", "t_net", "m_net", "margin"]);
    for c in list {
        for (node, o) in &c.obligations {
            t.row([
                c.structure_id.clone(),
                c.status.to_string(),
                node.to_string(),
                o.t_net.to_string(),
                o.m_net.to_string(),
                opt(c.margin.get(node)),
            ]);
        }
    }
    t.render()
}

pub fn accounting(rows: &[AccountingRow]) -> String {
    let mut t = Table::new([
        "agent",
        "roles",
        "regime",
        "dA",
        "dL",
        "slr before",
        "slr after",
        "haircut",
    ]);
    for r in rows {
        let roles: Vec<String> = r.roles.iter().map(ToString::to_string).collect();
        t.row([
            r.agent.to_string(),
            roles.join("+"),
            r.regime.clone(),
            r.d_assets.to_string(),
            r.d_liabilities.to_string(),
            opt(r.slr_before.map(|s| s.ratio_rounded)),
            opt(r.slr_after.map(|s| s.ratio_rounded)),
            opt(r.haircut.map(|h| format!("{h:.4}"))),
        ]);
    }
    t.render()
}

pub fn ccp(c: &CcpComparison) -> String {
    let mut t = Table::new([
        "agent",
        "matched",
        "excess",
        "excess qty",
        "repomech dA",
        "ccp dA",
        "repomech <= ccp",
        "fee",
    ]);
    for r in &c.rows {
        t.row([
            r.agent.to_string(),
            r.matched_qty.to_string(),
            opt(r.excess_role),
            r.excess_qty.to_string(),
            r.repomech_d_assets.to_string(),
            r.ccp_d_assets.to_string(),
            if r.holds { "yes" } else { "no" }.to_string(),
            opt(r.fee),
        ]);
    }
    let mut out = format!(
        "end-node policy: {}\nccp net T: {}  ccp net M: {}  extinguished BT segments: {}\n\n",
        c.end_node_policy, c.ccp_t_net, c.ccp_m_net, c.extinguished_segments
    );
    out.push_str(&t.render());
    out
}

pub fn scenario(r: &ScenarioReport) -> String {
    let mut out = String::new();
    for (i, s) in r.steps.iter().enumerate() {
        let _ = writeln!(
            out,
            "step {}: {} fails {} on {}",
            i + 1,
            s.event.node,
            s.event.object,
            s.event.structure
        );
        if s.new_structures.is_empty() {
            out.push_str("  final default\n");
        }
        for v in &s.new_structures {
            let _ = write!(out, "  {} ({}): {}", v.id, v.kind, v.nodes[0]);
            for e in &v.edges {
                let _ = write!(out, " -({})-> {}", e.m2, e.to);
            }
            out.push('\n');
        }
        if let Some(rec) = &s.recovered {
            let _ = writeln!(out, "  recovered unit price {}", rec.unit_price);
        }
    }
    let mut t = Table::new(["structure", "status"]);
    for (id, st) in &r.final_status {
        t.row([id.clone(), st.to_string()]);
    }
    out.push('\n');
    out.push_str(&t.render());
    out
}
