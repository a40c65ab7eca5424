//! Multilateral netting of repo second-leg trades.
//!
//! A book of bilateral repos is netted pairwise, each agent is split into
//! excess and matched-trade children, and the resulting flow network is
//! decomposed into chains and cycles of replacement contracts. Settlement,
//! default cascades, balance-sheet effects and a central-counterparty
//! comparison are computed on that decomposition.

pub mod accounting;
pub mod ccp;
pub mod decompose;
pub mod econ;
pub mod fixed;
pub mod fixtures;
pub mod generate;
pub mod ingest;
pub mod network;
pub mod pipeline;
pub mod report;
pub mod settlement;
pub mod trade;
