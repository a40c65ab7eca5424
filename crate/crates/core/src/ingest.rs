//! CSV and JSON trade-book ingestion and CSV export.
//!
//! Both formats use the columns
//! `trade_id,lender,borrower,first_leg_price,second_leg_price,quantity`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::{ParseFixedError, Price};
use crate::trade::RepoTrade;

pub const CSV_HEADER: [&str; 6] = [
    "trade_id",
    "lender",
    "borrower",
    "first_leg_price",
    "second_leg_price",
    "quantity",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("unexpected csv header {found:?}; expected {expected:?}")]
    Header { found: Vec<String>, expected: Vec<String> },
    #[error("record {record}: field {field}: {source}")]
    Price {
        record: usize,
        field: &'static str,
        source: ParseFixedError,
    },
    #[error("record {record}: quantity {value:?} is not an integer")]
    Quantity { record: usize, value: String },
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    trade_id: String,
    lender: String,
    borrower: String,
    first_leg_price: String,
    second_leg_price: String,
    quantity: String,
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<RepoTrade>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if !headers.is_empty() && headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(IngestError::Header {
            found: headers.iter().map(str::to_string).collect(),
            expected: CSV_HEADER.iter().map(|s| s.to_string()).collect(),
        });
    }
    let mut trades = Vec::new();
    for (i, rec) in rdr.deserialize::<RawRecord>().enumerate() {
        let rec = rec?;
        let record = i + 1;
        let price = |field: &'static str, raw: &str| -> Result<Price, IngestError> {
            raw.parse()
                .map_err(|source| IngestError::Price { record, field, source })
        };
        let first_leg_price = price("first_leg_price", &rec.first_leg_price)?;
        let second_leg_price = price("second_leg_price", &rec.second_leg_price)?;
        let quantity = rec.quantity.parse().map_err(|_| IngestError::Quantity {
            record,
            value: rec.quantity.clone(),
        })?;
        trades.push(RepoTrade::new(
            rec.trade_id,
            rec.lender,
            rec.borrower,
            first_leg_price,
            second_leg_price,
            quantity,
        ));
    }
    Ok(trades)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonBook {
    Bare(Vec<RepoTrade>),
    Wrapped { trades: Vec<RepoTrade> },
}

/// Accepts either a bare array of trades or `{"trades": [...]}`.
pub fn read_json<R: Read>(reader: R) -> Result<Vec<RepoTrade>, IngestError> {
    Ok(match serde_json::from_reader(reader)? {
        JsonBook::Bare(t) => t,
        JsonBook::Wrapped { trades } => trades,
    })
}

/// Reads a book, choosing the format by file extension (`.json` or CSV otherwise).
pub fn read_book(path: &Path) -> Result<Vec<RepoTrade>, IngestError> {
    let file = std::fs::File::open(path)?;
    let is_json = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        read_json(file)
    } else {
        read_csv(file)
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    trade_id: &'a str,
    lender: &'a str,
    borrower: &'a str,
    first_leg_price: String,
    second_leg_price: String,
    quantity: i64,
}

pub fn write_csv<W: Write>(writer: W, trades: &[RepoTrade]) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(writer);
    if trades.is_empty() {
        wtr.write_record(CSV_HEADER)?;
    }
    for t in trades {
        wtr.serialize(CsvRow {
            trade_id: t.trade_id.as_str(),
            lender: t.lender.as_str(),
            borrower: t.borrower.as_str(),
            first_leg_price: t.first_leg_price.to_string(),
            second_leg_price: t.second_leg_price.to_string(),
            quantity: t.quantity,
        })?;
    }
    wtr.flush()?;
    Ok(())
}
