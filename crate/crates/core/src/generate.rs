//! Seeded random trade books for property checks and demos.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fixed::{Price, SCALE};
use crate::trade::RepoTrade;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("a book needs at least two agents, got {0}")]
    TooFewAgents(usize),
}

/// Price and size ranges of generated trades. Prices are whole cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorBands {
    pub min_first_leg_cents: i64,
    pub max_first_leg_cents: i64,
    /// Repo rate upper bound in basis points; the lower bound is zero.
    pub max_rate_bp: i64,
    pub max_qty: i64,
}

impl Default for GeneratorBands {
    fn default() -> Self {
        GeneratorBands {
            min_first_leg_cents: 100,
            max_first_leg_cents: 1_000,
            max_rate_bp: 1_000,
            max_qty: 20,
        }
    }
}

pub fn agent_name(i: usize) -> String {
    format!("a{i}")
}

/// Reproducible book of `n_trades` trades among `n_agents` agents with ids
/// `1..=n_trades`.
pub fn generate_book(seed: u64, n_agents: usize, n_trades: usize) -> Result<Vec<RepoTrade>, GenerateError> {
    generate_book_with(seed, n_agents, n_trades, GeneratorBands::default())
}

pub fn generate_book_with(
    seed: u64,
    n_agents: usize,
    n_trades: usize,
    bands: GeneratorBands,
) -> Result<Vec<RepoTrade>, GenerateError> {
    if n_agents < 2 {
        return Err(GenerateError::TooFewAgents(n_agents));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cent = SCALE / 100;
    Ok((1..=n_trades)
        .map(|id| {
            let lender = rng.gen_range(0..n_agents);
            let mut borrower = rng.gen_range(0..n_agents - 1);
            if borrower >= lender {
                borrower += 1;
            }
            let p1_cents = rng.gen_range(bands.min_first_leg_cents..=bands.max_first_leg_cents);
            let rate_bp = rng.gen_range(0..=bands.max_rate_bp);
            // p2 = p1 * (1 + rate), rounded down to a cent
            let p2_cents = p1_cents + p1_cents * rate_bp / 10_000;
            let qty = rng.gen_range(1..=bands.max_qty);
            RepoTrade::new(
                id.to_string(),
                agent_name(lender),
                agent_name(borrower),
                Price::from_ticks(p1_cents * cent),
                Price::from_ticks(p2_cents * cent),
                qty,
            )
        })
        .collect())
}
