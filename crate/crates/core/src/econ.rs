//! Repo supply and demand curves and the dealer's rate choice under a leverage
//! floor.
//!
//! Hedge funds supply collateral `S(r)` with `S + (m/A) S^2 = (alpha - r)/A`,
//! money funds demand `D(r)` with `a D + b D^2 = r - r0`. The dealer offers the
//! money fund a rate `r` in `[r0, r_int]` and earns `(r_int - r) D(r)` minus
//! the capital cost `c * L * max(D(r) - D_bar, 0)` on volume beyond its
//! balance-sheet capacity `D_bar`.
//!
//! Model curves use `f64`.

// negated comparisons so that NaN parameters fail validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EconError {
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("inter-dealer rate {r_int} lies below the outside option {r0}")]
    EmptyFeasibleRange { r0: f64, r_int: f64 },
    #[error("capacity constraint does not bind at floor {floor}")]
    NotBinding { floor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeFundParams {
    pub alpha: f64,
    pub gamma_sigma2: f64,
    pub k: f64,
    pub m: f64,
}

impl HedgeFundParams {
    pub fn validate(&self) -> Result<(), EconError> {
        if !(self.gamma_sigma2 > 0.0) {
            return Err(EconError::InvalidParams("gamma_sigma2 must be positive"));
        }
        if !(self.m > 0.0) {
            return Err(EconError::InvalidParams("m must be positive"));
        }
        if !(self.k >= 0.0) {
            return Err(EconError::InvalidParams("k must be non-negative"));
        }
        Ok(())
    }

    /// Linear cost coefficient `gamma_sigma2 + k`.
    pub fn a_coef(&self) -> f64 {
        self.gamma_sigma2 + self.k
    }

    pub fn supply(&self, r: f64) -> f64 {
        if r >= self.alpha {
            return 0.0;
        }
        let a = self.a_coef();
        (-a + (a * a + 4.0 * self.m * (self.alpha - r)).sqrt()) / (2.0 * self.m)
    }

    pub fn supply_d1(&self, r: f64) -> f64 {
        if r >= self.alpha {
            return 0.0;
        }
        -1.0 / (self.a_coef() + 2.0 * self.m * self.supply(r))
    }

    pub fn supply_d2(&self, r: f64) -> f64 {
        if r >= self.alpha {
            return 0.0;
        }
        -2.0 * self.m / (self.a_coef() + 2.0 * self.m * self.supply(r)).powi(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmfParams {
    pub a: f64,
    pub b: f64,
    pub r0: f64,
}

impl MmfParams {
    pub fn validate(&self) -> Result<(), EconError> {
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(EconError::InvalidParams("a and b must be positive"));
        }
        if !self.r0.is_finite() {
            return Err(EconError::InvalidParams("r0 must be finite"));
        }
        Ok(())
    }

    pub fn demand(&self, r: f64) -> f64 {
        if r < self.r0 {
            return 0.0;
        }
        (-self.a + (self.a * self.a + 4.0 * self.b * (r - self.r0)).sqrt()) / (2.0 * self.b)
    }

    pub fn demand_d1(&self, r: f64) -> f64 {
        if r < self.r0 {
            return 0.0;
        }
        1.0 / (self.a + 2.0 * self.b * self.demand(r))
    }

    pub fn demand_d2(&self, r: f64) -> f64 {
        if r < self.r0 {
            return 0.0;
        }
        -2.0 * self.b / (self.a + 2.0 * self.b * self.demand(r)).powi(3)
    }

    /// Rate at which demand reaches `volume`.
    pub fn inverse(&self, volume: f64) -> f64 {
        self.r0 + self.a * volume + self.b * volume * volume
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DealerParams {
    pub r_int: f64,
    /// Unit cost of capital.
    pub c: f64,
    /// Leverage-ratio floor.
    pub floor: f64,
    /// Volume at which the leverage constraint starts to bind.
    pub d_bar: f64,
    pub demand: MmfParams,
}

impl DealerParams {
    pub fn validate(&self) -> Result<(), EconError> {
        self.demand.validate()?;
        if !(self.c >= 0.0) {
            return Err(EconError::InvalidParams("c must be non-negative"));
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(EconError::InvalidParams("floor must lie in (0, 1)"));
        }
        if !(self.d_bar >= 0.0) {
            return Err(EconError::InvalidParams("d_bar must be non-negative"));
        }
        if self.r_int < self.demand.r0 {
            return Err(EconError::EmptyFeasibleRange {
                r0: self.demand.r0,
                r_int: self.r_int,
            });
        }
        Ok(())
    }

    fn penalty(&self) -> f64 {
        self.c * self.floor
    }

    pub fn profit(&self, r: f64) -> f64 {
        let d = self.demand.demand(r);
        (self.r_int - r) * d - self.penalty() * (d - self.d_bar).max(0.0)
    }

    /// Residual of the first-order condition on the capacity-constrained piece.
    pub fn foc(&self, r: f64) -> f64 {
        (self.r_int - r - self.penalty()) * self.demand.demand_d1(r) - self.demand.demand(r)
    }

    /// Slope of the unconstrained piece.
    fn slope_free(&self, r: f64) -> f64 {
        (self.r_int - r) * self.demand.demand_d1(r) - self.demand.demand(r)
    }

    /// Rate at which demand reaches `d_bar`, or `None` if beyond `r_int`.
    pub fn kink(&self) -> Option<f64> {
        let rk = self.demand.inverse(self.d_bar);
        (rk.is_finite() && rk <= self.r_int).then_some(rk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Piece {
    /// Volume at or below capacity.
    Free,
    /// Volume at or above capacity.
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub piece: Piece,
    pub iteration: u32,
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DealerOptimum {
    pub r_star: f64,
    pub volume: f64,
    pub profit: f64,
    pub constrained: bool,
    pub trace: Vec<TraceRow>,
}

/// Bisection tolerance on the rate.
pub const RATE_TOL: f64 = 1e-13;
const MAX_ITER: u32 = 200;

/// Maximizer on `[lo, hi]` of a function whose slope changes sign at most once,
/// from positive to negative.
fn maximize(piece: Piece, lo: f64, hi: f64, slope: impl Fn(f64) -> f64, trace: &mut Vec<TraceRow>) -> f64 {
    if slope(lo) <= 0.0 {
        return lo;
    }
    if slope(hi) >= 0.0 {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    for iteration in 0..MAX_ITER {
        if b - a <= RATE_TOL {
            break;
        }
        let mid = 0.5 * (a + b);
        let s = slope(mid);
        trace.push(TraceRow {
            piece,
            iteration,
            lo: a,
            hi: b,
            slope: s,
        });
        if s > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Optimizes each smooth piece of the profit function and keeps the better one.
pub fn dealer_optimal_rate(p: &DealerParams) -> Result<DealerOptimum, EconError> {
    p.validate()?;
    let r0 = p.demand.r0;
    let mut trace = Vec::new();
    let kink = p.kink();
    let free_hi = kink.unwrap_or(p.r_int);
    let r_free = maximize(Piece::Free, r0, free_hi, |r| p.slope_free(r), &mut trace);
    let mut best = (r_free, p.profit(r_free));
    if let Some(rk) = kink {
        let r_con = maximize(Piece::Constrained, rk, p.r_int, |r| p.foc(r), &mut trace);
        let v = p.profit(r_con);
        if v > best.1 {
            best = (r_con, v);
        }
    }
    let r_star = best.0;
    let at_kink = kink == Some(r_star);
    let volume = if at_kink { p.d_bar } else { p.demand.demand(r_star) };
    Ok(DealerOptimum {
        r_star,
        volume,
        profit: best.1,
        constrained: volume >= p.d_bar,
        trace,
    })
}

/// Closed-form `dr*/dL` from the implicit-function theorem at an interior
/// constrained optimum `r`.
pub fn analytic_rate_sensitivity(p: &DealerParams, r: f64) -> f64 {
    let d1 = p.demand.demand_d1(r);
    let d2 = p.demand.demand_d2(r);
    p.c * d1 / (-2.0 * d1 + (p.r_int - r - p.penalty()) * d2)
}

/// Central finite difference of the optimal rate in the floor.
pub fn slr_rate_sensitivity(p: &DealerParams, dl: f64) -> Result<f64, EconError> {
    if !(dl > 0.0 && p.floor - dl > 0.0 && p.floor + dl < 1.0) {
        return Err(EconError::InvalidParams("floor +/- dL must stay in (0, 1)"));
    }
    let at = |floor: f64| -> Result<f64, EconError> {
        let opt = dealer_optimal_rate(&DealerParams { floor, ..*p })?;
        if !opt.constrained {
            return Err(EconError::NotBinding { floor });
        }
        Ok(opt.r_star)
    };
    let up = at(p.floor + dl)?;
    let down = at(p.floor - dl)?;
    Ok((up - down) / (2.0 * dl))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub r: f64,
    pub supply: f64,
    pub supply_d1: f64,
    pub supply_d2: f64,
    pub demand: f64,
    pub demand_d1: f64,
    pub demand_d2: f64,
}

/// `n` evenly spaced samples of both curves on `[lo, hi]`.
pub fn sample_curves(hf: &HedgeFundParams, mmf: &MmfParams, lo: f64, hi: f64, n: usize) -> Vec<CurveSample> {
    (0..n)
        .map(|i| {
            let r = if n <= 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            };
            CurveSample {
                r,
                supply: hf.supply(r),
                supply_d1: hf.supply_d1(r),
                supply_d2: hf.supply_d2(r),
                demand: mmf.demand(r),
                demand_d1: mmf.demand_d1(r),
                demand_d2: mmf.demand_d2(r),
            }
        })
        .collect()
}

/// Writes curve samples as CSV with a header row.
pub fn write_curves_csv<W: std::io::Write>(w: W, samples: &[CurveSample]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in samples {
        out.serialize(s)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes an optimizer trace as CSV with a header row.
pub fn write_trace_csv<W: std::io::Write>(w: W, trace: &[TraceRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for t in trace {
        out.serialize(t)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mmf() -> MmfParams {
        MmfParams {
            a: 1.0,
            b: 1.0,
            r0: 0.0,
        }
    }

    fn dealer(c: f64, d_bar: f64) -> DealerParams {
        DealerParams {
            r_int: 1.0,
            c,
            floor: 0.05,
            d_bar,
            demand: mmf(),
        }
    }

    #[test]
    fn closed_forms() {
        let hf = HedgeFundParams {
            alpha: 2.0,
            gamma_sigma2: 0.5,
            k: 0.5,
            m: 1.0,
        };
        assert!((hf.supply(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(hf.supply(2.0), 0.0);
        assert_eq!(hf.supply(3.0), 0.0);
        assert!(hf.supply_d1(0.0) < 0.0 && hf.supply_d2(0.0) < 0.0);
        let m = MmfParams { r0: 0.5, ..mmf() };
        assert_eq!(m.demand(0.5), 0.0);
        assert!((m.demand(2.5) - 1.0).abs() < 1e-15);
        assert_eq!(m.demand(0.0), 0.0);
        assert!(m.demand_d1(1.0) > 0.0 && m.demand_d2(1.0) < 0.0);
        assert!((m.inverse(1.0) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters() {
        let hf = HedgeFundParams {
            alpha: 1.0,
            gamma_sigma2: 0.0,
            k: 0.0,
            m: 1.0,
        };
        assert!(hf.validate().is_err());
        let mut p = dealer(0.1, 0.1);
        p.r_int = -1.0;
        assert!(matches!(
            dealer_optimal_rate(&p),
            Err(EconError::EmptyFeasibleRange { .. })
        ));
        p.r_int = 1.0;
        p.floor = 1.5;
        assert!(matches!(dealer_optimal_rate(&p), Err(EconError::InvalidParams(_))));
    }

    #[test]
    fn free_capital_matches_unconstrained() {
        let free = dealer_optimal_rate(&dealer(0.0, 0.1)).unwrap();
        let unc = dealer_optimal_rate(&dealer(0.3, f64::INFINITY)).unwrap();
        assert!(!unc.constrained);
        assert!((free.r_star - unc.r_star).abs() < 1e-10);
        let p = dealer(0.0, 0.1);
        let r = free.r_star;
        assert!(((p.r_int - r) * p.demand.demand_d1(r) - p.demand.demand(r)).abs() < 1e-10);
    }

    #[test]
    fn binding_optimum_satisfies_foc_and_grid() {
        let p = dealer(0.4, 0.1);
        let opt = dealer_optimal_rate(&p).unwrap();
        assert!(opt.constrained);
        assert!(opt.volume > p.d_bar);
        assert!(p.foc(opt.r_star).abs() <= 1e-8);
        let mut best = (0.0, f64::NEG_INFINITY);
        let mut r = p.demand.r0;
        while r <= p.r_int {
            let v = p.profit(r);
            if v > best.1 {
                best = (r, v);
            }
            r += 1e-6;
        }
        assert!((best.0 - opt.r_star).abs() < 1e-5);
        assert!(!opt.trace.is_empty());
    }

    #[test]
    fn sensitivity_sign_and_magnitude() {
        let p = dealer(0.4, 0.1);
        let fd = slr_rate_sensitivity(&p, 1e-4).unwrap();
        assert!(fd < 0.0);
        let r = dealer_optimal_rate(&p).unwrap().r_star;
        let an = analytic_rate_sensitivity(&p, r);
        assert!(((fd - an) / an).abs() < 1e-4, "{fd} vs {an}");
        assert_eq!(slr_rate_sensitivity(&dealer(0.0, 0.1), 1e-4).unwrap(), 0.0);
        assert!(matches!(
            slr_rate_sensitivity(&dealer(0.4, 10.0), 1e-4),
            Err(EconError::NotBinding { .. })
        ));
    }

    #[test]
    fn curve_samples() {
        let hf = HedgeFundParams {
            alpha: 0.1,
            gamma_sigma2: 1.0,
            k: 0.0,
            m: 1.0,
        };
        let s = sample_curves(&hf, &mmf(), 0.0, 0.1, 11);
        assert_eq!(s.len(), 11);
        assert_eq!(s[10].supply, 0.0);
        assert!((s[5].r - 0.05).abs() < 1e-15);
    }
}
