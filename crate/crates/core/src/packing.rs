//! Online packing simulators for the two-heuristic portfolio (first-fit and
//! best-fit) and the Falkenauer packing-quality objective.
//!
//! Both heuristics consume items strictly in arrival order. Objectives are
//! compared as exact rationals so that winner determination never depends on
//! floating-point rounding.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default Falkenauer exponent.
pub const DEFAULT_FALKENAUER_EXPONENT: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PackingError {
    #[error("item {index} has size {size} which exceeds bin capacity {capacity}")]
    ItemExceedsCapacity {
        index: usize,
        size: u32,
        capacity: u32,
    },
    #[error("item {index} has size 0")]
    ZeroItem { index: usize },
    #[error("cannot pack an empty item list")]
    EmptyInstance,
    #[error("bin capacity must be positive")]
    ZeroCapacity,
    #[error("Falkenauer objective is undefined: {0}")]
    Domain(String),
    #[error("rational objective overflows u128 (capacity {capacity}, exponent {exponent})")]
    Overflow { capacity: u32, exponent: u32 },
}

/// The two members of the solver portfolio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Solver {
    #[serde(rename = "BF")]
    BestFit,
    #[serde(rename = "FF")]
    FirstFit,
}

impl Solver {
    pub fn other(self) -> Solver {
        match self {
            Solver::BestFit => Solver::FirstFit,
            Solver::FirstFit => Solver::BestFit,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Solver::BestFit => "BF",
            Solver::FirstFit => "FF",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Outcome of packing one item sequence with one heuristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingResult {
    /// Occupied capacity per bin, in bin creation order.
    pub bin_fills: Vec<u32>,
    pub n_bins: usize,
    pub falkenauer: f64,
}

/// Falkenauer objective as an exact fraction `numerator / denominator`.
///
/// `numerator = Σ fill^k`, `denominator = capacity^k · n_bins`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RationalObjective {
    pub numerator: u128,
    pub denominator: u128,
}

impl RationalObjective {
    pub fn to_f64(self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    pub fn is_one(self) -> bool {
        self.numerator == self.denominator
    }
}

impl PartialOrd for RationalObjective {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RationalObjective {
    fn cmp(&self, other: &Self) -> Ordering {
        // Both fractions are ≤ 1 with denominators bounded by the overflow
        // check in `falkenauer_rational`, so the cross products fit.
        let lhs = self.numerator * other.denominator;
        let rhs = other.numerator * self.denominator;
        lhs.cmp(&rhs)
    }
}

fn check_items(items: &[u32], capacity: u32) -> Result<(), PackingError> {
    if capacity == 0 {
        return Err(PackingError::ZeroCapacity);
    }
    if items.is_empty() {
        return Err(PackingError::EmptyInstance);
    }
    for (index, &size) in items.iter().enumerate() {
        if size == 0 {
            return Err(PackingError::ZeroItem { index });
        }
        if size > capacity {
            return Err(PackingError::ItemExceedsCapacity {
                index,
                size,
                capacity,
            });
        }
    }
    Ok(())
}

/// Bin fills produced by first-fit. Inputs must already be validated.
pub(crate) fn first_fit_fills(items: &[u32], capacity: u32, fills: &mut Vec<u32>) {
    fills.clear();
    for &item in items {
        let limit = capacity - item;
        match fills.iter().position(|&f| f <= limit) {
            Some(i) => fills[i] += item,
            None => fills.push(item),
        }
    }
}

/// Bin fills produced by best-fit (lowest index wins among equal residuals).
pub(crate) fn best_fit_fills(items: &[u32], capacity: u32, fills: &mut Vec<u32>) {
    fills.clear();
    for &item in items {
        let limit = capacity - item;
        let mut best: Option<usize> = None;
        let mut best_fill = 0u32;
        for (i, &f) in fills.iter().enumerate() {
            // Minimal residual after placement is maximal current fill.
            if f <= limit && (best.is_none() || f > best_fill) {
                best = Some(i);
                best_fill = f;
                if f == limit {
                    break;
                }
            }
        }
        match best {
            Some(i) => fills[i] += item,
            None => fills.push(item),
        }
    }
}

fn finish(bin_fills: Vec<u32>, capacity: u32, exponent: u32) -> Result<PackingResult, PackingError> {
    let falkenauer = falkenauer_objective(&bin_fills, capacity, exponent)?;
    Ok(PackingResult {
        n_bins: bin_fills.len(),
        bin_fills,
        falkenauer,
    })
}

/// Packs `items` in arrival order, each into the lowest-index bin that fits.
pub fn pack_first_fit(items: &[u32], capacity: u32) -> Result<PackingResult, PackingError> {
    check_items(items, capacity)?;
    let mut fills = Vec::new();
    first_fit_fills(items, capacity, &mut fills);
    finish(fills, capacity, DEFAULT_FALKENAUER_EXPONENT)
}

/// Packs `items` in arrival order, each into the feasible bin that leaves the
/// least residual space.
pub fn pack_best_fit(items: &[u32], capacity: u32) -> Result<PackingResult, PackingError> {
    check_items(items, capacity)?;
    let mut fills = Vec::new();
    best_fit_fills(items, capacity, &mut fills);
    finish(fills, capacity, DEFAULT_FALKENAUER_EXPONENT)
}

/// Packs with the given heuristic.
pub fn pack(solver: Solver, items: &[u32], capacity: u32) -> Result<PackingResult, PackingError> {
    match solver {
        Solver::BestFit => pack_best_fit(items, capacity),
        Solver::FirstFit => pack_first_fit(items, capacity),
    }
}

fn check_fills(bin_fills: &[u32], capacity: u32) -> Result<(), PackingError> {
    if capacity == 0 {
        return Err(PackingError::ZeroCapacity);
    }
    if bin_fills.is_empty() {
        return Err(PackingError::Domain("empty bin list".into()));
    }
    if let Some(i) = bin_fills.iter().position(|&f| f == 0 || f > capacity) {
        return Err(PackingError::Domain(format!(
            "bin {i} has fill {} outside (0, {capacity}]",
            bin_fills[i]
        )));
    }
    Ok(())
}

/// Exact Falkenauer objective `Σ (fill/capacity)^k / n_bins` as a fraction.
pub fn falkenauer_rational(
    bin_fills: &[u32],
    capacity: u32,
    exponent: u32,
) -> Result<RationalObjective, PackingError> {
    check_fills(bin_fills, capacity)?;
    let overflow = PackingError::Overflow { capacity, exponent };
    let cap_pow = (capacity as u128).checked_pow(exponent).ok_or(overflow.clone())?;
    let denominator = cap_pow
        .checked_mul(bin_fills.len() as u128)
        .ok_or(overflow.clone())?;
    // Comparisons multiply two such denominators; keep that product in range.
    denominator.checked_mul(denominator).ok_or(overflow)?;
    let numerator = bin_fills
        .iter()
        .map(|&f| (f as u128).pow(exponent))
        .sum();
    Ok(RationalObjective {
        numerator,
        denominator,
    })
}

/// Falkenauer objective rendered as a float, in (0, 1].
pub fn falkenauer_objective(bin_fills: &[u32], capacity: u32, exponent: u32) -> Result<f64, PackingError> {
    falkenauer_rational(bin_fills, capacity, exponent).map(RationalObjective::to_f64)
}

/// Objectives of both heuristics on one instance, with the strict winner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortfolioOutcome {
    pub o_bf: f64,
    pub o_ff: f64,
    /// `None` when the two objectives are exactly equal.
    pub winner: Option<Solver>,
}

impl PortfolioOutcome {
    pub fn is_tie(&self) -> bool {
        self.winner.is_none()
    }
}

/// Packing problem parameters shared by every portfolio evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Portfolio {
    pub capacity: u32,
    #[serde(default = "default_exponent")]
    pub exponent: u32,
}

fn default_exponent() -> u32 {
    DEFAULT_FALKENAUER_EXPONENT
}

impl Portfolio {
    pub fn new(capacity: u32) -> Self {
        Portfolio {
            capacity,
            exponent: DEFAULT_FALKENAUER_EXPONENT,
        }
    }

    pub fn evaluate(&self, items: &[u32]) -> Result<PortfolioOutcome, PackingError> {
        let mut scratch = Vec::with_capacity(items.len());
        self.evaluate_with(items, &mut scratch)
    }

    /// Same as [`Portfolio::evaluate`] but reuses `scratch` for bin fills.
    pub fn evaluate_with(
        &self,
        items: &[u32],
        scratch: &mut Vec<u32>,
    ) -> Result<PortfolioOutcome, PackingError> {
        check_items(items, self.capacity)?;
        best_fit_fills(items, self.capacity, scratch);
        let bf = falkenauer_rational(scratch, self.capacity, self.exponent)?;
        first_fit_fills(items, self.capacity, scratch);
        let ff = falkenauer_rational(scratch, self.capacity, self.exponent)?;
        let winner = match bf.cmp(&ff) {
            Ordering::Greater => Some(Solver::BestFit),
            Ordering::Less => Some(Solver::FirstFit),
            Ordering::Equal => None,
        };
        Ok(PortfolioOutcome {
            o_bf: bf.to_f64(),
            o_ff: ff.to_f64(),
            winner,
        })
    }
}

/// Runs both heuristics with the default exponent and reports the winner.
pub fn evaluate_portfolio(items: &[u32], capacity: u32) -> Result<PortfolioOutcome, PackingError> {
    Portfolio::new(capacity).evaluate(items)
}
