//! Checkpoint history and the tuning strategies that pick which previous
//! policy a new fine-tuning step starts from.
//!
//! All rules break ties toward the smallest iteration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::space::{ParamVector, RunningStats};

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub iteration: u64,
    pub policy: Policy,
    pub phi: ParamVector,
    pub reward: f64,
    /// `None` for a policy trained from a fresh initialization.
    pub parent: Option<u64>,
    pub checkpoint: Option<PathBuf>,
}

/// Append-only sequence of trained policies with their DR parameters and
/// real-world rewards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    entries: Vec<HistoryEntry>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: HistoryEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.iteration != last.iteration + 1 {
                return Err(Error::InvalidConfig(format!(
                    "history iteration {} does not follow {}",
                    entry.iteration, last.iteration
                )));
            }
            if entry.phi.len() != last.phi.len() {
                return Err(Error::DimensionMismatch {
                    expected: last.phi.len(),
                    actual: entry.phi.len(),
                });
            }
        }
        if !entry.reward.is_finite() {
            return Err(Error::NonFinite(format!("history reward {}", entry.reward)));
        }
        if let Some(p) = entry.parent {
            if p >= entry.iteration || !self.entries.iter().any(|e| e.iteration == p) {
                return Err(Error::InvalidConfig(format!(
                    "parent {p} of iteration {} is not an earlier entry",
                    entry.iteration
                )));
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, iteration: u64) -> Option<&HistoryEntry> {
        let first = self.entries.first()?.iteration;
        iteration
            .checked_sub(first)
            .and_then(|k| self.entries.get(k as usize))
    }

    /// Follows parent links from `iteration` back to a root.
    pub fn lineage(&self, iteration: u64) -> Vec<u64> {
        let mut chain = vec![];
        let mut cur = self.get(iteration);
        while let Some(e) = cur {
            chain.push(e.iteration);
            cur = e.parent.and_then(|p| self.get(p));
        }
        chain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    NormalizedClosest,
    InfiniteChain,
    BestOnly,
    BestOfLastM(usize),
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyKind::NormalizedClosest => f.write_str("normalized-closest"),
            StrategyKind::InfiniteChain => f.write_str("infinite-chain"),
            StrategyKind::BestOnly => f.write_str("best-only"),
            StrategyKind::BestOfLastM(m) => write!(f, "best-of-last-m:{m}"),
        }
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized-closest" | "normalized-closest-only" => Ok(StrategyKind::NormalizedClosest),
            "infinite-chain" => Ok(StrategyKind::InfiniteChain),
            "best-only" => Ok(StrategyKind::BestOnly),
            _ => match s.strip_prefix("best-of-last-m:").map(str::parse::<usize>) {
                Some(Ok(m)) if m >= 1 => Ok(StrategyKind::BestOfLastM(m)),
                Some(_) => Err(Error::InvalidConfig(format!(
                    "strategy `{s}`: M must be a positive integer"
                ))),
                None => Err(Error::InvalidConfig(format!(
                    "unknown strategy `{s}` (expected normalized-closest, infinite-chain, \
                     best-only or best-of-last-m:M)"
                ))),
            },
        }
    }
}

/// Checkpoint lookup: the iteration whose policy the next step starts from.
pub fn select_checkpoint(
    kind: StrategyKind,
    phi: &ParamVector,
    h: &History,
    stats: &RunningStats,
) -> Result<u64> {
    if h.is_empty() {
        return Err(Error::EmptyHistory);
    }
    match kind {
        StrategyKind::NormalizedClosest => closest_rule(phi, h, stats),
        StrategyKind::InfiniteChain => chain_rule(h),
        StrategyKind::BestOnly => best_rule(h),
        StrategyKind::BestOfLastM(m) => best_of_last_m_rule(h, m),
    }
}

/// Entry whose normalized φ is nearest to the query.
pub fn closest_rule(phi: &ParamVector, h: &History, stats: &RunningStats) -> Result<u64> {
    let mut best: Option<(u64, f64)> = None;
    for e in h.entries() {
        let d = stats.normalized_distance(phi, &e.phi)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((e.iteration, d));
        }
    }
    best.map(|b| b.0).ok_or(Error::EmptyHistory)
}

/// Always continue from the latest policy.
pub fn chain_rule(h: &History) -> Result<u64> {
    h.entries()
        .last()
        .map(|e| e.iteration)
        .ok_or(Error::EmptyHistory)
}

fn argmax_reward(entries: &[HistoryEntry]) -> Result<u64> {
    let mut best: Option<&HistoryEntry> = None;
    for e in entries {
        if best.is_none_or(|b| e.reward > b.reward) {
            best = Some(e);
        }
    }
    best.map(|e| e.iteration).ok_or(Error::EmptyHistory)
}

/// Policy with the highest real-world reward.
pub fn best_rule(h: &History) -> Result<u64> {
    argmax_reward(h.entries())
}

/// Highest real-world reward among the last `m` entries.
pub fn best_of_last_m_rule(h: &History, m: usize) -> Result<u64> {
    if m == 0 {
        return Err(Error::InvalidConfig("M must be >= 1".into()));
    }
    let entries = h.entries();
    argmax_reward(&entries[entries.len().saturating_sub(m)..])
}
